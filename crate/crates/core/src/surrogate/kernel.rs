use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point of the augmented input space: which information source, and where.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedInput {
    pub source: usize,
    pub location: Vec<f64>,
}

impl AugmentedInput {
    pub fn new(source: usize, location: impl Into<Vec<f64>>) -> Self {
        AugmentedInput { source, location: location.into() }
    }

    pub fn high_fidelity(location: impl Into<Vec<f64>>) -> Self {
        Self::new(0, location)
    }
}

/// Squared-exponential kernel with one length-scale per input dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeKernel {
    pub variance: f64,
    pub length_scales: Vec<f64>,
}

impl SeKernel {
    pub fn new(variance: f64, length_scales: Vec<f64>) -> Self {
        SeKernel { variance, length_scales }
    }

    #[inline]
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut r2 = 0.0;
        for ((x, y), l) in a.iter().zip(b).zip(&self.length_scales) {
            let t = (x - y) / l;
            r2 += t * t;
        }
        self.variance * (-0.5 * r2).exp()
    }
}

/// Hyperparameters of the multifidelity prior.
///
/// `components[0]` is the kernel of the high-fidelity process, `components[l]`
/// (l >= 1) the kernel of the discrepancy between source `l` and source 0.
/// `means` follows the same indexing. When owned by a fitted posterior these
/// values live in the scaled space (unit-box inputs, standardized outputs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelHyperparams {
    pub components: Vec<SeKernel>,
    pub means: Vec<f64>,
    pub jitter: f64,
}

/// Multiplier of the jitter for a given high-fidelity signal variance.
pub(crate) fn nugget_scale(signal_variance: f64) -> f64 {
    signal_variance.min(1.0)
}

impl KernelHyperparams {
    /// Starting point used when nothing better is known.
    pub fn default_for(num_sources: usize, dim: usize) -> Self {
        let components = (0..num_sources)
            .map(|l| SeKernel::new(if l == 0 { 1.0 } else { 0.1 }, vec![0.3; dim]))
            .collect();
        KernelHyperparams { components, means: vec![0.0; num_sources], jitter: 1e-10 }
    }

    pub fn num_sources(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.components.first().map_or(0, |c| c.length_scales.len())
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::config("at least the high-fidelity kernel is required"));
        }
        if self.means.len() != self.components.len() {
            return Err(Error::config("one prior mean per component is required"));
        }
        let dim = self.dim();
        for (l, c) in self.components.iter().enumerate() {
            if c.length_scales.len() != dim || dim == 0 {
                return Err(Error::config(format!("component {l}: expected {dim} length-scales")));
            }
            if c.length_scales.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Error::config(format!("component {l}: length-scales must be positive")));
            }
            if !(c.variance.is_finite() && c.variance >= 0.0) {
                return Err(Error::config(format!("component {l}: signal variance must be nonnegative")));
            }
        }
        if !(self.jitter.is_finite() && self.jitter >= 0.0) || self.means.iter().any(|m| !m.is_finite()) {
            return Err(Error::config("jitter and prior means must be finite, jitter nonnegative"));
        }
        Ok(())
    }

    pub fn prior_mean(&self, source: usize) -> f64 {
        if source == 0 {
            self.means[0]
        } else {
            self.means[0] + self.means[source]
        }
    }

    /// Diagonal jitter in absolute (standardized) terms. `jitter` is relative
    /// to the high-fidelity signal variance when that is below one and
    /// absolute otherwise.
    pub fn nugget(&self) -> f64 {
        self.jitter * nugget_scale(self.components[0].variance)
    }

    pub fn prior_variance(&self, source: usize) -> f64 {
        if source == 0 {
            self.components[0].variance
        } else {
            self.components[0].variance + self.components[source].variance
        }
    }
}

/// Prior covariance between two augmented inputs: the high-fidelity kernel plus
/// the discrepancy kernel of their common source when both come from the same
/// low-fidelity source.
pub fn prior_cov(a: &AugmentedInput, b: &AugmentedInput, h: &KernelHyperparams) -> f64 {
    let base = h.components[0].eval(&a.location, &b.location);
    if a.source == b.source && a.source > 0 {
        base + h.components[a.source].eval(&a.location, &b.location)
    } else {
        base
    }
}
