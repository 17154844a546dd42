//! Monte Carlo probability-of-failure estimation and its error metric.

use serde::{Deserialize, Serialize};

use crate::distributions::SampleSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FailureEstimate {
    pub p_hat: f64,
    pub failures: usize,
    pub m: usize,
}

impl FailureEstimate {
    pub fn from_counts(failures: usize, m: usize) -> Result<Self> {
        if m == 0 || failures > m {
            return Err(Error::precondition(format!("invalid failure counts {failures}/{m}")));
        }
        Ok(FailureEstimate { p_hat: failures as f64 / m as f64, failures, m })
    }

    /// Binomial standard error `sqrt(p (1 - p) / m)`.
    pub fn std_error(&self) -> f64 {
        (self.p_hat * (1.0 - self.p_hat) / self.m as f64).sqrt()
    }
}

/// Failure indicator: 1 iff `g > 0`.
pub fn indicator(g: f64) -> Result<u8> {
    if !g.is_finite() {
        return Err(Error::precondition(format!("non-finite limit-state value {g}")));
    }
    Ok(u8::from(g > 0.0))
}

/// Whether a value counts as a failure; non-finite values do.
pub fn is_failure(g: f64) -> bool {
    indicator(g).map_or(true, |i| i == 1)
}

/// Fraction of `samples` classified as failed by `predictor`. An `Err` or a
/// non-finite prediction counts as a failure.
pub fn estimate_pf<F>(mut predictor: F, samples: &SampleSet) -> Result<FailureEstimate>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if samples.is_empty() {
        return Err(Error::precondition("empty sample set"));
    }
    let failures = samples.iter().filter(|z| predictor(z).map_or(true, is_failure)).count();
    FailureEstimate::from_counts(failures, samples.len())
}

/// Failure estimate from precomputed values, one per sample.
pub fn estimate_pf_from_values(values: &[f64]) -> Result<FailureEstimate> {
    let failures = values.iter().filter(|&&g| is_failure(g)).count();
    FailureEstimate::from_counts(failures, values.len())
}

/// `|p_mf - p_ref| / p_ref`.
pub fn relative_error(p_mf: f64, p_ref: f64) -> Result<f64> {
    if !(p_ref > 0.0) || !p_mf.is_finite() || !p_ref.is_finite() {
        return Err(Error::precondition(format!("relative error undefined for reference {p_ref}")));
    }
    Ok((p_mf - p_ref).abs() / p_ref)
}
