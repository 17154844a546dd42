//! Multifidelity Gaussian process over augmented inputs `(source, z)`.
//!
//! The high-fidelity source is modeled as a GP and every lower-fidelity source
//! as the high-fidelity GP plus an independent discrepancy GP, so two inputs
//! only share a discrepancy term when they come from the same low-fidelity
//! source. Inputs are scaled to the unit box and outputs standardized before
//! fitting; every query answers in original units.

mod data;
mod fit;
mod kernel;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use data::{Observation, TrainingSet};
pub use fit::{FitOptions, JITTER_LADDER};
pub use kernel::{prior_cov, AugmentedInput, KernelHyperparams, SeKernel};

use crate::distributions::{DomainBox, SampleSet};
use crate::error::{Error, Result};
use fit::{factorize, ladder_from, Design};
use kernel::nugget_scale;

/// Affine map between original and standardized outputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutputScaling {
    pub mean: f64,
    pub std_dev: f64,
}

impl OutputScaling {
    pub fn from_data(data: &TrainingSet) -> Self {
        let n = data.len().max(1) as f64;
        let mean = data.iter().map(|o| o.value).sum::<f64>() / n;
        let var = data.iter().map(|o| (o.value - mean).powi(2)).sum::<f64>() / n;
        let std_dev = var.sqrt();
        let std_dev = if std_dev > 1e-12 * mean.abs().max(1.0) { std_dev } else { 1.0 };
        OutputScaling { mean, std_dev }
    }

    fn standardize(&self, y: f64) -> f64 {
        (y - self.mean) / self.std_dev
    }
}

/// Log marginal likelihood of `data` under `hyper` (scaled-space hyperparameters,
/// prior means taken as given, outputs standardized from the data).
pub fn log_marginal_likelihood(data: &TrainingSet, domain: &DomainBox, hyper: &KernelHyperparams) -> Result<f64> {
    check_inputs(data, domain, hyper)?;
    let design = design_for(data, domain, &OutputScaling::from_data(data), hyper.num_sources());
    let theta: Vec<f64> = hyper
        .components
        .iter()
        .flat_map(|c| std::iter::once(c.variance.ln()).chain(c.length_scales.iter().map(|l| l.ln())))
        .collect();
    fit::evaluate(&design, &theta, Some(&hyper.means), &ladder_from(hyper.jitter), false)
        .map(|ev| ev.value)
        .ok_or_else(|| Error::Conditioning { jitters: ladder_from(hyper.jitter) })
}

fn check_inputs(data: &TrainingSet, domain: &DomainBox, hyper: &KernelHyperparams) -> Result<()> {
    hyper.validate()?;
    if hyper.dim() != domain.dim() {
        return Err(Error::config(format!("hyperparameters have {} length-scales, domain has {} dimensions", hyper.dim(), domain.dim())));
    }
    if data.count_for_source(0) == 0 {
        return Err(Error::precondition("training data needs at least one high-fidelity observation"));
    }
    for o in data.iter() {
        if o.input.source >= hyper.num_sources() {
            return Err(Error::precondition(format!("observation from unknown source {}", o.input.source)));
        }
        if o.input.location.len() != domain.dim() {
            return Err(Error::precondition("observation dimension does not match the domain"));
        }
    }
    Ok(())
}

fn design_for(data: &TrainingSet, domain: &DomainBox, scaling: &OutputScaling, num_sources: usize) -> Design {
    let unit = data.iter().map(|o| domain.to_unit(&o.input.location)).collect();
    let sources = data.iter().map(|o| o.input.source).collect();
    let y = DVector::from_iterator(data.len(), data.iter().map(|o| scaling.standardize(o.value)));
    Design::new(unit, sources, y, num_sources)
}

/// High-fidelity predictions at a batch of points, with the factors needed to
/// evaluate lookahead quantities against the same batch.
pub struct HighFidelityBatch {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    unit: Vec<Vec<f64>>,
    // L^{-1} k(X, (0, z)) for every batch point, one column each
    whitened: DMatrix<f64>,
}

impl HighFidelityBatch {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

/// Fitted multifidelity GP. Immutable: updates return a new posterior.
#[derive(Debug, Clone)]
pub struct MfGpPosterior {
    data: TrainingSet,
    domain: DomainBox,
    hyper: KernelHyperparams,
    scaling: OutputScaling,
    unit: Vec<Vec<f64>>,
    sources: Vec<usize>,
    chol_l: DMatrix<f64>,
    alpha: DVector<f64>,
    log_likelihood: f64,
}

impl MfGpPosterior {
    /// Fits hyperparameters by multistart marginal-likelihood ascent from `init`
    /// and conditions on `data`.
    pub fn fit(data: TrainingSet, domain: &DomainBox, init: &KernelHyperparams, opts: &FitOptions) -> Result<Self> {
        check_inputs(&data, domain, init)?;
        let scaling = OutputScaling::from_data(&data);
        let design = design_for(&data, domain, &scaling, init.num_sources());
        let (hyper, _) = fit::optimize(&design, init, opts).ok_or_else(|| Error::Conditioning { jitters: JITTER_LADDER.to_vec() })?;
        Self::condition(data, domain, hyper, scaling)
    }

    /// Conditions on `data` with fixed hyperparameters and output scaling.
    pub fn condition(data: TrainingSet, domain: &DomainBox, hyper: KernelHyperparams, scaling: OutputScaling) -> Result<Self> {
        check_inputs(&data, domain, &hyper)?;
        let unit: Vec<Vec<f64>> = data.iter().map(|o| domain.to_unit(&o.input.location)).collect();
        let sources: Vec<usize> = data.iter().map(|o| o.input.source).collect();
        let n = data.len();
        let k = DMatrix::from_fn(n, n, |i, j| prior_cov_unit(&hyper, sources[i], &unit[i], sources[j], &unit[j]));
        let jitters = ladder_from(hyper.jitter);
        let (chol, jitter) = factorize(k, &jitters, nugget_scale(hyper.components[0].variance)).ok_or(Error::Conditioning { jitters })?;
        let resid = DVector::from_iterator(n, data.iter().map(|o| scaling.standardize(o.value) - hyper.prior_mean(o.input.source)));
        let alpha = chol.solve(&resid);
        let log_det_half: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
        let log_likelihood = -0.5 * resid.dot(&alpha) - log_det_half - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
        let hyper = KernelHyperparams { jitter, ..hyper };
        Ok(MfGpPosterior {
            data,
            domain: domain.clone(),
            hyper,
            scaling,
            unit,
            sources,
            chol_l: chol.unpack(),
            alpha,
            log_likelihood,
        })
    }

    /// Adds observations with hyperparameters and scaling held fixed.
    pub fn with_observations(&self, observations: impl IntoIterator<Item = (AugmentedInput, f64)>) -> Result<Self> {
        let mut data = self.data.clone();
        for (input, y) in observations {
            data.push(input, y)?;
        }
        Self::condition(data, &self.domain, self.hyper.clone(), self.scaling)
    }

    pub fn with_observation(&self, input: AugmentedInput, y: f64) -> Result<Self> {
        self.with_observations([(input, y)])
    }

    pub fn data(&self) -> &TrainingSet {
        &self.data
    }

    pub fn domain(&self) -> &DomainBox {
        &self.domain
    }

    pub fn hyperparams(&self) -> &KernelHyperparams {
        &self.hyper
    }

    pub fn scaling(&self) -> OutputScaling {
        self.scaling
    }

    pub fn num_sources(&self) -> usize {
        self.hyper.num_sources()
    }

    /// Log marginal likelihood of the standardized training outputs.
    pub fn log_marginal_likelihood(&self) -> f64 {
        self.log_likelihood
    }

    /// Prior variance of source `source` in original units.
    pub fn prior_variance(&self, source: usize) -> f64 {
        self.hyper.prior_variance(source) * self.scaling.std_dev.powi(2)
    }

    pub fn prior_mean(&self, source: usize) -> f64 {
        self.scaling.mean + self.scaling.std_dev * self.hyper.prior_mean(source)
    }

    /// Smallest variance used inside logarithms and ratios: 1e-12 of the
    /// high-fidelity signal variance.
    pub fn variance_floor(&self) -> f64 {
        1e-12 * self.prior_variance(0)
    }

    fn kernel_column(&self, source: usize, unit: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.unit.len(), self.unit.iter().zip(&self.sources).map(|(x, &s)| prior_cov_unit(&self.hyper, source, unit, s, x)))
    }

    fn whiten(&self, mut k: DVector<f64>) -> DVector<f64> {
        let solved = self.chol_l.solve_lower_triangular_mut(&mut k);
        debug_assert!(solved);
        k
    }

    // standardized mean, standardized latent variance, whitened kernel column
    fn moments(&self, q: &AugmentedInput) -> (f64, f64, DVector<f64>) {
        let unit = self.domain.to_unit(&q.location);
        let k = self.kernel_column(q.source, &unit);
        let mean = self.hyper.prior_mean(q.source) + k.dot(&self.alpha);
        let v = self.whiten(k);
        let var = (self.hyper.prior_variance(q.source) - v.norm_squared()).max(0.0);
        (mean, var, v)
    }

    pub fn posterior_mean(&self, q: &AugmentedInput) -> f64 {
        let unit = self.domain.to_unit(&q.location);
        let k = self.kernel_column(q.source, &unit);
        self.scaling.mean + self.scaling.std_dev * (self.hyper.prior_mean(q.source) + k.dot(&self.alpha))
    }

    /// Posterior variance of the latent process, clamped at zero.
    pub fn posterior_var(&self, q: &AugmentedInput) -> f64 {
        let (_, var, _) = self.moments(q);
        var * self.scaling.std_dev.powi(2)
    }

    /// Mean and variance at one input.
    pub fn predict(&self, q: &AugmentedInput) -> (f64, f64) {
        let (mean, var, _) = self.moments(q);
        (self.scaling.mean + self.scaling.std_dev * mean, var * self.scaling.std_dev.powi(2))
    }

    pub fn posterior_cov(&self, a: &AugmentedInput, b: &AugmentedInput) -> f64 {
        if a == b {
            return self.posterior_var(a);
        }
        let ua = self.domain.to_unit(&a.location);
        let ub = self.domain.to_unit(&b.location);
        let va = self.whiten(self.kernel_column(a.source, &ua));
        let vb = self.whiten(self.kernel_column(b.source, &ub));
        let prior = prior_cov_unit(&self.hyper, a.source, &ua, b.source, &ub);
        // order-independent summation keeps the result exactly symmetric
        let reduction: f64 = va.iter().zip(vb.iter()).map(|(x, y)| x * y).sum();
        (prior - reduction) * self.scaling.std_dev.powi(2)
    }

    // standardized latent variance at (source, z_next) and its whitened column
    fn lookahead_source(&self, z_next: &[f64], source: usize) -> (f64, f64, DVector<f64>, Vec<f64>) {
        let un = self.domain.to_unit(z_next);
        let k = self.kernel_column(source, &un);
        let v = self.whiten(k);
        let var = (self.hyper.prior_variance(source) - v.norm_squared()).max(0.0);
        let denominator = var + self.hyper.nugget();
        (var, denominator, v, un)
    }

    fn zero_information(&self, latent_var: f64) -> bool {
        // the floor term absorbs rounding in `prior - |v|^2` at observed inputs
        latent_var <= self.hyper.nugget() + 1e-12 * self.hyper.components[0].variance
    }

    /// Variance of the hypothetical future high-fidelity mean at `z` after one
    /// more observation of `source` at `z_next`:
    /// `cov_P((0, z), (source, z_next))^2 / (var_P(source, z_next) + nugget)`.
    /// `None` when `(source, z_next)` is already resolved to the jitter level, in
    /// which case the observation carries no information.
    pub fn future_variance_reduction(&self, z: &[f64], z_next: &[f64], source: usize) -> Option<f64> {
        let (latent, denominator, vb, un) = self.lookahead_source(z_next, source);
        if self.zero_information(latent) {
            return None;
        }
        let uz = self.domain.to_unit(z);
        let vz = self.whiten(self.kernel_column(0, &uz));
        let cov = self.hyper.components[0].eval(&uz, &un) - vz.dot(&vb);
        Some(cov * cov / denominator * self.scaling.std_dev.powi(2))
    }

    /// High-fidelity posterior variance at `z` after one hypothetical
    /// observation of `source` at `z_next`, floored at [`Self::variance_floor`].
    pub fn lookahead_variance(&self, z: &[f64], z_next: &[f64], source: usize) -> f64 {
        let present = self.posterior_var(&AugmentedInput::high_fidelity(z.to_vec()));
        let reduction = self.future_variance_reduction(z, z_next, source).unwrap_or(0.0);
        (present - reduction).max(self.variance_floor())
    }

    /// High-fidelity means and variances at every point of `points`.
    pub fn predict_high_fidelity(&self, points: &SampleSet) -> HighFidelityBatch {
        let m = points.len();
        let n = self.unit.len();
        let unit: Vec<Vec<f64>> = points.iter().map(|p| self.domain.to_unit(p)).collect();
        let mut kx = DMatrix::<f64>::zeros(n, m);
        for (col, u) in unit.iter().enumerate() {
            for (i, x) in self.unit.iter().enumerate() {
                kx[(i, col)] = self.hyper.components[0].eval(u, x);
            }
        }
        let mean: Vec<f64> = (0..m)
            .map(|c| self.scaling.mean + self.scaling.std_dev * (self.hyper.means[0] + kx.column(c).dot(&self.alpha)))
            .collect();
        let solved = self.chol_l.solve_lower_triangular_mut(&mut kx);
        debug_assert!(solved);
        let s2 = self.scaling.std_dev.powi(2);
        let prior = self.hyper.components[0].variance;
        let variance = (0..m).map(|c| (prior - kx.column(c).norm_squared()).max(0.0) * s2).collect();
        HighFidelityBatch { mean, variance, unit, whitened: kx }
    }

    /// High-fidelity variances at `points`, without the batch bookkeeping of
    /// [`Self::predict_high_fidelity`]. Column for column the same arithmetic,
    /// so the values agree bit for bit.
    pub fn variance_high_fidelity<'a>(&self, points: impl ExactSizeIterator<Item = &'a [f64]>) -> Vec<f64> {
        let n = self.unit.len();
        let mut kx = DMatrix::<f64>::zeros(n, points.len());
        for (col, p) in points.enumerate() {
            let u = self.domain.to_unit(p);
            for (i, x) in self.unit.iter().enumerate() {
                kx[(i, col)] = self.hyper.components[0].eval(&u, x);
            }
        }
        let solved = self.chol_l.solve_lower_triangular_mut(&mut kx);
        debug_assert!(solved);
        let s2 = self.scaling.std_dev.powi(2);
        let prior = self.hyper.components[0].variance;
        kx.column_iter().map(|c| (prior - c.norm_squared()).max(0.0) * s2).collect()
    }

    /// High-fidelity means only; cheaper than [`Self::predict_high_fidelity`].
    pub fn mean_high_fidelity(&self, points: &SampleSet) -> Vec<f64> {
        let k0 = &self.hyper.components[0];
        points
            .iter()
            .map(|p| {
                let u = self.domain.to_unit(p);
                let s: f64 = self.unit.iter().zip(self.alpha.iter()).map(|(x, a)| a * k0.eval(&u, x)).sum();
                self.scaling.mean + self.scaling.std_dev * (self.hyper.means[0] + s)
            })
            .collect()
    }

    /// [`Self::future_variance_reduction`] for every point of a prepared batch.
    pub fn variance_reductions(&self, batch: &HighFidelityBatch, z_next: &[f64], source: usize) -> Option<Vec<f64>> {
        let (latent, denominator, vb, un) = self.lookahead_source(z_next, source);
        if self.zero_information(latent) {
            return None;
        }
        let s2 = self.scaling.std_dev.powi(2);
        let projected = batch.whitened.tr_mul(&vb);
        let k0 = &self.hyper.components[0];
        Some(
            batch
                .unit
                .iter()
                .zip(projected.iter())
                .map(|(u, p)| {
                    let cov = k0.eval(u, &un) - p;
                    cov * cov / denominator * s2
                })
                .collect(),
        )
    }
}

fn prior_cov_unit(h: &KernelHyperparams, sa: usize, ua: &[f64], sb: usize, ub: &[f64]) -> f64 {
    let base = h.components[0].eval(ua, ub);
    if sa == sb && sa > 0 {
        base + h.components[sa].eval(ua, ub)
    } else {
        base
    }
}

/// Serializable snapshot of a posterior: enough to rebuild it exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorState {
    pub data: TrainingSet,
    pub domain: DomainBox,
    pub hyperparams: KernelHyperparams,
    pub scaling: OutputScaling,
}

impl From<&MfGpPosterior> for PosteriorState {
    fn from(gp: &MfGpPosterior) -> Self {
        PosteriorState { data: gp.data.clone(), domain: gp.domain.clone(), hyperparams: gp.hyper.clone(), scaling: gp.scaling }
    }
}

impl PosteriorState {
    pub fn rebuild(&self) -> Result<MfGpPosterior> {
        MfGpPosterior::condition(self.data.clone(), &self.domain, self.hyperparams.clone(), self.scaling)
    }
}

#[cfg(test)]
mod tests;
