//! Independent checks of the closed-form acquisition quantities: quadrature of
//! the feasibility integral, a refit check of the lookahead variance, and a
//! double-loop Monte Carlo estimate of the lookahead information gain.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::acquisition::{eff_from_moments, expected_feasibility, select_source, CandidateSetZ, FeasibilityQuery, WeightingMode};
use crate::distributions::{DomainBox, SampleSet};
use crate::error::Result;
use crate::surrogate::{AugmentedInput, KernelHyperparams, MfGpPosterior, OutputScaling, SeKernel, TrainingSet};

/// Feasibility integral `int_{-eps}^{eps} (eps - |y|) N(y; mu, sigma^2) dy` by
/// double-exponential quadrature, split at the kink and at the mean.
pub fn eff_quadrature(mu: f64, sigma: f64, eps: f64) -> f64 {
    if eps == 0.0 {
        return 0.0;
    }
    let f = |y: f64| {
        let t = (y - mu) / sigma;
        (eps - y.abs()) * (-0.5 * t * t).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
    };
    let mut knots = vec![-eps, 0.0, eps];
    if mu.abs() < eps && mu != 0.0 {
        knots.push(mu);
    }
    knots.sort_by(f64::total_cmp);
    knots.windows(2).map(|w| quadrature::integrate(f, w[0], w[1], 1e-14 * eps.max(1.0)).integral).sum()
}

#[derive(Debug, Clone, Serialize)]
pub struct EffCase {
    pub mu: f64,
    pub sigma: f64,
    pub eps: f64,
    pub closed_form: f64,
    pub quadrature: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct EffSuite {
    pub cases: Vec<EffCase>,
    pub max_scaled_error: f64,
}

impl EffSuite {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.pass)
    }
}

/// Compares the closed form with quadrature on the case `(0, 1, 2)` plus
/// `n - 1` random cases with `sigma` log-uniform on `[1e-3, 1e3]`.
pub fn eff_suite(n: usize, seed: u64) -> EffSuite {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = vec![(0.0, 1.0, 2.0)];
    while params.len() < n {
        let sigma = 10f64.powf(rng.random_range(-3.0..3.0));
        let eps = sigma * rng.random_range(0.0..4.0);
        let mu = sigma * rng.random_range(-6.0..6.0);
        params.push((mu, sigma, eps));
    }
    let mut max_scaled_error: f64 = 0.0;
    let cases = params
        .into_iter()
        .map(|(mu, sigma, eps)| {
            let closed_form = expected_feasibility(&FeasibilityQuery { mu, sigma, eps });
            let quadrature = eff_quadrature(mu, sigma, eps);
            let scaled = (closed_form - quadrature).abs() / eps.max(1.0);
            max_scaled_error = max_scaled_error.max(scaled);
            EffCase { mu, sigma, eps, closed_form, quadrature, pass: scaled <= 1e-8 }
        })
        .collect();
    EffSuite { cases, max_scaled_error }
}

fn random_gp(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Result<MfGpPosterior> {
    let mut data = TrainingSet::new();
    while data.len() < n {
        let source = if data.is_empty() { 0 } else { rng.random_range(0..2) };
        let z: Vec<f64> = (0..dim).map(|_| rng.random()).collect();
        let input = AugmentedInput::new(source, z);
        if !data.contains(&input) {
            data.push(input, rng.random_range(-2.0..2.0))?;
        }
    }
    let hyper = KernelHyperparams {
        components: vec![
            SeKernel::new(rng.random_range(0.5..2.0), (0..dim).map(|_| rng.random_range(0.2..0.6)).collect()),
            SeKernel::new(rng.random_range(0.05..0.5), (0..dim).map(|_| rng.random_range(0.2..0.6)).collect()),
        ],
        means: vec![rng.random_range(-0.5..0.5), rng.random_range(-0.2..0.2)],
        jitter: 1e-10,
    };
    let scaling = OutputScaling::from_data(&data);
    MfGpPosterior::condition(data, &DomainBox::unit(dim), hyper, scaling)
}

#[derive(Debug, Clone, Serialize)]
pub struct RefitSuite {
    pub relative_errors: Vec<f64>,
}

impl RefitSuite {
    pub fn max_relative_error(&self) -> f64 {
        self.relative_errors.iter().copied().fold(0.0, f64::max)
    }
}

/// Lookahead variance against the variance of a GP actually conditioned on a
/// hypothetical observation, on `n` random small cases.
pub fn refit_suite(n: usize, seed: u64) -> Result<RefitSuite> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut relative_errors = Vec::with_capacity(n);
    for case in 0..n {
        let gp = random_gp(&mut rng, 4 + case % 5, 2)?;
        let z = [rng.random::<f64>(), rng.random::<f64>()];
        let z_next = [rng.random::<f64>(), rng.random::<f64>()];
        let source = rng.random_range(0..2);
        let refit = gp.with_observation(AugmentedInput::new(source, z_next.to_vec()), rng.random_range(-3.0..3.0))?;
        let oracle = refit.posterior_var(&AugmentedInput::high_fidelity(z.to_vec()));
        let closed = gp.lookahead_variance(&z, &z_next, source);
        relative_errors.push((closed - oracle).abs() / oracle.max(gp.variance_floor()));
    }
    Ok(RefitSuite { relative_errors })
}

fn gaussian_kl(mu_p: f64, var_p: f64, mu_f: f64, var_f: f64) -> f64 {
    0.5 * (var_f / var_p).ln() + (var_p + (mu_p - mu_f).powi(2)) / (2.0 * var_f) - 0.5
}

/// Double-loop estimate of `sum_z w(z) E_y[KL(present(z) || future(z | y))]`:
/// `outer` draws of the hypothetical observation, each followed by an exact
/// re-conditioning. Returns the estimate and its standard error.
pub fn double_loop_gain(gp: &MfGpPosterior, z_next: &[f64], source: usize, z_set: &SampleSet, weights: &[f64], outer: usize, seed: u64) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = AugmentedInput::new(source, z_next.to_vec());
    let (mean, latent_var) = gp.predict(&input);
    let nugget = gp.hyperparams().nugget() * gp.scaling().std_dev.powi(2);
    let predictive = Normal::new(mean, (latent_var + nugget).sqrt()).expect("finite moments");
    let present = gp.predict_high_fidelity(z_set);
    let mut totals = Vec::with_capacity(outer);
    for _ in 0..outer {
        let y = predictive.sample(&mut rng);
        let future = gp.with_observation(input.clone(), y)?;
        let fut = future.predict_high_fidelity(z_set);
        let total: f64 = (0..z_set.len())
            .map(|i| {
                let var_p = present.variance[i];
                if var_p <= gp.variance_floor() {
                    return 0.0;
                }
                let var_f = fut.variance[i].max(gp.variance_floor());
                weights[i] * gaussian_kl(present.mean[i], var_p, fut.mean[i], var_f)
            })
            .sum();
        totals.push(total);
    }
    let n = totals.len() as f64;
    let avg = totals.iter().sum::<f64>() / n;
    let var = totals.iter().map(|t| (t - avg).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((avg, (var / n).sqrt()))
}

#[derive(Debug, Clone, Serialize)]
pub struct GainCase {
    pub closed_form: Vec<f64>,
    pub double_loop: Vec<f64>,
    pub std_error: Vec<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GainSuite {
    pub cases: Vec<GainCase>,
}

impl GainSuite {
    pub fn agreeing(&self) -> usize {
        self.cases.iter().filter(|c| c.pass).count()
    }
}

/// Closed-form per-source gains against double-loop Monte Carlo on `n`
/// random five-point two-source GPs, with `outer` draws per estimate.
pub fn gain_suite(n: usize, outer: usize, seed: u64) -> Result<GainSuite> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::with_capacity(n);
    for case in 0..n {
        let dim = 1 + case % 2;
        let gp = random_gp(&mut rng, 5, dim)?;
        let pts: Vec<Vec<f64>> = (0..100).map(|_| (0..dim).map(|_| rng.random()).collect()).collect();
        let z_set = SampleSet::from_points(&pts, 0)?;
        let z_next: Vec<f64> = (0..dim).map(|_| rng.random()).collect();
        let batch = gp.predict_high_fidelity(&z_set);
        let weights: Vec<f64> = batch.mean.iter().zip(&batch.variance).map(|(&m, &v)| eff_from_moments(m, v)).collect();
        let selection = select_source(&gp, &z_next, &CandidateSetZ::new(z_set.clone())?, &[1.0, 1.0], WeightingMode::Eff)?;
        let mut closed_form = Vec::new();
        let mut double_loop = Vec::new();
        let mut std_error = Vec::new();
        let mut pass = true;
        for source in 0..2 {
            let closed = selection.gains[source].raw_gain;
            let (est, se) = double_loop_gain(&gp, &z_next, source, &z_set, &weights, outer, rng.random())?;
            pass &= (closed - est).abs() <= 3.0 * se + 1e-9 * closed.abs().max(1.0);
            closed_form.push(closed);
            double_loop.push(est);
            std_error.push(se);
        }
        cases.push(GainCase { closed_form, double_loop, std_error, pass });
    }
    Ok(GainSuite { cases })
}
