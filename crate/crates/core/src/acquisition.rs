//! Two-stage sampling criterion: where to sample next (expected feasibility)
//! and which information source to query there (cost-normalized, weighted
//! one-step lookahead information gain).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::distributions::{latin_hypercube, DomainBox, SampleSet};
use crate::error::{Error, Result};
use crate::optimize::{nelder_mead_unit, pattern_search_unit, NelderMeadOptions};
use crate::surrogate::{AugmentedInput, KernelHyperparams, MfGpPosterior, OutputScaling};

/// Half-width of the feasibility band in units of the posterior standard deviation.
pub const EPSILON_MULTIPLIER: f64 = 2.0;

/// Upper limit on a single information-gain term.
pub const KL_TERM_CAP: f64 = 1e3;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub(crate) fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

pub(crate) fn std_normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Predictive distribution of the high-fidelity surrogate at one point,
/// together with the band half-width `eps` around the zero contour.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeasibilityQuery {
    pub mu: f64,
    pub sigma: f64,
    pub eps: f64,
}

impl FeasibilityQuery {
    pub fn new(mu: f64, sigma: f64, eps: f64) -> Result<Self> {
        if !(mu.is_finite() && sigma.is_finite() && sigma > 0.0 && eps >= 0.0) {
            return Err(Error::precondition(format!("invalid feasibility query mu={mu} sigma={sigma} eps={eps}")));
        }
        Ok(FeasibilityQuery { mu, sigma, eps })
    }

    /// Query with the default band `eps = 2 sigma`.
    pub fn with_default_band(mu: f64, sigma: f64) -> Result<Self> {
        Self::new(mu, sigma, EPSILON_MULTIPLIER * sigma)
    }
}

/// Closed form of `E[eps - min(|y|, eps)]` for `y ~ N(mu, sigma^2)`.
pub fn expected_feasibility(q: &FeasibilityQuery) -> f64 {
    let FeasibilityQuery { mu, sigma, eps } = *q;
    let t0 = -mu / sigma;
    let tl = (-eps - mu) / sigma;
    let tu = (eps - mu) / sigma;
    let value = mu * (2.0 * std_normal_cdf(t0) - std_normal_cdf(tl) - std_normal_cdf(tu))
        - sigma * (2.0 * std_normal_pdf(t0) - std_normal_pdf(tl) - std_normal_pdf(tu))
        + eps * (std_normal_cdf(tu) - std_normal_cdf(tl));
    value.clamp(0.0, eps)
}

/// Probability that `y ~ N(mu, sigma^2)` falls inside `[-eps, eps]`.
pub fn probability_of_feasibility(q: &FeasibilityQuery) -> f64 {
    let FeasibilityQuery { mu, sigma, eps } = *q;
    (std_normal_cdf((eps - mu) / sigma) - std_normal_cdf((-eps - mu) / sigma)).clamp(0.0, 1.0)
}

/// Expected feasibility with `eps = 2 sigma`; zero where the variance vanishes.
pub fn eff_from_moments(mean: f64, variance: f64) -> f64 {
    if !(variance > 0.0) || !mean.is_finite() {
        return 0.0;
    }
    let sigma = variance.sqrt();
    expected_feasibility(&FeasibilityQuery { mu: mean, sigma, eps: EPSILON_MULTIPLIER * sigma })
}

fn pf_from_moments(mean: f64, variance: f64) -> f64 {
    if !(variance > 0.0) || !mean.is_finite() {
        return 0.0;
    }
    let sigma = variance.sqrt();
    probability_of_feasibility(&FeasibilityQuery { mu: mean, sigma, eps: EPSILON_MULTIPLIER * sigma })
}

/// How information-gain terms are weighted across the input space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightingMode {
    None,
    #[default]
    Eff,
    Pf,
}

impl WeightingMode {
    pub fn weight(self, mean: f64, variance: f64) -> f64 {
        match self {
            WeightingMode::None => 1.0,
            WeightingMode::Eff => eff_from_moments(mean, variance),
            WeightingMode::Pf => pf_from_moments(mean, variance),
        }
    }
}

impl FromStr for WeightingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(WeightingMode::None),
            "eff" => Ok(WeightingMode::Eff),
            "pf" => Ok(WeightingMode::Pf),
            other => Err(Error::config(format!("unknown weighting mode '{other}' (expected none, eff or pf)"))),
        }
    }
}

impl fmt::Display for WeightingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WeightingMode::None => "none",
            WeightingMode::Eff => "eff",
            WeightingMode::Pf => "pf",
        })
    }
}

/// Fixed realizations over which the information gain is summed.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSetZ {
    samples: SampleSet,
}

impl CandidateSetZ {
    pub fn new(samples: SampleSet) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::config("information-gain set must be nonempty"));
        }
        Ok(CandidateSetZ { samples })
    }

    pub fn samples(&self) -> &SampleSet {
        &self.samples
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceGain {
    pub source: usize,
    /// `sum_z w(z) D(z | z_next, source)`
    pub raw_gain: f64,
    pub cost: f64,
    pub normalized_gain: f64,
    /// Terms that hit [`KL_TERM_CAP`].
    pub capped_terms: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceSelection {
    pub source: usize,
    pub gains: Vec<SourceGain>,
}

/// Expected KL divergence between the present and the lookahead high-fidelity
/// predictions at one point, from the present variance `sigma_p2` and the
/// variance reduction `sigma_bar2`. Returns the term and whether it was capped;
/// only terms whose future variance falls to `floor` are capped.
pub fn kl_divergence_term(sigma_p2: f64, sigma_bar2: f64, floor: f64) -> (f64, bool) {
    if sigma_p2 <= floor || sigma_bar2 <= 0.0 {
        return (0.0, false);
    }
    let resolved = sigma_p2 - sigma_bar2 <= floor;
    let sigma_f2 = (sigma_p2 - sigma_bar2).max(floor);
    let d = 0.5 * (sigma_f2 / sigma_p2).ln() + (sigma_p2 + sigma_bar2) / (2.0 * sigma_f2) - 0.5;
    if resolved && d > KL_TERM_CAP {
        (KL_TERM_CAP, true)
    } else {
        (d, false)
    }
}

/// Lookahead information-gain integrand at `z` for one observation of `source`
/// at `z_next`.
pub fn kl_gain_term(gp: &MfGpPosterior, z: &[f64], z_next: &[f64], source: usize) -> f64 {
    let present = gp.posterior_var(&AugmentedInput::high_fidelity(z.to_vec()));
    match gp.future_variance_reduction(z, z_next, source) {
        Some(reduction) => {
            let (d, capped) = kl_divergence_term(present, reduction, gp.variance_floor());
            if capped {
                log::debug!("information-gain term capped at z={z:?}, z_next={z_next:?}, source={source}");
            }
            d
        }
        None => 0.0,
    }
}

/// Cost-normalized argmax; ties go to the lower (higher-fidelity) source.
pub fn choose_source(raw_gains: &[f64], costs: &[f64]) -> SourceSelection {
    let gains: Vec<SourceGain> = raw_gains
        .iter()
        .zip(costs)
        .enumerate()
        .map(|(source, (&raw_gain, &cost))| SourceGain { source, raw_gain, cost, normalized_gain: raw_gain / cost, capped_terms: 0 })
        .collect();
    let mut best = 0;
    for g in &gains {
        if g.normalized_gain > gains[best].normalized_gain {
            best = g.source;
        }
    }
    SourceSelection { source: best, gains }
}

/// Selects the information source for the next evaluation at `z_next`.
pub fn select_source(gp: &MfGpPosterior, z_next: &[f64], z_set: &CandidateSetZ, costs: &[f64], mode: WeightingMode) -> Result<SourceSelection> {
    let num_sources = gp.num_sources();
    if costs.len() != num_sources || costs.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
        return Err(Error::config(format!("need {num_sources} positive costs, got {costs:?}")));
    }
    if num_sources == 1 {
        return Ok(choose_source(&[0.0], costs));
    }
    let batch = gp.predict_high_fidelity(z_set.samples());
    let weights: Vec<f64> = batch.mean.iter().zip(&batch.variance).map(|(&m, &v)| mode.weight(m, v)).collect();
    let floor = gp.variance_floor();
    let mut raw = Vec::with_capacity(num_sources);
    let mut capped = Vec::with_capacity(num_sources);
    for source in 0..num_sources {
        let mut total = 0.0;
        let mut n_capped = 0;
        if let Some(reductions) = gp.variance_reductions(&batch, z_next, source) {
            for ((&w, &sp2), &sb2) in weights.iter().zip(&batch.variance).zip(&reductions) {
                let (d, was_capped) = kl_divergence_term(sp2, sb2, floor);
                n_capped += was_capped as usize;
                total += w * d;
            }
        }
        if n_capped > 0 {
            log::debug!("source {source}: {n_capped} information-gain terms capped");
        }
        raw.push(total);
        capped.push(n_capped);
    }
    let mut selection = choose_source(&raw, costs);
    for (g, c) in selection.gains.iter_mut().zip(capped) {
        g.capped_terms = c;
    }
    Ok(selection)
}

/// Index of the largest value; the first one wins ties.
pub fn argmax_first(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.is_none_or(|b| v > values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Settings of the continuous expected-feasibility search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuousSearch {
    /// Space-filling screening points per input dimension.
    pub screening_per_dim: usize,
    pub pattern_iterations: usize,
    pub local_starts: usize,
    pub local_evaluations: usize,
}

impl Default for ContinuousSearch {
    fn default() -> Self {
        ContinuousSearch { screening_per_dim: 100, pattern_iterations: 200, local_starts: 10, local_evaluations: 200 }
    }
}

/// Where the next sampling location may come from.
#[derive(Debug, Clone, Copy)]
pub enum LocationSearch<'a> {
    Continuous(ContinuousSearch),
    Candidates(&'a SampleSet),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocationChoice {
    pub point: Vec<f64>,
    pub eff: f64,
    /// Index into the candidate set in candidate-restricted mode.
    pub candidate_index: Option<usize>,
}

const CANDIDATE_CHUNK: usize = 4096;
const SCREEN_BATCH: usize = 64;

/// Variance upper bounds for a fixed candidate set, reused across
/// iterations. With hyperparameters and output scaling unchanged, adding data
/// can only lower a posterior variance, and the feasibility with `eps = 2
/// sigma` is nondecreasing in `sigma` at fixed mean. Old variances therefore
/// bound the current feasibility from above, and only candidates whose bound
/// can still beat the incumbent need an exact variance.
#[derive(Debug, Clone, Default)]
pub struct CandidateScreen {
    variance_bounds: Vec<f64>,
    valid_for: Option<(KernelHyperparams, OutputScaling, usize)>,
    /// Exact variances computed by the most recent search.
    pub exact_evaluations: usize,
}

impl CandidateScreen {
    fn is_valid(&self, gp: &MfGpPosterior, m: usize) -> bool {
        self.variance_bounds.len() == m
            && self.valid_for.as_ref().is_some_and(|(h, s, n)| h == gp.hyperparams() && *s == gp.scaling() && *n <= gp.data().len())
    }
}

fn better(candidate: (usize, f64), best: Option<(usize, f64)>) -> bool {
    best.is_none_or(|b| candidate.1 > b.1 || (candidate.1 == b.1 && candidate.0 < b.0))
}

/// Exact argmax of the feasibility over a candidate set (first index on
/// ties). `screen` must only ever see posteriors of one run on one candidate
/// set, each conditioned on a superset of the previous data.
pub fn select_candidate(gp: &MfGpPosterior, candidates: &SampleSet, screen: &mut CandidateScreen) -> Result<LocationChoice> {
    if candidates.is_empty() {
        return Err(Error::config("candidate set is empty"));
    }
    if candidates.dim() != gp.domain().dim() {
        return Err(Error::config("candidate dimension does not match the domain"));
    }
    let m = candidates.len();
    let means = gp.mean_high_fidelity(candidates);
    let mut best: Option<(usize, f64)> = None;

    if !screen.is_valid(gp, m) {
        let mut variances = Vec::with_capacity(m);
        for start in (0..m).step_by(CANDIDATE_CHUNK) {
            let end = (start + CANDIDATE_CHUNK).min(m);
            variances.extend(gp.variance_high_fidelity((start..end).map(|i| candidates.point(i))));
        }
        for (i, (&mu, &var)) in means.iter().zip(&variances).enumerate() {
            let eff = eff_from_moments(mu, var);
            if better((i, eff), best) {
                best = Some((i, eff));
            }
        }
        screen.variance_bounds = variances;
        screen.exact_evaluations = m;
    } else {
        // inflate slightly so rounding in the old variances cannot cut a true maximizer
        let floor = gp.variance_floor();
        let bounds: Vec<f64> = means.iter().zip(&screen.variance_bounds).map(|(&mu, &v)| eff_from_moments(mu, v * (1.0 + 1e-9) + floor)).collect();
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| bounds[b].total_cmp(&bounds[a]).then(a.cmp(&b)));
        let mut done = 0;
        while done < m {
            if let Some((_, eff)) = best {
                if bounds[order[done]] < eff {
                    break;
                }
            }
            let batch = &order[done..(done + SCREEN_BATCH).min(m)];
            let variances = gp.variance_high_fidelity(batch.iter().map(|&i| candidates.point(i)));
            for (&i, var) in batch.iter().zip(variances) {
                screen.variance_bounds[i] = var;
                let eff = eff_from_moments(means[i], var);
                if better((i, eff), best) {
                    best = Some((i, eff));
                }
            }
            done += batch.len();
        }
        screen.exact_evaluations = done;
    }
    screen.valid_for = Some((gp.hyperparams().clone(), gp.scaling(), gp.data().len()));
    let (index, eff) = best.expect("nonempty");
    Ok(LocationChoice { point: candidates.point(index).to_vec(), eff, candidate_index: Some(index) })
}

/// Maximizes the expected feasibility of the high-fidelity surrogate.
pub fn select_location(gp: &MfGpPosterior, domain: &DomainBox, search: LocationSearch<'_>, seed: u64) -> Result<LocationChoice> {
    match search {
        LocationSearch::Candidates(candidates) => select_candidate(gp, candidates, &mut CandidateScreen::default()),
        LocationSearch::Continuous(opts) => Ok(continuous_search(gp, domain, &opts, seed)),
    }
}

fn continuous_search(gp: &MfGpPosterior, domain: &DomainBox, opts: &ContinuousSearch, seed: u64) -> LocationChoice {
    let dim = domain.dim();
    let unit_box = DomainBox::unit(dim);
    let neg_eff = |u: &[f64]| -> f64 {
        let (m, v) = gp.predict(&AugmentedInput::high_fidelity(domain.from_unit(u)));
        -eff_from_moments(m, v)
    };

    // screening design, scored in one batch
    let n_screen = (opts.screening_per_dim * dim).max(1);
    let screen = latin_hypercube(&unit_box, n_screen, seed).expect("valid unit box");
    let in_domain: Vec<Vec<f64>> = screen.iter().map(|u| domain.from_unit(u)).collect();
    let batch = gp.predict_high_fidelity(&SampleSet::from_points(&in_domain, seed).expect("nonempty"));
    let mut scored: Vec<(Vec<f64>, f64)> = screen
        .iter()
        .zip(batch.mean.iter().zip(&batch.variance))
        .map(|(u, (&m, &v))| (u.to_vec(), -eff_from_moments(m, v)))
        .collect();
    scored.sort_by(|a, b| a.1.total_cmp(&b.1));

    let mut best = scored[0].clone();
    let pattern = pattern_search_unit(neg_eff, &best.0, 0.25 / (n_screen as f64).powf(1.0 / dim as f64).max(1.0), opts.pattern_iterations);
    if pattern.value < best.1 {
        best = (pattern.x.clone(), pattern.value);
    }

    let nm = NelderMeadOptions { max_evaluations: opts.local_evaluations, initial_step: 0.02, tolerance: 1e-12 };
    let mut starts = vec![pattern.x];
    starts.extend(scored.iter().take(opts.local_starts.saturating_sub(1)).map(|s| s.0.clone()));
    for start in starts.iter().take(opts.local_starts) {
        let m = nelder_mead_unit(neg_eff, start, &nm);
        if m.value < best.1 {
            best = (m.x, m.value);
        }
    }
    let mut point = domain.from_unit(&best.0);
    domain.clamp(&mut point);
    let (m, v) = gp.predict(&AugmentedInput::high_fidelity(point.clone()));
    LocationChoice { point, eff: eff_from_moments(m, v), candidate_index: None }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surrogate::{KernelHyperparams, OutputScaling, SeKernel, TrainingSet};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn q(mu: f64, sigma: f64, eps: f64) -> FeasibilityQuery {
        FeasibilityQuery::new(mu, sigma, eps).unwrap()
    }

    // frozen from adaptive Gauss–Kronrod quadrature of the band integral (see `oracle`)
    #[test]
    fn eff_pinned_case() {
        let e = expected_feasibility(&q(0.0, 1.0, 2.0));
        assert!((e - 1.219_096_844_430_794).abs() < 1e-10, "{e:.17}");
        assert!((e - 1.219_096).abs() < 1e-6);
    }

    #[test]
    fn eff_far_from_contour_vanishes() {
        assert!(expected_feasibility(&q(100.0, 1.0, 2.0)) < 1e-12);
    }

    #[test]
    fn eff_zero_band() {
        assert_eq!(expected_feasibility(&q(0.0, 1.0, 0.0)), 0.0);
    }

    #[test]
    fn pf_values() {
        assert!((probability_of_feasibility(&q(0.0, 1.0, 2.0)) - 0.954_500).abs() < 5e-7);
        assert_eq!(probability_of_feasibility(&q(0.3, 1.0, 0.0)), 0.0);
        assert!((probability_of_feasibility(&q(0.0, 1.0, 1e6)) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn invalid_query_rejected() {
        assert!(FeasibilityQuery::new(0.0, 0.0, 1.0).is_err());
        assert!(FeasibilityQuery::new(0.0, 1.0, -1.0).is_err());
    }

    #[test]
    fn candidate_argmax_and_ties() {
        assert_eq!(argmax_first(&[0.1, 0.9, 0.3]), Some(1));
        assert_eq!(argmax_first(&[0.4, 0.4, 0.4]), Some(0));
        assert_eq!(argmax_first(&[]), None);
    }

    #[test]
    fn kl_term_vanishes_without_reduction() {
        assert_eq!(kl_divergence_term(0.7, 0.0, 1e-12).0, 0.0);
    }

    #[test]
    fn kl_term_caps_at_floor() {
        let (d, capped) = kl_divergence_term(1.0, 1.0, 1e-12);
        assert!(capped);
        assert_eq!(d, KL_TERM_CAP);
    }

    #[test]
    fn large_term_above_floor_is_exact() {
        let (d, capped) = kl_divergence_term(1.0, 1.0 - 1e-6, 1e-12);
        assert!(!capped);
        let expected = 0.5 * 1e-6f64.ln() + (2.0 - 1e-6) / 2e-6 - 0.5;
        assert!((d - expected).abs() < 1e-6 * expected);
    }

    #[test]
    fn single_source_always_high_fidelity() {
        assert_eq!(choose_source(&[3.0], &[1.0]).source, 0);
    }

    #[test]
    fn cost_normalization_prefers_cheap_source_on_equal_gain() {
        assert_eq!(choose_source(&[2.5, 2.5], &[1.0, 0.01]).source, 1);
        assert_eq!(choose_source(&[2.5, 2.5], &[1.0, 1.0]).source, 0);
    }

    #[test]
    fn cost_scaling_keeps_argmax_and_order() {
        let raw = [0.4, 0.01, 0.0007];
        let costs = [1.0, 0.01, 0.001];
        let base = choose_source(&raw, &costs);
        for lambda in [1e-3, 0.5, 7.0, 1e4] {
            let scaled: Vec<f64> = costs.iter().map(|c| c * lambda).collect();
            let s = choose_source(&raw, &scaled);
            assert_eq!(s.source, base.source);
            let order = |sel: &SourceSelection| {
                let mut idx: Vec<usize> = (0..3).collect();
                idx.sort_by(|&a, &b| sel.gains[b].normalized_gain.total_cmp(&sel.gains[a].normalized_gain));
                idx
            };
            assert_eq!(order(&s), order(&base));
        }
    }

    fn gp_1d(points: &[(usize, f64, f64)]) -> MfGpPosterior {
        let data = TrainingSet::from_observations(points.iter().map(|&(s, z, y)| (AugmentedInput::new(s, vec![z]), y))).unwrap();
        let hyper = KernelHyperparams {
            components: vec![SeKernel::new(1.0, vec![0.15]), SeKernel::new(0.05, vec![0.3])],
            means: vec![0.0, 0.0],
            jitter: 1e-10,
        };
        let scaling = OutputScaling::from_data(&data);
        MfGpPosterior::condition(data, &DomainBox::new(vec![-1.0], vec![2.0]).unwrap(), hyper, scaling).unwrap()
    }

    #[test]
    fn continuous_search_beats_dense_grid() {
        let gp = gp_1d(&[(0, -0.8, 1.2), (0, 0.1, -0.4), (0, 0.9, 0.7), (0, 1.7, -1.1), (1, 0.5, 0.2)]);
        let domain = gp.domain().clone();
        let choice = select_location(&gp, &domain, LocationSearch::Continuous(ContinuousSearch::default()), 3).unwrap();
        let grid_max = (0..10_000)
            .map(|i| {
                let z = -1.0 + 3.0 * i as f64 / 9_999.0;
                let (m, v) = gp.predict(&AugmentedInput::high_fidelity(vec![z]));
                eff_from_moments(m, v)
            })
            .fold(0.0, f64::max);
        assert!(choice.eff >= grid_max - 1e-8, "{} < {grid_max}", choice.eff);
        let (m, v) = gp.predict(&AugmentedInput::high_fidelity(choice.point.clone()));
        assert!((eff_from_moments(m, v) - choice.eff).abs() < 1e-14);
    }

    #[test]
    fn candidate_mode_picks_exact_argmax() {
        let gp = gp_1d(&[(0, -0.8, 1.2), (0, 0.1, -0.4), (0, 0.9, 0.7), (1, 0.5, 0.2)]);
        let pts: Vec<Vec<f64>> = (0..50).map(|i| vec![-1.0 + 3.0 * i as f64 / 49.0]).collect();
        let set = SampleSet::from_points(&pts, 0).unwrap();
        let choice = select_location(&gp, gp.domain(), LocationSearch::Candidates(&set), 0).unwrap();
        let effs: Vec<f64> = pts
            .iter()
            .map(|p| {
                let (m, v) = gp.predict(&AugmentedInput::high_fidelity(p.clone()));
                eff_from_moments(m, v)
            })
            .collect();
        assert_eq!(choice.candidate_index, argmax_first(&effs));
        assert_eq!(choice.point, pts[choice.candidate_index.unwrap()]);
    }

    #[test]
    fn screened_candidates_match_brute_force() {
        let mut gp = gp_1d(&[(0, -0.8, 1.2), (0, 0.1, -0.4), (0, 0.9, 0.7), (1, 0.5, 0.2)]);
        let pts: Vec<Vec<f64>> = (0..500).map(|i| vec![-1.0 + 3.0 * i as f64 / 499.0]).collect();
        let set = SampleSet::from_points(&pts, 0).unwrap();
        let mut screen = CandidateScreen::default();
        for step in 0..6 {
            let screened = select_candidate(&gp, &set, &mut screen).unwrap();
            let fresh = select_candidate(&gp, &set, &mut CandidateScreen::default()).unwrap();
            assert_eq!(screened, fresh, "step {step}");
            if step > 0 {
                assert!(screen.exact_evaluations < set.len());
            }
            let z = screened.point.clone();
            let y = (3.0 * z[0]).sin();
            gp = gp.with_observation(AugmentedInput::new(step % 2, z), y).unwrap();
        }
    }

    #[test]
    fn empty_candidates_rejected() {
        let gp = gp_1d(&[(0, 0.1, -0.4), (0, 0.9, 0.7)]);
        let set = SampleSet::from_points(&[vec![0.0]], 0).unwrap().truncated(0);
        assert!(matches!(select_location(&gp, gp.domain(), LocationSearch::Candidates(&set), 0), Err(Error::Config(_))));
    }

    #[test]
    fn unweighted_gain_is_plain_sum_of_terms() {
        let gp = gp_1d(&[(0, -0.8, 1.2), (0, 0.1, -0.4), (0, 0.9, 0.7), (1, 0.5, 0.2), (1, 1.5, 0.1)]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<Vec<f64>> = (0..64).map(|_| vec![rng.random_range(-1.0..2.0)]).collect();
        let z_set = CandidateSetZ::new(SampleSet::from_points(&pts, 0).unwrap()).unwrap();
        let costs = [1.0, 0.05];
        let z_next = [0.4];
        let sel = select_source(&gp, &z_next, &z_set, &costs, WeightingMode::None).unwrap();
        for (source, g) in sel.gains.iter().enumerate() {
            let expected: f64 = pts.iter().map(|p| kl_gain_term(&gp, p, &z_next, source)).sum();
            assert!((g.raw_gain - expected).abs() <= 1e-9 * expected.max(1.0));
            assert!(g.raw_gain >= -1e-9);
            assert!((g.normalized_gain - expected / costs[source]).abs() <= 1e-9 * expected.max(1.0) / costs[source]);
        }
        let best = argmax_first(&sel.gains.iter().map(|g| g.normalized_gain).collect::<Vec<_>>()).unwrap();
        assert_eq!(sel.source, best);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn eff_within_band(mu in -50.0f64..50.0, sigma in 1e-3f64..1e3, eps in 0.0f64..100.0) {
                let e = expected_feasibility(&q(mu, sigma, eps));
                prop_assert!(e >= 0.0 && e <= eps);
            }

            #[test]
            fn pf_bounded_and_monotone(mu in -50.0f64..50.0, sigma in 1e-3f64..1e3, eps in 0.0f64..100.0, extra in 0.0f64..10.0) {
                let a = probability_of_feasibility(&q(mu, sigma, eps));
                let b = probability_of_feasibility(&q(mu, sigma, eps + extra));
                prop_assert!((0.0..=1.0).contains(&a));
                prop_assert!(b >= a);
            }

            #[test]
            fn kl_term_nonnegative(sp2 in 1e-8f64..1e3, frac in 0.0f64..1.0) {
                let (d, _) = kl_divergence_term(sp2, frac * sp2, 1e-12);
                prop_assert!(d >= -1e-9);
            }

            #[test]
            fn source_argmax_scale_invariant(raw in proptest::collection::vec(0.0f64..10.0, 1..5), lambda in 1e-6f64..1e6) {
                let costs: Vec<f64> = (0..raw.len()).map(|l| 10f64.powi(-(l as i32))).collect();
                let scaled: Vec<f64> = costs.iter().map(|c| c * lambda).collect();
                prop_assert_eq!(choose_source(&raw, &costs).source, choose_source(&raw, &scaled).source);
            }
        }
    }
}
