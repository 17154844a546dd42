//! Replicated comparisons of algorithm variants on a shared Monte Carlo set.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::report::{convergence_report, ConvergenceReport};
use crate::acquisition::WeightingMode;
use crate::distributions::{derive_seed, draw_mc, SampleSet, SeedStream};
use crate::driver::{run_egra, run_mfegra, ProblemDefinition, RunConfig, RunHistory, SearchMode, Snapshot};
use crate::error::{Error, Result};
use crate::reliability::{estimate_pf_from_values, FailureEstimate};
use crate::surrogate::PosteriorState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Mfegra,
    Egra,
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mfegra" => Ok(Algorithm::Mfegra),
            "egra" => Ok(Algorithm::Egra),
            other => Err(Error::config(format!("unknown algorithm '{other}' (expected mfegra or egra)"))),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Mfegra => "mfegra",
            Algorithm::Egra => "egra",
        })
    }
}

/// One configuration compared in a study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub algorithm: Algorithm,
    pub weighting: WeightingMode,
    pub search: SearchMode,
}

impl Variant {
    pub fn new(algorithm: Algorithm, weighting: WeightingMode, search: SearchMode) -> Self {
        Variant { algorithm, weighting, search }
    }

    /// Label used in reports, e.g. `mfegra-eff` or `egra-candidates`.
    pub fn label(&self) -> String {
        let mut s = self.algorithm.to_string();
        if self.algorithm == Algorithm::Mfegra {
            s.push('-');
            s.push_str(&self.weighting.to_string());
        }
        if self.search == SearchMode::Candidates {
            s.push_str("-candidates");
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct StudySpec {
    pub replications: usize,
    /// Per-replication settings; seed, snapshot and candidates are filled in
    /// by the study.
    pub base: RunConfig,
    pub variants: Vec<Variant>,
    pub seed: u64,
    /// Size of the shared Monte Carlo set.
    pub pf_samples: usize,
    pub workers: usize,
    pub thresholds: Vec<f64>,
}

impl StudySpec {
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::config("a study needs at least one replication"));
        }
        if self.variants.is_empty() {
            return Err(Error::config("a study needs at least one algorithm"));
        }
        if self.pf_samples == 0 {
            return Err(Error::config("the Monte Carlo set must be nonempty"));
        }
        Ok(())
    }

    /// Seed of replication `r`, shared by every variant.
    pub fn replication_seed(&self, r: usize) -> u64 {
        derive_seed(self.seed, SeedStream::Doe, 1 + r as u64)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicationOutcome {
    pub variant: String,
    pub replication: usize,
    pub seed: u64,
    pub history: Option<RunHistory>,
    /// Fraction of the shared set on which the final surrogate and the
    /// high-fidelity model disagree.
    pub misclassified: Option<f64>,
    /// Final surrogate, for evaluation on other sample sets.
    pub final_state: Option<PosteriorState>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct StudyResult {
    pub reference: FailureEstimate,
    /// SHA-256 of the shared Monte Carlo set.
    pub sample_hash: String,
    pub variants: Vec<Variant>,
    pub outcomes: Vec<ReplicationOutcome>,
    pub report: ConvergenceReport,
}

impl StudyResult {
    pub fn outcomes_for<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a ReplicationOutcome> + 'a {
        self.outcomes.iter().filter(move |o| o.variant == label)
    }
}

pub fn hash_samples(samples: &SampleSet) -> String {
    let mut hasher = Sha256::new();
    for v in samples.as_flat() {
        hasher.update(v.to_le_bytes());
    }
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Shared Monte Carlo set of a study and the high-fidelity values on it.
pub struct ReferenceSet {
    pub samples: Arc<SampleSet>,
    pub high_fidelity: Vec<f64>,
    pub estimate: FailureEstimate,
}

impl ReferenceSet {
    pub fn draw(problem: &ProblemDefinition, m: usize, seed: u64) -> Result<Self> {
        let samples = draw_mc(&problem.specs, m, seed)?;
        let high_fidelity: Vec<f64> = samples
            .iter()
            .map(|z| match (problem.evaluators[0])(z) {
                Ok(v) if v.is_finite() => v - problem.threshold,
                _ => f64::INFINITY,
            })
            .collect();
        let estimate = estimate_pf_from_values(&high_fidelity)?;
        Ok(ReferenceSet { samples: Arc::new(samples), high_fidelity, estimate })
    }

    /// Fraction of the set where `predicted` and the high-fidelity model
    /// classify differently.
    pub fn misclassified(&self, predicted: &[f64]) -> f64 {
        let wrong = predicted.iter().zip(&self.high_fidelity).filter(|(p, g)| (**p > 0.0) != (**g > 0.0)).count();
        wrong as f64 / predicted.len() as f64
    }
}

/// Runs every variant on every replication against one shared reference set.
pub fn run_study(problem: &ProblemDefinition, spec: &StudySpec) -> Result<StudyResult> {
    spec.validate()?;
    problem.validate()?;
    let reference = ReferenceSet::draw(problem, spec.pf_samples, derive_seed(spec.seed, SeedStream::FailureSet, 0))?;
    if !(reference.estimate.p_hat > 0.0) {
        return Err(Error::config("reference failure probability is zero on the shared set"));
    }
    let sample_hash = hash_samples(&reference.samples);
    log::info!("reference p_F = {:.5} on {} samples ({})", reference.estimate.p_hat, reference.estimate.m, &sample_hash[..12]);

    let jobs: Vec<(usize, usize)> = (0..spec.replications).flat_map(|r| (0..spec.variants.len()).map(move |v| (r, v))).collect();
    let next = AtomicUsize::new(0);
    let results = Mutex::new(Vec::with_capacity(jobs.len()));
    let workers = spec.workers.clamp(1, jobs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(r, v)) = jobs.get(i) else { break };
                let outcome = run_one(problem, spec, &reference, r, &spec.variants[v]);
                results.lock().expect("worker panicked").push((i, outcome));
            });
        }
    });
    let mut results = results.into_inner().expect("worker panicked");
    results.sort_by_key(|(i, _)| *i);
    let outcomes: Vec<ReplicationOutcome> = results.into_iter().map(|(_, o)| o).collect();
    for o in outcomes.iter().filter(|o| o.error.is_some()) {
        log::warn!("{} replication {} excluded: {}", o.variant, o.replication, o.error.as_deref().unwrap_or(""));
    }

    let report = convergence_report(&spec.variants, &outcomes, &spec.thresholds)?;
    Ok(StudyResult { reference: reference.estimate, sample_hash, variants: spec.variants.clone(), outcomes, report })
}

fn run_one(problem: &ProblemDefinition, spec: &StudySpec, reference: &ReferenceSet, r: usize, variant: &Variant) -> ReplicationOutcome {
    let seed = spec.replication_seed(r);
    let config = RunConfig {
        seed,
        weighting: variant.weighting,
        search: variant.search,
        candidates: (variant.search == SearchMode::Candidates).then(|| reference.samples.clone()),
        snapshot: Some(Snapshot { samples: reference.samples.clone(), reference: Some(reference.estimate.p_hat) }),
        checkpoint: None,
        ..spec.base.clone()
    };
    let label = variant.label();
    log::info!("{label} replication {r} started");
    let result = match variant.algorithm {
        Algorithm::Mfegra => run_mfegra(problem, &config),
        Algorithm::Egra => run_egra(problem, &config),
    };
    match result {
        Ok((gp, history)) => {
            let predicted = gp.mean_high_fidelity(&reference.samples);
            log::info!(
                "{label} replication {r}: {} iterations, cost {:.2}, stop {:?}",
                history.adaptive_iterations(),
                history.total_cost(),
                history.stop_reason
            );
            ReplicationOutcome {
                variant: label,
                replication: r,
                seed,
                misclassified: Some(reference.misclassified(&predicted)),
                final_state: Some(PosteriorState::from(&gp)),
                history: Some(history),
                error: None,
            }
        }
        Err(e) => ReplicationOutcome { variant: label, replication: r, seed, history: None, misclassified: None, final_state: None, error: Some(e.to_string()) },
    }
}
