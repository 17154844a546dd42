//! The active-learning loop: initial design, location and source selection,
//! evaluation, surrogate update, cost accounting and stopping.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::acquisition::{select_candidate, select_location, select_source, CandidateScreen, CandidateSetZ, ContinuousSearch, LocationSearch, SourceGain, WeightingMode};
use crate::distributions::{derive_seed, draw_mc, latin_hypercube, DomainBox, RandomVariableSpec, SampleSet, SeedStream};
use crate::error::{Error, Result};
use crate::reliability::{estimate_pf_from_values, relative_error};
use crate::surrogate::{AugmentedInput, FitOptions, KernelHyperparams, MfGpPosterior, PosteriorState, TrainingSet};

pub type Evaluator = Arc<dyn Fn(&[f64]) -> Result<f64> + Send + Sync>;

/// The models of the limit state, their costs and the input description.
#[derive(Clone)]
pub struct ProblemDefinition {
    /// `evaluators[0]` is the high-fidelity model.
    pub evaluators: Vec<Evaluator>,
    pub costs: Vec<f64>,
    pub domain: DomainBox,
    pub specs: Vec<RandomVariableSpec>,
    /// Failure is `g(z) > threshold`.
    pub threshold: f64,
}

impl fmt::Debug for ProblemDefinition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemDefinition")
            .field("sources", &self.evaluators.len())
            .field("costs", &self.costs)
            .field("domain", &self.domain)
            .field("specs", &self.specs)
            .field("threshold", &self.threshold)
            .finish()
    }
}

impl ProblemDefinition {
    pub fn num_sources(&self) -> usize {
        self.evaluators.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.evaluators.is_empty() {
            return Err(Error::config("at least one information source is required"));
        }
        if self.costs.len() != self.evaluators.len() {
            return Err(Error::config(format!("{} costs for {} sources", self.costs.len(), self.evaluators.len())));
        }
        if self.costs.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
            return Err(Error::config("costs must be positive"));
        }
        if self.specs.len() != self.domain.dim() {
            return Err(Error::config("one random-variable spec per domain dimension is required"));
        }
        for spec in &self.specs {
            spec.validate()?;
        }
        if !self.threshold.is_finite() {
            return Err(Error::config("failure threshold must be finite"));
        }
        Ok(())
    }

    /// The same problem with only the high-fidelity source.
    pub fn high_fidelity_only(&self) -> ProblemDefinition {
        ProblemDefinition {
            evaluators: vec![self.evaluators[0].clone()],
            costs: vec![self.costs[0]],
            ..self.clone()
        }
    }

    /// Shifted limit state `g(z) - threshold`, or `None` when the model fails.
    fn shifted(&self, source: usize, z: &[f64]) -> Option<f64> {
        match (self.evaluators[source])(z) {
            Ok(v) if v.is_finite() => Some(v - self.threshold),
            Ok(v) => {
                log::warn!("source {source} returned {v} at {z:?}");
                None
            }
            Err(e) => {
                log::warn!("source {source} failed at {z:?}: {e}");
                None
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchMode {
    #[default]
    Continuous,
    Candidates,
}

impl FromStr for SearchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "continuous" => Ok(SearchMode::Continuous),
            "candidates" => Ok(SearchMode::Candidates),
            other => Err(Error::config(format!("unknown search mode '{other}' (expected continuous or candidates)"))),
        }
    }
}

impl fmt::Display for SearchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SearchMode::Continuous => "continuous",
            SearchMode::Candidates => "candidates",
        })
    }
}

/// How the initial training data is chosen.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum InitialDesign {
    /// Latin hypercube of `doe_size` points, every source evaluated at each.
    #[default]
    Lhs,
    /// Given points, every source evaluated at each.
    Points { points: Vec<Vec<f64>> },
    /// Separate point lists per source.
    PerSource { points: Vec<Vec<Vec<f64>>> },
}

/// Monte Carlo set on which the failure probability is tracked every iteration.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub samples: Arc<SampleSet>,
    pub reference: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub doe_size: usize,
    pub initial_design: InitialDesign,
    pub eff_threshold: f64,
    pub max_iterations: usize,
    pub max_cost: f64,
    pub search: SearchMode,
    /// Candidate locations for [`SearchMode::Candidates`].
    pub candidates: Option<Arc<SampleSet>>,
    pub continuous: ContinuousSearch,
    pub weighting: WeightingMode,
    /// Size of the fixed set over which information gain is summed.
    pub gain_set_size: usize,
    pub seed: u64,
    pub failed_value: f64,
    pub fit: FitOptions,
    pub snapshot: Option<Snapshot>,
    pub checkpoint: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            doe_size: 10,
            initial_design: InitialDesign::Lhs,
            eff_threshold: 1e-10,
            max_iterations: 500,
            max_cost: f64::INFINITY,
            search: SearchMode::Continuous,
            candidates: None,
            continuous: ContinuousSearch::default(),
            weighting: WeightingMode::Eff,
            gain_set_size: 2000,
            seed: 0,
            failed_value: 1e6,
            fit: FitOptions::default(),
            snapshot: None,
            checkpoint: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self, problem: &ProblemDefinition) -> Result<()> {
        if !(self.eff_threshold.is_finite() && self.eff_threshold > 0.0) {
            return Err(Error::config("EFF threshold must be positive"));
        }
        if !(self.max_cost > 0.0) {
            return Err(Error::config("cost budget must be positive"));
        }
        if self.gain_set_size == 0 {
            return Err(Error::config("information-gain set size must be at least 1"));
        }
        if !self.failed_value.is_finite() {
            return Err(Error::config("failed-evaluation value must be finite"));
        }
        match &self.initial_design {
            InitialDesign::Lhs if self.doe_size == 0 => return Err(Error::config("initial design size must be at least 1")),
            InitialDesign::Points { points } if points.is_empty() => return Err(Error::config("initial design is empty")),
            InitialDesign::PerSource { points } => {
                if points.len() != problem.num_sources() {
                    return Err(Error::config("per-source initial design needs one list per source"));
                }
                if points[0].is_empty() {
                    return Err(Error::config("initial design needs at least one high-fidelity point"));
                }
            }
            _ => {}
        }
        if self.search == SearchMode::Candidates {
            match &self.candidates {
                Some(c) if !c.is_empty() => {
                    if c.dim() != problem.domain.dim() {
                        return Err(Error::config("candidate dimension does not match the domain"));
                    }
                }
                _ => return Err(Error::config("candidate search mode requires a nonempty candidate set")),
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub source: usize,
    pub z: Vec<f64>,
    /// Shifted limit-state value, or the failed-evaluation value.
    pub y: f64,
    pub cost: f64,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 0 for the initial design.
    pub iteration: usize,
    pub z_next: Option<Vec<f64>>,
    pub source: Option<usize>,
    pub max_eff: Option<f64>,
    pub gains: Vec<SourceGain>,
    pub evaluations: Vec<Evaluation>,
    pub refit: bool,
    pub cumulative_cost: f64,
    pub pf_hat: Option<f64>,
    pub relative_error: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Threshold,
    IterationBudget,
    CostBudget,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::Threshold => "threshold",
            StopReason::IterationBudget => "iteration-budget",
            StopReason::CostBudget => "cost-budget",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub records: Vec<IterationRecord>,
    pub stop_reason: Option<StopReason>,
    /// Maximum EFF found by the last location search.
    pub final_max_eff: Option<f64>,
}

impl RunHistory {
    pub fn total_cost(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.cumulative_cost)
    }

    pub fn evaluation_counts(&self, num_sources: usize) -> Vec<usize> {
        let mut counts = vec![0; num_sources];
        for e in self.records.iter().flat_map(|r| &r.evaluations) {
            counts[e.source] += 1;
        }
        counts
    }

    pub fn adaptive_iterations(&self) -> usize {
        self.records.len().saturating_sub(1)
    }
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    seed: u64,
    state: PosteriorState,
    history: RunHistory,
}

fn save_checkpoint(path: &PathBuf, seed: u64, gp: &MfGpPosterior, history: &RunHistory) -> Result<()> {
    let ck = Checkpoint { version: CHECKPOINT_VERSION, seed, state: PosteriorState::from(gp), history: history.clone() };
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, serde_json::to_vec(&ck)?)?;
    std::fs::rename(tmp, path)?;
    Ok(())
}

fn load_checkpoint(path: &PathBuf, seed: u64) -> Result<Option<(MfGpPosterior, RunHistory)>> {
    if !path.exists() {
        return Ok(None);
    }
    let ck: Checkpoint = serde_json::from_slice(&std::fs::read(path)?)?;
    if ck.version != CHECKPOINT_VERSION {
        return Err(Error::config(format!("checkpoint version {} is not supported", ck.version)));
    }
    if ck.seed != seed {
        return Err(Error::config(format!("checkpoint was written with seed {}, run uses {seed}", ck.seed)));
    }
    if ck.history.stop_reason.is_some() {
        return Err(Error::config("checkpoint belongs to a finished run"));
    }
    Ok(Some((ck.state.rebuild()?, ck.history)))
}

struct Ledger<'a> {
    problem: &'a ProblemDefinition,
    failed_value: f64,
}

impl Ledger<'_> {
    fn evaluate(&self, source: usize, z: &[f64]) -> Evaluation {
        let (y, failed) = match self.problem.shifted(source, z) {
            Some(v) => (v, false),
            None => (self.failed_value, true),
        };
        Evaluation { source, z: z.to_vec(), y, cost: self.problem.costs[source], failed }
    }
}

/// Adds evaluations to the training data; repeated `(source, z)` pairs are
/// charged but carry no new information and are skipped.
fn absorb(data: &mut TrainingSet, evaluations: &[Evaluation]) -> Result<()> {
    for e in evaluations {
        let input = AugmentedInput::new(e.source, e.z.clone());
        if data.contains(&input) {
            log::debug!("repeated evaluation of source {} at {:?}", e.source, e.z);
            continue;
        }
        data.push(input, e.y)?;
    }
    Ok(())
}

fn snapshot_values(gp: &MfGpPosterior, snapshot: &Option<Snapshot>) -> Result<(Option<f64>, Option<f64>)> {
    let Some(s) = snapshot else {
        return Ok((None, None));
    };
    let est = estimate_pf_from_values(&gp.mean_high_fidelity(&s.samples))?;
    let err = match s.reference {
        Some(r) => Some(relative_error(est.p_hat, r)?),
        None => None,
    };
    Ok((Some(est.p_hat), err))
}

fn initial_evaluations(problem: &ProblemDefinition, config: &RunConfig, ledger: &Ledger<'_>) -> Result<Vec<Evaluation>> {
    let all_sources = |points: &[Vec<f64>]| -> Vec<Evaluation> {
        points.iter().flat_map(|z| (0..problem.num_sources()).map(move |l| ledger.evaluate(l, z))).collect()
    };
    let check = |z: &Vec<f64>| -> Result<()> {
        if z.len() != problem.domain.dim() || !problem.domain.contains(z) {
            return Err(Error::config(format!("initial design point {z:?} is outside the domain")));
        }
        Ok(())
    };
    Ok(match &config.initial_design {
        InitialDesign::Lhs => {
            let doe = latin_hypercube(&problem.domain, config.doe_size, derive_seed(config.seed, SeedStream::Doe, 0))?;
            let points: Vec<Vec<f64>> = doe.iter().map(<[f64]>::to_vec).collect();
            all_sources(&points)
        }
        InitialDesign::Points { points } => {
            points.iter().try_for_each(check)?;
            all_sources(points)
        }
        InitialDesign::PerSource { points } => {
            points.iter().flatten().try_for_each(check)?;
            points.iter().enumerate().flat_map(|(l, pts)| pts.iter().map(move |z| ledger.evaluate(l, z))).collect()
        }
    })
}

/// Runs the multifidelity active-learning loop.
pub fn run_mfegra(problem: &ProblemDefinition, config: &RunConfig) -> Result<(MfGpPosterior, RunHistory)> {
    problem.validate()?;
    config.validate(problem)?;
    let k1 = problem.num_sources();
    let ledger = Ledger { problem, failed_value: config.failed_value };
    let fit_opts = |iteration: usize| FitOptions { seed: derive_seed(config.seed, SeedStream::Hyperparameters, iteration as u64), ..config.fit };

    let resumed = match &config.checkpoint {
        Some(path) => load_checkpoint(path, config.seed)?,
        None => None,
    };
    let (mut gp, mut history) = match resumed {
        Some(state) => state,
        None => {
            let evaluations = initial_evaluations(problem, config, &ledger)?;
            let mut data = TrainingSet::new();
            absorb(&mut data, &evaluations)?;
            let init = KernelHyperparams::default_for(k1, problem.domain.dim());
            let gp = MfGpPosterior::fit(data, &problem.domain, &init, &fit_opts(0))?;
            let (pf_hat, rel) = snapshot_values(&gp, &config.snapshot)?;
            let record = IterationRecord {
                iteration: 0,
                z_next: None,
                source: None,
                max_eff: None,
                gains: Vec::new(),
                cumulative_cost: evaluations.iter().map(|e| e.cost).sum(),
                evaluations,
                refit: true,
                pf_hat,
                relative_error: rel,
            };
            (gp, RunHistory { records: vec![record], stop_reason: None, final_max_eff: None })
        }
    };

    let gain_set = if k1 > 1 {
        let z = draw_mc(&problem.specs, config.gain_set_size, derive_seed(config.seed, SeedStream::InformationSet, 0))?;
        Some(CandidateSetZ::new(z)?)
    } else {
        None
    };

    let mut screen = CandidateScreen::default();
    loop {
        let iteration = history.records.len();
        let cost = history.total_cost();
        let choice = match config.search {
            SearchMode::Continuous => {
                select_location(&gp, &problem.domain, LocationSearch::Continuous(config.continuous), derive_seed(config.seed, SeedStream::LocationSearch, iteration as u64))?
            }
            SearchMode::Candidates => select_candidate(&gp, config.candidates.as_deref().expect("validated"), &mut screen)?,
        };
        history.final_max_eff = Some(choice.eff);
        if choice.eff < config.eff_threshold {
            history.stop_reason = Some(StopReason::Threshold);
            break;
        }
        if iteration > config.max_iterations {
            history.stop_reason = Some(StopReason::IterationBudget);
            break;
        }
        if cost >= config.max_cost {
            history.stop_reason = Some(StopReason::CostBudget);
            break;
        }

        let z = choice.point;
        let selection = match &gain_set {
            Some(set) => select_source(&gp, &z, set, &problem.costs, config.weighting)?,
            None => select_source_single(problem),
        };
        let source = selection.source;
        let evaluations: Vec<Evaluation> = if source == 0 {
            (0..k1).map(|l| ledger.evaluate(l, &z)).collect()
        } else {
            vec![ledger.evaluate(source, &z)]
        };
        let mut data = gp.data().clone();
        absorb(&mut data, &evaluations)?;
        gp = if source == 0 {
            let init = gp.hyperparams().clone();
            MfGpPosterior::fit(data, &problem.domain, &init, &fit_opts(iteration))?
        } else {
            MfGpPosterior::condition(data, &problem.domain, gp.hyperparams().clone(), gp.scaling())?
        };
        let (pf_hat, rel) = snapshot_values(&gp, &config.snapshot)?;
        // charge one evaluation at a time so the total equals a running sum of the ledger
        let cumulative_cost = evaluations.iter().fold(cost, |acc, e| acc + e.cost);
        log::info!("iteration {iteration}: source {source}, max EFF {:.3e}, cost {:.3}", choice.eff, cumulative_cost);
        history.records.push(IterationRecord {
            iteration,
            z_next: Some(z),
            source: Some(source),
            max_eff: Some(choice.eff),
            gains: selection.gains,
            evaluations,
            refit: source == 0,
            cumulative_cost,
            pf_hat,
            relative_error: rel,
        });
        if let Some(path) = &config.checkpoint {
            save_checkpoint(path, config.seed, &gp, &history)?;
        }
    }
    if let Some(path) = &config.checkpoint {
        if path.exists() {
            std::fs::remove_file(path)?;
        }
    }
    Ok((gp, history))
}

fn select_source_single(problem: &ProblemDefinition) -> crate::acquisition::SourceSelection {
    crate::acquisition::choose_source(&[0.0], &problem.costs[..1])
}

/// Single-fidelity baseline: the same loop on the high-fidelity source alone.
pub fn run_egra(problem: &ProblemDefinition, config: &RunConfig) -> Result<(MfGpPosterior, RunHistory)> {
    run_mfegra(&problem.high_fidelity_only(), config)
}
