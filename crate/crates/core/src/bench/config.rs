//! TOML configuration file for the command-line tool. Every key mirrors a
//! command-line flag; flags given on the command line take precedence.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::study::{Algorithm, StudySpec, Variant};
use crate::acquisition::WeightingMode;
use crate::distributions::RandomVariableSpec;
use crate::driver::{InitialDesign, RunConfig, SearchMode};
use crate::error::{Error, Result};
use crate::surrogate::FitOptions;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct Settings {
    pub seed: Option<u64>,
    pub reps: Option<usize>,
    /// Weighting modes compared for the multifidelity algorithm.
    pub weighting: Option<Vec<WeightingMode>>,
    /// Search modes; each algorithm runs once per mode.
    pub mode: Option<Vec<SearchMode>>,
    pub algorithms: Option<Vec<Algorithm>>,
    pub budget_cost: Option<f64>,
    pub max_iterations: Option<usize>,
    pub eff_threshold: Option<f64>,
    pub out: Option<PathBuf>,
    pub pf_samples: Option<usize>,
    pub workers: Option<usize>,
    pub doe_size: Option<usize>,
    pub gain_set_size: Option<usize>,
    pub fit_starts: Option<usize>,
    pub failed_value: Option<f64>,
    pub checkpoint: Option<PathBuf>,
    /// Replaces the uniform input distributions of the analytic problem.
    pub inputs: Option<Vec<RandomVariableSpec>>,
    pub initial_design: Option<InitialDesign>,
}

impl Settings {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    /// Values from `other` win where present.
    pub fn overridden_by(self, other: Settings) -> Settings {
        Settings {
            seed: other.seed.or(self.seed),
            reps: other.reps.or(self.reps),
            weighting: other.weighting.or(self.weighting),
            mode: other.mode.or(self.mode),
            algorithms: other.algorithms.or(self.algorithms),
            budget_cost: other.budget_cost.or(self.budget_cost),
            max_iterations: other.max_iterations.or(self.max_iterations),
            eff_threshold: other.eff_threshold.or(self.eff_threshold),
            out: other.out.or(self.out),
            pf_samples: other.pf_samples.or(self.pf_samples),
            workers: other.workers.or(self.workers),
            doe_size: other.doe_size.or(self.doe_size),
            gain_set_size: other.gain_set_size.or(self.gain_set_size),
            fit_starts: other.fit_starts.or(self.fit_starts),
            failed_value: other.failed_value.or(self.failed_value),
            checkpoint: other.checkpoint.or(self.checkpoint),
            inputs: other.inputs.or(self.inputs),
            initial_design: other.initial_design.or(self.initial_design),
        }
    }

    pub fn run_config(&self) -> Result<RunConfig> {
        let d = RunConfig::default();
        let modes = self.mode.clone().unwrap_or_default();
        if modes.len() > 1 {
            return Err(Error::config("a single run takes one search mode"));
        }
        let weightings = self.weighting.clone().unwrap_or_default();
        if weightings.len() > 1 {
            return Err(Error::config("a single run takes one weighting mode"));
        }
        Ok(RunConfig {
            seed: self.seed.unwrap_or(d.seed),
            doe_size: self.doe_size.unwrap_or(d.doe_size),
            initial_design: self.initial_design.clone().unwrap_or_default(),
            eff_threshold: self.eff_threshold.unwrap_or(d.eff_threshold),
            max_iterations: self.max_iterations.unwrap_or(d.max_iterations),
            max_cost: self.budget_cost.unwrap_or(d.max_cost),
            search: modes.first().copied().unwrap_or_default(),
            weighting: weightings.first().copied().unwrap_or_default(),
            gain_set_size: self.gain_set_size.unwrap_or(d.gain_set_size),
            failed_value: self.failed_value.unwrap_or(d.failed_value),
            fit: FitOptions { starts: self.fit_starts.unwrap_or(d.fit.starts), ..d.fit },
            checkpoint: self.checkpoint.clone(),
            ..d
        })
    }

    pub fn study_spec(&self) -> Result<StudySpec> {
        let base = Settings { mode: None, weighting: None, ..self.clone() }.run_config()?;
        let algorithms = self.algorithms.clone().unwrap_or_else(|| vec![Algorithm::Mfegra, Algorithm::Egra]);
        let weightings = self.weighting.clone().unwrap_or_else(|| vec![WeightingMode::Eff]);
        let modes = self.mode.clone().unwrap_or_else(|| vec![SearchMode::Continuous]);
        if algorithms.is_empty() || weightings.is_empty() || modes.is_empty() {
            return Err(Error::config("algorithm, weighting and mode lists must be nonempty"));
        }
        let mut variants = Vec::new();
        for &search in &modes {
            for &algorithm in &algorithms {
                match algorithm {
                    Algorithm::Mfegra => variants.extend(weightings.iter().map(|&w| Variant::new(algorithm, w, search))),
                    Algorithm::Egra => variants.push(Variant::new(algorithm, WeightingMode::Eff, search)),
                }
            }
        }
        Ok(StudySpec {
            replications: self.reps.unwrap_or(10),
            base,
            variants,
            seed: self.seed.unwrap_or(0),
            pf_samples: self.pf_samples.unwrap_or(100_000),
            workers: self.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())),
            thresholds: vec![1e-2, 1e-3],
        })
    }
}
