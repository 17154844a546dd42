use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mfegra::acquisition::WeightingMode;
use mfegra::bench::analytic::analytic_problem;
use mfegra::bench::report::write_history_csv;
use mfegra::bench::{emit_plot_data, run_study, Algorithm, ReferenceSet, ReplicationOutcome, Settings};
use mfegra::distributions::{derive_seed, SeedStream};
use mfegra::driver::{run_egra, run_mfegra, ProblemDefinition, SearchMode, Snapshot};
use mfegra::oracle::{eff_suite, gain_suite, refit_suite};
use mfegra::{Error, Result};

#[derive(Parser)]
#[command(name = "mfegra", version, about = "Multifidelity active learning for failure-probability estimation")]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replicated comparison of algorithms on the analytic problem.
    Study(Common),
    /// A single replication.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "mfegra")]
        algorithm: Algorithm,
    },
    /// Monte Carlo failure probability of the high-fidelity model.
    Pf {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
    },
    /// Verification suites for the closed-form acquisition quantities.
    Oracle {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct Common {
    /// TOML file with any of the options below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
    /// Comma-separated weighting modes: none, eff, pf.
    #[arg(long, value_delimiter = ',')]
    weighting: Option<Vec<WeightingMode>>,
    /// Comma-separated search modes: continuous, candidates.
    #[arg(long, value_delimiter = ',')]
    mode: Option<Vec<SearchMode>>,
    /// Comma-separated algorithms: mfegra, egra.
    #[arg(long, value_delimiter = ',')]
    algorithms: Option<Vec<Algorithm>>,
    #[arg(long)]
    budget_cost: Option<f64>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    eff_threshold: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    pf_samples: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

impl Common {
    fn settings(&self) -> Result<Settings> {
        let file = match &self.config {
            Some(path) => Settings::from_file(path)?,
            None => Settings::default(),
        };
        let cli = Settings {
            seed: self.seed,
            reps: self.reps,
            weighting: self.weighting.clone(),
            mode: self.mode.clone(),
            algorithms: self.algorithms.clone(),
            budget_cost: self.budget_cost,
            max_iterations: self.max_iterations,
            eff_threshold: self.eff_threshold,
            out: self.out.clone(),
            pf_samples: self.pf_samples,
            workers: self.workers,
            checkpoint: self.checkpoint.clone(),
            ..Settings::default()
        };
        Ok(file.overridden_by(cli))
    }
}

fn problem_for(settings: &Settings) -> ProblemDefinition {
    let mut problem = analytic_problem();
    if let Some(inputs) = &settings.inputs {
        problem.specs = inputs.clone();
    }
    problem
}

fn out_dir(settings: &Settings) -> PathBuf {
    settings.out.clone().unwrap_or_else(|| PathBuf::from("results"))
}

fn study(common: &Common) -> Result<()> {
    let settings = common.settings()?;
    let spec = settings.study_spec()?;
    let problem = problem_for(&settings);
    let result = run_study(&problem, &spec)?;
    let dir = out_dir(&settings);
    emit_plot_data(&result, &dir, problem.num_sources(), problem.domain.dim())?;
    println!("reference p_F {:.5} (SE {:.1e}, m = {})", result.reference.p_hat, result.reference.std_error(), result.reference.m);
    for t in &result.report.threshold_costs {
        let fmt = |v: Option<f64>| v.map_or("not reached".to_string(), |c| format!("{c:.2}"));
        println!("{:<24} error < {:.0e}: median cost {}, median curve {}", t.variant, t.threshold, fmt(t.median), fmt(t.median_curve));
    }
    println!("results written to {}", dir.display());
    Ok(())
}

fn run(common: &Common, algorithm: Algorithm) -> Result<()> {
    let settings = common.settings()?;
    let problem = problem_for(&settings);
    let mut config = settings.run_config()?;
    let reference = ReferenceSet::draw(&problem, settings.pf_samples.unwrap_or(100_000), derive_seed(config.seed, SeedStream::FailureSet, 0))?;
    config.snapshot = Some(Snapshot { samples: reference.samples.clone(), reference: Some(reference.estimate.p_hat).filter(|p| *p > 0.0) });
    if config.search == SearchMode::Candidates {
        config.candidates = Some(reference.samples.clone());
    }
    let (gp, history) = match algorithm {
        Algorithm::Mfegra => run_mfegra(&problem, &config)?,
        Algorithm::Egra => run_egra(&problem, &config)?,
    };
    let dir = out_dir(&settings);
    std::fs::create_dir_all(&dir)?;
    let sources = if algorithm == Algorithm::Egra { 1 } else { problem.num_sources() };
    let outcome = ReplicationOutcome {
        variant: algorithm.to_string(),
        replication: 0,
        seed: config.seed,
        misclassified: Some(reference.misclassified(&gp.mean_high_fidelity(&reference.samples))),
        history: Some(history.clone()),
        final_state: None,
        error: None,
    };
    write_history_csv(&dir.join("history.csv"), &[&outcome], sources, problem.domain.dim())?;
    let last = history.records.last().expect("initial record");
    println!("stop: {}", history.stop_reason.map_or("none".to_string(), |r| r.to_string()));
    println!("adaptive iterations: {}", history.adaptive_iterations());
    println!("evaluations per source: {:?}", history.evaluation_counts(sources));
    println!("equivalent cost: {:.3}", history.total_cost());
    println!("final max EFF: {:.3e}", history.final_max_eff.unwrap_or(f64::NAN));
    println!("p_F surrogate {:.5}, reference {:.5}, relative error {:.2e}", last.pf_hat.unwrap_or(f64::NAN), reference.estimate.p_hat, last.relative_error.unwrap_or(f64::NAN));
    println!("misclassified: {:.4}%", 100.0 * outcome.misclassified.unwrap_or(f64::NAN));
    Ok(())
}

fn pf(seed: u64, samples: usize) -> Result<()> {
    let reference = ReferenceSet::draw(&analytic_problem(), samples, derive_seed(seed, SeedStream::FailureSet, 0))?;
    let e = reference.estimate;
    println!("p_F {:.5}  SE {:.2e}  m {}  failures {}", e.p_hat, e.std_error(), e.m, e.failures);
    Ok(())
}

fn oracle(seed: u64) -> Result<bool> {
    let eff = eff_suite(200, seed);
    println!("EFF quadrature: {}/{} cases within tolerance, max scaled error {:.2e}", eff.cases.iter().filter(|c| c.pass).count(), eff.cases.len(), eff.max_scaled_error);
    let refit = refit_suite(20, seed)?;
    println!("lookahead refit: max relative error {:.2e} over {} cases", refit.max_relative_error(), refit.relative_errors.len());
    let gain = gain_suite(10, 200, seed)?;
    for (i, c) in gain.cases.iter().enumerate() {
        println!(
            "gain case {i}: closed {:?} double-loop {:?} SE {:?} {}",
            c.closed_form,
            c.double_loop,
            c.std_error,
            if c.pass { "agree" } else { "DISAGREE" }
        );
    }
    println!("information gain: {}/{} cases agree within 3 SE", gain.agreeing(), gain.cases.len());
    Ok(eff.passed() && refit.max_relative_error() <= 1e-6 && gain.agreeing() >= 9)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn })
        .parse_default_env()
        .init();
    let result = match &cli.command {
        Command::Study(common) => study(common).map(|_| true),
        Command::Run { common, algorithm } => run(common, *algorithm).map(|_| true),
        Command::Pf { seed, samples } => pf(*seed, *samples).map(|_| true),
        Command::Oracle { seed } => oracle(*seed),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) | Error::Precondition(_) => 2,
                Error::Conditioning { .. } => 3,
                _ => 1,
            })
        }
    }
}
