//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mfegra::acquisition::{choose_source, kl_divergence_term, WeightingMode};
use mfegra::bench::analytic::{analytic_domain, analytic_problem, eval_analytic};
use mfegra::bench::{run_study, Algorithm, ReferenceSet, StudyResult, StudySpec, Variant};
use mfegra::distributions::{derive_seed, latin_hypercube, DomainBox, SeedStream};
use mfegra::driver::{RunConfig, SearchMode, StopReason};
use mfegra::oracle::{eff_suite, gain_suite, refit_suite};
use mfegra::surrogate::{AugmentedInput, FitOptions, KernelHyperparams, MfGpPosterior, OutputScaling, SeKernel, TrainingSet};

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(results: &mut Vec<bool>, name: &str, outcome: Outcome, started: Instant) {
    println!(
        "{} {name}: {} [{:.1}s]",
        if outcome.pass { "PASS" } else { "FAIL" },
        outcome.detail,
        started.elapsed().as_secs_f64()
    );
    results.push(outcome.pass);
}

fn reference_probability() -> Outcome {
    let r = ReferenceSet::draw(&analytic_problem(), 1_000_000, derive_seed(0, SeedStream::FailureSet, 0)).expect("reference set");
    let p = r.estimate.p_hat;
    Outcome { pass: (0.3007..=0.3035).contains(&p), detail: format!("p_F = {p:.5} on 1e6 samples, required [0.3007, 0.3035]") }
}

fn eff_oracle() -> Outcome {
    let suite = eff_suite(200, 11);
    let pinned = suite.cases[0].closed_form;
    let ok = suite.passed() && (pinned - 1.219_096).abs() < 1e-6;
    Outcome {
        pass: ok,
        detail: format!(
            "{}/200 cases within 1e-8*max(1,eps), max scaled error {:.2e}, EFF(0,1,2) = {pinned:.7}",
            suite.cases.iter().filter(|c| c.pass).count(),
            suite.max_scaled_error
        ),
    }
}

fn gain_oracle() -> Outcome {
    let suite = gain_suite(10, 200, 12).expect("gain suite");
    let n = suite.agreeing();
    Outcome { pass: n >= 9, detail: format!("{n}/10 random two-source GPs agree with double-loop Monte Carlo within 3 SE (need 9)") }
}

fn lookahead_identity() -> Outcome {
    let suite = refit_suite(20, 13).expect("refit suite");
    let e = suite.max_relative_error();
    Outcome { pass: e <= 1e-6, detail: format!("max relative error {e:.2e} over 20 refit cases (need <= 1e-6)") }
}

fn study() -> StudyResult {
    let variants = vec![
        Variant::new(Algorithm::Mfegra, WeightingMode::Eff, SearchMode::Continuous),
        Variant::new(Algorithm::Mfegra, WeightingMode::None, SearchMode::Continuous),
        Variant::new(Algorithm::Egra, WeightingMode::Eff, SearchMode::Continuous),
        Variant::new(Algorithm::Mfegra, WeightingMode::Eff, SearchMode::Candidates),
        Variant::new(Algorithm::Egra, WeightingMode::Eff, SearchMode::Candidates),
    ];
    let spec = StudySpec {
        replications: 10,
        // candidate-restricted runs rarely reach the EFF threshold; the cost
        // comparison only reads costs far below this cap
        base: RunConfig { max_cost: 100.0, ..RunConfig::default() },
        variants,
        seed: 0,
        pf_samples: 100_000,
        workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
        thresholds: vec![1e-2, 1e-3],
    };
    run_study(&analytic_problem(), &spec).expect("study")
}

// cost at which the median error curve over replications first drops below
// the threshold
fn median_cost(result: &StudyResult, label: &str, threshold: f64) -> Option<f64> {
    result.report.threshold_cost(label, threshold).and_then(|t| t.median_curve)
}

// median over replications of each replication's own last crossing
fn per_replication_median(result: &StudyResult, label: &str, threshold: f64) -> Option<f64> {
    result.report.threshold_cost(label, threshold).and_then(|t| t.median)
}

fn fmt_cost(c: Option<f64>) -> String {
    c.map_or("never".to_string(), |v| format!("{v:.2}"))
}

fn savings(mf: Option<f64>, sf: Option<f64>) -> Option<f64> {
    match (mf, sf) {
        (Some(a), Some(b)) => Some(1.0 - a / b),
        (Some(_), None) => Some(1.0),
        _ => None,
    }
}

fn desk_reproduction(result: &StudyResult) -> Outcome {
    let mf = median_cost(result, "mfegra-eff", 1e-3);
    let sf = median_cost(result, "egra", 1e-3);
    let a = mf.is_some_and(|c| c <= 35.0);
    let b = sf.is_none_or(|c| c >= 38.0);
    let s = savings(mf, sf);
    let c = s.is_some_and(|s| s >= 0.25);
    Outcome {
        pass: a && b && c,
        detail: format!(
            "cost where the median error drops below 1e-3: mfEGRA {} (need <= 35) {}, EGRA {} (need >= 38) {}, savings {} (need >= 25%) {}; per-replication medians mfEGRA {}, EGRA {}",
            fmt_cost(mf),
            if a { "ok" } else { "x" },
            fmt_cost(sf),
            if b { "ok" } else { "x" },
            s.map_or("n/a".to_string(), |s| format!("{:.1}%", 100.0 * s)),
            if c { "ok" } else { "x" },
            fmt_cost(per_replication_median(result, "mfegra-eff", 1e-3)),
            fmt_cost(per_replication_median(result, "egra", 1e-3))
        ),
    }
}

fn candidate_mode(result: &StudyResult) -> Outcome {
    let continuous = savings(median_cost(result, "mfegra-eff", 1e-3), median_cost(result, "egra", 1e-3));
    let restricted = savings(median_cost(result, "mfegra-eff-candidates", 1e-3), median_cost(result, "egra-candidates", 1e-3));
    let pass = match (continuous, restricted) {
        (Some(c), Some(r)) => r >= c - 0.10,
        _ => false,
    };
    let pct = |v: Option<f64>| v.map_or("n/a".to_string(), |s| format!("{:.1}%", 100.0 * s));
    Outcome {
        pass,
        detail: format!(
            "savings continuous {} vs candidate-restricted {} (mfEGRA {}, EGRA {}); allowed drop 10 points",
            pct(continuous),
            pct(restricted),
            fmt_cost(median_cost(result, "mfegra-eff-candidates", 1e-3)),
            fmt_cost(median_cost(result, "egra-candidates", 1e-3))
        ),
    }
}

fn weighting_comparison(result: &StudyResult) -> Outcome {
    let eff = result.report.curve("mfegra-eff").expect("eff curve");
    let none = result.report.curve("mfegra-none").expect("none curve");
    let Some(cost) = eff.median_first_below(1e-2) else {
        return Outcome { pass: false, detail: "EFF-weighted median error never drops below 1e-2".to_string() };
    };
    let e = eff.median_at(cost).expect("eff median");
    let n = none.median_at(cost);
    let pass = n.is_some_and(|n| e <= n);
    Outcome {
        pass,
        detail: format!("at cost {cost:.3}: median error eff {e:.2e}, none {}", n.map_or("n/a".to_string(), |v| format!("{v:.2e}"))),
    }
}

fn stopping(result: &StudyResult) -> Outcome {
    let big = ReferenceSet::draw(&analytic_problem(), 1_000_000, derive_seed(0, SeedStream::FailureSet, 1)).expect("reference set");
    let mut by_threshold = 0;
    let mut worst: f64 = 0.0;
    let mut counts = Vec::new();
    for o in result.outcomes_for("mfegra-eff") {
        let Some(h) = &o.history else { continue };
        if h.stop_reason == Some(StopReason::Threshold) && h.final_max_eff.is_some_and(|e| e < 1e-10) {
            by_threshold += 1;
        }
        counts.push(h.evaluation_counts(3));
        let gp = o.final_state.as_ref().expect("final state").rebuild().expect("rebuild");
        worst = worst.max(big.misclassified(&gp.mean_high_fidelity(&big.samples)));
    }
    Outcome {
        pass: by_threshold >= 8 && worst <= 0.002,
        detail: format!(
            "{by_threshold}/10 runs stopped on EFF < 1e-10 (need 8), worst misclassification {:.4}% of 1e6 samples (need <= 0.2%), evaluations per source {counts:?}",
            100.0 * worst
        ),
    }
}

fn property_suites(result: &StudyResult) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut violations = Vec::new();

    // KL terms over random present variances and reductions
    let mut kl_bad = 0;
    for _ in 0..100_000 {
        let sp2 = 10f64.powf(rng.random_range(-8.0..3.0));
        let sb2 = sp2 * rng.random::<f64>();
        if kl_divergence_term(sp2, sb2, 1e-12 * sp2).0 < -1e-9 {
            kl_bad += 1;
        }
    }
    // plus every recorded gain in the study
    for o in &result.outcomes {
        for r in o.history.iter().flat_map(|h| &h.records) {
            kl_bad += r.gains.iter().filter(|g| g.raw_gain < -1e-9).count();
        }
    }
    if kl_bad > 0 {
        violations.push(format!("KL nonnegativity {kl_bad}"));
    }

    let mut scale_bad = 0;
    for _ in 0..10_000 {
        let k = rng.random_range(1..5);
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..10.0)).collect();
        let costs: Vec<f64> = (0..k).map(|_| 10f64.powf(rng.random_range(-3.0..0.0))).collect();
        let lambda = 10f64.powf(rng.random_range(-6.0..6.0));
        let scaled: Vec<f64> = costs.iter().map(|c| c * lambda).collect();
        if choose_source(&raw, &costs).source != choose_source(&raw, &scaled).source {
            scale_bad += 1;
        }
    }
    if scale_bad > 0 {
        violations.push(format!("cost scaling {scale_bad}"));
    }

    let mut lhs_bad = 0;
    for trial in 0..500 {
        let dim = 1 + trial % 5;
        let n = rng.random_range(1..60);
        let lower: Vec<f64> = (0..dim).map(|_| rng.random_range(-10.0..0.0)).collect();
        let upper: Vec<f64> = lower.iter().map(|l| l + rng.random_range(0.1..20.0)).collect();
        let domain = DomainBox::new(lower, upper).unwrap();
        let set = latin_hypercube(&domain, n, rng.random()).unwrap();
        for d in 0..dim {
            let mut hits = vec![0; n];
            for p in set.iter() {
                let u = domain.to_unit(p)[d];
                hits[((u * n as f64) as usize).min(n - 1)] += 1;
            }
            lhs_bad += hits.iter().filter(|&&h| h != 1).count();
        }
    }
    if lhs_bad > 0 {
        violations.push(format!("LHS stratification {lhs_bad}"));
    }

    let mut gp_bad = 0;
    for _ in 0..100 {
        let n = rng.random_range(1..=30);
        let mut data = TrainingSet::new();
        while data.len() < n {
            let source = if data.is_empty() { 0 } else { rng.random_range(0..2) };
            let input = AugmentedInput::new(source, vec![rng.random::<f64>(), rng.random::<f64>()]);
            if !data.contains(&input) {
                data.push(input, rng.random_range(-3.0..3.0)).unwrap();
            }
        }
        let hyper = KernelHyperparams {
            components: vec![
                SeKernel::new(rng.random_range(0.1..5.0), vec![rng.random_range(0.05..1.0), rng.random_range(0.05..1.0)]),
                SeKernel::new(rng.random_range(0.01..1.0), vec![rng.random_range(0.05..1.0), rng.random_range(0.05..1.0)]),
            ],
            means: vec![0.0, 0.0],
            jitter: 1e-10,
        };
        let scaling = OutputScaling::from_data(&data);
        let Ok(gp) = MfGpPosterior::condition(data, &DomainBox::unit(2), hyper, scaling) else {
            gp_bad += 1;
            continue;
        };
        for _ in 0..20 {
            let q = AugmentedInput::new(rng.random_range(0..2), vec![rng.random::<f64>(), rng.random::<f64>()]);
            let v = gp.posterior_var(&q);
            if v < 0.0 || v > gp.prior_variance(q.source) + 1e-9 {
                gp_bad += 1;
            }
        }
    }
    // interpolation of noiseless observations of the analytic models, at
    // maximum-likelihood hyperparameters
    let domain = analytic_domain();
    for _ in 0..100 {
        let n = rng.random_range(1..=30);
        let k1 = rng.random_range(1..=3);
        let mut data = TrainingSet::new();
        while data.len() < n {
            let source = if data.is_empty() { 0 } else { rng.random_range(0..k1) };
            let z: Vec<f64> = (0..2).map(|d| rng.random_range(domain.lower()[d]..domain.upper()[d])).collect();
            let input = AugmentedInput::new(source, z.clone());
            if !data.contains(&input) {
                data.push(input, eval_analytic(source, &z).unwrap()).unwrap();
            }
        }
        let range = data.iter().map(|o| o.value).fold(f64::NEG_INFINITY, f64::max) - data.iter().map(|o| o.value).fold(f64::INFINITY, f64::min);
        let Ok(gp) = MfGpPosterior::fit(data.clone(), &domain, &KernelHyperparams::default_for(k1, 2), &FitOptions::default()) else {
            gp_bad += 1;
            continue;
        };
        for o in data.iter() {
            if (gp.posterior_mean(&o.input) - o.value).abs() > 1e-6 * range.max(1e-12) {
                gp_bad += 1;
            }
        }
    }
    if gp_bad > 0 {
        violations.push(format!("GP interpolation/PSD {gp_bad}"));
    }

    let problem = analytic_problem();
    let mut ledger_bad = 0;
    for o in &result.outcomes {
        let Some(h) = &o.history else { continue };
        let k1 = if o.variant.starts_with("egra") { 1 } else { 3 };
        let mut total = 0.0;
        for r in &h.records {
            for e in &r.evaluations {
                if e.cost != problem.costs[e.source] {
                    ledger_bad += 1;
                }
                total += e.cost;
            }
            if r.cumulative_cost != total {
                ledger_bad += 1;
            }
            if r.iteration > 0 && r.evaluations.len() != if r.source == Some(0) { k1 } else { 1 } {
                ledger_bad += 1;
            }
        }
    }
    if ledger_bad > 0 {
        violations.push(format!("cost ledger {ledger_bad}"));
    }

    Outcome {
        pass: violations.is_empty(),
        detail: if violations.is_empty() {
            "KL nonnegativity, cost-scaling invariance, LHS stratification, GP interpolation/PSD, cost ledger: zero violations".to_string()
        } else {
            format!("violations: {}", violations.join(", "))
        },
    }
}

fn main() {
    // `cargo test` passes harness flags such as `--nocapture`; listing must not run anything
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut results = Vec::new();
    let t = Instant::now();
    report(&mut results, "criterion 1 (reference failure probability)", reference_probability(), t);
    let t = Instant::now();
    report(&mut results, "criterion 2 (EFF quadrature oracle)", eff_oracle(), t);
    let t = Instant::now();
    report(&mut results, "criterion 3 (information-gain double-loop oracle)", gain_oracle(), t);
    let t = Instant::now();
    report(&mut results, "criterion 4 (lookahead refit identity)", lookahead_identity(), t);

    let t = Instant::now();
    let result = study();
    println!("study: reference p_F {:.5} on {} shared samples ({}), {:.0}s", result.reference.p_hat, result.reference.m, &result.sample_hash[..16], t.elapsed().as_secs_f64());
    let excluded = result.outcomes.iter().filter(|o| o.error.is_some()).count();
    if excluded > 0 {
        println!("study: {excluded} replications excluded");
    }
    let t = Instant::now();
    report(&mut results, "criterion 5 (desk-scale cost comparison)", desk_reproduction(&result), t);
    let t = Instant::now();
    report(&mut results, "criterion 5, candidate-restricted search", candidate_mode(&result), t);
    let t = Instant::now();
    report(&mut results, "criterion 6 (EFF vs no weighting)", weighting_comparison(&result), t);
    let t = Instant::now();
    report(&mut results, "criterion 7 (stopping and classification)", stopping(&result), t);
    let t = Instant::now();
    report(&mut results, "criterion 8 (property suites)", property_suites(&result), t);

    let failed = results.iter().filter(|p| !**p).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
