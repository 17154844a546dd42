//! Aggregation of replication histories into convergence curves, and the CSV
//! files behind the convergence, EFF-evolution and gain-evolution plots.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::study::{ReplicationOutcome, StudyResult, Variant};
use crate::driver::RunHistory;
use crate::error::{Error, Result};

/// Percentile by linear interpolation between order statistics.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if hi == lo || sorted[hi] == sorted[lo] {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

/// Median with `None` standing for "never", which sorts above every value.
pub fn median_of_optional(values: &[Option<f64>]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v: Vec<f64> = values.iter().map(|x| x.unwrap_or(f64::INFINITY)).collect();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let m = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
    m.is_finite().then_some(m)
}

/// `(cumulative cost, relative error)` after every record that has an error.
pub fn error_staircase(history: &RunHistory) -> Vec<(f64, f64)> {
    history.records.iter().filter_map(|r| r.relative_error.map(|e| (r.cumulative_cost, e))).collect()
}

/// Cost at which the staircase drops below `threshold` for the last time,
/// interpolated linearly between the bracketing records. `None` when the final
/// error is not below the threshold.
pub fn cost_to_threshold(staircase: &[(f64, f64)], threshold: f64) -> Option<f64> {
    let last = staircase.last()?;
    if last.1 >= threshold {
        return None;
    }
    let i = staircase.iter().rposition(|p| p.1 >= threshold).map_or(0, |i| i + 1);
    if i == 0 {
        return Some(staircase[0].0);
    }
    let (c0, e0) = staircase[i - 1];
    let (c1, e1) = staircase[i];
    Some(c0 + (c1 - c0) * (e0 - threshold) / (e0 - e1))
}

/// Carries the staircase forward onto `grid`; `NaN` before its first record.
pub fn carry_forward(staircase: &[(f64, f64)], grid: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(grid.len());
    let mut j = 0;
    let mut current = f64::NAN;
    for &c in grid {
        while j < staircase.len() && staircase[j].0 <= c {
            current = staircase[j].1;
            j += 1;
        }
        out.push(current);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    pub variant: String,
    pub grid: Vec<f64>,
    /// One carried-forward error curve per included replication.
    pub replications: Vec<Vec<f64>>,
    pub p25: Vec<f64>,
    pub median: Vec<f64>,
    pub p75: Vec<f64>,
    pub excluded: usize,
}

impl CurveSummary {
    /// First grid cost at which the median error is below `threshold`.
    pub fn median_first_below(&self, threshold: f64) -> Option<f64> {
        self.grid.iter().zip(&self.median).find(|(_, m)| **m < threshold).map(|(c, _)| *c)
    }

    /// Median error at `cost` (carried forward).
    pub fn median_at(&self, cost: f64) -> Option<f64> {
        let i = self.grid.iter().rposition(|&c| c <= cost)?;
        let m = self.median[i];
        (!m.is_nan()).then_some(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCost {
    pub variant: String,
    pub threshold: f64,
    pub per_replication: Vec<Option<f64>>,
    /// Median of the per-replication costs; `None` when at least half never
    /// reach the threshold.
    pub median: Option<f64>,
    /// First cost at which the median curve is below the threshold.
    pub median_curve: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub curves: Vec<CurveSummary>,
    pub threshold_costs: Vec<ThresholdCost>,
}

impl ConvergenceReport {
    pub fn curve(&self, variant: &str) -> Option<&CurveSummary> {
        self.curves.iter().find(|c| c.variant == variant)
    }

    pub fn threshold_cost(&self, variant: &str, threshold: f64) -> Option<&ThresholdCost> {
        self.threshold_costs.iter().find(|t| t.variant == variant && t.threshold == threshold)
    }
}

pub fn convergence_report(variants: &[Variant], outcomes: &[ReplicationOutcome], thresholds: &[f64]) -> Result<ConvergenceReport> {
    if variants.is_empty() {
        return Err(Error::config("no algorithms to report"));
    }
    let mut curves = Vec::new();
    let mut threshold_costs = Vec::new();
    for variant in variants {
        let label = variant.label();
        let mine: Vec<&ReplicationOutcome> = outcomes.iter().filter(|o| o.variant == label).collect();
        let excluded = mine.iter().filter(|o| o.history.is_none()).count();
        let staircases: Vec<Vec<(f64, f64)>> = mine.iter().filter_map(|o| o.history.as_ref()).map(error_staircase).collect();

        let mut grid: Vec<f64> = staircases.iter().flatten().map(|p| p.0).collect();
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        let replications: Vec<Vec<f64>> = staircases.iter().map(|s| carry_forward(s, &grid)).collect();
        let (mut p25, mut median, mut p75) = (Vec::new(), Vec::new(), Vec::new());
        for g in 0..grid.len() {
            let mut column: Vec<f64> = replications.iter().map(|r| r[g]).filter(|v| !v.is_nan()).collect();
            if column.is_empty() {
                p25.push(f64::NAN);
                median.push(f64::NAN);
                p75.push(f64::NAN);
                continue;
            }
            column.sort_by(f64::total_cmp);
            p25.push(percentile(&column, 0.25));
            median.push(percentile(&column, 0.5));
            p75.push(percentile(&column, 0.75));
        }
        let curve = CurveSummary { variant: label.clone(), grid, replications, p25, median, p75, excluded };
        for &t in thresholds {
            let per_replication: Vec<Option<f64>> = staircases.iter().map(|s| cost_to_threshold(s, t)).collect();
            threshold_costs.push(ThresholdCost {
                variant: label.clone(),
                threshold: t,
                median: median_of_optional(&per_replication),
                median_curve: curve.median_first_below(t),
                per_replication,
            });
        }
        curves.push(curve);
    }
    Ok(ConvergenceReport { curves, threshold_costs })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

/// Writes `history.csv` for one variant.
pub fn write_history_csv(path: &Path, outcomes: &[&ReplicationOutcome], num_sources: usize, dim: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["replication".to_string(), "iteration".to_string()];
    header.extend((0..dim).map(|d| format!("z{d}")));
    header.extend(["source".to_string(), "max_eff".to_string()]);
    header.extend((0..num_sources).map(|l| format!("gain_src{l}")));
    header.extend(["evals_this_iter", "cum_cost", "pf_hat", "rel_err"].map(String::from));
    w.write_record(&header)?;
    for o in outcomes {
        let Some(h) = &o.history else { continue };
        for r in &h.records {
            let mut row = vec![o.replication.to_string(), r.iteration.to_string()];
            match &r.z_next {
                Some(z) => row.extend(z.iter().map(|v| v.to_string())),
                None => row.extend((0..dim).map(|_| String::new())),
            }
            row.push(r.source.map_or(String::new(), |s| s.to_string()));
            row.push(fmt_opt(r.max_eff));
            row.extend((0..num_sources).map(|l| fmt_opt(r.gains.get(l).map(|g| g.normalized_gain))));
            row.push(r.evaluations.len().to_string());
            row.push(r.cumulative_cost.to_string());
            row.push(fmt_opt(r.pf_hat));
            row.push(fmt_opt(r.relative_error));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes the CSV files behind the convergence, EFF-evolution and
/// gain-evolution plots, plus `report.csv` and the cost-to-threshold table.
pub fn emit_plot_data(result: &StudyResult, dir: &Path, num_sources: usize, dim: usize) -> Result<()> {
    if result.report.curves.is_empty() {
        return Err(Error::config("report has no algorithms"));
    }
    fs::create_dir_all(dir)?;

    let mut report = csv::Writer::from_path(dir.join("report.csv"))?;
    report.write_record(["algorithm", "cost", "err_p25", "err_median", "err_p75"])?;
    for c in &result.report.curves {
        for i in 0..c.grid.len() {
            report.write_record([c.variant.clone(), c.grid[i].to_string(), fmt_num(c.p25[i]), fmt_num(c.median[i]), fmt_num(c.p75[i])])?;
        }
    }
    report.flush()?;

    let reps = result.report.curves.iter().map(|c| c.replications.len()).max().unwrap_or(0);
    let mut conv = csv::Writer::from_path(dir.join("convergence.csv"))?;
    let mut header = vec!["algorithm".to_string(), "cost".to_string()];
    header.extend((0..reps).map(|r| format!("rep{r}")));
    header.extend(["err_p25", "err_median", "err_p75"].map(String::from));
    conv.write_record(&header)?;
    for c in &result.report.curves {
        for i in 0..c.grid.len() {
            let mut row = vec![c.variant.clone(), c.grid[i].to_string()];
            row.extend((0..reps).map(|r| c.replications.get(r).map_or(String::new(), |v| fmt_num(v[i]))));
            row.extend([fmt_num(c.p25[i]), fmt_num(c.median[i]), fmt_num(c.p75[i])]);
            conv.write_record(&row)?;
        }
    }
    conv.flush()?;

    let mut eff = csv::Writer::from_path(dir.join("eff_evolution.csv"))?;
    eff.write_record(["algorithm", "replication", "iteration", "cum_cost", "max_eff"])?;
    let mut gain = csv::Writer::from_path(dir.join("gain_evolution.csv"))?;
    let mut gain_header = vec!["algorithm".to_string(), "replication".to_string(), "iteration".to_string(), "cum_cost".to_string(), "source".to_string()];
    gain_header.extend((0..num_sources).map(|l| format!("gain_src{l}")));
    gain.write_record(&gain_header)?;
    for o in &result.outcomes {
        let Some(h) = &o.history else { continue };
        for r in h.records.iter().filter(|r| r.max_eff.is_some()) {
            eff.write_record([o.variant.clone(), o.replication.to_string(), r.iteration.to_string(), r.cumulative_cost.to_string(), fmt_opt(r.max_eff)])?;
            if !r.gains.is_empty() {
                let mut row = vec![o.variant.clone(), o.replication.to_string(), r.iteration.to_string(), r.cumulative_cost.to_string(), fmt_opt(r.source.map(|s| s as f64))];
                row.extend((0..num_sources).map(|l| fmt_opt(r.gains.get(l).map(|g| g.normalized_gain))));
                gain.write_record(&row)?;
            }
        }
    }
    eff.flush()?;
    gain.flush()?;

    let mut ct = csv::Writer::from_path(dir.join("cost_to_threshold.csv"))?;
    ct.write_record(["algorithm", "threshold", "replication", "cost"])?;
    for t in &result.report.threshold_costs {
        for (r, c) in t.per_replication.iter().enumerate() {
            ct.write_record([t.variant.clone(), t.threshold.to_string(), r.to_string(), fmt_opt(*c)])?;
        }
        ct.write_record([t.variant.clone(), t.threshold.to_string(), "median".to_string(), fmt_opt(t.median)])?;
        ct.write_record([t.variant.clone(), t.threshold.to_string(), "median_curve".to_string(), fmt_opt(t.median_curve)])?;
    }
    ct.flush()?;

    for v in &result.variants {
        let label = v.label();
        let sub = dir.join(&label);
        fs::create_dir_all(&sub)?;
        let outcomes: Vec<&ReplicationOutcome> = result.outcomes_for(&label).collect();
        let sources = if v.algorithm == super::study::Algorithm::Egra { 1 } else { num_sources };
        write_history_csv(&sub.join("history.csv"), &outcomes, sources, dim)?;
    }

    let summary = serde_json::json!({
        "reference_pf": result.reference.p_hat,
        "reference_samples": result.reference.m,
        "reference_std_error": result.reference.std_error(),
        "sample_hash": result.sample_hash,
        "excluded": result.outcomes.iter().filter(|o| o.error.is_some()).map(|o| serde_json::json!({
            "algorithm": o.variant, "replication": o.replication, "error": o.error
        })).collect::<Vec<_>>(),
        "threshold_costs": result.report.threshold_costs,
    });
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(())
}
