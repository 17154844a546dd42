//! Two-dimensional multimodal limit state with two cheaper approximations.

use std::sync::Arc;

use crate::distributions::{DomainBox, RandomVariableSpec};
use crate::driver::{Evaluator, ProblemDefinition};
use crate::error::{Error, Result};

pub const ANALYTIC_COSTS: [f64; 3] = [1.0, 0.01, 0.001];
pub const ANALYTIC_LOWER: [f64; 2] = [-4.0, -3.0];
pub const ANALYTIC_UPPER: [f64; 2] = [7.0, 8.0];

pub fn analytic_domain() -> DomainBox {
    DomainBox::new(ANALYTIC_LOWER.to_vec(), ANALYTIC_UPPER.to_vec()).expect("valid bounds")
}

pub fn analytic_specs() -> Vec<RandomVariableSpec> {
    ANALYTIC_LOWER
        .iter()
        .zip(ANALYTIC_UPPER)
        .map(|(&lower, upper)| RandomVariableSpec::Uniform { lower, upper })
        .collect()
}

pub fn high_fidelity(z: &[f64]) -> f64 {
    let (z1, z2) = (z[0], z[1]);
    (z1 * z1 + 4.0) * (z2 - 1.0) / 20.0 - (2.5 * z1).sin() - 2.0
}

pub fn discrepancy(source: usize, z: &[f64]) -> f64 {
    let (z1, z2) = (z[0], z[1]);
    match source {
        1 => (5.0 * z1 / 22.0 + 5.0 * z2 / 44.0 + 5.0 / 4.0).sin(),
        2 => 3.0 * (5.0 * z1 / 11.0 + 5.0 * z2 / 11.0 + 35.0 / 11.0).sin(),
        _ => 0.0,
    }
}

/// Evaluates information source `source` (0 is the high-fidelity model).
pub fn eval_analytic(source: usize, z: &[f64]) -> Result<f64> {
    if source > 2 {
        return Err(Error::config(format!("analytic problem has sources 0..=2, got {source}")));
    }
    if z.len() != 2 {
        return Err(Error::config(format!("analytic problem is 2-D, got {} coordinates", z.len())));
    }
    Ok(high_fidelity(z) + discrepancy(source, z))
}

/// The three-source analytic problem with failure at `g > 0`.
pub fn analytic_problem() -> ProblemDefinition {
    let evaluators: Vec<Evaluator> = (0..3).map(|l| Arc::new(move |z: &[f64]| eval_analytic(l, z)) as Evaluator).collect();
    ProblemDefinition {
        evaluators,
        costs: ANALYTIC_COSTS.to_vec(),
        domain: analytic_domain(),
        specs: analytic_specs(),
        threshold: 0.0,
    }
}
