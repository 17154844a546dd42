//! Marginal-likelihood evaluation and multistart hyperparameter search.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::kernel::{nugget_scale, KernelHyperparams, SeKernel};
use crate::distributions::{latin_hypercube, DomainBox};
use crate::optimize::{lbfgs, LbfgsOptions};

/// Jitter rungs tried, in order, when a kernel matrix fails to factorize.
pub const JITTER_LADDER: [f64; 5] = [1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

const LOG_VARIANCE_BOUNDS: (f64, f64) = (-13.815510557964274, 4.605170185988092); // ln 1e-6, ln 1e2
const LOG_LENGTH_BOUNDS: (f64, f64) = (-4.605170185988091, 2.302585092994046); // ln 1e-2, ln 1e1

/// Controls the multistart marginal-likelihood ascent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Number of local ascents; the first starts from the supplied guess.
    pub starts: usize,
    pub seed: u64,
    pub max_iterations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { starts: 8, seed: 0, max_iterations: 60 }
    }
}

/// Jitter values to try, starting at `first` and escalating through the ladder.
pub(crate) fn ladder_from(first: f64) -> Vec<f64> {
    let mut rungs = vec![first];
    rungs.extend(JITTER_LADDER.iter().copied().filter(|&j| j > first));
    rungs
}

/// Cholesky factor of `k + jitter * scale * I`, escalating `jitter` through
/// `jitters` until the factorization succeeds.
pub(crate) fn factorize(mut k: DMatrix<f64>, jitters: &[f64], scale: f64) -> Option<(Cholesky<f64, Dyn>, f64)> {
    let n = k.nrows();
    let mut applied = 0.0;
    for &j in jitters {
        for i in 0..n {
            k[(i, i)] += (j - applied) * scale;
        }
        applied = j;
        if let Some(chol) = k.clone().cholesky() {
            return Some((chol, j));
        }
    }
    None
}

/// Training inputs in the unit box, standardized outputs and the pairwise
/// squared coordinate differences reused by every likelihood evaluation.
pub(crate) struct Design {
    pub n: usize,
    pub dim: usize,
    pub num_sources: usize,
    pub sources: Vec<usize>,
    pub y: DVector<f64>,
    sqdiff: Vec<f64>,
}

impl Design {
    pub fn new(unit: Vec<Vec<f64>>, sources: Vec<usize>, y: DVector<f64>, num_sources: usize) -> Self {
        let n = unit.len();
        let dim = unit.first().map_or(0, Vec::len);
        let mut sqdiff = Vec::with_capacity(n * n.saturating_sub(1) / 2 * dim);
        for i in 0..n {
            for j in 0..i {
                for d in 0..dim {
                    let t = unit[i][d] - unit[j][d];
                    sqdiff.push(t * t);
                }
            }
        }
        Design { n, dim, num_sources, sources, y, sqdiff }
    }

    fn active_components(&self) -> Vec<usize> {
        (0..self.num_sources).filter(|&c| c == 0 || self.sources.contains(&c)).collect()
    }

    fn mean_design(&self, active: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, active.len(), |i, col| {
            let c = active[col];
            if c == 0 || self.sources[i] == c {
                1.0
            } else {
                0.0
            }
        })
    }
}

/// Log marginal likelihood, its gradient in log-parameter space and the
/// generalized-least-squares prior means.
pub(crate) struct LikelihoodEval {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub means: Vec<f64>,
    pub jitter: f64,
}

/// Parameter layout: for every component `c`, `[ln variance, ln length-scale_0, ...]`.
fn unpack(theta: &[f64], num_sources: usize, dim: usize) -> Vec<SeKernel> {
    (0..num_sources)
        .map(|c| {
            let base = c * (dim + 1);
            SeKernel::new(theta[base].exp(), theta[base + 1..base + 1 + dim].iter().map(|v| v.exp()).collect())
        })
        .collect()
}

fn pack(components: &[SeKernel]) -> Vec<f64> {
    components
        .iter()
        .flat_map(|c| std::iter::once(c.variance.max(1e-300).ln()).chain(c.length_scales.iter().map(|l| l.ln())))
        .collect()
}

/// Evaluates the likelihood at kernel parameters `theta`. With `fixed_means`
/// the prior means are taken as given; otherwise they are profiled out.
pub(crate) fn evaluate(
    design: &Design,
    theta: &[f64],
    fixed_means: Option<&[f64]>,
    jitters: &[f64],
    with_gradient: bool,
) -> Option<LikelihoodEval> {
    let (n, dim) = (design.n, design.dim);
    let comps = unpack(theta, design.num_sources, dim);
    let inv_l2: Vec<Vec<f64>> = comps.iter().map(|c| c.length_scales.iter().map(|l| 1.0 / (l * l)).collect()).collect();

    // per-pair kernel values: base component and same-source discrepancy
    let pairs = n * n.saturating_sub(1) / 2;
    let mut base = Vec::with_capacity(pairs);
    let mut disc = Vec::with_capacity(pairs);
    let mut k = DMatrix::<f64>::zeros(n, n);
    let mut p = 0;
    for i in 0..n {
        for j in 0..i {
            let sq = &design.sqdiff[p * dim..(p + 1) * dim];
            let r0: f64 = sq.iter().zip(&inv_l2[0]).map(|(a, b)| a * b).sum();
            let e0 = comps[0].variance * (-0.5 * r0).exp();
            let s = design.sources[i];
            let es = if s > 0 && s == design.sources[j] {
                let rs: f64 = sq.iter().zip(&inv_l2[s]).map(|(a, b)| a * b).sum();
                comps[s].variance * (-0.5 * rs).exp()
            } else {
                0.0
            };
            base.push(e0);
            disc.push(es);
            k[(i, j)] = e0 + es;
            k[(j, i)] = e0 + es;
            p += 1;
        }
        let s = design.sources[i];
        k[(i, i)] = comps[0].variance + if s > 0 { comps[s].variance } else { 0.0 };
    }

    let (chol, jitter) = factorize(k, jitters, nugget_scale(comps[0].variance))?;
    let active = design.active_components();
    let means: Vec<f64> = match fixed_means {
        Some(m) => m.to_vec(),
        None => {
            let h = design.mean_design(&active);
            let kinv_h = chol.solve(&h);
            let a = h.transpose() * &kinv_h;
            let b = kinv_h.transpose() * &design.y;
            let beta = a.cholesky()?.solve(&b);
            let mut m = vec![0.0; design.num_sources];
            for (col, &c) in active.iter().enumerate() {
                m[c] = beta[col];
            }
            m
        }
    };
    let resid = DVector::from_fn(n, |i, _| {
        let s = design.sources[i];
        design.y[i] - means[0] - if s > 0 { means[s] } else { 0.0 }
    });
    let alpha = chol.solve(&resid);
    let log_det_half: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
    let value = -0.5 * resid.dot(&alpha) - log_det_half - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    if !value.is_finite() {
        return None;
    }

    let mut gradient = vec![0.0; theta.len()];
    if with_gradient {
        let kinv = chol.inverse();
        let w = |i: usize, j: usize| alpha[i] * alpha[j] - kinv[(i, j)];
        for i in 0..n {
            let wii = 0.5 * w(i, i);
            // the nugget tracks the signal variance only below one
            let nugget_slope = if comps[0].variance < 1.0 { jitter } else { 0.0 };
            gradient[0] += wii * comps[0].variance * (1.0 + nugget_slope);
            let s = design.sources[i];
            if s > 0 {
                gradient[s * (dim + 1)] += wii * comps[s].variance;
            }
        }
        let mut p = 0;
        for i in 0..n {
            for j in 0..i {
                let wij = w(i, j);
                let sq = &design.sqdiff[p * dim..(p + 1) * dim];
                let e0 = wij * base[p];
                gradient[0] += e0;
                for d in 0..dim {
                    gradient[1 + d] += e0 * sq[d] * inv_l2[0][d];
                }
                if disc[p] != 0.0 {
                    let s = design.sources[i];
                    let es = wij * disc[p];
                    let off = s * (dim + 1);
                    gradient[off] += es;
                    for d in 0..dim {
                        gradient[off + 1 + d] += es * sq[d] * inv_l2[s][d];
                    }
                }
                p += 1;
            }
        }
    }
    Some(LikelihoodEval { value, gradient, means, jitter })
}

fn bounds_for(index: usize, dim: usize) -> (f64, f64) {
    if index % (dim + 1) == 0 {
        LOG_VARIANCE_BOUNDS
    } else {
        LOG_LENGTH_BOUNDS
    }
}

fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

/// Multistart L-BFGS ascent of the profiled log marginal likelihood over the
/// kernel parameters of the components that have data. The supplied guess is
/// the first start and is also kept when nothing beats it.
pub(crate) fn optimize(design: &Design, init: &KernelHyperparams, opts: &FitOptions) -> Option<(KernelHyperparams, f64)> {
    let dim = design.dim;
    let theta0 = pack(&init.components);
    let free: Vec<usize> = design
        .active_components()
        .iter()
        .flat_map(|&c| (c * (dim + 1))..((c + 1) * (dim + 1)))
        .collect();
    let bounds: Vec<(f64, f64)> = free.iter().map(|&i| bounds_for(i, dim)).collect();

    let to_theta = |u: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let mut theta = theta0.clone();
        let mut jac = Vec::with_capacity(u.len());
        for ((&i, &(lo, hi)), &ui) in free.iter().zip(&bounds).zip(u) {
            let s = sigmoid(ui);
            theta[i] = lo + (hi - lo) * s;
            jac.push((hi - lo) * s * (1.0 - s));
        }
        (theta, jac)
    };
    let to_u = |theta: &[f64]| -> Vec<f64> {
        free.iter()
            .zip(&bounds)
            .map(|(&i, &(lo, hi))| {
                let frac = ((theta[i] - lo) / (hi - lo)).clamp(1e-4, 1.0 - 1e-4);
                (frac / (1.0 - frac)).ln()
            })
            .collect()
    };

    let ladder = JITTER_LADDER.to_vec();
    let objective = |u: &[f64]| -> (f64, Vec<f64>) {
        let (theta, jac) = to_theta(u);
        match evaluate(design, &theta, None, &ladder, true) {
            Some(ev) => {
                let g = free.iter().zip(&jac).map(|(&i, j)| -ev.gradient[i] * j).collect();
                (-ev.value, g)
            }
            None => (f64::INFINITY, vec![0.0; u.len()]),
        }
    };

    let mut starts = vec![to_u(&theta0)];
    if opts.starts > 1 {
        let unit = DomainBox::unit(free.len());
        if let Ok(design_points) = latin_hypercube(&unit, opts.starts - 1, opts.seed) {
            for p in design_points.iter() {
                starts.push(p.iter().map(|f| (f.clamp(1e-4, 1.0 - 1e-4) / (1.0 - f.clamp(1e-4, 1.0 - 1e-4))).ln()).collect());
            }
        }
    }

    let lbfgs_opts = LbfgsOptions { max_iterations: opts.max_iterations, gradient_tolerance: 1e-5, ..Default::default() };
    let mut best: Option<(Vec<f64>, f64)> = None;
    for start in &starts {
        if let Some(m) = lbfgs(objective, start, &lbfgs_opts) {
            if best.as_ref().is_none_or(|b| m.value < b.1) {
                best = Some((m.x, m.value));
            }
        }
    }

    // the unclamped guess competes on equal terms
    let init_eval = evaluate(design, &theta0, None, &ladder, false);
    let (theta, value) = match (best, init_eval) {
        (Some((u, v)), Some(ie)) if -ie.value > v => (to_theta(&u).0, v),
        (Some((u, v)), None) => (to_theta(&u).0, v),
        (_, Some(ie)) => (theta0.clone(), -ie.value),
        (None, None) => return None,
    };
    let ev = evaluate(design, &theta, None, &ladder, false)?;
    let hyper = KernelHyperparams { components: unpack(&theta, design.num_sources, dim), means: ev.means, jitter: ev.jitter };
    debug_assert!((ev.value + value).abs() <= 1e-6 * value.abs().max(1.0));
    Some((hyper, ev.value))
}
