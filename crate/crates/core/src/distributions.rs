//! Random-variable specifications, Monte Carlo draws and Latin hypercube designs.
//!
//! Every sampler is a pure function of its arguments and an explicit seed. A run
//! derives independent streams (design of experiments, information-gain set,
//! probability-of-failure set, ...) from one master seed through [`derive_seed`].

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Marginal distribution of one independent input variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RandomVariableSpec {
    Uniform { lower: f64, upper: f64 },
    Normal { mean: f64, std_dev: f64 },
    TruncatedNormal { mean: f64, std_dev: f64, lower: f64, upper: f64 },
}

impl RandomVariableSpec {
    pub fn validate(&self) -> Result<()> {
        let finite = |xs: &[f64]| xs.iter().all(|x| x.is_finite());
        match *self {
            RandomVariableSpec::Uniform { lower, upper } => {
                if !finite(&[lower, upper]) || lower >= upper {
                    return Err(Error::config(format!("uniform needs lower < upper, got [{lower}, {upper}]")));
                }
            }
            RandomVariableSpec::Normal { mean, std_dev } => {
                if !finite(&[mean, std_dev]) || std_dev <= 0.0 {
                    return Err(Error::config(format!("normal needs std_dev > 0, got {std_dev}")));
                }
            }
            RandomVariableSpec::TruncatedNormal { mean, std_dev, lower, upper } => {
                if !finite(&[mean, std_dev, lower, upper]) || std_dev <= 0.0 || lower >= upper {
                    return Err(Error::config(format!(
                        "truncated normal needs std_dev > 0 and lower < upper, got std_dev={std_dev} [{lower}, {upper}]"
                    )));
                }
                let (a, b) = truncation_cdf_bounds(mean, std_dev, lower, upper);
                if b - a <= 0.0 {
                    return Err(Error::config("truncation interval carries no probability mass"));
                }
            }
        }
        Ok(())
    }

    /// Support of the variable; unbounded sides are infinite.
    pub fn support(&self) -> (f64, f64) {
        match *self {
            RandomVariableSpec::Uniform { lower, upper } => (lower, upper),
            RandomVariableSpec::Normal { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            RandomVariableSpec::TruncatedNormal { lower, upper, .. } => (lower, upper),
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            RandomVariableSpec::Uniform { lower, upper } => lower + (upper - lower) * rng.random::<f64>(),
            RandomVariableSpec::Normal { mean, std_dev } => {
                let n: f64 = StandardNormal.sample(rng);
                mean + std_dev * n
            }
            RandomVariableSpec::TruncatedNormal { mean, std_dev, lower, upper } => {
                // inverse CDF restricted to the truncation interval
                let (a, b) = truncation_cdf_bounds(mean, std_dev, lower, upper);
                let p = a + (b - a) * rng.random::<f64>();
                let normal = Normal::new(mean, std_dev).expect("validated");
                normal.inverse_cdf(p).clamp(lower, upper)
            }
        }
    }
}

fn truncation_cdf_bounds(mean: f64, std_dev: f64, lower: f64, upper: f64) -> (f64, f64) {
    let normal = Normal::new(mean, std_dev).expect("std_dev > 0");
    (normal.cdf(lower), normal.cdf(upper))
}

/// Axis-aligned box of the input space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl DomainBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::config("domain bounds must be nonempty and of equal length"));
        }
        for (i, (&lo, &hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::config(format!("domain dimension {i}: need lower < upper, got [{lo}, {hi}]")));
            }
        }
        Ok(DomainBox { lower, upper })
    }

    pub fn unit(dim: usize) -> Self {
        DomainBox { lower: vec![0.0; dim], upper: vec![1.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, z: &[f64]) -> bool {
        z.len() == self.dim() && z.iter().zip(self.lower.iter().zip(&self.upper)).all(|(x, (lo, hi))| *lo <= *x && *x <= *hi)
    }

    /// Maps a point of the box to the unit hypercube.
    pub fn to_unit(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(x, (lo, hi))| (x - lo) / (hi - lo))
            .collect()
    }

    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(x, (lo, hi))| lo + x * (hi - lo))
            .collect()
    }

    pub fn clamp(&self, z: &mut [f64]) {
        for (x, (lo, hi)) in z.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *x = x.clamp(*lo, *hi);
        }
    }
}

/// `m` points of dimension `dim`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    dim: usize,
    values: Vec<f64>,
    seed: u64,
}

impl SampleSet {
    pub fn from_points(points: &[Vec<f64>], seed: u64) -> Result<Self> {
        let dim = points.first().map(Vec::len).ok_or_else(|| Error::config("empty sample set"))?;
        if dim == 0 || points.iter().any(|p| p.len() != dim) {
            return Err(Error::config("sample points must share a nonzero dimension"));
        }
        Ok(SampleSet { dim, values: points.concat(), seed })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.values
    }

    /// Keeps the first `m` points.
    pub fn truncated(&self, m: usize) -> SampleSet {
        let m = m.min(self.len());
        SampleSet { dim: self.dim, values: self.values[..m * self.dim].to_vec(), seed: self.seed }
    }
}

/// Independent purposes that draw randomness within one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedStream {
    Doe,
    InformationSet,
    FailureSet,
    LocationSearch,
    Hyperparameters,
    Oracle,
}

impl SeedStream {
    fn offset(self) -> u64 {
        match self {
            SeedStream::Doe => 0x1000,
            SeedStream::InformationSet => 0x2000,
            SeedStream::FailureSet => 0x3000,
            SeedStream::LocationSearch => 0x4000,
            SeedStream::Hyperparameters => 0x5000,
            SeedStream::Oracle => 0x6000,
        }
    }
}

/// Seed of the `index`-th draw of `stream` under a run-level master seed.
pub fn derive_seed(master: u64, stream: SeedStream, index: u64) -> u64 {
    splitmix64(splitmix64(master.wrapping_add(stream.offset())).wrapping_add(index))
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Draws `m` i.i.d. joint realizations of independent variables.
pub fn draw_mc(specs: &[RandomVariableSpec], m: usize, seed: u64) -> Result<SampleSet> {
    if specs.is_empty() {
        return Err(Error::config("at least one random variable is required"));
    }
    if m == 0 {
        return Err(Error::config("sample count must be at least 1"));
    }
    for spec in specs {
        spec.validate()?;
    }
    let mut rng = rng_from_seed(seed);
    let mut values = Vec::with_capacity(m * specs.len());
    for _ in 0..m {
        for spec in specs {
            values.push(spec.sample(&mut rng));
        }
    }
    Ok(SampleSet { dim: specs.len(), values, seed })
}

/// Latin hypercube design of `n` points: every dimension's `n` equal-width strata
/// hold exactly one point, jittered uniformly inside its stratum.
pub fn latin_hypercube(domain: &DomainBox, n: usize, seed: u64) -> Result<SampleSet> {
    if n == 0 {
        return Err(Error::config("design size must be at least 1"));
    }
    let dim = domain.dim();
    let mut rng = rng_from_seed(seed);
    let mut values = vec![0.0; n * dim];
    let mut strata: Vec<usize> = (0..n).collect();
    for d in 0..dim {
        strata.shuffle(&mut rng);
        let (lo, hi) = (domain.lower[d], domain.upper[d]);
        let width = (hi - lo) / n as f64;
        for (i, &s) in strata.iter().enumerate() {
            let x = lo + width * (s as f64 + rng.random::<f64>());
            // keep the point inside its stratum despite rounding at the upper edge
            let stratum_hi = if s + 1 == n { hi } else { lo + width * (s + 1) as f64 };
            values[i * dim + d] = x.min(stratum_hi).max(lo + width * s as f64);
        }
    }
    Ok(SampleSet { dim, values, seed })
}
