//! Seeded generators for signal matrices, count noise, and per-class
//! homogenization.
//!
//! Every random stream is a ChaCha8 generator keyed by `(seed, purpose)` with
//! one stream per row, so a row's draws do not depend on how rows are
//! scheduled across threads.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Gamma, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::variance::QvfParams;
use crate::DenseMatrix;

const PURPOSE_LEFT: u64 = 1;
const PURPOSE_RIGHT: u64 = 2;
const PURPOSE_ROW_SCALE: u64 = 3;
const PURPOSE_COL_SCALE: u64 = 4;
const PURPOSE_STRONG_P: u64 = 5;
const PURPOSE_STRONG_Q: u64 = 6;
const PURPOSE_ENTRIES: u64 = 7;
const PURPOSE_COUNTS: u64 = 8;
const PURPOSE_HOMOGENIZE: u64 = 9;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator for stream `stream` of the sub-seed `(seed, purpose)`.
pub fn stream_rng(seed: u64, purpose: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(purpose)));
    rng.set_stream(stream);
    rng
}

/// Distribution of a single factor entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FactorDist {
    /// `exp(sigma · Z)` with `Z` standard normal.
    LogNormal { sigma: f64 },
    Uniform { low: f64, high: f64 },
    /// `exp(U)` with `U ~ Unif(low, high)`.
    ExpUniform { low: f64, high: f64 },
    Constant { value: f64 },
}

impl FactorDist {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            FactorDist::LogNormal { sigma } => sigma.is_finite() && sigma >= 0.0,
            FactorDist::Uniform { low, high } => low.is_finite() && high.is_finite() && 0.0 <= low && low < high,
            FactorDist::ExpUniform { low, high } => low.is_finite() && high.is_finite() && low < high,
            FactorDist::Constant { value } => value.is_finite() && value > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid factor distribution {self:?}")))
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            FactorDist::LogNormal { sigma } => {
                let z: f64 = rng.sample(StandardNormal);
                (sigma * z).exp()
            }
            FactorDist::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
            FactorDist::ExpUniform { low, high } => (low + (high - low) * rng.random::<f64>()).exp(),
            FactorDist::Constant { value } => value,
        }
    }
}

/// Rank-one spike `p qᵀ` added after mean normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrongFactor {
    pub dist: FactorDist,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SignalRecipe {
    /// `X = B C` with `B` (m×r) and `C` (r×n) drawn entrywise.
    LowRank { left: FactorDist, right: FactorDist },
    /// `X = D(u) A D(v)` with every entry of `A` drawn from `entries`;
    /// full rank almost surely.
    ScaledEntries {
        entries: FactorDist,
        row_scale: FactorDist,
        col_scale: FactorDist,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalSpec {
    pub m: usize,
    pub n: usize,
    /// Rank of the normalized part; ignored by [`SignalRecipe::ScaledEntries`].
    pub r: usize,
    pub recipe: SignalRecipe,
    /// Average entry after normalization, excluding the strong factor.
    /// `None` keeps the raw scale.
    pub mean_target: Option<f64>,
    pub strong_factor: Option<StrongFactor>,
}

impl SignalSpec {
    /// Log-normal(σ = 2) left factors, uniform right factors, mean 1.
    pub fn lognormal_uniform(m: usize, n: usize, r: usize) -> Self {
        Self {
            m,
            n,
            r,
            recipe: SignalRecipe::LowRank {
                left: FactorDist::LogNormal { sigma: 2.0 },
                right: FactorDist::Uniform { low: 0.0, high: 1.0 },
            },
            mean_target: Some(1.0),
            strong_factor: None,
        }
    }

    /// Unif(1, 2) entries scaled on both sides by `exp(Unif(−2, 2))`.
    pub fn full_rank(m: usize, n: usize) -> Self {
        let scale = FactorDist::ExpUniform { low: -2.0, high: 2.0 };
        Self {
            m,
            n,
            r: m.min(n),
            recipe: SignalRecipe::ScaledEntries {
                entries: FactorDist::Uniform { low: 1.0, high: 2.0 },
                row_scale: scale,
                col_scale: scale,
            },
            mean_target: None,
            strong_factor: None,
        }
    }

    /// `exp(Unif(−1, 1))` left factors, uniform right factors.
    pub fn mild_heteroskedastic(m: usize, n: usize, r: usize, mean: f64) -> Self {
        Self {
            recipe: SignalRecipe::LowRank {
                left: FactorDist::ExpUniform { low: -1.0, high: 1.0 },
                right: FactorDist::Uniform { low: 0.0, high: 1.0 },
            },
            mean_target: Some(mean),
            ..Self::lognormal_uniform(m, n, r)
        }
    }

    /// `exp(2Z)` left factors, uniform right factors.
    pub fn strong_heteroskedastic(m: usize, n: usize, r: usize, mean: f64) -> Self {
        Self {
            mean_target: Some(mean),
            ..Self::lognormal_uniform(m, n, r)
        }
    }

    /// Mild recipe of rank `r` plus a spike with `p_i, q_j ~ exp(2Z)`.
    pub fn with_strong_factor(m: usize, n: usize, r: usize, mean: f64) -> Self {
        Self {
            strong_factor: Some(StrongFactor {
                dist: FactorDist::LogNormal { sigma: 2.0 },
            }),
            ..Self::mild_heteroskedastic(m, n, r, mean)
        }
    }

    /// `exp(2Z)` left and `exp(Z)` right factors, mean 1.
    pub fn lognormal_both(m: usize, n: usize, r: usize) -> Self {
        Self {
            recipe: SignalRecipe::LowRank {
                left: FactorDist::LogNormal { sigma: 2.0 },
                right: FactorDist::LogNormal { sigma: 1.0 },
            },
            ..Self::lognormal_uniform(m, n, r)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 {
            return Err(Error::InvalidParameter("signal dimensions must be positive".into()));
        }
        match self.recipe {
            SignalRecipe::LowRank { left, right } => {
                if self.r == 0 || self.r > self.m.min(self.n) {
                    return Err(Error::InvalidParameter(format!(
                        "rank {} outside 1..={}",
                        self.r,
                        self.m.min(self.n)
                    )));
                }
                left.validate()?;
                right.validate()?;
            }
            SignalRecipe::ScaledEntries {
                entries,
                row_scale,
                col_scale,
            } => {
                entries.validate()?;
                row_scale.validate()?;
                col_scale.validate()?;
            }
        }
        if let Some(t) = self.mean_target {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::InvalidParameter(format!("mean target must be positive, got {t}")));
            }
        }
        if let Some(s) = self.strong_factor {
            s.dist.validate()?;
        }
        Ok(())
    }
}

fn draw_matrix(rows: usize, cols: usize, dist: FactorDist, seed: u64, purpose: u64) -> DenseMatrix {
    let data: Vec<Vec<f64>> = (0..rows)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, purpose, i as u64);
            (0..cols).map(|_| dist.sample(&mut rng)).collect()
        })
        .collect();
    DenseMatrix::from_fn(rows, cols, |i, j| data[i][j])
}

fn draw_vector(len: usize, dist: FactorDist, seed: u64, purpose: u64) -> Vec<f64> {
    let mut rng = stream_rng(seed, purpose, 0);
    (0..len).map(|_| dist.sample(&mut rng)).collect()
}

/// Draw the signal matrix described by `spec`.
pub fn gen_signal(spec: &SignalSpec, seed: u64) -> Result<DenseMatrix> {
    spec.validate()?;
    let (m, n) = (spec.m, spec.n);
    let mut x = match spec.recipe {
        SignalRecipe::LowRank { left, right } => {
            let b = draw_matrix(m, spec.r, left, seed, PURPOSE_LEFT);
            let c = draw_matrix(spec.r, n, right, seed, PURPOSE_RIGHT);
            b * c
        }
        SignalRecipe::ScaledEntries {
            entries,
            row_scale,
            col_scale,
        } => {
            let a = draw_matrix(m, n, entries, seed, PURPOSE_ENTRIES);
            let u = draw_vector(m, row_scale, seed, PURPOSE_ROW_SCALE);
            let v = draw_vector(n, col_scale, seed, PURPOSE_COL_SCALE);
            DenseMatrix::from_fn(m, n, |i, j| u[i] * a[(i, j)] * v[j])
        }
    };
    if let Some(target) = spec.mean_target {
        let mean = x.mean();
        if !(mean > 0.0) {
            return Err(Error::InvalidParameter("signal has zero mean and cannot be normalized".into()));
        }
        x *= target / mean;
    }
    if let Some(s) = spec.strong_factor {
        let p = draw_vector(m, s.dist, seed, PURPOSE_STRONG_P);
        let q = draw_vector(n, s.dist, seed, PURPOSE_STRONG_Q);
        for j in 0..n {
            for i in 0..m {
                x[(i, j)] += p[i] * q[j];
            }
        }
    }
    Ok(x)
}

/// Scale every column to sum to one.
pub fn normalize_columns(x: &DenseMatrix) -> Result<DenseMatrix> {
    let mut out = x.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        let s = col.sum();
        if !(s > 0.0) {
            return Err(Error::InvalidParameter(format!("column {j} has nonpositive sum")));
        }
        col /= s;
    }
    Ok(out)
}

/// Count noise family. For `Binomial` the parameter matrix holds success
/// probabilities; the other families take the mean directly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum NoiseFamily {
    Poisson,
    Binomial { trials: u64 },
    NegBinomial { failures: u64 },
    GenPoisson { eta: f64 },
}

impl NoiseFamily {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseFamily::Poisson => Ok(()),
            NoiseFamily::Binomial { trials } if trials >= 1 => Ok(()),
            NoiseFamily::NegBinomial { failures } if failures >= 1 => Ok(()),
            NoiseFamily::GenPoisson { eta } if (0.0..1.0).contains(&eta) => Ok(()),
            _ => Err(Error::InvalidParameter(format!("invalid noise family {self:?}"))),
        }
    }

    /// Quadratic variance function in terms of the mean of `Y`.
    pub fn qvf(&self) -> QvfParams {
        match *self {
            NoiseFamily::Poisson => QvfParams::POISSON,
            NoiseFamily::Binomial { trials } => QvfParams::binomial(trials),
            NoiseFamily::NegBinomial { failures } => QvfParams::negative_binomial(failures as f64),
            NoiseFamily::GenPoisson { eta } => QvfParams::generalized_poisson(eta),
        }
    }

    /// Mean of an entry drawn with parameter `x`.
    pub fn mean(&self, x: f64) -> f64 {
        match *self {
            NoiseFamily::Binomial { trials } => trials as f64 * x,
            _ => x,
        }
    }

    fn check_param(&self, x: f64) -> Result<()> {
        let ok = match self {
            NoiseFamily::Binomial { .. } => (0.0..=1.0).contains(&x),
            _ => x >= 0.0 && x.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("parameter {x} outside the domain of {self:?}")))
        }
    }

    /// One draw with parameter `x`; `x` must already be in the domain.
    pub fn sample<R: Rng>(&self, x: f64, rng: &mut R) -> f64 {
        match *self {
            NoiseFamily::Poisson => poisson(x, rng),
            NoiseFamily::Binomial { trials } => Binomial::new(trials, x).expect("probability in [0, 1]").sample(rng) as f64,
            NoiseFamily::NegBinomial { failures } => {
                if x == 0.0 {
                    return 0.0;
                }
                let rho = failures as f64;
                let rate = Gamma::new(rho, x / rho).expect("positive gamma parameters").sample(rng);
                poisson(rate, rng)
            }
            NoiseFamily::GenPoisson { eta } => gen_poisson(x, eta, rng),
        }
    }
}

fn poisson<R: Rng>(lambda: f64, rng: &mut R) -> f64 {
    if lambda <= 0.0 {
        0.0
    } else {
        Poisson::new(lambda).expect("finite positive rate").sample(rng)
    }
}

/// Total progeny of a branching process with `Poisson(mean·(1 − η))` founders
/// and `Poisson(η)` offspring per individual; the total has mean `mean` and
/// variance `mean / (1 − η)²`.
fn gen_poisson<R: Rng>(mean: f64, eta: f64, rng: &mut R) -> f64 {
    let mut generation = poisson(mean * (1.0 - eta), rng);
    if eta == 0.0 {
        return generation;
    }
    let mut total = generation;
    while generation > 0.0 {
        generation = poisson(eta * generation, rng);
        total += generation;
    }
    total
}

/// Independent draws `Y_ij ~ family(X_ij)`.
pub fn sample_counts(x: &DenseMatrix, family: NoiseFamily, seed: u64) -> Result<DenseMatrix> {
    family.validate()?;
    for &v in x.iter() {
        family.check_param(v)?;
    }
    let (m, n) = x.shape();
    let rows: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, PURPOSE_COUNTS, i as u64);
            (0..n).map(|j| family.sample(x[(i, j)], &mut rng)).collect()
        })
        .collect();
    Ok(DenseMatrix::from_fn(m, n, |i, j| rows[i][j]))
}

/// Within every (row, class) group, randomly permute the entries across the
/// class's columns.
pub fn homogenize(y: &DenseMatrix, labels: &[usize], seed: u64) -> Result<DenseMatrix> {
    let (m, n) = y.shape();
    if labels.len() != n {
        return Err(Error::InvalidParameter(format!(
            "{} labels for {n} columns",
            labels.len()
        )));
    }
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let members: Vec<Vec<usize>> = classes
        .iter()
        .map(|c| (0..n).filter(|&j| labels[j] == *c).collect())
        .collect();
    let rows: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, PURPOSE_HOMOGENIZE, i as u64);
            let mut row: Vec<f64> = y.row(i).iter().copied().collect();
            for cols in &members {
                let mut vals: Vec<f64> = cols.iter().map(|&j| row[j]).collect();
                vals.shuffle(&mut rng);
                for (&j, v) in cols.iter().zip(vals) {
                    row[j] = v;
                }
            }
            row
        })
        .collect();
    Ok(DenseMatrix::from_fn(m, n, |i, j| rows[i][j]))
}
