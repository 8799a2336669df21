//! Biwhitening pipeline: variance estimates → scaling factors → scaled data →
//! spectrum → rank above the Marchenko-Pastur upper edge.
//!
//! The variance matrix may contain structural zeros (for count models every
//! zero observation has zero estimated variance). Zero rows and columns are
//! dropped, the remainder is split into connected blocks, and a block that
//! cannot be scaled is pruned until the zero-count requirements hold (see
//! [`PrunePolicy`]). Each surviving block of
//! shape `d₁ × d₂` is scaled to row sums `d₂` and column sums `d₁` and gets its
//! own spectrum and rank; the reported rank is the sum over blocks.

use log::warn;
use nalgebra::linalg::SVD;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mp_law::{ks_distance, ks_pvalue, Esd, MpLaw};
use crate::scaling::{
    diagnose, prune_to_scalable, scaling_factors_from_variances, Block, BlockIndices,
    ScalingDiagnosis, ScalingError, ScalingFactors, SinkhornOptions, MIN_BLOCK_DIM,
};
use crate::variance::NoiseModel;
use crate::DenseMatrix;

/// What to do with negative variance estimates (possible when `c < 0`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NegativePolicy {
    /// Replace by zero and count the replacements.
    #[default]
    Clamp,
    /// Fail on the first negative estimate.
    Reject,
}

/// When to remove sparse rows/columns. The zero-count requirements are
/// sufficient for scalability but far from necessary: sparse count data
/// usually violate them and still scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrunePolicy {
    /// Prune every block until the requirements hold.
    Always,
    /// Scale each block as it is; prune only if that does not converge
    /// within `fallback_iter` iterations.
    #[default]
    Fallback,
    /// Never prune; scaling failures are errors.
    Never,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiwhitenOptions {
    pub sinkhorn: SinkhornOptions,
    /// Margin above the upper edge; `0` counts every eigenvalue past the edge.
    pub epsilon: f64,
    pub prune: PrunePolicy,
    /// Iteration budget for the unpruned attempt under [`PrunePolicy::Fallback`].
    pub fallback_iter: usize,
    pub negative: NegativePolicy,
}

impl Default for BiwhitenOptions {
    fn default() -> Self {
        Self {
            sinkhorn: SinkhornOptions::default(),
            epsilon: 0.0,
            prune: PrunePolicy::Fallback,
            fallback_iter: 100_000,
            negative: NegativePolicy::Clamp,
        }
    }
}

/// Entrywise variance estimates of `y` under `model`, with the number of
/// negative estimates that were clamped to zero.
pub fn variance_matrix(
    y: &DenseMatrix,
    model: &NoiseModel,
    policy: NegativePolicy,
) -> Result<(DenseMatrix, usize)> {
    model.validate()?;
    if model.is_identity() {
        if let Some((idx, v)) = y.iter().enumerate().find(|(_, v)| !(**v >= 0.0 && v.is_finite())) {
            if policy == NegativePolicy::Reject || !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "negative or non-finite observation {v} at linear index {idx}"
                )));
            }
        } else {
            return Ok((y.clone(), 0));
        }
    }
    let mut clamped = 0;
    let mut out = DenseMatrix::zeros(y.nrows(), y.ncols());
    for (o, &v) in out.iter_mut().zip(y.iter()) {
        if !v.is_finite() {
            return Err(Error::InvalidParameter(format!("non-finite observation {v}")));
        }
        let e = model.estimate(v)?;
        *o = if e < 0.0 {
            match policy {
                NegativePolicy::Clamp => {
                    clamped += 1;
                    0.0
                }
                NegativePolicy::Reject => {
                    return Err(Error::InvalidParameter(format!(
                        "negative variance estimate {e} for observation {v}"
                    )))
                }
            }
        } else {
            e
        };
    }
    Ok((out, clamped))
}

/// One scaled block: `Ŷ = D(√x) Y D(√y)` on the block's rows and columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledBlock {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub factors: ScalingFactors,
    pub y_hat: DenseMatrix,
}

/// Output of [`biwhiten`].
#[derive(Debug, Clone, PartialEq)]
pub struct Biwhitened {
    pub nrows: usize,
    pub ncols: usize,
    pub blocks: Vec<ScaledBlock>,
    /// Diagnosis of the full variance matrix before any pruning.
    pub diagnosis: ScalingDiagnosis,
    /// Rows/columns not covered by any scaled block.
    pub removed_rows: Vec<usize>,
    pub removed_cols: Vec<usize>,
    /// Components that pruned down below the minimum block size.
    pub unscalable: Vec<BlockIndices>,
    pub clamped_variances: usize,
    pub warnings: Vec<String>,
}

impl Biwhitened {
    /// Full-size scaled matrix; removed rows and columns are zero.
    pub fn assemble(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.nrows, self.ncols);
        for b in &self.blocks {
            for (bj, &j) in b.cols.iter().enumerate() {
                for (bi, &i) in b.rows.iter().enumerate() {
                    out[(i, j)] = b.y_hat[(bi, bj)];
                }
            }
        }
        out
    }

    /// Block with the most entries.
    pub fn largest_block(&self) -> Option<&ScaledBlock> {
        self.blocks
            .iter()
            .max_by_key(|b| (b.rows.len() * b.cols.len(), std::cmp::Reverse(b.rows[0])))
    }
}

/// Scale `y` so that the estimated noise variance averages to one in every
/// row and column of each block.
pub fn biwhiten(y: &DenseMatrix, model: &NoiseModel, opts: &BiwhitenOptions) -> Result<Biwhitened> {
    let (m, n) = y.shape();
    if m == 0 || n == 0 {
        return Err(Error::InvalidParameter("empty input matrix".into()));
    }
    let (v, clamped) = variance_matrix(y, model, opts.negative)?;
    let mut warnings = Vec::new();
    if clamped > 0 {
        warnings.push(format!("{clamped} negative variance estimates clamped to zero"));
    }
    let diagnosis = diagnose(&v);
    if !diagnosis.zero_rows.is_empty() || !diagnosis.zero_cols.is_empty() {
        warnings.push(format!(
            "{} zero rows and {} zero columns of the variance matrix removed",
            diagnosis.zero_rows.len(),
            diagnosis.zero_cols.len()
        ));
    }
    if diagnosis.blocks.len() > 1 {
        warnings.push(format!(
            "variance matrix splits into {} disconnected blocks",
            diagnosis.blocks.len()
        ));
    }

    let mut work: Vec<BlockIndices> = diagnosis.blocks.iter().rev().cloned().collect();
    let mut finals: Vec<(Block, Option<ScalingFactors>)> = Vec::new();
    let mut unscalable = Vec::new();
    while let Some(idx) = work.pop() {
        let sub = Block::extract(&v, idx.rows.clone(), idx.cols.clone());
        let small = sub.rows.len() < MIN_BLOCK_DIM || sub.cols.len() < MIN_BLOCK_DIM;
        match opts.prune {
            PrunePolicy::Never => {
                if small {
                    unscalable.push(idx);
                } else {
                    finals.push((sub, None));
                }
                continue;
            }
            PrunePolicy::Fallback if !small => {
                let trial = SinkhornOptions {
                    max_iter: opts.sinkhorn.max_iter.min(opts.fallback_iter),
                    ..opts.sinkhorn
                };
                match scaling_factors_from_variances(&sub.matrix, &trial) {
                    Ok(f) => {
                        finals.push((sub, Some(f)));
                        continue;
                    }
                    Err(ScalingError::NonConvergence { iterations, .. }) => warnings.push(format!(
                        "block with {} rows and {} columns did not scale within {iterations} iterations; pruning",
                        sub.rows.len(),
                        sub.cols.len()
                    )),
                    Err(e) => return Err(e.into()),
                }
            }
            _ => {}
        }
        match prune_to_scalable(&sub.matrix) {
            Ok(p) => {
                let rows: Vec<usize> = p.block.rows.iter().map(|&r| sub.rows[r]).collect();
                let cols: Vec<usize> = p.block.cols.iter().map(|&c| sub.cols[c]).collect();
                if !p.removed_rows.is_empty() || !p.removed_cols.is_empty() {
                    warnings.push(format!(
                        "pruned {} rows and {} columns to meet the scaling requirements",
                        p.removed_rows.len(),
                        p.removed_cols.len()
                    ));
                }
                let inner = diagnose(&p.block.matrix);
                if inner.blocks.len() == 1 {
                    let block = Block {
                        matrix: p.block.matrix,
                        rows,
                        cols,
                    };
                    finals.push((block, None));
                } else {
                    for b in inner.blocks.into_iter().rev() {
                        work.push(BlockIndices {
                            rows: b.rows.iter().map(|&r| rows[r]).collect(),
                            cols: b.cols.iter().map(|&c| cols[c]).collect(),
                        });
                    }
                }
            }
            Err(ScalingError::Unscalable(msg)) => {
                warnings.push(format!(
                    "block with {} rows and {} columns is unscalable: {msg}",
                    idx.rows.len(),
                    idx.cols.len()
                ));
                unscalable.push(idx);
            }
            Err(e) => return Err(e.into()),
        }
    }
    if finals.is_empty() {
        return Err(Error::Unscalable);
    }
    finals.sort_by_key(|(b, _)| b.rows[0]);

    let mut blocks = Vec::with_capacity(finals.len());
    for (b, done) in finals {
        let factors = match done {
            Some(f) => f,
            None => scaling_factors_from_variances(&b.matrix, &opts.sinkhorn).map_err(|source| {
                Error::BlockScaling {
                    source,
                    diagnosis: Box::new(diagnose(&b.matrix)),
                }
            })?,
        };
        let (u, w) = (factors.row_factors(), factors.col_factors());
        let y_hat = DenseMatrix::from_fn(b.rows.len(), b.cols.len(), |i, j| {
            u[i] * y[(b.rows[i], b.cols[j])] * w[j]
        });
        blocks.push(ScaledBlock {
            rows: b.rows,
            cols: b.cols,
            factors,
            y_hat,
        });
    }

    let mut row_used = vec![false; m];
    let mut col_used = vec![false; n];
    for b in &blocks {
        b.rows.iter().for_each(|&i| row_used[i] = true);
        b.cols.iter().for_each(|&j| col_used[j] = true);
    }
    for w in &warnings {
        warn!("{w}");
    }
    Ok(Biwhitened {
        nrows: m,
        ncols: n,
        blocks,
        diagnosis,
        removed_rows: (0..m).filter(|&i| !row_used[i]).collect(),
        removed_cols: (0..n).filter(|&j| !col_used[j]).collect(),
        unscalable,
        clamped_variances: clamped,
        warnings,
    })
}

/// Singular values of `a`, nonincreasing.
pub fn singular_values(a: &DenseMatrix) -> Result<Vec<f64>> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite matrix entry".into()));
    }
    let svd = SVD::try_new(a.clone(), false, false, f64::EPSILON, 0).ok_or(Error::Factorization)?;
    let mut s: Vec<f64> = svd.singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(s)
}

/// Number of singular values above `rel_cutoff` times the largest.
pub fn numerical_rank(a: &DenseMatrix, rel_cutoff: f64) -> Result<usize> {
    let s = singular_values(a)?;
    let top = s.first().copied().unwrap_or(0.0);
    Ok(s.iter().filter(|&&v| v > rel_cutoff * top).count())
}

/// Eigenvalues of `n⁻¹ Ŷ Ŷᵀ` with the matrix oriented so that `m ≤ n`,
/// computed as squared singular values of `n^{-1/2} Ŷ`.
pub fn spectrum(y_hat: &DenseMatrix) -> Result<Esd> {
    let s = singular_values(y_hat)?;
    esd_from_singular_values(&s, y_hat.nrows(), y_hat.ncols())
}

pub(crate) fn esd_from_singular_values(s: &[f64], rows: usize, cols: usize) -> Result<Esd> {
    let (m, n) = (rows.min(cols), rows.max(cols));
    let eig = s.iter().map(|v| v * v / n as f64).collect();
    Esd::new(eig, m, n)
}

/// `(1 + √(m/n))² + ε`.
pub fn rank_threshold(esd: &Esd, epsilon: f64) -> f64 {
    let r = 1.0 + esd.gamma().sqrt();
    r * r + epsilon
}

/// Number of eigenvalues strictly above `(1 + √(m/n))² + ε`.
pub fn estimate_rank(esd: &Esd, epsilon: f64) -> usize {
    let t = rank_threshold(esd, epsilon);
    esd.eigenvalues().iter().take_while(|&&v| v > t).count()
}

/// Spectrum and rank of one scaled block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockReport {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub factors: ScalingFactors,
    pub esd: Esd,
    pub singular_values: Vec<f64>,
    /// `(1 + √γ)² + ε` on the eigenvalue scale.
    pub eigenvalue_threshold: f64,
    /// The same threshold on the singular value scale, `√(n·((1 + √γ)² + ε))`;
    /// equals `√n + √m` for `ε = 0`.
    pub singular_value_threshold: f64,
    pub rank: usize,
    pub ks_distance: f64,
    pub ks_pvalue: f64,
}

/// Output of [`rank`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiwhitenReport {
    pub nrows: usize,
    pub ncols: usize,
    /// Sum of per-block ranks.
    pub rank: usize,
    pub epsilon: f64,
    pub blocks: Vec<BlockReport>,
    pub diagnosis: ScalingDiagnosis,
    pub removed_rows: Vec<usize>,
    pub removed_cols: Vec<usize>,
    pub unscalable: Vec<BlockIndices>,
    pub clamped_variances: usize,
    pub warnings: Vec<String>,
}

impl BiwhitenReport {
    pub fn largest_block(&self) -> Option<&BlockReport> {
        self.blocks
            .iter()
            .max_by_key(|b| (b.rows.len() * b.cols.len(), std::cmp::Reverse(b.rows[0])))
    }
}

pub(crate) fn block_report(b: &ScaledBlock, epsilon: f64) -> Result<BlockReport> {
    let s = singular_values(&b.y_hat)?;
    let esd = esd_from_singular_values(&s, b.y_hat.nrows(), b.y_hat.ncols())?;
    let law = MpLaw::standard(esd.m(), esd.n())?;
    let eigenvalue_threshold = rank_threshold(&esd, epsilon);
    let ks = ks_distance(&esd, &law)?;
    Ok(BlockReport {
        rows: b.rows.clone(),
        cols: b.cols.clone(),
        factors: b.factors.clone(),
        singular_value_threshold: (esd.n() as f64 * eigenvalue_threshold).sqrt(),
        eigenvalue_threshold,
        rank: estimate_rank(&esd, epsilon),
        ks_distance: ks,
        ks_pvalue: ks_pvalue(ks, esd.m()),
        singular_values: s,
        esd,
    })
}

/// Biwhiten `y` under `model` and estimate the rank of its signal.
pub fn rank(y: &DenseMatrix, model: &NoiseModel, opts: &BiwhitenOptions) -> Result<BiwhitenReport> {
    if opts.epsilon < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "epsilon must be nonnegative, got {}",
            opts.epsilon
        )));
    }
    let bw = biwhiten(y, model, opts)?;
    let blocks = bw
        .blocks
        .iter()
        .map(|b| block_report(b, opts.epsilon))
        .collect::<Result<Vec<_>>>()?;
    Ok(BiwhitenReport {
        nrows: bw.nrows,
        ncols: bw.ncols,
        rank: blocks.iter().map(|b| b.rank).sum(),
        epsilon: opts.epsilon,
        blocks,
        diagnosis: bw.diagnosis,
        removed_rows: bw.removed_rows,
        removed_cols: bw.removed_cols,
        unscalable: bw.unscalable,
        clamped_variances: bw.clamped_variances,
        warnings: bw.warnings,
    })
}
