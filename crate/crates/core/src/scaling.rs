//! Matrix scaling: find positive `x`, `y` such that `D(x) A D(y)` has prescribed
//! row and column sums, plus the structural checks that decide whether such
//! factors exist for the biwhitening targets (row sums `n`, column sums `m`).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::DenseMatrix;

/// Sinkhorn-Knopp stopping rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornOptions {
    /// Absolute tolerance on the largest row- or column-sum deviation.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        Self {
            tol: 1e-11,
            max_iter: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScalingError {
    #[error("row {0} has no positive entry; scaling factors cannot exist")]
    ZeroRow(usize),
    #[error("column {0} has no positive entry; scaling factors cannot exist")]
    ZeroColumn(usize),
    #[error("entry ({row}, {col}) = {value} is not a nonnegative finite number")]
    InvalidEntry { row: usize, col: usize, value: f64 },
    #[error("target sums disagree: rows sum to {row_total}, columns sum to {col_total}")]
    TargetMismatch { row_total: f64, col_total: f64 },
    #[error("invalid targets: {0}")]
    InvalidTargets(String),
    #[error("Sinkhorn-Knopp did not reach the tolerance after {iterations} iterations (best residual {best_residual:e})")]
    NonConvergence {
        iterations: usize,
        best_residual: f64,
    },
    #[error("matrix is not scalable: {0}")]
    Unscalable(String),
}

/// Scaling factors with the gauge fixed by `‖x‖₁/m = ‖y‖₁/n`.
///
/// `x` and `y` are the squared biwhitening factors: the row factor applied to
/// the data is `√x`, the column factor `√y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFactors {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

impl ScalingFactors {
    pub fn row_factors(&self) -> Vec<f64> {
        self.x.iter().map(|v| v.sqrt()).collect()
    }

    pub fn col_factors(&self) -> Vec<f64> {
        self.y.iter().map(|v| v.sqrt()).collect()
    }

    /// Rescale `(x, y) → (s·x, y/s)` so that both vectors have the same mean.
    pub fn gauge_normalize(&mut self) {
        let mx = self.x.iter().sum::<f64>() / self.x.len() as f64;
        let my = self.y.iter().sum::<f64>() / self.y.len() as f64;
        let s = (my / mx).sqrt();
        self.x.iter_mut().for_each(|v| *v *= s);
        self.y.iter_mut().for_each(|v| *v /= s);
    }

    /// `D(x) A D(y)`.
    pub fn apply(&self, a: &DenseMatrix) -> DenseMatrix {
        DenseMatrix::from_fn(a.nrows(), a.ncols(), |i, j| self.x[i] * a[(i, j)] * self.y[j])
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        let o = 4 * k;
        acc[0] += a[o] * b[o];
        acc[1] += a[o + 1] * b[o + 1];
        acc[2] += a[o + 2] * b[o + 2];
        acc[3] += a[o + 3] * b[o + 3];
    }
    let mut tail = 0.0;
    for k in 4 * chunks..a.len() {
        tail += a[k] * b[k];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `Aᵀ x`, one column at a time (columns are contiguous).
fn col_sums(a: &DenseMatrix, x: &[f64], out: &mut [f64]) {
    let m = a.nrows();
    let data = a.as_slice();
    out.par_iter_mut().enumerate().for_each(|(j, o)| {
        *o = dot(&data[j * m..(j + 1) * m], x);
    });
}

const ROW_CHUNK: usize = 256;

/// `A y`, accumulated column by column over fixed row chunks.
fn row_sums(a: &DenseMatrix, y: &[f64], out: &mut [f64]) {
    let m = a.nrows();
    let data = a.as_slice();
    out.par_chunks_mut(ROW_CHUNK)
        .enumerate()
        .for_each(|(chunk, o)| {
            let r0 = chunk * ROW_CHUNK;
            o.iter_mut().for_each(|v| *v = 0.0);
            for (j, &yj) in y.iter().enumerate() {
                let col = &data[j * m + r0..j * m + r0 + o.len()];
                for (v, &aij) in o.iter_mut().zip(col) {
                    *v += aij * yj;
                }
            }
        });
}

fn check_entries(a: &DenseMatrix) -> Result<(), ScalingError> {
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            let v = a[(i, j)];
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ScalingError::InvalidEntry {
                    row: i,
                    col: j,
                    value: v,
                });
            }
        }
    }
    Ok(())
}

fn check_targets(name: &str, t: &[f64], len: usize) -> Result<f64, ScalingError> {
    if t.len() != len {
        return Err(ScalingError::InvalidTargets(format!(
            "{name} targets have length {}, expected {len}",
            t.len()
        )));
    }
    if let Some(v) = t.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(ScalingError::InvalidTargets(format!(
            "{name} target {v} is not positive"
        )));
    }
    Ok(t.iter().sum())
}

/// Sinkhorn-Knopp iteration from `x = 1`, `y = 1`.
pub fn sinkhorn_scale(
    a: &DenseMatrix,
    row_targets: &[f64],
    col_targets: &[f64],
    opts: &SinkhornOptions,
) -> Result<ScalingFactors, ScalingError> {
    let x0 = vec![1.0; a.nrows()];
    sinkhorn_scale_from(a, row_targets, col_targets, &x0, opts)
}

/// Sinkhorn-Knopp iteration from a given positive row iterate.
///
/// Each sweep updates the column factors from the current row factors and then
/// the row factors from the new column factors. The stopping test is the
/// largest absolute deviation of any row or column sum of `D(x) A D(y)` from
/// its target.
pub fn sinkhorn_scale_from(
    a: &DenseMatrix,
    row_targets: &[f64],
    col_targets: &[f64],
    x0: &[f64],
    opts: &SinkhornOptions,
) -> Result<ScalingFactors, ScalingError> {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return Err(ScalingError::Unscalable("empty matrix".into()));
    }
    let row_total = check_targets("row", row_targets, m)?;
    let col_total = check_targets("column", col_targets, n)?;
    if (row_total - col_total).abs() > 1e-9 * row_total.max(col_total) {
        return Err(ScalingError::TargetMismatch {
            row_total,
            col_total,
        });
    }
    if x0.len() != m || x0.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(ScalingError::InvalidTargets(
            "initial row iterate must be positive with one entry per row".into(),
        ));
    }
    check_entries(a)?;

    let mut x = x0.to_vec();
    let mut y = vec![1.0; n];
    let mut rs = vec![0.0; m];
    let mut cs = vec![0.0; n];
    row_sums(a, &y, &mut rs);
    col_sums(a, &x, &mut cs);
    if let Some(i) = rs.iter().position(|v| *v <= 0.0) {
        return Err(ScalingError::ZeroRow(i));
    }
    if let Some(j) = cs.iter().position(|v| *v <= 0.0) {
        return Err(ScalingError::ZeroColumn(j));
    }

    let residual = |x: &[f64], rs: &[f64], y: &[f64], cs: &[f64]| -> f64 {
        let r = x
            .iter()
            .zip(rs)
            .zip(row_targets)
            .map(|((xi, s), t)| (xi * s - t).abs())
            .fold(0.0f64, f64::max);
        let c = y
            .iter()
            .zip(cs)
            .zip(col_targets)
            .map(|((yj, s), t)| (yj * s - t).abs())
            .fold(0.0f64, f64::max);
        // NaN poisons the max so that it is never mistaken for convergence.
        if r.is_nan() || c.is_nan() {
            f64::NAN
        } else {
            r.max(c)
        }
    };

    let mut iterations = 0;
    let mut best = f64::INFINITY;
    loop {
        let res = residual(&x, &rs, &y, &cs);
        if res <= opts.tol {
            let mut factors = ScalingFactors {
                x,
                y,
                iterations,
                residual: res,
            };
            factors.gauge_normalize();
            return Ok(factors);
        }
        if res.is_finite() {
            best = best.min(res);
        }
        if iterations >= opts.max_iter || !res.is_finite() {
            return Err(ScalingError::NonConvergence {
                iterations,
                best_residual: best,
            });
        }
        for ((yj, t), s) in y.iter_mut().zip(col_targets).zip(&cs) {
            *yj = t / s;
        }
        row_sums(a, &y, &mut rs);
        for ((xi, t), s) in x.iter_mut().zip(row_targets).zip(&rs) {
            *xi = t / s;
        }
        col_sums(a, &x, &mut cs);
        iterations += 1;
    }
}

/// Scale a variance matrix to row sums `n` and column sums `m`.
pub fn scaling_factors_from_variances(
    v: &DenseMatrix,
    opts: &SinkhornOptions,
) -> Result<ScalingFactors, ScalingError> {
    let (m, n) = v.shape();
    sinkhorn_scale(v, &vec![n as f64; m], &vec![m as f64; n], opts)
}

/// Row and column index sets of one connected component.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockIndices {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
}

/// Structural report on a nonnegative matrix.
///
/// A violation `(k, count)` records that `count` rows have at least `n − k`
/// zeros while fewer than `⌈mk/n⌉` are allowed (columns symmetrically, with
/// `m − ℓ` zeros and `⌈nℓ/m⌉`). When neither list has entries and there are no
/// zero rows or columns, positive scaling factors exist, are unique up to the
/// gauge, and the matrix is a single block.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ScalingDiagnosis {
    pub zero_rows: Vec<usize>,
    pub zero_cols: Vec<usize>,
    pub blocks: Vec<BlockIndices>,
    pub row_violations: Vec<(usize, usize)>,
    pub col_violations: Vec<(usize, usize)>,
}

impl ScalingDiagnosis {
    pub fn is_clean(&self) -> bool {
        self.zero_rows.is_empty()
            && self.zero_cols.is_empty()
            && self.row_violations.is_empty()
            && self.col_violations.is_empty()
    }
}

struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    fn find(&mut self, mut v: usize) -> usize {
        while self.parent[v] != v {
            self.parent[v] = self.parent[self.parent[v]];
            v = self.parent[v];
        }
        v
    }

    fn union(&mut self, a: usize, b: usize) {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return;
        }
        if self.size[a] < self.size[b] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a;
        self.size[a] += self.size[b];
    }
}

/// Connected components of the bipartite graph with an edge per positive
/// entry, restricted to rows and columns that have a positive entry. Ordered
/// by smallest row index; indices inside a block are ascending.
fn components(a: &DenseMatrix) -> Vec<BlockIndices> {
    let (m, n) = a.shape();
    let mut uf = UnionFind::new(m + n);
    let mut row_live = vec![false; m];
    let mut col_live = vec![false; n];
    for j in 0..n {
        for i in 0..m {
            if a[(i, j)] > 0.0 {
                uf.union(i, m + j);
                row_live[i] = true;
                col_live[j] = true;
            }
        }
    }
    let mut slot = vec![usize::MAX; m + n];
    let mut blocks: Vec<BlockIndices> = Vec::new();
    for i in (0..m).filter(|&i| row_live[i]) {
        let root = uf.find(i);
        if slot[root] == usize::MAX {
            slot[root] = blocks.len();
            blocks.push(BlockIndices {
                rows: Vec::new(),
                cols: Vec::new(),
            });
        }
        blocks[slot[root]].rows.push(i);
    }
    for j in (0..n).filter(|&j| col_live[j]) {
        let root = uf.find(m + j);
        blocks[slot[root]].cols.push(j);
    }
    blocks
}

fn zero_counts(a: &DenseMatrix) -> (Vec<usize>, Vec<usize>) {
    let (m, n) = a.shape();
    let mut rows = vec![0; m];
    let mut cols = vec![0; n];
    for j in 0..n {
        for i in 0..m {
            if a[(i, j)] <= 0.0 {
                rows[i] += 1;
                cols[j] += 1;
            }
        }
    }
    (rows, cols)
}

/// Violations of "fewer than `⌈len·k/width⌉` lines have at least `width − k`
/// zeros" for `k = 1..=⌊width/2⌋`, given the zero count of every line.
fn violations(zeros: &[usize], width: usize) -> Vec<(usize, usize)> {
    let len = zeros.len();
    if len == 0 || width == 0 {
        return Vec::new();
    }
    let mut hist = vec![0usize; width + 1];
    for &z in zeros {
        hist[z.min(width)] += 1;
    }
    // at_least[z] = number of lines with at least z zeros
    let mut at_least = vec![0usize; width + 2];
    for z in (0..=width).rev() {
        at_least[z] = at_least[z + 1] + hist[z];
    }
    (1..=width / 2)
        .filter_map(|k| {
            let count = at_least[width - k];
            let allowed = (len * k).div_ceil(width);
            (count >= allowed).then_some((k, count))
        })
        .collect()
}

pub fn diagnose(a: &DenseMatrix) -> ScalingDiagnosis {
    let (m, n) = a.shape();
    let (row_zeros, col_zeros) = zero_counts(a);
    ScalingDiagnosis {
        zero_rows: (0..m).filter(|&i| row_zeros[i] == n).collect(),
        zero_cols: (0..n).filter(|&j| col_zeros[j] == m).collect(),
        blocks: components(a),
        row_violations: violations(&row_zeros, n),
        col_violations: violations(&col_zeros, m),
    }
}

/// A submatrix together with the original indices of its rows and columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub matrix: DenseMatrix,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
}

impl Block {
    pub fn extract(a: &DenseMatrix, rows: Vec<usize>, cols: Vec<usize>) -> Self {
        let matrix = a.select_rows(&rows).select_columns(&cols);
        Self { matrix, rows, cols }
    }
}

/// Split a matrix without zero rows or columns into blocks that are not
/// completely decomposable.
pub fn decompose_blocks(a: &DenseMatrix) -> Result<Vec<Block>, ScalingError> {
    let diag = diagnose(a);
    if let Some(&i) = diag.zero_rows.first() {
        return Err(ScalingError::ZeroRow(i));
    }
    if let Some(&j) = diag.zero_cols.first() {
        return Err(ScalingError::ZeroColumn(j));
    }
    Ok(diag
        .blocks
        .into_iter()
        .map(|b| Block::extract(a, b.rows, b.cols))
        .collect())
}

/// Outcome of [`prune_to_scalable`].
#[derive(Debug, Clone, PartialEq)]
pub struct Pruned {
    pub block: Block,
    pub removed_rows: Vec<usize>,
    pub removed_cols: Vec<usize>,
}

/// Smallest block the pruning loop will return.
pub const MIN_BLOCK_DIM: usize = 2;

/// Remove zero rows and columns, then repeatedly remove the sparsest row
/// (or column) while the row (column) zero-count requirement is violated.
/// Ties go to the lowest index. Fails once fewer than 2 rows or columns remain.
pub fn prune_to_scalable(a: &DenseMatrix) -> Result<Pruned, ScalingError> {
    let (m, n) = a.shape();
    let (mut row_zeros, mut col_zeros) = zero_counts(a);
    let mut row_live = vec![true; m];
    let mut col_live = vec![true; n];
    let (mut m_live, mut n_live) = (m, n);
    let mut removed_rows = Vec::new();
    let mut removed_cols = Vec::new();

    let remove_row = |i: usize,
                      row_live: &mut [bool],
                      col_live: &[bool],
                      col_zeros: &mut [usize],
                      m_live: &mut usize| {
        row_live[i] = false;
        *m_live -= 1;
        for j in (0..n).filter(|&j| col_live[j]) {
            if a[(i, j)] <= 0.0 {
                col_zeros[j] -= 1;
            }
        }
    };
    let remove_col = |j: usize,
                      col_live: &mut [bool],
                      row_live: &[bool],
                      row_zeros: &mut [usize],
                      n_live: &mut usize| {
        col_live[j] = false;
        *n_live -= 1;
        for i in (0..m).filter(|&i| row_live[i]) {
            if a[(i, j)] <= 0.0 {
                row_zeros[i] -= 1;
            }
        }
    };

    loop {
        // zero rows and columns first
        let mut changed = true;
        while changed {
            changed = false;
            for i in 0..m {
                if row_live[i] && row_zeros[i] == n_live {
                    remove_row(i, &mut row_live, &col_live, &mut col_zeros, &mut m_live);
                    removed_rows.push(i);
                    changed = true;
                }
            }
            for j in 0..n {
                if col_live[j] && col_zeros[j] == m_live {
                    remove_col(j, &mut col_live, &row_live, &mut row_zeros, &mut n_live);
                    removed_cols.push(j);
                    changed = true;
                }
            }
        }
        if m_live < MIN_BLOCK_DIM || n_live < MIN_BLOCK_DIM {
            return Err(ScalingError::Unscalable(format!(
                "pruning left a {m_live} x {n_live} matrix"
            )));
        }
        let live_row_zeros: Vec<usize> = (0..m).filter(|&i| row_live[i]).map(|i| row_zeros[i]).collect();
        if !violations(&live_row_zeros, n_live).is_empty() {
            let i = sparsest(&row_zeros, &row_live);
            remove_row(i, &mut row_live, &col_live, &mut col_zeros, &mut m_live);
            removed_rows.push(i);
            continue;
        }
        let live_col_zeros: Vec<usize> = (0..n).filter(|&j| col_live[j]).map(|j| col_zeros[j]).collect();
        if !violations(&live_col_zeros, m_live).is_empty() {
            let j = sparsest(&col_zeros, &col_live);
            remove_col(j, &mut col_live, &row_live, &mut row_zeros, &mut n_live);
            removed_cols.push(j);
            continue;
        }
        break;
    }

    removed_rows.sort_unstable();
    removed_cols.sort_unstable();
    let rows: Vec<usize> = (0..m).filter(|&i| row_live[i]).collect();
    let cols: Vec<usize> = (0..n).filter(|&j| col_live[j]).collect();
    Ok(Pruned {
        block: Block::extract(a, rows, cols),
        removed_rows,
        removed_cols,
    })
}

fn sparsest(zeros: &[usize], live: &[bool]) -> usize {
    let mut best = usize::MAX;
    for (i, (&z, &l)) in zeros.iter().zip(live).enumerate() {
        if l && (best == usize::MAX || z > zeros[best]) {
            best = i;
        }
    }
    best
}
