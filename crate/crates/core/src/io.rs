//! MatrixMarket and CSV ingestion, matrix output, and versioned JSON reports.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::biwhiten::{BiwhitenReport, BlockReport};
use crate::mp_law::{Esd, MpLaw};
use crate::scaling::ScalingDiagnosis;
use crate::variance::{AlphaBeta, NoiseModel, QvfParams, VarianceModel};
use crate::DenseMatrix;

pub const SCHEMA_VERSION: &str = "1";

/// Dense inputs larger than this many entries are refused unless the limit
/// is raised.
pub const DEFAULT_MAX_ENTRIES: usize = 100_000_000;

pub const DEFAULT_TOP_K: usize = 50;
pub const HISTOGRAM_BINS: usize = 50;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Stream(#[from] std::io::Error),
    #[error("line {line}{}: {message}", column.map(|c| format!(", column {c}")).unwrap_or_default())]
    Parse {
        line: usize,
        column: Option<usize>,
        message: String,
    },
    #[error("negative entry {value} at row {row}, column {col} in a count matrix")]
    NegativeCount { row: usize, col: usize, value: f64 },
    #[error("matrix of {rows} x {cols} exceeds the limit of {limit} dense entries")]
    TooLarge { rows: usize, cols: usize, limit: usize },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported schema version {0:?}")]
    Schema(String),
}

type IoResult<T> = std::result::Result<T, IoError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatrixFormat {
    MatrixMarket,
    DenseCsv,
}

impl MatrixFormat {
    /// `.mtx` is MatrixMarket; everything else is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("mtx") => MatrixFormat::MatrixMarket,
            _ => MatrixFormat::DenseCsv,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixSource {
    pub format: MatrixFormat,
    pub path: PathBuf,
    /// Transpose after reading, for files whose rows are observations.
    pub transpose: bool,
}

impl MatrixSource {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        let path = path.into();
        Self {
            format: MatrixFormat::from_path(&path),
            path,
            transpose: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReadOptions {
    /// Reject negative entries.
    pub counts: bool,
    pub max_entries: usize,
}

impl Default for ReadOptions {
    fn default() -> Self {
        Self {
            counts: true,
            max_entries: DEFAULT_MAX_ENTRIES,
        }
    }
}

fn open(path: &Path) -> IoResult<File> {
    File::open(path).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })
}

fn create(path: &Path) -> IoResult<File> {
    File::create(path).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_matrix(src: &MatrixSource, opts: &ReadOptions) -> IoResult<DenseMatrix> {
    let reader = BufReader::new(open(&src.path)?);
    let a = match src.format {
        MatrixFormat::MatrixMarket => parse_matrix_market(reader, opts)?,
        MatrixFormat::DenseCsv => parse_csv(reader, opts)?,
    };
    Ok(if src.transpose { a.transpose() } else { a })
}

fn check_size(rows: usize, cols: usize, limit: usize, line: usize) -> IoResult<()> {
    if rows == 0 || cols == 0 {
        return Err(IoError::Parse {
            line,
            column: None,
            message: format!("dimensions must be positive, got {rows} x {cols}"),
        });
    }
    match rows.checked_mul(cols) {
        Some(total) if total <= limit => Ok(()),
        _ => Err(IoError::TooLarge { rows, cols, limit }),
    }
}

fn check_value(v: f64, row: usize, col: usize, counts: bool) -> IoResult<()> {
    if counts && v < 0.0 {
        return Err(IoError::NegativeCount { row, col, value: v });
    }
    Ok(())
}

/// Whitespace-separated tokens with their 1-based column.
fn tokens(line: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in line.char_indices() {
        match (ch.is_whitespace(), start) {
            (true, Some(s)) => {
                out.push((s + 1, &line[s..i]));
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s + 1, &line[s..]));
    }
    out
}

fn parse_tok<T: std::str::FromStr>(tok: (usize, &str), line: usize, what: &str) -> IoResult<T> {
    tok.1.parse().map_err(|_| IoError::Parse {
        line,
        column: Some(tok.0),
        message: format!("invalid {what} {:?}", tok.1),
    })
}

#[derive(Clone, Copy, PartialEq)]
enum MmField {
    Real,
    Pattern,
}

/// MatrixMarket `coordinate` or `array` with `real`, `integer` or `pattern`
/// values and `general` or `symmetric` structure. Duplicate coordinates add.
pub fn parse_matrix_market<R: BufRead>(reader: R, opts: &ReadOptions) -> IoResult<DenseMatrix> {
    let mut lines = reader.lines().enumerate().map(|(i, l)| (i + 1, l));
    let header_err = |line, message: &str| IoError::Parse {
        line,
        column: None,
        message: message.into(),
    };
    let (_, header) = lines.next().ok_or_else(|| header_err(1, "empty file"))?;
    let header = header?;
    let words: Vec<String> = header.split_whitespace().map(|w| w.to_ascii_lowercase()).collect();
    if words.len() != 5 || words[0] != "%%matrixmarket" || words[1] != "matrix" {
        return Err(header_err(1, "expected header `%%MatrixMarket matrix <format> <field> <symmetry>`"));
    }
    let coordinate = match words[2].as_str() {
        "coordinate" => true,
        "array" => false,
        other => return Err(header_err(1, &format!("unsupported format {other:?}"))),
    };
    let field = match words[3].as_str() {
        "real" | "integer" | "double" => MmField::Real,
        "pattern" if coordinate => MmField::Pattern,
        other => return Err(header_err(1, &format!("unsupported field {other:?}"))),
    };
    let symmetric = match words[4].as_str() {
        "general" => false,
        "symmetric" => true,
        other => return Err(header_err(1, &format!("unsupported symmetry {other:?}"))),
    };

    let mut body = lines.filter(|(_, l)| match l {
        Ok(s) => {
            let t = s.trim();
            !t.is_empty() && !t.starts_with('%')
        }
        Err(_) => true,
    });
    let (size_line, size) = body.next().ok_or_else(|| header_err(2, "missing size line"))?;
    let size = size?;
    let toks = tokens(&size);
    let want = if coordinate { 3 } else { 2 };
    if toks.len() != want {
        return Err(header_err(size_line, &format!("size line needs {want} integers")));
    }
    let rows: usize = parse_tok(toks[0], size_line, "row count")?;
    let cols: usize = parse_tok(toks[1], size_line, "column count")?;
    check_size(rows, cols, opts.max_entries, size_line)?;
    if symmetric && rows != cols {
        return Err(header_err(size_line, "symmetric matrix must be square"));
    }
    let mut a = DenseMatrix::zeros(rows, cols);

    if coordinate {
        let nnz: usize = parse_tok(toks[2], size_line, "entry count")?;
        let mut seen = 0;
        for (ln, l) in body {
            let l = l?;
            let t = tokens(&l);
            let need = if field == MmField::Pattern { 2 } else { 3 };
            if t.len() != need {
                return Err(header_err(ln, &format!("expected {need} fields, found {}", t.len())));
            }
            let i: usize = parse_tok(t[0], ln, "row index")?;
            let j: usize = parse_tok(t[1], ln, "column index")?;
            if i == 0 || i > rows {
                return Err(IoError::Parse {
                    line: ln,
                    column: Some(t[0].0),
                    message: format!("row index {i} outside 1..={rows}"),
                });
            }
            if j == 0 || j > cols {
                return Err(IoError::Parse {
                    line: ln,
                    column: Some(t[1].0),
                    message: format!("column index {j} outside 1..={cols}"),
                });
            }
            let v: f64 = if field == MmField::Pattern {
                1.0
            } else {
                parse_tok(t[2], ln, "value")?
            };
            if !v.is_finite() {
                return Err(IoError::Parse {
                    line: ln,
                    column: Some(t[2].0),
                    message: format!("non-finite value {v}"),
                });
            }
            check_value(v, i - 1, j - 1, opts.counts)?;
            a[(i - 1, j - 1)] += v;
            if symmetric && i != j {
                a[(j - 1, i - 1)] += v;
            }
            seen += 1;
        }
        if seen != nnz {
            return Err(header_err(size_line, &format!("declared {nnz} entries, found {seen}")));
        }
    } else {
        // column-major; symmetric arrays store the lower triangle only
        let slots: Vec<(usize, usize)> = (0..cols)
            .flat_map(|j| {
                let start = if symmetric { j } else { 0 };
                (start..rows).map(move |i| (i, j))
            })
            .collect();
        let mut k = 0;
        for (ln, l) in body {
            let l = l?;
            for tok in tokens(&l) {
                let Some(&(i, j)) = slots.get(k) else {
                    return Err(IoError::Parse {
                        line: ln,
                        column: Some(tok.0),
                        message: "more values than the declared size".into(),
                    });
                };
                let v: f64 = parse_tok(tok, ln, "value")?;
                if !v.is_finite() {
                    return Err(IoError::Parse {
                        line: ln,
                        column: Some(tok.0),
                        message: format!("non-finite value {v}"),
                    });
                }
                check_value(v, i, j, opts.counts)?;
                a[(i, j)] = v;
                if symmetric {
                    a[(j, i)] = v;
                }
                k += 1;
            }
        }
        if k != slots.len() {
            return Err(header_err(size_line, &format!("expected {} values, found {k}", slots.len())));
        }
    }
    Ok(a)
}

/// Headerless numeric CSV, one matrix row per record.
pub fn parse_csv<R: Read>(reader: R, opts: &ReadOptions) -> IoResult<DenseMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut data: Vec<f64> = Vec::new();
    let mut cols = 0;
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| IoError::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            column: None,
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(rows + 1, |p| p.line() as usize);
        if rows == 0 {
            cols = rec.len();
        } else if rec.len() != cols {
            return Err(IoError::Parse {
                line,
                column: None,
                message: format!("expected {cols} fields, found {}", rec.len()),
            });
        }
        if (rows + 1).saturating_mul(cols) > opts.max_entries {
            return Err(IoError::TooLarge {
                rows: rows + 1,
                cols,
                limit: opts.max_entries,
            });
        }
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| IoError::Parse {
                line,
                column: Some(j + 1),
                message: format!("invalid number {field:?}"),
            })?;
            if !v.is_finite() {
                return Err(IoError::Parse {
                    line,
                    column: Some(j + 1),
                    message: format!("non-finite value {v}"),
                });
            }
            check_value(v, rows, j, opts.counts)?;
            data.push(v);
        }
        rows += 1;
    }
    check_size(rows, cols, opts.max_entries, 1)?;
    Ok(DenseMatrix::from_row_slice(rows, cols, &data))
}

/// Write `a` as MatrixMarket coordinate (nonzeros only) or dense CSV, at full
/// precision.
pub fn write_matrix(path: &Path, a: &DenseMatrix, format: MatrixFormat) -> IoResult<()> {
    let mut w = BufWriter::new(create(path)?);
    write_matrix_to(&mut w, a, format)?;
    w.flush()?;
    Ok(())
}

pub fn write_matrix_to<W: Write>(w: &mut W, a: &DenseMatrix, format: MatrixFormat) -> IoResult<()> {
    match format {
        MatrixFormat::MatrixMarket => {
            let nnz = a.iter().filter(|v| **v != 0.0).count();
            writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
            writeln!(w, "{} {} {}", a.nrows(), a.ncols(), nnz)?;
            for j in 0..a.ncols() {
                for i in 0..a.nrows() {
                    let v = a[(i, j)];
                    if v != 0.0 {
                        writeln!(w, "{} {} {:?}", i + 1, j + 1, v)?;
                    }
                }
            }
        }
        MatrixFormat::DenseCsv => {
            for row in a.row_iter() {
                let fields: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
                writeln!(w, "{}", fields.join(","))?;
            }
        }
    }
    Ok(())
}

/// Write a numeric vector as a one-column CSV.
pub fn write_vector(path: &Path, v: &[f64]) -> IoResult<()> {
    let mut w = BufWriter::new(create(path)?);
    for x in v {
        writeln!(w, "{x:?}")?;
    }
    w.flush()?;
    Ok(())
}

/// Whitespace- or comma-separated integers, e.g. class labels.
pub fn read_labels(path: &Path) -> IoResult<Vec<usize>> {
    let reader = BufReader::new(open(path)?);
    let mut out = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        for tok in tokens(&line.replace(',', " ")) {
            out.push(parse_tok(tok, k + 1, "label")?);
        }
    }
    Ok(out)
}

/// Counts over `[β₋, β₊]` in equal bins, plus values below and above.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lower: f64,
    pub upper: f64,
    pub counts: Vec<usize>,
    pub underflow: usize,
    pub overflow: usize,
}

impl Histogram {
    pub fn new(values: &[f64], lower: f64, upper: f64, bins: usize) -> Self {
        let mut counts = vec![0; bins];
        let (mut underflow, mut overflow) = (0, 0);
        let width = (upper - lower) / bins as f64;
        for &v in values {
            if v < lower {
                underflow += 1;
            } else if v > upper {
                overflow += 1;
            } else {
                let k = if width > 0.0 {
                    (((v - lower) / width) as usize).min(bins - 1)
                } else {
                    0
                };
                counts[k] += 1;
            }
        }
        Self {
            lower,
            upper,
            counts,
            underflow,
            overflow,
        }
    }

    pub fn total(&self) -> usize {
        self.underflow + self.overflow + self.counts.iter().sum::<usize>()
    }

    /// `bin,lower,upper,count` rows, with the underflow and overflow bins first
    /// and last.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin,lower,upper,count\n");
        s += &format!("underflow,-inf,{:?},{}\n", self.lower, self.underflow);
        let bins = self.counts.len();
        let width = (self.upper - self.lower) / bins as f64;
        for (k, c) in self.counts.iter().enumerate() {
            let lo = self.lower + width * k as f64;
            let hi = if k + 1 == bins { self.upper } else { self.lower + width * (k + 1) as f64 };
            s += &format!("{k},{lo:?},{hi:?},{c}\n");
        }
        s += &format!("overflow,{:?},inf,{}\n", self.upper, self.overflow);
        s
    }
}

/// Eigenvalue spectrum truncated to the top `K` plus a histogram of the rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSummary {
    pub m: usize,
    pub n: usize,
    pub gamma: f64,
    pub count: usize,
    pub top_eigenvalues: Vec<f64>,
    pub histogram: Histogram,
}

impl SpectrumSummary {
    pub fn new(esd: &Esd, top_k: usize) -> Self {
        let (lo, hi) = MpLaw::standard(esd.m(), esd.n())
            .map(|l| l.edges())
            .unwrap_or((0.0, 0.0));
        Self {
            m: esd.m(),
            n: esd.n(),
            gamma: esd.gamma(),
            count: esd.len(),
            top_eigenvalues: esd.eigenvalues().iter().take(top_k).copied().collect(),
            histogram: Histogram::new(esd.eigenvalues(), lo, hi, HISTOGRAM_BINS),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub input: Option<String>,
    pub transposed: bool,
    pub seed: Option<u64>,
}

impl Provenance {
    pub fn new(command: &str) -> Self {
        Self {
            tool: "biwhiten".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            input: None,
            transposed: false,
            seed: None,
        }
    }
}

/// A noise model with its equivalent parameterizations, where they exist.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model: NoiseModel,
    pub qvf: Option<QvfParams>,
    pub alphabeta: Option<AlphaBeta>,
}

impl ModelSummary {
    pub fn new(model: &NoiseModel) -> Self {
        let (qvf, alphabeta) = match model.variance {
            VarianceModel::Qvf(q) => (Some(q), q.to_alphabeta().ok()),
            VarianceModel::AlphaBeta(ab) => (ab.to_qvf().ok(), Some(ab)),
        };
        Self {
            model: *model,
            qvf,
            alphabeta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruningSummary {
    pub zero_rows: usize,
    pub zero_cols: usize,
    pub components: usize,
    pub removed_rows: Vec<usize>,
    pub removed_cols: Vec<usize>,
    pub unscalable_blocks: usize,
    pub clamped_variances: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSummary {
    pub rows: usize,
    pub cols: usize,
    pub rank: usize,
    pub eigenvalue_threshold: f64,
    pub singular_value_threshold: f64,
    pub top_singular_values: Vec<f64>,
    pub ks_distance: f64,
    pub ks_pvalue: f64,
    pub sinkhorn_iterations: usize,
    pub sinkhorn_residual: f64,
    pub spectrum: SpectrumSummary,
}

impl BlockSummary {
    pub fn new(b: &BlockReport, top_k: usize) -> Self {
        Self {
            rows: b.rows.len(),
            cols: b.cols.len(),
            rank: b.rank,
            eigenvalue_threshold: b.eigenvalue_threshold,
            singular_value_threshold: b.singular_value_threshold,
            top_singular_values: b.singular_values.iter().take(top_k).copied().collect(),
            ks_distance: b.ks_distance,
            ks_pvalue: b.ks_pvalue,
            sinkhorn_iterations: b.factors.iterations,
            sinkhorn_residual: b.factors.residual,
            spectrum: SpectrumSummary::new(&b.esd, top_k),
        }
    }
}

/// JSON form of a rank estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReportJson {
    pub schema_version: String,
    pub provenance: Provenance,
    pub model: ModelSummary,
    pub nrows: usize,
    pub ncols: usize,
    pub epsilon: f64,
    pub rank: usize,
    pub blocks: Vec<BlockSummary>,
    pub pruning: PruningSummary,
    pub warnings: Vec<String>,
}

impl RankReportJson {
    pub fn new(report: &BiwhitenReport, model: &NoiseModel, provenance: Provenance, top_k: usize) -> Self {
        Self {
            schema_version: SCHEMA_VERSION.into(),
            provenance,
            model: ModelSummary::new(model),
            nrows: report.nrows,
            ncols: report.ncols,
            epsilon: report.epsilon,
            rank: report.rank,
            blocks: report.blocks.iter().map(|b| BlockSummary::new(b, top_k)).collect(),
            pruning: PruningSummary {
                zero_rows: report.diagnosis.zero_rows.len(),
                zero_cols: report.diagnosis.zero_cols.len(),
                components: report.diagnosis.blocks.len(),
                removed_rows: report.removed_rows.clone(),
                removed_cols: report.removed_cols.clone(),
                unscalable_blocks: report.unscalable.len(),
                clamped_variances: report.clamped_variances,
            },
            warnings: report.warnings.clone(),
        }
    }

    /// Histogram CSV of the largest block.
    pub fn histogram_csv(&self) -> Option<String> {
        self.blocks
            .iter()
            .max_by_key(|b| b.rows * b.cols)
            .map(|b| b.spectrum.histogram.to_csv())
    }
}

/// Generic versioned envelope for the other report kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub schema_version: String,
    pub provenance: Provenance,
    pub result: T,
}

impl<T> Envelope<T> {
    pub fn new(provenance: Provenance, result: T) -> Self {
        Self {
            schema_version: SCHEMA_VERSION.into(),
            provenance,
            result,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseReport {
    pub nrows: usize,
    pub ncols: usize,
    pub clean: bool,
    pub diagnosis: ScalingDiagnosis,
}

pub fn to_json<T: Serialize>(value: &T) -> IoResult<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_report<T: Serialize>(path: &Path, value: &T) -> IoResult<()> {
    let mut f = create(path)?;
    f.write_all(to_json(value)?.as_bytes())?;
    Ok(())
}

#[derive(Deserialize)]
struct VersionProbe {
    schema_version: String,
}

/// Read a report, refusing other schema versions.
pub fn read_report<T: DeserializeOwned>(path: &Path) -> IoResult<T> {
    let mut s = String::new();
    open(path)?.read_to_string(&mut s)?;
    let probe: VersionProbe = serde_json::from_str(&s)?;
    if probe.schema_version != SCHEMA_VERSION {
        return Err(IoError::Schema(probe.schema_version));
    }
    Ok(serde_json::from_str(&s)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mm(s: &str) -> IoResult<DenseMatrix> {
        parse_matrix_market(s.as_bytes(), &ReadOptions::default())
    }

    #[test]
    fn coordinate_with_implicit_zero() {
        let a = mm("%%MatrixMarket matrix coordinate integer general\n% comment\n2 2 3\n1 1 4\n2 1 1\n2 2 7\n").unwrap();
        assert_eq!(a, DenseMatrix::from_row_slice(2, 2, &[4.0, 0.0, 1.0, 7.0]));
    }

    #[test]
    fn symmetric_and_pattern_and_array() {
        let a = mm("%%MatrixMarket matrix coordinate real symmetric\n3 3 2\n2 1 1.5\n3 3 2\n").unwrap();
        assert_eq!(a[(0, 1)], 1.5);
        assert_eq!(a[(1, 0)], 1.5);
        let p = mm("%%MatrixMarket matrix coordinate pattern general\n2 3 2\n1 3\n2 1\n").unwrap();
        assert_eq!(p, DenseMatrix::from_row_slice(2, 3, &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0]));
        let arr = mm("%%MatrixMarket matrix array real general\n2 2\n1\n2\n3\n4\n").unwrap();
        assert_eq!(arr, DenseMatrix::from_row_slice(2, 2, &[1.0, 3.0, 2.0, 4.0]));
        let sym = mm("%%MatrixMarket matrix array real symmetric\n2 2\n1\n2\n3\n").unwrap();
        assert_eq!(sym, DenseMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 3.0]));
    }

    #[test]
    fn malformed_header_names_line_one() {
        let e = mm("%%MatrixMarket tensor coordinate real general\n1 1 0\n").unwrap_err();
        assert!(matches!(e, IoError::Parse { line: 1, .. }), "{e}");
        assert!(e.to_string().starts_with("line 1"));
    }

    #[test]
    fn bad_entries_report_position() {
        let e = mm("%%MatrixMarket matrix coordinate real general\n2 2 1\n1 x 3\n").unwrap_err();
        assert!(matches!(e, IoError::Parse { line: 3, column: Some(3), .. }), "{e}");
        let e = mm("%%MatrixMarket matrix coordinate real general\n2 2 1\n3 1 3\n").unwrap_err();
        assert!(matches!(e, IoError::Parse { line: 3, .. }));
        let e = mm("%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 3\n").unwrap_err();
        assert!(e.to_string().contains("declared 2"));
        let e = mm("%%MatrixMarket matrix coordinate real general\n2 2 1\n1 1 -3\n").unwrap_err();
        assert!(matches!(e, IoError::NegativeCount { row: 0, col: 0, .. }));
    }

    #[test]
    fn size_guard() {
        let opts = ReadOptions {
            counts: true,
            max_entries: 10,
        };
        let e = parse_matrix_market("%%MatrixMarket matrix coordinate real general\n4 4 0\n".as_bytes(), &opts).unwrap_err();
        assert!(matches!(e, IoError::TooLarge { rows: 4, cols: 4, .. }));
    }

    #[test]
    fn dense_csv() {
        let a = parse_csv("1,2,3,4\n5,6,7,8\n9,10,11,12\n".as_bytes(), &ReadOptions::default()).unwrap();
        assert_eq!(a.shape(), (3, 4));
        assert_eq!(a[(2, 1)], 10.0);
        let e = parse_csv("1,2\n3,q\n".as_bytes(), &ReadOptions::default()).unwrap_err();
        assert!(matches!(e, IoError::Parse { line: 2, column: Some(2), .. }), "{e}");
        let e = parse_csv("1,2\n3\n".as_bytes(), &ReadOptions::default()).unwrap_err();
        assert!(matches!(e, IoError::Parse { line: 2, .. }), "{e}");
        let signed = ReadOptions {
            counts: false,
            ..ReadOptions::default()
        };
        assert_eq!(parse_csv("-1.5,2\n".as_bytes(), &signed).unwrap()[(0, 0)], -1.5);
    }

    #[test]
    fn matrix_round_trip() {
        let a = DenseMatrix::from_row_slice(2, 3, &[0.1, 0.0, 1.0 / 3.0, 7.0, 1e-300, 0.0]);
        for fmt in [MatrixFormat::MatrixMarket, MatrixFormat::DenseCsv] {
            let mut buf = Vec::new();
            write_matrix_to(&mut buf, &a, fmt).unwrap();
            let opts = ReadOptions::default();
            let b = match fmt {
                MatrixFormat::MatrixMarket => parse_matrix_market(buf.as_slice(), &opts).unwrap(),
                MatrixFormat::DenseCsv => parse_csv(buf.as_slice(), &opts).unwrap(),
            };
            assert_eq!(a, b);
        }
    }

    #[test]
    fn histogram_counts_everything() {
        let v = [-1.0, 0.0, 0.5, 1.0, 1.0, 2.0];
        let h = Histogram::new(&v, 0.0, 1.0, 4);
        assert_eq!(h.underflow, 1);
        assert_eq!(h.overflow, 1);
        assert_eq!(h.counts, vec![1, 0, 1, 2]);
        assert_eq!(h.total(), v.len());
        let csv = h.to_csv();
        let sum: usize = csv.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap()).sum();
        assert_eq!(sum, v.len());
    }

    #[test]
    fn format_from_extension() {
        assert_eq!(MatrixFormat::from_path(Path::new("a.MTX")), MatrixFormat::MatrixMarket);
        assert_eq!(MatrixFormat::from_path(Path::new("a.csv")), MatrixFormat::DenseCsv);
    }
}
