//! Command-line front end: scaling, rank estimation, model fitting and
//! selection, simulation, and scalability diagnosis.
//!
//! Exit codes: 0 on success, 1 on domain errors (and on `diagnose` finding
//! violations), 2 on usage errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use biwhiten::adapt::{default_beta_grid, select_beta, split_validate, AdaptOptions, AdaptReport};
use biwhiten::biwhiten::{biwhiten, rank, BiwhitenOptions, PrunePolicy};
use biwhiten::io::{
    read_labels, read_matrix, to_json, write_matrix, write_report, DiagnoseReport, Envelope, MatrixFormat,
    MatrixSource, ModelSummary, Provenance, RankReportJson, ReadOptions, DEFAULT_MAX_ENTRIES, DEFAULT_TOP_K,
};
use biwhiten::mp_law::KsRange;
use biwhiten::scaling::{diagnose, SinkhornOptions};
use biwhiten::simulate::{gen_signal, homogenize, normalize_columns, sample_counts, NoiseFamily, SignalSpec};
use biwhiten::{
    variance_matrix, AlphaBeta, NoiseModel, QvfParams, SplitAxis, SplitModel, SplitValidation, ZeroInflation,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

type CliResult<T> = Result<T, Box<dyn std::error::Error>>;

#[derive(Parser)]
#[command(name = "biwhiten", version, about = "Rank estimation for count matrices by biwhitening")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute scaling factors and write the biwhitened matrix.
    Scale(ScaleArgs),
    /// Estimate the rank.
    Rank(RankArgs),
    /// KS fit of the biwhitened spectrum to the Marchenko-Pastur law for a given model.
    Fit(FitArgs),
    /// Select the variance estimator from the data and validate it on split halves.
    Adapt(AdaptArgs),
    /// Generate a seeded count matrix.
    Simulate(SimulateArgs),
    /// Report zero rows/columns, disconnected blocks, and zero-count violations.
    Diagnose(DiagnoseArgs),
}

#[derive(Args)]
struct InputArgs {
    /// MatrixMarket (.mtx) or dense CSV file.
    #[arg(long, short)]
    input: PathBuf,
    /// Override the format guessed from the extension.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Transpose after reading (for files whose rows are observations).
    #[arg(long)]
    transpose: bool,
    /// Accept negative entries.
    #[arg(long)]
    allow_negative: bool,
    /// Largest accepted number of dense entries.
    #[arg(long, default_value_t = DEFAULT_MAX_ENTRIES)]
    max_entries: usize,
}

impl InputArgs {
    fn load(&self) -> CliResult<biwhiten::DenseMatrix> {
        let mut src = MatrixSource::new(&self.input);
        if let Some(f) = self.format {
            src.format = f.into();
        }
        src.transpose = self.transpose;
        let opts = ReadOptions {
            counts: !self.allow_negative,
            max_entries: self.max_entries,
        };
        Ok(read_matrix(&src, &opts)?)
    }

    fn provenance(&self, command: &str) -> Provenance {
        Provenance {
            input: Some(self.input.display().to_string()),
            transposed: self.transpose,
            ..Provenance::new(command)
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Mtx,
    Csv,
}

impl From<FormatArg> for MatrixFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Mtx => MatrixFormat::MatrixMarket,
            FormatArg::Csv => MatrixFormat::DenseCsv,
        }
    }
}

#[derive(Args)]
struct ModelArgs {
    /// poisson | binomial:L | negbinomial:R | genpoisson:ETA | qvf:A,B,C | alphabeta:ALPHA,BETA | constant
    #[arg(long, default_value = "poisson", value_parser = parse_model)]
    model: NoiseModel,
    /// Probability P that an entry is observed rather than zeroed.
    #[arg(long, value_name = "P")]
    zero_inflation: Option<f64>,
    /// Sinkhorn convergence tolerance.
    #[arg(long, default_value_t = 1e-11)]
    tol: f64,
    /// Sinkhorn iteration cap.
    #[arg(long, default_value_t = 1_000_000)]
    max_iter: usize,
    /// When to prune sparse rows/columns: always, only if scaling fails, or never.
    #[arg(long, value_enum, default_value = "fallback")]
    prune: PruneArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum PruneArg {
    Always,
    Fallback,
    Never,
}

impl From<PruneArg> for PrunePolicy {
    fn from(p: PruneArg) -> Self {
        match p {
            PruneArg::Always => PrunePolicy::Always,
            PruneArg::Fallback => PrunePolicy::Fallback,
            PruneArg::Never => PrunePolicy::Never,
        }
    }
}

impl ModelArgs {
    fn model(&self) -> CliResult<NoiseModel> {
        let mut m = self.model;
        if let Some(p) = self.zero_inflation {
            m = m.with_zero_inflation(ZeroInflation::new(p)?);
        }
        m.validate()?;
        Ok(m)
    }

    fn options(&self, epsilon: f64) -> BiwhitenOptions {
        BiwhitenOptions {
            sinkhorn: SinkhornOptions {
                tol: self.tol,
                max_iter: self.max_iter,
            },
            epsilon,
            prune: self.prune.into(),
            ..BiwhitenOptions::default()
        }
    }
}

fn parse_numbers(s: &str, count: usize) -> Result<Vec<f64>, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| format!("invalid number {t:?}")))
        .collect::<Result<_, _>>()?;
    if v.len() != count {
        return Err(format!("expected {count} comma-separated numbers, got {}", v.len()));
    }
    Ok(v)
}

fn parse_model(s: &str) -> Result<NoiseModel, String> {
    let (name, arg) = s.split_once(':').unwrap_or((s, ""));
    let need_arg = |what: &str| -> Result<f64, String> {
        arg.parse::<f64>().map_err(|_| format!("{name} needs a numeric {what}, e.g. {name}:3"))
    };
    let model = match name {
        "poisson" => NoiseModel::poisson(),
        "constant" => NoiseModel::qvf(QvfParams::constant()),
        "binomial" => {
            let l: u64 = arg.parse().map_err(|_| "binomial needs an integer trial count, e.g. binomial:5".to_string())?;
            if l == 0 {
                return Err("binomial trial count must be at least 1".into());
            }
            NoiseModel::qvf(QvfParams::binomial(l))
        }
        "negbinomial" => {
            let r = need_arg("failure count")?;
            if !(r > 0.0) {
                return Err("negbinomial failure count must be positive".into());
            }
            NoiseModel::qvf(QvfParams::negative_binomial(r))
        }
        "genpoisson" => {
            let eta = need_arg("dispersion")?;
            if !(0.0..1.0).contains(&eta) {
                return Err("genpoisson dispersion must lie in [0, 1)".into());
            }
            NoiseModel::qvf(QvfParams::generalized_poisson(eta))
        }
        "qvf" => {
            let v = parse_numbers(arg, 3)?;
            NoiseModel::qvf(QvfParams::new(v[0], v[1], v[2]))
        }
        "alphabeta" => {
            let v = parse_numbers(arg, 2)?;
            NoiseModel::alphabeta(AlphaBeta::new(v[0], v[1]).map_err(|e| e.to_string())?)
        }
        _ => return Err(format!("unknown model {name:?}")),
    };
    Ok(model)
}

fn parse_grid(s: &str) -> Result<Vec<f64>, String> {
    let parts: Vec<f64> = s
        .split(':')
        .map(|t| t.parse::<f64>().map_err(|_| format!("invalid number {t:?}")))
        .collect::<Result<_, _>>()?;
    let [start, step, end] = parts[..] else {
        return Err("grid must be start:step:end".into());
    };
    if !(step > 0.0) || end < start {
        return Err("grid needs step > 0 and end >= start".into());
    }
    let count = ((end - start) / step + 1e-9).floor() as usize;
    Ok((0..=count).map(|k| start + step * k as f64).collect())
}

#[derive(Args)]
struct ReportArgs {
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    report: Option<PathBuf>,
}

impl ReportArgs {
    fn emit<T: Serialize>(&self, value: &T) -> CliResult<()> {
        match &self.report {
            Some(p) => write_report(p, value)?,
            None => print!("{}", to_json(value)?),
        }
        Ok(())
    }
}

#[derive(Args)]
struct ScaleArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Destination of the scaled matrix; removed rows/columns are zero.
    #[arg(long, short)]
    output: PathBuf,
    #[command(flatten)]
    report: ReportArgs,
}

#[derive(Serialize)]
struct ScaleBlockJson {
    rows: Vec<usize>,
    cols: Vec<usize>,
    row_factors: Vec<f64>,
    col_factors: Vec<f64>,
    iterations: usize,
    residual: f64,
}

#[derive(Serialize)]
struct ScaleJson {
    model: ModelSummary,
    nrows: usize,
    ncols: usize,
    blocks: Vec<ScaleBlockJson>,
    removed_rows: Vec<usize>,
    removed_cols: Vec<usize>,
    clamped_variances: usize,
    warnings: Vec<String>,
}

fn run_scale(a: &ScaleArgs) -> CliResult<ExitCode> {
    let y = a.input.load()?;
    let model = a.model.model()?;
    let bw = biwhiten(&y, &model, &a.model.options(0.0))?;
    write_matrix(&a.output, &bw.assemble(), MatrixFormat::from_path(&a.output))?;
    let result = ScaleJson {
        model: ModelSummary::new(&model),
        nrows: bw.nrows,
        ncols: bw.ncols,
        blocks: bw
            .blocks
            .iter()
            .map(|b| ScaleBlockJson {
                rows: b.rows.clone(),
                cols: b.cols.clone(),
                row_factors: b.factors.row_factors(),
                col_factors: b.factors.col_factors(),
                iterations: b.factors.iterations,
                residual: b.factors.residual,
            })
            .collect(),
        removed_rows: bw.removed_rows.clone(),
        removed_cols: bw.removed_cols.clone(),
        clamped_variances: bw.clamped_variances,
        warnings: bw.warnings.clone(),
    };
    a.report.emit(&Envelope::new(a.input.provenance("scale"), result))?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Args)]
struct RankArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Margin added to the Marchenko-Pastur upper edge.
    #[arg(long, default_value_t = 0.0)]
    epsilon: f64,
    /// Number of leading eigenvalues kept in the report.
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    top_k: usize,
    /// Write the eigenvalue histogram of the largest block as CSV.
    #[arg(long)]
    histogram: Option<PathBuf>,
    #[command(flatten)]
    report: ReportArgs,
}

fn rank_json(
    input: &InputArgs,
    model_args: &ModelArgs,
    model: NoiseModel,
    epsilon: f64,
    top_k: usize,
    command: &str,
) -> CliResult<RankReportJson> {
    let y = input.load()?;
    let report = rank(&y, &model, &model_args.options(epsilon))?;
    Ok(RankReportJson::new(&report, &model, input.provenance(command), top_k))
}

fn write_histogram(path: &Option<PathBuf>, json: &RankReportJson) -> CliResult<()> {
    if let (Some(p), Some(csv)) = (path, json.histogram_csv()) {
        std::fs::write(p, csv)?;
    }
    Ok(())
}

fn run_rank(a: &RankArgs) -> CliResult<ExitCode> {
    let model = a.model.model()?;
    let json = rank_json(&a.input, &a.model, model, a.epsilon, a.top_k, "rank")?;
    write_histogram(&a.histogram, &json)?;
    a.report.emit(&json)?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Use the estimator alpha·[(1-beta)·y + beta·y²] instead of --model.
    #[arg(long, requires = "beta")]
    alpha: Option<f64>,
    #[arg(long, requires = "alpha")]
    beta: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    top_k: usize,
    #[arg(long)]
    histogram: Option<PathBuf>,
    #[command(flatten)]
    report: ReportArgs,
}

fn run_fit(a: &FitArgs) -> CliResult<ExitCode> {
    let mut model = a.model.model()?;
    if let (Some(alpha), Some(beta)) = (a.alpha, a.beta) {
        model.variance = biwhiten::VarianceModel::AlphaBeta(AlphaBeta::new(alpha, beta)?);
    }
    let json = rank_json(&a.input, &a.model, model, 0.0, a.top_k, "fit")?;
    write_histogram(&a.histogram, &json)?;
    a.report.emit(&json)?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    Rows,
    Columns,
}

#[derive(Clone, Copy, ValueEnum)]
enum KsRangeArg {
    FullLine,
    Bulk,
}

#[derive(Args)]
struct AdaptArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Grid of beta values as start:step:end.
    #[arg(long, value_parser = parse_grid)]
    beta_grid: Option<Vec<f64>>,
    /// Number of split-validation trials; 0 skips validation.
    #[arg(long, default_value_t = 1)]
    trials: usize,
    #[arg(long, value_enum, default_value = "columns")]
    split_axis: AxisArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "full-line")]
    ks_range: KsRangeArg,
    #[arg(long, default_value_t = 1e-11)]
    tol: f64,
    #[arg(long, default_value_t = 0.0)]
    epsilon: f64,
    #[arg(long, value_enum, default_value = "fallback")]
    prune: PruneArg,
    #[command(flatten)]
    report: ReportArgs,
}

#[derive(Serialize)]
struct AdaptJson {
    selection: AdaptReport,
    selected_model: ModelSummary,
    split_validation: Option<SplitValidation>,
}

fn run_adapt(a: &AdaptArgs) -> CliResult<ExitCode> {
    let y = a.input.load()?;
    let grid = a.beta_grid.clone().unwrap_or_else(default_beta_grid);
    let opts = AdaptOptions {
        sinkhorn: SinkhornOptions {
            tol: a.tol,
            ..SinkhornOptions::default()
        },
        ks_range: match a.ks_range {
            KsRangeArg::FullLine => KsRange::FullLine,
            KsRangeArg::Bulk => KsRange::Bulk,
        },
        epsilon: a.epsilon,
        prune: a.prune.into(),
        ..AdaptOptions::default()
    };
    let selection = select_beta(&y, &grid, &opts)?;
    let split_validation = if a.trials > 0 {
        let axis = match a.split_axis {
            AxisArg::Rows => SplitAxis::Rows,
            AxisArg::Columns => SplitAxis::Columns,
        };
        Some(split_validate(&y, &SplitModel::Adaptive { grid }, a.trials, axis, a.seed, &opts)?)
    } else {
        None
    };
    let result = AdaptJson {
        selected_model: ModelSummary::new(&NoiseModel::alphabeta(selection.selected)),
        selection,
        split_validation,
    };
    let mut prov = a.input.provenance("adapt");
    prov.seed = Some(a.seed);
    a.report.emit(&Envelope::new(prov, result))?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Clone, Copy, ValueEnum)]
enum RecipeArg {
    /// Log-normal(0, 4) left factors, Unif(0, 1) right factors.
    LognormalUniform,
    /// Unif(1, 2) entries scaled on both sides by exp(Unif(-2, 2)).
    FullRank,
    /// exp(Unif(-1, 1)) left factors, Unif(0, 1) right factors.
    Mild,
    /// exp(2Z) left factors, Unif(0, 1) right factors.
    Strong,
    /// Mild recipe plus a rank-one spike with exp(2Z) entries.
    StrongFactor,
    /// exp(2Z) left factors, exp(Z) right factors.
    LognormalBoth,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum, default_value = "lognormal-uniform")]
    recipe: RecipeArg,
    #[arg(long)]
    rows: usize,
    #[arg(long)]
    cols: usize,
    /// Signal rank (ignored by full-rank).
    #[arg(long, default_value_t = 10)]
    rank: usize,
    /// Average entry of the signal; omit to keep the recipe's default.
    #[arg(long)]
    mean: Option<f64>,
    /// poisson | binomial:L | negbinomial:R | genpoisson:ETA
    #[arg(long, default_value = "poisson", value_parser = parse_family)]
    family: NoiseFamily,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Class labels (one per column) for per-class homogenization.
    #[arg(long)]
    homogenize: Option<PathBuf>,
    /// Output matrix (.mtx or .csv). A JSON sidecar is written next to it.
    #[arg(long, short)]
    output: PathBuf,
    /// Also write the signal matrix.
    #[arg(long)]
    signal: Option<PathBuf>,
}

fn parse_family(s: &str) -> Result<NoiseFamily, String> {
    let (name, arg) = s.split_once(':').unwrap_or((s, ""));
    let fam = match name {
        "poisson" => NoiseFamily::Poisson,
        "binomial" => NoiseFamily::Binomial {
            trials: arg.parse().map_err(|_| "binomial:L needs an integer L".to_string())?,
        },
        "negbinomial" => NoiseFamily::NegBinomial {
            failures: arg.parse().map_err(|_| "negbinomial:R needs an integer R".to_string())?,
        },
        "genpoisson" => NoiseFamily::GenPoisson {
            eta: arg.parse().map_err(|_| "genpoisson:ETA needs a number".to_string())?,
        },
        _ => return Err(format!("unknown family {name:?}")),
    };
    fam.validate().map_err(|e| e.to_string())?;
    Ok(fam)
}

#[derive(Serialize)]
struct SimulateJson {
    spec: SignalSpec,
    family: NoiseFamily,
    output: String,
    homogenized: bool,
}

fn sidecar_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn run_simulate(a: &SimulateArgs) -> CliResult<ExitCode> {
    let (m, n, r) = (a.rows, a.cols, a.rank);
    let mut spec = match a.recipe {
        RecipeArg::LognormalUniform => SignalSpec::lognormal_uniform(m, n, r),
        RecipeArg::FullRank => SignalSpec::full_rank(m, n),
        RecipeArg::Mild => SignalSpec::mild_heteroskedastic(m, n, r, 1.0),
        RecipeArg::Strong => SignalSpec::strong_heteroskedastic(m, n, r, 1.0),
        RecipeArg::StrongFactor => SignalSpec::with_strong_factor(m, n, r, 1.0),
        RecipeArg::LognormalBoth => SignalSpec::lognormal_both(m, n, r),
    };
    if a.mean.is_some() {
        spec.mean_target = a.mean;
    }
    let mut x = gen_signal(&spec, a.seed)?;
    if matches!(a.family, NoiseFamily::Binomial { .. }) {
        x = normalize_columns(&x)?;
    }
    let mut y = sample_counts(&x, a.family, a.seed)?;
    if let Some(path) = &a.homogenize {
        y = homogenize(&y, &read_labels(path)?, a.seed)?;
    }
    write_matrix(&a.output, &y, MatrixFormat::from_path(&a.output))?;
    if let Some(p) = &a.signal {
        write_matrix(p, &x, MatrixFormat::from_path(p))?;
    }
    let mut prov = Provenance::new("simulate");
    prov.seed = Some(a.seed);
    let result = SimulateJson {
        spec,
        family: a.family,
        output: a.output.display().to_string(),
        homogenized: a.homogenize.is_some(),
    };
    write_report(&sidecar_path(&a.output), &Envelope::new(prov, result))?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Diagnose the variance matrix under this model rather than the raw data.
    #[arg(long, value_parser = parse_model)]
    model: Option<NoiseModel>,
    #[command(flatten)]
    report: ReportArgs,
}

fn run_diagnose(a: &DiagnoseArgs) -> CliResult<ExitCode> {
    let y = a.input.load()?;
    let target = match &a.model {
        Some(m) => variance_matrix(&y, m, Default::default())?.0,
        None => y,
    };
    let diagnosis = diagnose(&target);
    let clean = diagnosis.is_clean();
    let result = DiagnoseReport {
        nrows: target.nrows(),
        ncols: target.ncols(),
        clean,
        diagnosis,
    };
    a.report.emit(&Envelope::new(a.input.provenance("diagnose"), result))?;
    Ok(if clean { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn configure_threads() {
    if let Some(n) = std::env::var("BIWHITEN_THREADS").ok().and_then(|s| s.parse::<usize>().ok()) {
        if n > 0 {
            // fails only if a pool already exists
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    configure_threads();
    let outcome = match &cli.command {
        Command::Scale(a) => run_scale(a),
        Command::Rank(a) => run_rank(a),
        Command::Fit(a) => run_fit(a),
        Command::Adapt(a) => run_adapt(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Diagnose(a) => run_diagnose(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
