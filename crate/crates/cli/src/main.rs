//! `udid`: command-line interface to the udid-core estimators.
//!
//! Subcommands: `estimate` (ATT/QTT on a CSV panel), `simulate` (emit a
//! synthetic panel), `diagnose` (overlap and placebo checks), and
//! `benchmark` (Monte-Carlo study tables). Every command is a pure
//! function of its inputs, flags, and seed: identical invocations produce
//! byte-identical output.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use udid_core::data::{
    validate_dataset, BandwidthPolicy, EstimatorConfig, LambdaPolicy, OutcomeKind, PanelDataset,
};
use udid_core::error::Error as CoreError;
use udid_core::estimator::{
    estimate_att, estimate_att_binary, estimate_qtt, median_adjust, mix_seed, pt_baseline_att,
    z_quantile,
};
use udid_core::kernel::PointSet;
use udid_core::sim::{
    monte_carlo_study, overlap_diagnostic, placebo_orec_test, simulate, DgpSpec, EstimatorKind,
    McReport, PlaceboFamily,
};

const REPORT_SCHEMA: &str = "udid-report v1";
const SEED_ENV: &str = "UDID_SEED";

#[derive(Parser)]
#[command(
    name = "udid",
    version,
    about = "Difference-in-differences estimation under odds-ratio equi-confounding"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Estimate treatment effects from a CSV panel.
    Estimate(EstimateArgs),
    /// Draw a synthetic panel and emit it as CSV.
    Simulate(SimulateArgs),
    /// Run overlap and placebo diagnostics on a CSV panel.
    Diagnose(DiagnoseArgs),
    /// Monte-Carlo benchmark study over a grid of sample sizes.
    Benchmark(BenchmarkArgs),
}

#[derive(Args)]
struct CommonEstimation {
    /// Number of cross-fitting folds.
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Median-adjustment repetitions S (re-runs over fold splits).
    #[arg(long, default_value_t = 25)]
    reps: usize,
    /// Multiplier-bootstrap draws B (0 disables the bootstrap).
    #[arg(long, default_value_t = 1000)]
    bootstrap: usize,
    /// Two-sided confidence level is 1 - alpha.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// RNG seed; defaults to $UDID_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    /// Kernel bandwidth: `median` or a positive number.
    #[arg(long, default_value = "median")]
    kernel_bandwidth: String,
    /// Minimax regularization: `auto` (1/M) or a positive number.
    #[arg(long, default_value = "30")]
    lambda: String,
}

#[derive(Args)]
struct EstimateArgs {
    /// Input CSV with header y0,y1,a,x1,...,xd.
    csv: PathBuf,
    #[command(flatten)]
    common: CommonEstimation,
    /// Quantile level for QTT estimation; repeatable.
    #[arg(long, action = clap::ArgAction::Append)]
    qtt: Vec<f64>,
    /// Which ATT estimator(s) to run.
    #[arg(long, value_enum, default_value_t = EstimatorChoice::Orec)]
    estimator: EstimatorChoice,
    /// Print full-precision numerics instead of 6 significant digits.
    #[arg(long)]
    raw: bool,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Copy, Clone, PartialEq, ValueEnum)]
enum EstimatorChoice {
    Orec,
    Pt,
    Both,
}

#[derive(Args)]
struct SimulateArgs {
    /// Data-generating process: sec6-continuous, sec6-binary,
    /// gaussian-custom, bernoulli-custom, poisson-custom, no-confounding.
    #[arg(long)]
    dgp: String,
    /// Sample size.
    #[arg(long)]
    n: usize,
    /// RNG seed; defaults to $UDID_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DiagnoseArgs {
    /// Input CSV with header y0,y1,a,x1,...,xd[,y_pre1,...,y_preT].
    csv: PathBuf,
    /// Run the outcome-support overlap diagnostic.
    #[arg(long)]
    overlap: bool,
    /// Density threshold defining support for the overlap check.
    #[arg(long, default_value_t = 0.01)]
    threshold: f64,
    /// Run the placebo equi-confounding test on the y_pre columns.
    #[arg(long)]
    placebo: bool,
    /// Number of y_pre columns expected in the CSV.
    #[arg(long, default_value_t = 0)]
    pre_periods: usize,
    /// GLM family for the placebo per-period fits.
    #[arg(long, value_enum, default_value_t = FamilyChoice::Gaussian)]
    family: FamilyChoice,
    /// Print full-precision numerics instead of 6 significant digits.
    #[arg(long)]
    raw: bool,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Copy, Clone, ValueEnum)]
enum FamilyChoice {
    Gaussian,
    Binary,
    Poisson,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// Data-generating process name (see `simulate --dgp`).
    #[arg(long)]
    dgp: String,
    /// Comma-separated sample sizes, e.g. 500,750,1000.
    #[arg(long)]
    n_grid: String,
    /// Monte-Carlo repetitions per cell.
    #[arg(long)]
    reps: usize,
    /// Comma-separated estimators: orec, pt, or qtt=<q>.
    #[arg(long, default_value = "orec")]
    estimators: String,
    /// Number of cross-fitting folds.
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Multiplier-bootstrap draws B per repetition (0 disables).
    #[arg(long, default_value_t = 1000)]
    bootstrap: usize,
    /// Two-sided confidence level is 1 - alpha.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// RNG seed; defaults to $UDID_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    /// Kernel bandwidth: `median` or a positive number.
    #[arg(long, default_value = "median")]
    kernel_bandwidth: String,
    /// Minimax regularization: `auto` (1/M) or a positive number.
    #[arg(long, default_value = "30")]
    lambda: String,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

// ---------------------------------------------------------------------------
// Errors

#[derive(Debug)]
enum CliError {
    Parse { line: usize, msg: String },
    Io(std::io::Error),
    Core(CoreError),
    Flag(String),
}

impl CliError {
    /// Machine-readable error code printed in brackets.
    fn code(&self) -> &'static str {
        match self {
            CliError::Parse { .. } => "parse",
            CliError::Io(_) => "io",
            CliError::Flag(_) => "flag",
            CliError::Core(e) => match e {
                CoreError::LengthMismatch { .. } => "length_mismatch",
                CoreError::NonBinaryTreatment { .. } => "non_binary_treatment",
                CoreError::NonFiniteValue { .. } => "non_finite_value",
                CoreError::DegenerateTreatmentArm { .. } => "degenerate_arm",
                CoreError::TooFewUnits { .. } => "too_few_units",
                CoreError::DimensionMismatch { .. } => "dimension_mismatch",
                CoreError::TooFewPoints { .. } => "too_few_points",
                CoreError::NonFiniteInput { .. } => "non_finite_input",
                CoreError::EmptySample { .. } => "empty_sample",
                CoreError::EmptyControlSample { .. } => "empty_control_sample",
                CoreError::WrongOutcomeKind { .. } => "wrong_outcome_kind",
                CoreError::TooFewPeriods { .. } => "too_few_periods",
                CoreError::EmptyGrid => "empty_grid",
                CoreError::NoClosedForm => "no_closed_form",
                CoreError::DegenerateDensity { .. } => "degenerate_density",
                CoreError::UnknownDgp(_) => "unknown_dgp",
                CoreError::InvalidConfig(_) => "invalid_config",
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Parse { line, msg } => write!(f, "line {line}: {msg}"),
            CliError::Io(e) => write!(f, "{e}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Flag(msg) => write!(f, "{msg}"),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        match e.kind() {
            csv::ErrorKind::Io(_) => {
                CliError::Parse { line: 0, msg: e.to_string() }
            }
            _ => CliError::Parse {
                line: e
                    .position()
                    .map(|p| p.line() as usize)
                    .unwrap_or(0),
                msg: e.to_string(),
            },
        }
    }
}

type CliResult<T> = Result<T, CliError>;

// ---------------------------------------------------------------------------
// Shared helpers

fn resolve_seed(flag: Option<u64>) -> u64 {
    flag.or_else(|| std::env::var(SEED_ENV).ok().and_then(|s| s.parse().ok()))
        .unwrap_or(0)
}

fn parse_bandwidth(s: &str) -> CliResult<BandwidthPolicy> {
    if s == "median" {
        return Ok(BandwidthPolicy::MedianHeuristic);
    }
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(BandwidthPolicy::Fixed(v)),
        _ => Err(CliError::Flag(format!(
            "--kernel-bandwidth must be `median` or a positive number, got `{s}`"
        ))),
    }
}

fn parse_lambda(s: &str) -> CliResult<LambdaPolicy> {
    if s == "auto" {
        return Ok(LambdaPolicy::Auto);
    }
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(LambdaPolicy::Fixed(v)),
        _ => Err(CliError::Flag(format!(
            "--lambda must be `auto` or a positive number, got `{s}`"
        ))),
    }
}

fn build_config(c: &CommonEstimation) -> CliResult<EstimatorConfig> {
    let cfg = EstimatorConfig {
        k_folds: c.folds,
        repetitions_s: c.reps,
        bootstrap_b: c.bootstrap,
        alpha_level: c.alpha,
        bandwidth: parse_bandwidth(&c.kernel_bandwidth)?,
        lambda: parse_lambda(&c.lambda)?,
        seed: resolve_seed(c.seed),
        ..Default::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Six-significant-digit formatting for the default report, full
/// round-trip precision under --raw.
fn fmt_num(v: f64, raw: bool) -> String {
    if raw {
        return format!("{v:?}");
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    if v == 0.0 {
        return "0.00000".to_string();
    }
    let mag = v.abs().log10().floor() as i32;
    let dec = (5 - mag).clamp(0, 17) as usize;
    format!("{v:.dec$}")
}

fn fmt_pair(p: (f64, f64), raw: bool) -> String {
    format!("[{}, {}]", fmt_num(p.0, raw), fmt_num(p.1, raw))
}

fn emit(out: &Option<PathBuf>, text: &str) -> CliResult<()> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// CSV ingestion

struct ParsedCsv {
    data: PanelDataset,
    /// Pre-period outcome columns y_pre1..y_preT, oldest first.
    pre: Vec<Vec<f64>>,
}

fn read_csv(path: &PathBuf, pre_periods: usize) -> CliResult<ParsedCsv> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| CliError::Parse {
            line: 1,
            msg: e.to_string(),
        })?
        .iter()
        .map(|h| h.to_string())
        .collect();
    if headers.len() < 3 {
        return Err(CliError::Parse {
            line: 1,
            msg: format!(
                "header must contain at least y0,y1,a; got {} column(s)",
                headers.len()
            ),
        });
    }
    for (i, want) in ["y0", "y1", "a"].iter().enumerate() {
        if headers[i] != *want {
            return Err(CliError::Parse {
                line: 1,
                msg: format!("column {} must be `{want}`, got `{}`", i + 1, headers[i]),
            });
        }
    }
    let d = headers.len() - 3 - pre_periods;
    if headers.len() < 3 + pre_periods {
        return Err(CliError::Parse {
            line: 1,
            msg: format!(
                "expected {pre_periods} y_pre column(s) after the covariates, found too few columns"
            ),
        });
    }
    for j in 0..d {
        let want = format!("x{}", j + 1);
        if headers[3 + j] != want {
            return Err(CliError::Parse {
                line: 1,
                msg: format!("column {} must be `{want}`, got `{}`", 4 + j, headers[3 + j]),
            });
        }
    }
    for t in 0..pre_periods {
        let want = format!("y_pre{}", t + 1);
        if headers[3 + d + t] != want {
            return Err(CliError::Parse {
                line: 1,
                msg: format!(
                    "column {} must be `{want}`, got `{}`",
                    4 + d + t,
                    headers[3 + d + t]
                ),
            });
        }
    }

    let (mut y0, mut y1, mut a) = (Vec::new(), Vec::new(), Vec::new());
    let mut xflat: Vec<f64> = Vec::new();
    let mut pre: Vec<Vec<f64>> = vec![Vec::new(); pre_periods];
    for (rec_idx, rec) in rdr.records().enumerate() {
        let line = rec_idx + 2; // 1-based, after the header
        let rec = rec.map_err(|e| CliError::Parse {
            line,
            msg: e.to_string(),
        })?;
        if rec.len() != headers.len() {
            return Err(CliError::Parse {
                line,
                msg: format!("expected {} fields, got {}", headers.len(), rec.len()),
            });
        }
        let field = |j: usize| -> CliResult<f64> {
            rec[j].parse::<f64>().map_err(|_| CliError::Parse {
                line,
                msg: format!("column `{}`: cannot parse `{}` as a number", headers[j], &rec[j]),
            })
        };
        y0.push(field(0)?);
        y1.push(field(1)?);
        a.push(field(2)?);
        for j in 0..d {
            xflat.push(field(3 + j)?);
        }
        for (t, col) in pre.iter_mut().enumerate() {
            col.push(field(3 + d + t)?);
        }
    }
    let n = y0.len();
    let x = if d == 0 {
        PointSet::empty_dim(n)
    } else {
        PointSet::from_flat(xflat, d)?
    };
    let data = validate_dataset(y0, y1, a, x, None)?;
    Ok(ParsedCsv { data, pre })
}

// ---------------------------------------------------------------------------
// estimate

/// Median-adjusted summary of S repeated cross-fitting runs.
struct AttSummary {
    tau_hat: f64,
    ase: f64,
    ci: (f64, f64),
    se_boot: Option<f64>,
    ci_boot: Option<(f64, f64)>,
    per_fold: Vec<f64>,
    clamp_hit_rate: f64,
    warnings: Vec<String>,
}

fn run_att_repeated(
    data: &PanelDataset,
    cfg: &EstimatorConfig,
    kind: EstimatorChoice,
) -> CliResult<AttSummary> {
    let s = cfg.repetitions_s.max(1);
    let z = z_quantile(cfg.alpha_level);
    let mut pairs = Vec::with_capacity(s);
    let mut boot_pairs = Vec::with_capacity(s);
    let mut first_ci_boot = None;
    let mut first = None;
    let mut clamp_sum = 0.0;
    let mut warnings: Vec<String> = Vec::new();
    for rep in 0..s {
        let mut c = cfg.clone();
        c.seed = mix_seed(cfg.seed, rep as u64);
        let est = match kind {
            EstimatorChoice::Pt => pt_baseline_att(data, &c)?,
            _ => {
                if data.outcome_kind == OutcomeKind::Binary {
                    estimate_att_binary(data, &c)?
                } else {
                    estimate_att(data, &c)?
                }
            }
        };
        pairs.push((est.tau_hat, est.ase * est.ase));
        if let Some(se) = est.se_boot {
            boot_pairs.push((est.tau_hat, se * se));
        }
        if rep == 0 {
            first_ci_boot = est.ci_boot;
        }
        clamp_sum += est.clamp_hit_rate;
        for w in &est.warnings {
            let s = w.to_string();
            if !warnings.contains(&s) {
                warnings.push(s);
            }
        }
        if first.is_none() {
            first = Some(est);
        }
    }
    let first = first.expect("s >= 1");
    if s == 1 {
        return Ok(AttSummary {
            tau_hat: first.tau_hat,
            ase: first.ase,
            ci: first.ci,
            se_boot: first.se_boot,
            ci_boot: first.ci_boot,
            per_fold: first.per_fold,
            clamp_hit_rate: first.clamp_hit_rate,
            warnings,
        });
    }
    let (tau, var) = median_adjust(&pairs);
    let ase = var.sqrt();
    let (se_boot, ci_boot) = if boot_pairs.len() == s {
        let (tau_b, var_b) = median_adjust(&boot_pairs);
        let se = var_b.sqrt();
        // With S > 1 the percentile-bootstrap interval of a single split no
        // longer matches the adjusted point estimate; report a normal
        // interval around the adjusted estimate instead.
        let _ = (tau_b, first_ci_boot);
        (Some(se), Some((tau - z * se, tau + z * se)))
    } else {
        (None, None)
    };
    Ok(AttSummary {
        tau_hat: tau,
        ase,
        ci: (tau - z * ase, tau + z * ase),
        se_boot,
        ci_boot,
        per_fold: first.per_fold,
        clamp_hit_rate: clamp_sum / s as f64,
        warnings,
    })
}

struct QttSummary {
    theta_hat: f64,
    ase: f64,
    ci: Option<(f64, f64)>,
    warnings: Vec<String>,
}

fn run_qtt_repeated(data: &PanelDataset, cfg: &EstimatorConfig, q: f64) -> CliResult<QttSummary> {
    let s = cfg.repetitions_s.max(1);
    let z = z_quantile(cfg.alpha_level);
    let mut pairs = Vec::with_capacity(s);
    let mut any_degenerate = false;
    let mut warnings: Vec<String> = Vec::new();
    let mut first = None;
    for rep in 0..s {
        let mut c = cfg.clone();
        c.seed = mix_seed(cfg.seed, rep as u64);
        let est = estimate_qtt(data, &c, q)?;
        pairs.push((est.theta_hat, est.ase * est.ase));
        any_degenerate |= est.ci.is_none();
        for w in &est.warnings {
            let s = w.to_string();
            if !warnings.contains(&s) {
                warnings.push(s);
            }
        }
        if first.is_none() {
            first = Some(est);
        }
    }
    let first = first.expect("s >= 1");
    if s == 1 {
        return Ok(QttSummary {
            theta_hat: first.theta_hat,
            ase: first.ase,
            ci: first.ci,
            warnings,
        });
    }
    let (theta, var) = median_adjust(&pairs);
    let ase = var.sqrt();
    let ci = if any_degenerate {
        None
    } else {
        Some((theta - z * ase, theta + z * ase))
    };
    Ok(QttSummary {
        theta_hat: theta,
        ase,
        ci,
        warnings,
    })
}

fn config_block(out: &mut String, cfg: &EstimatorConfig, c: &CommonEstimation) {
    let _ = writeln!(out, "config:");
    let _ = writeln!(out, "  folds: {}", cfg.k_folds);
    let _ = writeln!(out, "  reps: {}", cfg.repetitions_s);
    let _ = writeln!(out, "  bootstrap: {}", cfg.bootstrap_b);
    let _ = writeln!(out, "  alpha: {}", cfg.alpha_level);
    let _ = writeln!(out, "  kernel-bandwidth: {}", c.kernel_bandwidth);
    let _ = writeln!(out, "  lambda: {}", c.lambda);
    let _ = writeln!(out, "  seed: {}", cfg.seed);
}

fn att_block(out: &mut String, label: &str, s: &AttSummary, raw: bool) {
    let _ = writeln!(out, "estimate {label}:");
    let _ = writeln!(out, "  tau_hat: {}", fmt_num(s.tau_hat, raw));
    if s.ase > 0.0 {
        let _ = writeln!(out, "  ase: {}", fmt_num(s.ase, raw));
        let _ = writeln!(out, "  ci: {}", fmt_pair(s.ci, raw));
    } else {
        // The PT baseline has no asymptotic variance formula here; its SE
        // comes from the resample bootstrap, absent when B = 0.
        let _ = writeln!(out, "  ase: NA");
        let _ = writeln!(out, "  ci: NA");
    }
    match (s.se_boot, s.ci_boot) {
        (Some(se), Some(ci)) => {
            let _ = writeln!(out, "  se_boot: {}", fmt_num(se, raw));
            let _ = writeln!(out, "  ci_boot: {}", fmt_pair(ci, raw));
        }
        _ => {
            let _ = writeln!(out, "  se_boot: NA");
            let _ = writeln!(out, "  ci_boot: NA");
        }
    }
    let folds: Vec<String> = s.per_fold.iter().map(|v| fmt_num(*v, raw)).collect();
    let _ = writeln!(out, "  per_fold: [{}]", folds.join(", "));
    let _ = writeln!(out, "  clamp_hit_rate: {}", fmt_num(s.clamp_hit_rate, raw));
}

fn warnings_block(out: &mut String, warnings: &[String]) {
    let _ = writeln!(out, "warnings:");
    if warnings.is_empty() {
        let _ = writeln!(out, "  none");
    } else {
        for w in warnings {
            let _ = writeln!(out, "  - {w}");
        }
    }
}

fn cmd_estimate(args: &EstimateArgs) -> CliResult<()> {
    let cfg = build_config(&args.common)?;
    for &q in &args.qtt {
        if !(0.0..1.0).contains(&q) || q <= 0.0 {
            return Err(CliError::Flag(format!("--qtt must be in (0, 1), got {q}")));
        }
    }
    let parsed = read_csv(&args.csv, 0)?;
    let data = parsed.data;

    let mut report = String::new();
    let _ = writeln!(report, "{REPORT_SCHEMA}");
    let _ = writeln!(report, "command: estimate");
    let _ = writeln!(
        report,
        "input: n={} d={} outcome={}",
        data.n(),
        data.dim(),
        match data.outcome_kind {
            OutcomeKind::Binary => "binary",
            _ => "continuous",
        }
    );
    config_block(&mut report, &cfg, &args.common);

    let mut all_warnings: Vec<String> = Vec::new();
    if args.estimator != EstimatorChoice::Pt {
        let s = run_att_repeated(&data, &cfg, EstimatorChoice::Orec)?;
        att_block(&mut report, "orec", &s, args.raw);
        all_warnings.extend(s.warnings);
    }
    if matches!(args.estimator, EstimatorChoice::Pt | EstimatorChoice::Both) {
        let s = run_att_repeated(&data, &cfg, EstimatorChoice::Pt)?;
        att_block(&mut report, "pt", &s, args.raw);
        all_warnings.extend(s.warnings);
    }
    for &q in &args.qtt {
        let s = run_qtt_repeated(&data, &cfg, q)?;
        let _ = writeln!(report, "qtt q={q}:");
        let _ = writeln!(report, "  theta_hat: {}", fmt_num(s.theta_hat, args.raw));
        let _ = writeln!(report, "  ase: {}", fmt_num(s.ase, args.raw));
        match s.ci {
            Some(ci) => {
                let _ = writeln!(report, "  ci: {}", fmt_pair(ci, args.raw));
            }
            None => {
                let _ = writeln!(report, "  ci: NA (degenerate density)");
            }
        }
        all_warnings.extend(s.warnings);
    }
    all_warnings.dedup();
    warnings_block(&mut report, &all_warnings);
    emit(&args.out, &report)
}

// ---------------------------------------------------------------------------
// simulate

fn cmd_simulate(args: &SimulateArgs) -> CliResult<()> {
    let seed = resolve_seed(args.seed);
    let spec = DgpSpec::parse(&args.dgp, args.n, seed)?;
    let data = simulate(&spec)?;
    let d = data.dim();
    let mut csv = String::new();
    csv.push_str("y0,y1,a");
    for j in 1..=d {
        let _ = write!(csv, ",x{j}");
    }
    csv.push('\n');
    for i in 0..data.n() {
        let _ = write!(csv, "{:?},{:?},{}", data.y0[i], data.y1[i], data.a[i]);
        for j in 0..d {
            let _ = write!(csv, ",{:?}", data.x.row(i)[j]);
        }
        csv.push('\n');
    }
    emit(&args.out, &csv)
}

// ---------------------------------------------------------------------------
// diagnose

fn cmd_diagnose(args: &DiagnoseArgs) -> CliResult<()> {
    if !args.overlap && !args.placebo {
        return Err(CliError::Flag(
            "nothing to do: pass --overlap and/or --placebo".into(),
        ));
    }
    let parsed = read_csv(&args.csv, args.pre_periods)?;
    let data = parsed.data;

    let mut report = String::new();
    let _ = writeln!(report, "{REPORT_SCHEMA}");
    let _ = writeln!(report, "command: diagnose");
    let _ = writeln!(report, "input: n={} d={}", data.n(), data.dim());

    if args.overlap {
        let rep = overlap_diagnostic(&data, None, args.threshold)?;
        let _ = writeln!(report, "overlap:");
        let _ = writeln!(report, "  threshold: {}", fmt_num(rep.threshold, args.raw));
        let _ = writeln!(
            report,
            "  grid: [{}, {}] ({} points)",
            fmt_num(rep.grid[0], args.raw),
            fmt_num(*rep.grid.last().unwrap(), args.raw),
            rep.grid.len()
        );
        let _ = writeln!(
            report,
            "  violation_rate: {}",
            fmt_num(rep.violation_rate, args.raw)
        );
    }
    if args.placebo {
        let family = match args.family {
            FamilyChoice::Gaussian => PlaceboFamily::Gaussian,
            FamilyChoice::Binary => PlaceboFamily::Binary,
            FamilyChoice::Poisson => PlaceboFamily::Poisson,
        };
        let (stat, p) = placebo_orec_test(&parsed.pre, &data.a, &data.x, family)?;
        let _ = writeln!(report, "placebo:");
        let _ = writeln!(report, "  periods: {}", parsed.pre.len());
        let _ = writeln!(report, "  statistic: {}", fmt_num(stat, args.raw));
        let _ = writeln!(report, "  p_value: {}", fmt_num(p, args.raw));
    }
    warnings_block(&mut report, &[]);
    emit(&args.out, &report)
}

// ---------------------------------------------------------------------------
// benchmark

fn parse_estimators(s: &str) -> CliResult<Vec<EstimatorKind>> {
    let mut out = Vec::new();
    for part in s.split(',') {
        let part = part.trim();
        if part == "orec" {
            out.push(EstimatorKind::Orec);
        } else if part == "pt" {
            out.push(EstimatorKind::Pt);
        } else if let Some(qs) = part.strip_prefix("qtt=") {
            let q: f64 = qs.parse().map_err(|_| {
                CliError::Flag(format!("cannot parse quantile level in `{part}`"))
            })?;
            out.push(EstimatorKind::Qtt(q));
        } else {
            return Err(CliError::Flag(format!(
                "unknown estimator `{part}` (expected orec, pt, or qtt=<q>)"
            )));
        }
    }
    if out.is_empty() {
        return Err(CliError::Flag("--estimators must name at least one".into()));
    }
    Ok(out)
}

fn cmd_benchmark(args: &BenchmarkArgs) -> CliResult<()> {
    if args.reps == 0 {
        return Err(CliError::Flag("--reps must be >= 1".into()));
    }
    let estimators = parse_estimators(&args.estimators)?;
    let mut ns = Vec::new();
    for part in args.n_grid.split(',') {
        let n: usize = part.trim().parse().map_err(|_| {
            CliError::Flag(format!("cannot parse sample size `{}` in --n-grid", part.trim()))
        })?;
        ns.push(n);
    }
    if ns.is_empty() {
        return Err(CliError::Flag("--n-grid must name at least one size".into()));
    }
    // The study harness runs a single fold split per repetition.
    let cfg = EstimatorConfig {
        k_folds: args.folds,
        repetitions_s: 1,
        bootstrap_b: args.bootstrap,
        alpha_level: args.alpha,
        bandwidth: parse_bandwidth(&args.kernel_bandwidth)?,
        lambda: parse_lambda(&args.lambda)?,
        seed: resolve_seed(args.seed),
        ..Default::default()
    };
    cfg.validate()?;
    let mut csv = String::new();
    csv.push_str(McReport::csv_header());
    csv.push('\n');
    for &n in &ns {
        let spec = DgpSpec::parse(&args.dgp, n, cfg.seed)?;
        let reports = monte_carlo_study(&spec, args.reps, &cfg, &estimators)?;
        for r in &reports {
            csv.push_str(&r.csv_row());
            csv.push('\n');
        }
    }
    emit(&args.out, &csv)
}

// ---------------------------------------------------------------------------

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Estimate(a) => cmd_estimate(a),
        Cmd::Simulate(a) => cmd_simulate(a),
        Cmd::Diagnose(a) => cmd_diagnose(a),
        Cmd::Benchmark(a) => cmd_benchmark(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            ExitCode::FAILURE
        }
    }
}
