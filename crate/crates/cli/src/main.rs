//! `hdcox`: fit, infer, simulate and oracle subcommands.

mod config;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hdcox::inference::{confidence_intervals, desparsify_at, model_variance_from, robust_variance};
use hdcox::lasso::{fit_cv, fit_lasso, CvConfig, LassoConfig, LassoFit};
use hdcox::nodewise::{build_precision, cv_nodewise, default_lambdas, DEFAULT_RATE_CONSTANT};
use hdcox::partial_likelihood::hessian;
use hdcox::simulation::runner::write_replicates_jsonl;
use hdcox::simulation::{calibrate_censoring, pseudo_true_oracle, run_replications, ScenarioSpec};
use hdcox::{CoxError, Stage, SurvivalDataset, VarianceKind};
use ndarray::Array1;

use config::FileConfig;

pub const EXIT_OTHER: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_SCHEMA: u8 = 3;
pub const EXIT_SOLVER: u8 = 4;
pub const EXIT_PRECISION: u8 = 5;
pub const EXIT_SCENARIO: u8 = 6;
pub const EXIT_IO: u8 = 7;

/// Offset mixed into the seed for the nodewise folds so they differ from the
/// Lasso folds.
const NODEWISE_SEED_MIX: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn new(code: u8, stage: &str, message: impl Into<String>) -> Self {
        Self { code, message: format!("{stage} error: {}", message.into()) }
    }
    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(EXIT_USAGE, "usage", message)
    }
    pub fn io(message: impl Into<String>) -> Self {
        Self::new(EXIT_IO, "io", message)
    }
}

impl From<CoxError> for Failure {
    fn from(e: CoxError) -> Self {
        let (code, stage) = match e.stage() {
            Stage::Usage => (EXIT_USAGE, "usage"),
            Stage::Schema => (EXIT_SCHEMA, "schema"),
            Stage::Solver => (EXIT_SOLVER, "solver"),
            Stage::Precision => (EXIT_PRECISION, "precision"),
            Stage::Scenario => (EXIT_SCENARIO, "scenario"),
            Stage::Io => (EXIT_IO, "io"),
        };
        Self::new(code, stage, e.to_string())
    }
}

type Outcome<T = ()> = Result<T, Failure>;

#[derive(Parser, Debug)]
#[command(name = "hdcox", version, about = "De-sparsified Lasso inference for high-dimensional Cox models")]
struct Cli {
    /// TOML file whose keys mirror the long flags; flags take precedence
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// worker threads (0 = all available cores); results do not depend on it
    #[arg(long, global = true, env = "HDCOX_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the Lasso-penalised Cox model and write the coefficients
    Fit(FitArgs),
    /// Debiased estimates, standard errors, intervals and Holm p-values
    Infer(InferArgs),
    /// Run a simulation scenario and write its coverage report
    Simulate(SimulateArgs),
    /// Approximate the pseudo-true parameter of a scenario on one large sample
    Oracle(OracleArgs),
}

#[derive(Args, Debug)]
struct DataArgs {
    /// CSV with a header, a `time` column, a `status` column (0/1) and features
    #[arg(long)]
    input: Option<PathBuf>,
    /// output CSV (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
    /// `cv` or a fixed value; the penalty is 2 * lambda * ||beta||_1
    #[arg(long)]
    lambda: Option<String>,
    /// cross-validation folds
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args, Debug)]
struct InferArgs {
    #[command(flatten)]
    data: DataArgs,
    /// `robust`, `model` or `both` (both writes `<stem>_model.csv` as well)
    #[arg(long)]
    variance: Option<String>,
    /// confidence level
    #[arg(long)]
    level: Option<f64>,
    /// `cv`, `rate` (0.5 sqrt(log p / n)) or a fixed value
    #[arg(long)]
    nodewise_lambda: Option<String>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// scenario file
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// replications, overriding the scenario
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    level: Option<f64>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    nodewise_lambda: Option<String>,
    /// coverage report CSV (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
    /// per-replicate JSON lines
    #[arg(long)]
    replicates: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct OracleArgs {
    /// scenario file supplying design, hazard and censoring target
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// sample size of the large sample
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// CSV of the pseudo-true coefficients (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("hdcox: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Outcome {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let threads = cli.threads.or(file.threads).unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Failure::new(EXIT_OTHER, "internal", e.to_string()))?;
    match cli.command {
        Command::Fit(a) => cmd_fit(a, file),
        Command::Infer(a) => cmd_infer(a, file),
        Command::Simulate(a) => cmd_simulate(a, file),
        Command::Oracle(a) => cmd_oracle(a, file),
    }
}

enum Lambda {
    Cv,
    Fixed(f64),
}

fn parse_lambda(text: &str) -> Outcome<Lambda> {
    match text {
        "cv" => Ok(Lambda::Cv),
        other => match other.parse::<f64>() {
            Ok(v) if v > 0.0 && v.is_finite() => Ok(Lambda::Fixed(v)),
            _ => Err(Failure::usage(format!("--lambda must be `cv` or a positive number, got {other:?}"))),
        },
    }
}

fn check_level(level: f64) -> Outcome<f64> {
    if level > 0.0 && level < 1.0 {
        Ok(level)
    } else {
        Err(Failure::usage(format!("--level must lie in (0, 1), got {level}")))
    }
}

fn required(path: Option<PathBuf>, flag: &str) -> Outcome<PathBuf> {
    path.ok_or_else(|| Failure::usage(format!("--{flag} is required (on the command line or in --config)")))
}

fn read_dataset(path: &Path) -> Outcome<(SurvivalDataset, Vec<String>)> {
    let file = File::open(path).map_err(|e| Failure::io(format!("cannot open {}: {e}", path.display())))?;
    Ok(SurvivalDataset::read_csv(io::BufReader::new(file))?)
}

fn open_out(path: Option<&Path>) -> Outcome<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| Failure::io(format!("cannot create {}: {e}", p.display())))?,
        )),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

/// Resolved settings shared by `fit` and `infer`.
struct DataSettings {
    input: PathBuf,
    out: Option<PathBuf>,
    lambda: Lambda,
    folds: usize,
    seed: u64,
}

fn data_settings(a: DataArgs, file: &FileConfig) -> Outcome<DataSettings> {
    let lambda = a.lambda.or_else(|| file.lambda.clone()).unwrap_or_else(|| "cv".into());
    Ok(DataSettings {
        input: required(a.input.or_else(|| file.input.clone()), "input")?,
        out: a.out.or_else(|| file.out.clone()),
        lambda: parse_lambda(&lambda)?,
        folds: a.folds.or(file.folds).unwrap_or(10),
        seed: a.seed.or(file.seed).unwrap_or(0),
    })
}

fn fit_model(ds: &SurvivalDataset, s: &DataSettings) -> Outcome<LassoFit> {
    let config = LassoConfig::default();
    Ok(match s.lambda {
        Lambda::Cv => {
            let cv = CvConfig { folds: s.folds, seed: s.seed, ..CvConfig::default() };
            fit_cv(ds, &cv, &config)?.1
        }
        Lambda::Fixed(l) => fit_lasso(ds, l, None, &config)?,
    })
}

#[derive(serde::Serialize)]
struct FitRow<'a> {
    j: usize,
    feature: &'a str,
    beta_hat: f64,
    lambda: f64,
    kkt_violation: f64,
}

fn cmd_fit(a: FitArgs, file: FileConfig) -> Outcome {
    let s = data_settings(a.data, &file)?;
    let (ds, names) = read_dataset(&s.input)?;
    let fit = fit_model(&ds, &s)?;
    let mut w = csv::Writer::from_writer(open_out(s.out.as_deref())?);
    for (j, name) in names.iter().enumerate() {
        let row =
            FitRow { j: j + 1, feature: name, beta_hat: fit.beta_hat[j], lambda: fit.lambda, kkt_violation: fit.kkt_violation };
        w.serialize(row).map_err(|e| Failure::io(e.to_string()))?;
    }
    w.flush().map_err(|e| Failure::io(e.to_string()))?;
    Ok(())
}

fn model_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match out.extension() {
        Some(ext) => format!("{stem}_model.{}", ext.to_string_lossy()),
        None => format!("{stem}_model"),
    };
    out.with_file_name(name)
}

fn cmd_infer(a: InferArgs, file: FileConfig) -> Outcome {
    let level = check_level(a.level.or(file.level).unwrap_or(0.95))?;
    let variance = a.variance.or_else(|| file.variance.clone()).unwrap_or_else(|| "robust".into());
    let kinds: Vec<VarianceKind> = match variance.as_str() {
        "both" => vec![VarianceKind::Robust, VarianceKind::Model],
        v => vec![v.parse().map_err(|_| Failure::usage(format!("--variance must be robust, model or both, got {v:?}")))?],
    };
    let nodewise = a.nodewise_lambda.or_else(|| file.nodewise_lambda.clone()).unwrap_or_else(|| "cv".into());
    let s = data_settings(a.data, &file)?;
    if kinds.len() == 2 && s.out.is_none() {
        return Err(Failure::usage("--variance both needs --out for the second report"));
    }

    let (ds, _) = read_dataset(&s.input)?;
    let fit = fit_model(&ds, &s)?;
    let beta = fit.beta_hat.view();
    let sigma = hessian(&ds, beta)?;
    let lambdas = match nodewise.as_str() {
        "cv" => cv_nodewise(&ds, beta, s.folds, s.seed ^ NODEWISE_SEED_MIX)?,
        "rate" => default_lambdas(ds.n(), ds.p(), DEFAULT_RATE_CONSTANT),
        other => match other.parse::<f64>() {
            Ok(v) if v > 0.0 && v.is_finite() => Array1::from_elem(ds.p(), v),
            _ => {
                return Err(Failure::usage(format!(
                    "--nodewise-lambda must be cv, rate or a positive number, got {other:?}"
                )))
            }
        },
    };
    let prec = build_precision(sigma.view(), lambdas.view())?;
    let b_hat = desparsify_at(&ds, beta, &prec)?;
    let sd_robust = robust_variance(&ds, beta, &prec)?.mapv(f64::sqrt);
    let sd_model = model_variance_from(sigma.view(), &prec)?.mapv(f64::sqrt);

    for (i, kind) in kinds.iter().enumerate() {
        let report = confidence_intervals(b_hat.view(), sd_robust.view(), sd_model.view(), ds.n(), level, *kind)?;
        let path = match (&s.out, i) {
            (Some(out), 1) => Some(model_path(out)),
            (out, _) => out.clone(),
        };
        let mut w = open_out(path.as_deref())?;
        report.write_csv(&mut w)?;
        w.flush().map_err(|e| Failure::io(e.to_string()))?;
    }
    Ok(())
}

fn load_spec(path: Option<PathBuf>) -> Outcome<ScenarioSpec> {
    let path = required(path, "scenario")?;
    Ok(ScenarioSpec::from_file(&path)?)
}

/// Replaces a scenario `lambda`-style key from a flag value.
fn override_setting(spec: &mut ScenarioSpec, key: &str, value: &str) -> Outcome {
    let literal = if value.parse::<f64>().is_ok() { value.to_string() } else { format!("{value:?}") };
    let mut table: toml::Table = toml::from_str(&spec.to_toml()).expect("spec round-trips");
    let parsed: toml::Table =
        toml::from_str(&format!("{key} = {literal}")).map_err(|e| Failure::usage(e.message().to_string()))?;
    table.extend(parsed);
    *spec = ScenarioSpec::from_toml(&table.to_string())?;
    Ok(())
}

fn cmd_simulate(a: SimulateArgs, file: FileConfig) -> Outcome {
    let mut spec = load_spec(a.scenario.or_else(|| file.scenario.clone()))?;
    if let Some(r) = a.reps.or(file.reps) {
        spec.replications = r;
    }
    if let Some(s) = a.seed.or(file.seed) {
        spec.seed = s;
    }
    if let Some(l) = a.level.or(file.level) {
        spec.ci_level = l;
    }
    if let Some(f) = a.folds.or(file.folds) {
        spec.folds = f;
    }
    if let Some(l) = a.lambda.or_else(|| file.lambda.clone()) {
        override_setting(&mut spec, "lambda", &l)?;
    }
    if let Some(l) = a.nodewise_lambda.or_else(|| file.nodewise_lambda.clone()) {
        override_setting(&mut spec, "nodewise_lambda", &l)?;
    }
    let scenario = spec.validate()?;
    let (report, outcomes) = run_replications(&scenario)?;
    eprint!("{report}");
    let mut w = open_out(a.out.or_else(|| file.out.clone()).as_deref())?;
    report.write_csv(&mut w)?;
    w.flush().map_err(|e| Failure::io(e.to_string()))?;
    if let Some(path) = a.replicates.or_else(|| file.replicates.clone()) {
        let mut w = open_out(Some(&path))?;
        write_replicates_jsonl(&outcomes, &mut w)?;
        w.flush().map_err(|e| Failure::io(e.to_string()))?;
    }
    Ok(())
}

#[derive(serde::Serialize)]
struct OracleRow {
    j: usize,
    beta0: f64,
}

fn cmd_oracle(a: OracleArgs, file: FileConfig) -> Outcome {
    let mut spec = load_spec(a.scenario.or_else(|| file.scenario.clone()))?;
    if let Some(s) = a.seed.or(file.seed) {
        spec.seed = s;
    }
    let n_large = a.n.or(file.n).unwrap_or(200_000);
    let scenario = spec.validate()?;
    let cal = calibrate_censoring(&scenario.hazard, &scenario.sampler, spec.target_censoring, spec.pilot_n, spec.seed)?;
    let res = pseudo_true_oracle(&scenario.hazard, &scenario.sampler, n_large, cal.constant, spec.seed)?;
    eprintln!(
        "oracle: n = {n_large}, censoring {:.4}, Newton iterations {}, smallest Hessian eigenvalue {:.4e}",
        res.censoring_rate, res.iterations, res.min_eigenvalue
    );
    let mut w = csv::Writer::from_writer(open_out(a.out.or_else(|| file.out.clone()).as_deref())?);
    for (j, &b) in res.beta.iter().enumerate() {
        w.serialize(OracleRow { j: j + 1, beta0: b }).map_err(|e| Failure::io(e.to_string()))?;
    }
    w.flush().map_err(|e| Failure::io(e.to_string()))?;
    Ok(())
}
