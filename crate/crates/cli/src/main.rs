//! `windcal`: simulate ensemble data, train calibration models over rolling
//! windows, predict, verify and flatten reports into plot-ready tables.

mod manifest;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use windcal::emos::{ScopeKind, DEFAULT_WINDOW_DAYS};
use windcal::ensemble_data::{load_csv, synthetic_generate, write_csv_to, Dataset, SyntheticConfig};
use windcal::pipeline::{
    default_verification_dates, forecast_rows, metrics_long, overall_table, pit_long, predict, rank_long,
    read_forecast_table, sweep_window, train, verify, write_forecast_table, write_rows, TrainOptions,
};
use windcal::scoring::{default_lead_groups, IntervalSpec, ReportOptions, VerificationReport, DEFAULT_PIT_BINS};
use windcal::store::{ModelKind, ModelStore, StoreRecords};

use crate::manifest::Manifest;

/// Environment variable selecting the worker-pool size.
const THREADS_VAR: &str = "WINDCAL_THREADS";

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "windcal", version, about = "Calibrate ensemble wind-speed forecasts with EMOS and a neural network")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic ensemble dataset
    Simulate(SimulateArgs),
    /// Fit a model over rolling training windows
    Train(TrainArgs),
    /// Forecast cases from a stored model
    Predict(PredictArgs),
    /// Score forecast tables and the raw ensemble on their common cases
    Verify(VerifyArgs),
    /// Flatten verification reports into long tables
    Report(ReportArgs),
    /// Retrain for a range of window lengths and tabulate the scores
    SweepWindow(SweepArgs),
}

#[derive(Args, Debug, serde::Serialize)]
struct SimulateArgs {
    /// Number of stations
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u32).range(1..))]
    stations: u32,
    /// Number of initialization days
    #[arg(long, default_value_t = 120, value_parser = clap::value_parser!(u32).range(1..))]
    days: u32,
    /// Lead times per initialization (15-minute steps)
    #[arg(long, default_value_t = 192, value_parser = clap::value_parser!(u16).range(1..=192))]
    lead_times: u16,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// First initialization date
    #[arg(long, default_value = "2020-05-07")]
    start_date: NaiveDate,
    /// Mean wind speed per station (m/s), cycled over stations
    #[arg(long, value_delimiter = ',', default_value = "6.5,7.5,8.5")]
    base_speeds: Vec<f64>,
    #[arg(long, default_value_t = 1.5)]
    diurnal_amplitude: f64,
    #[arg(long, default_value_t = 0.7)]
    ar1: f64,
    #[arg(long, default_value_t = 2.5)]
    anomaly_sd: f64,
    #[arg(long, default_value_t = 1.0)]
    obs_noise_sd: f64,
    #[arg(long, default_value_t = 0.6)]
    spread_sd: f64,
    #[arg(long, default_value_t = 0.3)]
    bias: f64,
    /// Ratio of ensemble spread to forecast error sd
    #[arg(long, default_value_t = 0.5)]
    spread_deficiency: f64,
    /// Output CSV
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args, Debug, serde::Serialize)]
struct DateFilter {
    /// First date to include
    #[arg(long)]
    from: Option<NaiveDate>,
    /// Last date to include
    #[arg(long)]
    to: Option<NaiveDate>,
}

impl DateFilter {
    fn apply(&self, dates: Vec<NaiveDate>) -> Vec<NaiveDate> {
        dates
            .into_iter()
            .filter(|d| self.from.is_none_or(|f| *d >= f) && self.to.is_none_or(|t| *d <= t))
            .collect()
    }
}

#[derive(Args, Debug, serde::Serialize)]
struct TrainArgs {
    /// tn-emos, ln-emos, tgev-emos or tn-mlp
    #[arg(value_parser = parse_model)]
    model: ModelKind,
    /// Input dataset CSV
    #[arg(long)]
    data: PathBuf,
    /// Output directory
    #[arg(short, long)]
    out: PathBuf,
    /// EMOS estimation scope (the network is always regional)
    #[arg(long, default_value = "local", value_parser = parse_scope)]
    scope: ScopeKind,
    /// Rolling training window in days
    #[arg(long, default_value_t = DEFAULT_WINDOW_DAYS, value_parser = clap::value_parser!(u32).range(1..))]
    window: u32,
    #[command(flatten)]
    dates: DateFilter,
    /// Start every EMOS fit from the default coefficients
    #[arg(long)]
    no_warm_start: bool,
    /// Network training seed
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Maximum network training epochs
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u32).range(1..))]
    epochs: u32,
}

#[derive(Args, Debug, serde::Serialize)]
struct PredictArgs {
    /// Model store written by `train`
    #[arg(long)]
    store: PathBuf,
    /// Input dataset CSV
    #[arg(long)]
    data: PathBuf,
    /// Output directory
    #[arg(short, long)]
    out: PathBuf,
    #[command(flatten)]
    dates: DateFilter,
    /// Nominal central interval level
    #[arg(long, default_value_t = 10.0 / 12.0)]
    level: f64,
}

#[derive(Args, Debug, serde::Serialize)]
struct VerifyArgs {
    /// Dataset with observations and the raw ensemble
    #[arg(long)]
    data: PathBuf,
    /// Forecast table, optionally as NAME=PATH
    #[arg(long = "forecasts", required = true)]
    forecasts: Vec<String>,
    /// Output directory
    #[arg(short, long)]
    out: PathBuf,
    /// Nominal central interval level
    #[arg(long, default_value_t = 10.0 / 12.0)]
    level: f64,
    /// PIT histogram bins
    #[arg(long, default_value_t = DEFAULT_PIT_BINS, value_parser = parse_bins)]
    pit_bins: usize,
}

#[derive(Args, Debug, serde::Serialize)]
struct ReportArgs {
    /// Report files written by `verify`
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    /// Output directory
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args, Debug, serde::Serialize)]
struct SweepArgs {
    #[arg(value_parser = parse_model)]
    model: ModelKind,
    #[arg(long)]
    data: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long, default_value = "local", value_parser = parse_scope)]
    scope: ScopeKind,
    /// Shortest window
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u32).range(1..))]
    min_window: u32,
    /// Longest window
    #[arg(long, default_value_t = 60, value_parser = clap::value_parser!(u32).range(1..))]
    max_window: u32,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    step: u32,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn parse_model(s: &str) -> std::result::Result<ModelKind, String> {
    s.parse().map_err(|e: windcal::Error| e.to_string())
}

fn parse_scope(s: &str) -> std::result::Result<ScopeKind, String> {
    s.parse().map_err(|e: windcal::Error| e.to_string())
}

fn parse_bins(s: &str) -> std::result::Result<usize, String> {
    match s.parse::<usize>() {
        Ok(n) if n > 0 => Ok(n),
        _ => Err(format!("`{s}` is not a positive integer")),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(EXIT_USAGE);
    }
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .with_context(|| format!("{THREADS_VAR} must be a positive integer, got `{value}`"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<windcal::Error>() {
            return match err {
                windcal::Error::InvalidArgument(_) => EXIT_USAGE,
                windcal::Error::NumericalFailure(_) => EXIT_NUMERIC,
                _ => EXIT_DATA,
            };
        }
        if cause.downcast_ref::<UsageError>().is_some() {
            return EXIT_USAGE;
        }
    }
    EXIT_DATA
}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Simulate(a) => simulate(a),
        Command::Train(a) => train_cmd(a),
        Command::Predict(a) => predict_cmd(a),
        Command::Verify(a) => verify_cmd(a),
        Command::Report(a) => report_cmd(a),
        Command::SweepWindow(a) => sweep_cmd(a),
    }
}

fn interval(level: f64) -> Result<IntervalSpec> {
    IntervalSpec::new(level).map_err(|e| UsageError(e.to_string()).into())
}

fn load(path: &Path) -> Result<Dataset> {
    load_csv(path).with_context(|| format!("reading {}", path.display()))
}

/// Write `contents` through a temporary file in the target directory, then
/// rename it into place.
fn write_atomic(path: &Path, contents: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let tmp = tempfile::NamedTempFile::new_in(&dir).with_context(|| format!("creating a file in {}", dir.display()))?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        contents(&mut w)?;
        w.flush()?;
    }
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn write_table<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    write_atomic(path, |w| Ok(write_rows(rows, w)?))
}

fn simulate(a: SimulateArgs) -> Result<ExitCode> {
    let config = SyntheticConfig {
        n_stations: a.stations as usize,
        n_days: a.days as usize,
        station_base_speeds: a.base_speeds.clone(),
        diurnal_amplitude: a.diurnal_amplitude,
        ar1_coefficient: a.ar1,
        anomaly_sd: a.anomaly_sd,
        obs_noise_sd: a.obs_noise_sd,
        ensemble_spread_sd: a.spread_sd,
        ensemble_bias: a.bias,
        spread_deficiency_factor: a.spread_deficiency,
        start_date: a.start_date,
        lead_times: a.lead_times,
        seed: a.seed,
    };
    let mut manifest = Manifest::start("simulate", &config, Some(a.seed));
    let data = synthetic_generate(&config)?;
    write_atomic(&a.output, |w| Ok(write_csv_to(&data, w)?))?;
    manifest.output(&a.output)?;
    manifest.write_beside(&a.output)?;
    eprintln!("wrote {} cases to {}", data.len(), a.output.display());
    Ok(ExitCode::SUCCESS)
}

fn train_cmd(a: TrainArgs) -> Result<ExitCode> {
    let mut manifest = Manifest::start("train", &a, Some(a.seed));
    manifest.input(&a.data)?;
    let data = load(&a.data)?;
    let mut options = TrainOptions::new(a.model);
    if a.model != ModelKind::TnMlp {
        options.scope = a.scope;
    }
    options.window_days = a.window;
    options.warm_start = !a.no_warm_start;
    options.mlp.seed = a.seed;
    options.mlp.epochs = a.epochs as usize;
    let dates = a.dates.apply(default_verification_dates(&data, a.window));
    if dates.is_empty() {
        let earliest = windcal::pipeline::earliest_full_window_date(&data, a.window);
        bail!(windcal::Error::InsufficientData(match earliest {
            Some(d) => format!(
                "no date in the selection has a full {}-day training window; the earliest usable date is {d}",
                a.window
            ),
            None => "dataset is empty".into(),
        }));
    }
    options.dates = Some(dates);
    let out = train(&data, &options)?;

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let store_path = a.out.join("model_store.jsonl");
    write_atomic(&store_path, |w| Ok(out.store.write_to(w)?))?;
    let summary_path = a.out.join("train_summary.csv");
    write_table(&summary_path, &out.summary)?;
    manifest.output(&store_path)?;
    manifest.output(&summary_path)?;
    if !out.skipped.is_empty() {
        let skipped_path = a.out.join("skipped.txt");
        write_atomic(&skipped_path, |w| {
            for s in &out.skipped {
                writeln!(w, "{s}")?;
            }
            Ok(())
        })?;
        manifest.output(&skipped_path)?;
    }
    manifest.write_to_dir(&a.out)?;
    let mean = out.summary.iter().map(|s| s.train_crps).sum::<f64>() / out.summary.len().max(1) as f64;
    eprintln!(
        "{}: {} windows fitted, {} skipped, mean training CRPS {mean:.4}",
        a.model,
        out.summary.len(),
        out.skipped.len()
    );
    Ok(ExitCode::SUCCESS)
}

fn store_dates(store: &ModelStore) -> Vec<NaiveDate> {
    let mut dates: Vec<NaiveDate> = match &store.records {
        StoreRecords::Emos(r) => r.iter().map(|r| r.date).collect(),
        StoreRecords::Mlp(r) => r.iter().map(|r| r.date).collect(),
    };
    dates.sort();
    dates.dedup();
    dates
}

fn predict_cmd(a: PredictArgs) -> Result<ExitCode> {
    let spec = interval(a.level)?;
    let mut manifest = Manifest::start("predict", &a, None);
    manifest.input(&a.store)?;
    manifest.input(&a.data)?;
    let store = ModelStore::load(&a.store).with_context(|| format!("reading {}", a.store.display()))?;
    let data = load(&a.data)?;
    let dates = a.dates.apply(store_dates(&store));
    let (forecasts, missing) = predict(&store, &data, &dates)?;
    let rows = forecast_rows(&forecasts, spec)?;

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let table_path = a.out.join("forecasts.csv");
    write_atomic(&table_path, |w| Ok(write_forecast_table(&rows, spec, w)?))?;
    manifest.output(&table_path)?;
    if !missing.is_empty() {
        let missing_path = a.out.join("missing.csv");
        write_table(&missing_path, &missing)?;
        manifest.output(&missing_path)?;
    }
    manifest.write_to_dir(&a.out)?;
    eprintln!("{}: {} forecasts, {} cases without a model", store.model(), rows.len(), missing.len());
    if missing.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("partial output: missing keys listed in {}", a.out.join("missing.csv").display());
        Ok(ExitCode::from(EXIT_DATA))
    }
}

fn report_file_name(model: &str) -> String {
    let safe: String = model
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("report_{safe}.json")
}

fn verify_cmd(a: VerifyArgs) -> Result<ExitCode> {
    let spec = interval(a.level)?;
    let mut manifest = Manifest::start("verify", &a, None);
    manifest.input(&a.data)?;
    let data = load(&a.data)?;
    let mut models = Vec::new();
    for arg in &a.forecasts {
        let (name, path) = match arg.split_once('=') {
            Some((n, p)) => (n.to_string(), PathBuf::from(p)),
            None => {
                let p = PathBuf::from(arg);
                let name = p
                    .parent()
                    .and_then(|d| d.file_name())
                    .or_else(|| p.file_stem())
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| arg.clone());
                (name, p)
            }
        };
        if name == windcal::pipeline::RAW_MODEL || models.iter().any(|(n, _)| *n == name) {
            return Err(UsageError(format!("duplicate or reserved model name `{name}`")).into());
        }
        manifest.input(&path)?;
        let file = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
        let table = read_forecast_table(file).with_context(|| format!("reading {}", path.display()))?;
        models.push((name, table.rows));
    }
    let options = ReportOptions {
        interval: spec,
        lead_groups: default_lead_groups(),
        pit_bins: a.pit_bins,
    };
    let reports = verify(&models, &data, &options)?;

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for r in &reports {
        let path = a.out.join(report_file_name(&r.model));
        write_atomic(&path, |w| {
            serde_json::to_writer_pretty(&mut *w, r)?;
            writeln!(w)?;
            Ok(())
        })?;
        manifest.output(&path)?;
    }
    let overall = overall_table(&reports);
    let overall_path = a.out.join("overall.csv");
    write_table(&overall_path, &overall)?;
    manifest.output(&overall_path)?;
    manifest.write_to_dir(&a.out)?;
    for r in &overall {
        eprintln!(
            "{:>10}  n {}  crps {:.4}  crpss {:+.4}  mae {:.4}  rmse {:.4}  coverage {:.4}",
            r.model,
            r.n_cases,
            r.mean_crps,
            r.crpss.unwrap_or(f64::NAN),
            r.mae,
            r.rmse,
            r.coverage
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn report_cmd(a: ReportArgs) -> Result<ExitCode> {
    let mut manifest = Manifest::start("report", &a, None);
    let mut reports = Vec::new();
    for path in &a.reports {
        manifest.input(path)?;
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let report: VerificationReport = serde_json::from_str(&text)
            .map_err(|e| windcal::Error::Schema(format!("{}: not a verification report ({e})", path.display())))?;
        reports.push(report);
    }
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let tables: [(&str, Box<dyn Fn(&Path) -> Result<()>>); 4] = [
        ("metrics_long.csv", Box::new(|p: &Path| write_table(p, &metrics_long(&reports)))),
        ("pit_long.csv", Box::new(|p: &Path| write_table(p, &pit_long(&reports)))),
        ("rank_long.csv", Box::new(|p: &Path| write_table(p, &rank_long(&reports)))),
        ("overall.csv", Box::new(|p: &Path| write_table(p, &overall_table(&reports)))),
    ];
    for (name, write) in &tables {
        let path = a.out.join(name);
        write(&path)?;
        manifest.output(&path)?;
    }
    manifest.write_to_dir(&a.out)?;
    eprintln!("wrote tables for {} reports to {}", reports.len(), a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn sweep_cmd(a: SweepArgs) -> Result<ExitCode> {
    if a.min_window > a.max_window {
        return Err(UsageError("--min-window must not exceed --max-window".into()).into());
    }
    let mut manifest = Manifest::start("sweep-window", &a, Some(a.seed));
    manifest.input(&a.data)?;
    let data = load(&a.data)?;
    let mut options = TrainOptions::new(a.model);
    if a.model != ModelKind::TnMlp {
        options.scope = a.scope;
    }
    options.mlp.seed = a.seed;
    let windows: Vec<u32> = (a.min_window..=a.max_window).step_by(a.step as usize).collect();
    let rows = sweep_window(&data, &options, &windows)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let path = a.out.join("sweep.csv");
    write_table(&path, &rows)?;
    manifest.output(&path)?;
    manifest.write_to_dir(&a.out)?;
    for r in &rows {
        eprintln!("window {:>3}: crps {:.4}  mae {:.4}", r.window_days, r.mean_crps, r.mae);
    }
    Ok(ExitCode::SUCCESS)
}
