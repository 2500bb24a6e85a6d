//! End-to-end workflow: train a model over rolling windows, predict from a
//! stored model, write forecast tables, verify against observations and
//! flatten reports into long tables.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::io::{BufRead, BufReader, Read, Write};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dists::{Family, PredictiveDistribution};
use crate::emos::{rolling_train_predict, CaseForecast, EmosTrainingConfig, ScopeKind, DEFAULT_WINDOW_DAYS};
use crate::ensemble_data::{Dataset, ForecastCase};
use crate::error::{Error, Result};
use crate::mlp::{mlp_features, rolling_train_predict_mlp, LeadTimeGroup, MlpTrainConfig};
use crate::optim::NelderMeadOptions;
use crate::scoring::{
    case_seed, central_interval, end_bin_excess, CaseScore, IntervalSpec, ReportOptions, VerificationReport,
};
use crate::store::{EmosRecord, MlpRecord, ModelKind, ModelStore, StoreRecords};

/// Name of the raw-ensemble reference in verification output.
pub const RAW_MODEL: &str = "raw";

pub const FORECAST_COLUMNS: [&str; 11] = [
    "station",
    "init_date",
    "lead_time_index",
    "family",
    "param1",
    "param2",
    "param3",
    "median",
    "mean",
    "lower",
    "upper",
];

/// Per-lead-time metrics written by [`metrics_long`].
pub const METRICS: [&str; 6] = ["mean_crps", "crpss", "mae", "rmse", "coverage", "width"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub model: ModelKind,
    /// Ignored for the network, which is always regional.
    pub scope: ScopeKind,
    pub window_days: u32,
    /// Dates to fit; all dates with a full window when `None`.
    pub dates: Option<Vec<NaiveDate>>,
    pub warm_start: bool,
    pub optimizer: NelderMeadOptions,
    pub mlp: MlpTrainConfig,
}

impl TrainOptions {
    pub fn new(model: ModelKind) -> Self {
        Self {
            model,
            scope: if model == ModelKind::TnMlp {
                ScopeKind::Regional
            } else {
                ScopeKind::Local
            },
            window_days: DEFAULT_WINDOW_DAYS,
            dates: None,
            warm_start: true,
            optimizer: NelderMeadOptions::default(),
            mlp: MlpTrainConfig::default(),
        }
    }
}

/// Dates whose preceding `window_days` days all lie inside the dataset.
pub fn default_verification_dates(dataset: &Dataset, window_days: u32) -> Vec<NaiveDate> {
    let Some(first) = earliest_full_window_date(dataset, window_days) else {
        return Vec::new();
    };
    dataset.dates().iter().copied().filter(|d| *d >= first).collect()
}

/// First date preceded by a complete window of `window_days` days.
pub fn earliest_full_window_date(dataset: &Dataset, window_days: u32) -> Option<NaiveDate> {
    let first = *dataset.dates().first()?;
    first.checked_add_days(chrono::Days::new(u64::from(window_days)))
}

/// One line of the training summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSummary {
    pub unit: String,
    pub date: NaiveDate,
    /// Lead time index for EMOS, lead-time group for the network.
    pub target: String,
    pub n_train: usize,
    pub initial_crps: f64,
    pub train_crps: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub store: ModelStore,
    pub forecasts: Vec<CaseForecast>,
    pub summary: Vec<WindowSummary>,
    pub skipped: Vec<String>,
}

/// Fit `options.model` for every requested date and return the store plus
/// the forecasts for those dates.
pub fn train(dataset: &Dataset, options: &TrainOptions) -> Result<TrainOutput> {
    if options.window_days == 0 {
        return Err(Error::invalid("window must be at least 1 day"));
    }
    let dates = match &options.dates {
        Some(d) => d.clone(),
        None => default_verification_dates(dataset, options.window_days),
    };
    let out = match options.model.emos_family() {
        Some(family) => {
            let config = EmosTrainingConfig {
                family,
                window_days: options.window_days,
                scope: options.scope,
                warm_start: options.warm_start,
                optimizer: options.optimizer,
            };
            let r = rolling_train_predict(dataset, &dates, &config)?;
            let summary = r
                .fits
                .iter()
                .map(|f| WindowSummary {
                    unit: f.unit.clone(),
                    date: f.date,
                    target: f.lead_time_index.to_string(),
                    n_train: f.n_train,
                    initial_crps: f.initial_crps,
                    train_crps: f.train_crps,
                })
                .collect();
            let records = r.fits.iter().map(|f| EmosRecord::from_fit(options.scope, f)).collect();
            TrainOutput {
                store: ModelStore::emos(family, options.scope, options.window_days, records),
                forecasts: r.forecasts,
                summary,
                skipped: r
                    .skipped
                    .iter()
                    .map(|s| format!("{} {} lead {}: {}", s.unit, s.date, s.lead_time_index, s.reason))
                    .collect(),
            }
        }
        None => {
            let r = rolling_train_predict_mlp(dataset, &dates, options.window_days, &options.mlp)?;
            let summary = r
                .models
                .iter()
                .map(|m| WindowSummary {
                    unit: "regional".into(),
                    date: m.date,
                    target: m.group.to_string(),
                    n_train: m.n_train,
                    initial_crps: m.initial_crps,
                    train_crps: m.train_crps,
                })
                .collect();
            let records = r.models.iter().map(MlpRecord::from_window).collect();
            TrainOutput {
                store: ModelStore::mlp(options.window_days, records),
                forecasts: r.forecasts,
                summary,
                skipped: r
                    .skipped
                    .iter()
                    .map(|(d, g, reason)| format!("regional {d} {g}: {reason}"))
                    .collect(),
            }
        }
    };
    if out.store.is_empty() && !dates.is_empty() {
        let hint = earliest_full_window_date(dataset, options.window_days)
            .map(|d| format!("; the earliest date with a full {}-day window is {d}", options.window_days))
            .unwrap_or_default();
        return Err(Error::InsufficientData(format!(
            "no training window could be fitted for the requested dates{hint}"
        )));
    }
    Ok(out)
}

/// A case the store has no model for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MissingKey {
    pub station: String,
    pub init_date: NaiveDate,
    pub lead_time_index: u16,
    pub reason: String,
}

/// Forecast every case initialized on `dates` with the stored model.
pub fn predict(store: &ModelStore, dataset: &Dataset, dates: &[NaiveDate]) -> Result<(Vec<CaseForecast>, Vec<MissingKey>)> {
    let wanted: BTreeSet<NaiveDate> = dates.iter().copied().collect();
    let cases: Vec<&ForecastCase> = dataset.cases().iter().filter(|c| wanted.contains(&c.init_date)).collect();
    let results: Vec<std::result::Result<CaseForecast, MissingKey>> = match &store.records {
        StoreRecords::Emos(_) => {
            let index = store.emos_index()?;
            let scope = store.header.scope.unwrap_or(ScopeKind::Local);
            cases
                .par_iter()
                .map(|c| {
                    let unit = match scope {
                        ScopeKind::Local => c.station.clone(),
                        ScopeKind::Regional => "regional".to_string(),
                    };
                    let key = (unit, c.init_date, c.lead_time_index);
                    let Some(coefs) = index.get(&key) else {
                        return Ok(Err(missing(c, format!("no coefficients for unit {}", key.0))));
                    };
                    let d = coefs.link(&c.stats()).map_err(|e| {
                        Error::NumericalFailure(format!("{} {} lead {}: {e}", key.0, c.init_date, c.lead_time_index))
                    })?;
                    Ok(Ok(forecast(c, d)))
                })
                .collect::<Result<Vec<_>>>()?
        }
        StoreRecords::Mlp(_) => {
            let index = store.mlp_index()?;
            cases
                .par_iter()
                .map(|c| {
                    let Some(group) = LeadTimeGroup::for_lead(c.lead_time_index) else {
                        return Ok(Err(missing(c, "lead time outside both groups".into())));
                    };
                    let Some(model) = index.get(&(c.init_date, group)) else {
                        return Ok(Err(missing(c, format!("no {group} network"))));
                    };
                    let d = model.forward(&mlp_features(c)).map_err(|e| {
                        Error::NumericalFailure(format!("{} {} lead {}: {e}", c.station, c.init_date, c.lead_time_index))
                    })?;
                    Ok(Ok(forecast(c, d.into())))
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    let mut forecasts = Vec::new();
    let mut missing_keys = Vec::new();
    for r in results {
        match r {
            Ok(f) => forecasts.push(f),
            Err(m) => missing_keys.push(m),
        }
    }
    Ok((forecasts, missing_keys))
}

fn forecast(c: &ForecastCase, distribution: PredictiveDistribution) -> CaseForecast {
    CaseForecast {
        station: c.station.clone(),
        init_date: c.init_date,
        lead_time_index: c.lead_time_index,
        distribution,
    }
}

fn missing(c: &ForecastCase, reason: String) -> MissingKey {
    MissingKey {
        station: c.station.clone(),
        init_date: c.init_date,
        lead_time_index: c.lead_time_index,
        reason,
    }
}

/// One row of a forecast table.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastRow {
    pub station: String,
    pub init_date: NaiveDate,
    pub lead_time_index: u16,
    pub distribution: PredictiveDistribution,
    pub median: f64,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

impl ForecastRow {
    pub fn from_forecast(f: &CaseForecast, interval: IntervalSpec) -> Result<Self> {
        let (lower, upper) = central_interval(&f.distribution, interval)?;
        Ok(Self {
            station: f.station.clone(),
            init_date: f.init_date,
            lead_time_index: f.lead_time_index,
            distribution: f.distribution,
            median: f.distribution.median(),
            mean: f.distribution.mean(),
            lower,
            upper,
        })
    }
}

pub fn forecast_rows(forecasts: &[CaseForecast], interval: IntervalSpec) -> Result<Vec<ForecastRow>> {
    forecasts.par_iter().map(|f| ForecastRow::from_forecast(f, interval)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastTable {
    pub interval_level: Option<f64>,
    pub rows: Vec<ForecastRow>,
}

/// Write a forecast table: a `# interval_level=` comment line, the header and
/// one row per case.
pub fn write_forecast_table(rows: &[ForecastRow], interval: IntervalSpec, mut w: impl Write) -> Result<()> {
    writeln!(w, "# interval_level={:.6}", interval.level()).map_err(|e| Error::io("<forecast table>", e))?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(FORECAST_COLUMNS)?;
    for r in rows {
        let p = r.distribution.params();
        let param = |i: usize| p.get(i).map(|v| format!("{v}")).unwrap_or_default();
        csv.write_record([
            r.station.clone(),
            r.init_date.to_string(),
            r.lead_time_index.to_string(),
            r.distribution.family().to_string(),
            param(0),
            param(1),
            param(2),
            format!("{}", r.median),
            format!("{}", r.mean),
            format!("{}", r.lower),
            format!("{}", r.upper),
        ])?;
    }
    csv.flush().map_err(|e| Error::io("<forecast table>", e))?;
    Ok(())
}

pub fn read_forecast_table(r: impl Read) -> Result<ForecastTable> {
    let mut reader = BufReader::new(r);
    let mut first = String::new();
    reader
        .read_line(&mut first)
        .map_err(|e| Error::io("<forecast table>", e))?;
    let (interval_level, header_offset, rest): (Option<f64>, u64, Box<dyn Read>) =
        if let Some(comment) = first.trim_end().strip_prefix('#') {
            let level = comment
                .trim()
                .strip_prefix("interval_level=")
                .and_then(|v| v.parse().ok());
            (level, 1, Box::new(reader))
        } else {
            (None, 0, Box::new(std::io::Cursor::new(first.into_bytes()).chain(reader)))
        };
    let mut csv = csv::ReaderBuilder::new().has_headers(true).from_reader(rest);
    let header = csv.headers()?.clone();
    if header.iter().ne(FORECAST_COLUMNS) {
        return Err(Error::Schema(format!(
            "forecast table header must be `{}`",
            FORECAST_COLUMNS.join(",")
        )));
    }
    let mut rows = Vec::new();
    for (i, rec) in csv.records().enumerate() {
        let line = header_offset + i as u64 + 2;
        let rec = rec?;
        let bad = |message: String| Error::Parse { line, message };
        let num = |idx: usize| -> Result<f64> {
            rec[idx]
                .parse::<f64>()
                .map_err(|_| bad(format!("column {} is not a number: `{}`", FORECAST_COLUMNS[idx], &rec[idx])))
        };
        let family: Family = rec[3].parse().map_err(|e: Error| bad(e.to_string()))?;
        let mut params = vec![num(4)?, num(5)?];
        if family == Family::Tgev {
            params.push(num(6)?);
        }
        rows.push(ForecastRow {
            station: rec[0].to_string(),
            init_date: rec[1]
                .parse()
                .map_err(|_| bad(format!("bad init_date `{}`", &rec[1])))?,
            lead_time_index: rec[2]
                .parse()
                .map_err(|_| bad(format!("bad lead_time_index `{}`", &rec[2])))?,
            distribution: PredictiveDistribution::from_params(family, &params).map_err(|e| bad(e.to_string()))?,
            median: num(7)?,
            mean: num(8)?,
            lower: num(9)?,
            upper: num(10)?,
        });
    }
    Ok(ForecastTable { interval_level, rows })
}

type CaseKey = (String, NaiveDate, u16);

/// Score the raw ensemble and every model over the cases all of them cover
/// and that have an observation. The raw report comes first; skill scores
/// are relative to it.
pub fn verify(
    models: &[(String, Vec<ForecastRow>)],
    dataset: &Dataset,
    options: &ReportOptions,
) -> Result<Vec<VerificationReport>> {
    let mut common: HashSet<CaseKey> = dataset
        .cases()
        .iter()
        .filter(|c| c.observation.is_some())
        .map(|c| (c.station.clone(), c.init_date, c.lead_time_index))
        .collect();
    let mut lookups: Vec<HashMap<CaseKey, &ForecastRow>> = Vec::new();
    for (_, rows) in models {
        let map: HashMap<CaseKey, &ForecastRow> = rows
            .iter()
            .map(|r| ((r.station.clone(), r.init_date, r.lead_time_index), r))
            .collect();
        common.retain(|k| map.contains_key(k));
        lookups.push(map);
    }
    if common.is_empty() {
        return Err(Error::InsufficientData(
            "forecasts and observations share no cases".into(),
        ));
    }
    let cases: Vec<&ForecastCase> = dataset
        .cases()
        .iter()
        .filter(|c| common.contains(&(c.station.clone(), c.init_date, c.lead_time_index)))
        .collect();

    let raw_scores: Vec<CaseScore> = cases
        .par_iter()
        .map(|c| {
            let seed = case_seed(&c.station, &c.init_date.to_string(), c.lead_time_index);
            CaseScore::from_ensemble(&c.members, c.lead_time_index, c.observation.expect("filtered"), seed)
        })
        .collect::<Result<_>>()?;
    let raw_alone = VerificationReport::build(RAW_MODEL, &raw_scores, None, options)?;
    let raw = VerificationReport::build(RAW_MODEL, &raw_scores, Some(&raw_alone), options)?;

    let mut reports = vec![raw];
    for ((name, _), lookup) in models.iter().zip(&lookups) {
        let scores: Vec<CaseScore> = cases
            .par_iter()
            .map(|c| {
                let row = lookup[&(c.station.clone(), c.init_date, c.lead_time_index)];
                CaseScore::from_distribution(
                    &row.distribution,
                    c.lead_time_index,
                    c.observation.expect("filtered"),
                    options.interval,
                )
            })
            .collect::<Result<_>>()?;
        reports.push(VerificationReport::build(name, &scores, Some(&raw_alone), options)?);
    }
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub model: String,
    pub lead_time: u16,
    pub metric: String,
    pub value: f64,
}

/// Per-lead-time scores in long format; a missing skill score is NaN.
pub fn metrics_long(reports: &[VerificationReport]) -> Vec<MetricRow> {
    let mut rows = Vec::new();
    for r in reports {
        for l in &r.per_lead {
            let s = &l.scores;
            let values = [
                s.mean_crps,
                s.crpss.unwrap_or(f64::NAN),
                s.mae,
                s.rmse,
                s.coverage,
                s.mean_width,
            ];
            for (metric, value) in METRICS.iter().zip(values) {
                rows.push(MetricRow {
                    model: r.model.clone(),
                    lead_time: l.lead_time_index,
                    metric: metric.to_string(),
                    value,
                });
            }
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PitRow {
    pub model: String,
    pub group: String,
    pub bin: usize,
    pub count: usize,
}

pub fn pit_long(reports: &[VerificationReport]) -> Vec<PitRow> {
    reports
        .iter()
        .flat_map(|r| {
            r.pit_histograms.iter().flat_map(move |g| {
                g.counts.iter().enumerate().map(move |(bin, &count)| PitRow {
                    model: r.model.clone(),
                    group: g.group.clone(),
                    bin: bin + 1,
                    count,
                })
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub model: String,
    pub bin: usize,
    pub count: usize,
}

pub fn rank_long(reports: &[VerificationReport]) -> Vec<RankRow> {
    reports
        .iter()
        .filter_map(|r| r.rank_histogram.as_ref().map(|h| (r, h)))
        .flat_map(|(r, h)| {
            h.iter().enumerate().map(move |(bin, &count)| RankRow {
                model: r.model.clone(),
                bin: bin + 1,
                count,
            })
        })
        .collect()
}

/// Pooled scores of one model, one row per report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverallRow {
    pub model: String,
    pub n_cases: usize,
    pub mean_crps: f64,
    pub crpss: Option<f64>,
    pub mae: f64,
    pub rmse: f64,
    pub coverage: f64,
    pub width: f64,
    pub ks_statistic: Option<f64>,
    pub end_bin_excess: Option<f64>,
}

pub fn overall_table(reports: &[VerificationReport]) -> Vec<OverallRow> {
    reports
        .iter()
        .map(|r| OverallRow {
            model: r.model.clone(),
            n_cases: r.overall.n_cases,
            mean_crps: r.overall.mean_crps,
            crpss: r.overall.crpss,
            mae: r.overall.mae,
            rmse: r.overall.rmse,
            coverage: r.overall.coverage,
            width: r.overall.mean_width,
            ks_statistic: r.ks_statistic,
            end_bin_excess: r.calibration_histogram().map(|h| end_bin_excess(&h)),
        })
        .collect()
}

/// Serialize rows with a header line.
pub fn write_rows<T: Serialize>(rows: &[T], w: impl Write) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    for r in rows {
        csv.serialize(r)?;
    }
    csv.flush().map_err(|e| Error::io("<table>", e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub window_days: u32,
    pub n_cases: usize,
    pub mean_crps: f64,
    pub mae: f64,
}

/// Retrain `options.model` for each window length and score it on the dates
/// that every window can reach, restricted to cases all runs forecast.
pub fn sweep_window(dataset: &Dataset, options: &TrainOptions, windows: &[u32]) -> Result<Vec<SweepRow>> {
    let longest = *windows
        .iter()
        .max()
        .ok_or_else(|| Error::invalid("at least one window length is required"))?;
    if windows.contains(&0) {
        return Err(Error::invalid("window lengths must be positive"));
    }
    let dates = default_verification_dates(dataset, longest);
    if dates.is_empty() {
        return Err(Error::InsufficientData(format!(
            "dataset is too short for a {longest}-day window"
        )));
    }
    let mut runs = Vec::new();
    for &w in windows {
        let opts = TrainOptions {
            window_days: w,
            dates: Some(dates.clone()),
            ..options.clone()
        };
        let out = train(dataset, &opts)?;
        log::info!("window {w}: {} forecasts", out.forecasts.len());
        runs.push((w, out.forecasts));
    }
    let mut common: Option<HashSet<CaseKey>> = None;
    for (_, f) in &runs {
        let keys: HashSet<CaseKey> = f
            .iter()
            .map(|c| (c.station.clone(), c.init_date, c.lead_time_index))
            .collect();
        common = Some(match common {
            None => keys,
            Some(c) => c.intersection(&keys).cloned().collect(),
        });
    }
    let common = common.unwrap_or_default();
    runs.iter()
        .map(|(w, forecasts)| {
            let scored: Vec<(f64, f64)> = forecasts
                .par_iter()
                .filter(|f| common.contains(&(f.station.clone(), f.init_date, f.lead_time_index)))
                .filter_map(|f| {
                    let y = dataset.get(&f.station, f.init_date, f.lead_time_index)?.observation?;
                    Some((f, y))
                })
                .map(|(f, y)| Ok((f.distribution.crps(y)?, (f.distribution.median() - y).abs())))
                .collect::<Result<_>>()?;
            let n = scored.len();
            if n == 0 {
                return Err(Error::InsufficientData("no common verification cases".into()));
            }
            Ok(SweepRow {
                window_days: *w,
                n_cases: n,
                mean_crps: scored.iter().map(|s| s.0).sum::<f64>() / n as f64,
                mae: scored.iter().map(|s| s.1).sum::<f64>() / n as f64,
            })
        })
        .collect()
}
