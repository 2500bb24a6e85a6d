//! Forecast cases, ensemble summary statistics, CSV storage, rolling training
//! windows and a synthetic station dataset generator.

use std::collections::{BTreeSet, HashMap};
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::ENSEMBLE_SIZE;

/// Forecast lead times per initialization (48 h in 15-minute steps).
pub const MAX_LEAD_TIME: u16 = 192;
const STEPS_PER_DAY: usize = 96;

pub const CSV_HEADER: [&str; 15] = [
    "station",
    "init_date",
    "lead_time_index",
    "obs",
    "f_ctrl",
    "f_ens_01",
    "f_ens_02",
    "f_ens_03",
    "f_ens_04",
    "f_ens_05",
    "f_ens_06",
    "f_ens_07",
    "f_ens_08",
    "f_ens_09",
    "f_ens_10",
];

/// One ensemble forecast with its (possibly missing) verifying observation.
/// `members[0]` is the control run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastCase {
    pub station: String,
    pub init_date: NaiveDate,
    pub lead_time_index: u16,
    pub members: [f64; ENSEMBLE_SIZE],
    pub observation: Option<f64>,
}

impl ForecastCase {
    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_LEAD_TIME).contains(&self.lead_time_index) {
            return Err(Error::Integrity(format!(
                "lead_time_index {} outside 1..={MAX_LEAD_TIME}",
                self.lead_time_index
            )));
        }
        if self.members.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(Error::Integrity(format!(
                "{} {} lead {}: members must be finite and nonnegative",
                self.station, self.init_date, self.lead_time_index
            )));
        }
        if let Some(o) = self.observation {
            if !o.is_finite() || o < 0.0 {
                return Err(Error::Integrity(format!(
                    "{} {} lead {}: observation {o} must be finite and nonnegative",
                    self.station, self.init_date, self.lead_time_index
                )));
            }
        }
        Ok(())
    }

    pub fn stats(&self) -> EnsembleStats {
        EnsembleStats::from_members(&self.members)
    }
}

/// Summary statistics of an 11-member ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub f_ctrl: f64,
    /// Mean of the 10 exchangeable members.
    pub mean_ens: f64,
    /// Mean of all 11 members.
    pub mean_all: f64,
    /// Variance with divisor 10.
    pub s2: f64,
    /// Mean absolute difference with divisor 11².
    pub md: f64,
    pub sd: f64,
}

impl EnsembleStats {
    pub fn from_members(members: &[f64; ENSEMBLE_SIZE]) -> Self {
        let k = ENSEMBLE_SIZE as f64;
        let mean_all = members.iter().sum::<f64>() / k;
        let mean_ens = members[1..].iter().sum::<f64>() / (k - 1.0);
        let s2 = members.iter().map(|f| (f - mean_all).powi(2)).sum::<f64>() / (k - 1.0);
        let mut sorted = *members;
        sorted.sort_by(|a, b| a.total_cmp(b));
        // ΣΣ|f_k - f_l| = 2 Σ_j f_(j) (2j - K - 1)
        let pair_sum: f64 = sorted
            .iter()
            .enumerate()
            .map(|(j, f)| f * (2.0 * (j as f64 + 1.0) - k - 1.0))
            .sum();
        Self {
            f_ctrl: members[0],
            mean_ens,
            mean_all,
            s2,
            md: (2.0 * pair_sum / (k * k)).max(0.0),
            sd: s2.sqrt(),
        }
    }
}

pub fn ensemble_stats(case: &ForecastCase) -> EnsembleStats {
    case.stats()
}

/// Which stations contribute to a training window.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scope {
    Local(String),
    Regional,
}

impl Scope {
    /// Station identifier, or `"regional"`.
    pub fn unit(&self) -> &str {
        match self {
            Scope::Local(s) => s,
            Scope::Regional => "regional",
        }
    }
}

/// An immutable, validated collection of forecast cases ordered by
/// (init_date, station, lead_time_index).
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    cases: Vec<ForecastCase>,
    keys: HashMap<(String, NaiveDate, u16), usize>,
    by_date_lead: HashMap<(NaiveDate, u16), Vec<usize>>,
    stations: Vec<String>,
    dates: Vec<NaiveDate>,
}

impl Dataset {
    pub fn new(mut cases: Vec<ForecastCase>) -> Result<Self> {
        for c in &cases {
            c.validate()?;
        }
        cases.sort_by(|a, b| {
            (a.init_date, &a.station, a.lead_time_index).cmp(&(b.init_date, &b.station, b.lead_time_index))
        });
        let mut keys = HashMap::with_capacity(cases.len());
        let mut by_date_lead: HashMap<(NaiveDate, u16), Vec<usize>> = HashMap::new();
        let mut stations = BTreeSet::new();
        let mut dates = BTreeSet::new();
        for (i, c) in cases.iter().enumerate() {
            let key = (c.station.clone(), c.init_date, c.lead_time_index);
            if keys.insert(key, i).is_some() {
                return Err(Error::Integrity(format!(
                    "duplicate case {} {} lead {}",
                    c.station, c.init_date, c.lead_time_index
                )));
            }
            by_date_lead.entry((c.init_date, c.lead_time_index)).or_default().push(i);
            stations.insert(c.station.clone());
            dates.insert(c.init_date);
        }
        Ok(Self {
            cases,
            keys,
            by_date_lead,
            stations: stations.into_iter().collect(),
            dates: dates.into_iter().collect(),
        })
    }

    pub fn cases(&self) -> &[ForecastCase] {
        &self.cases
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    /// Sorted station identifiers.
    pub fn stations(&self) -> &[String] {
        &self.stations
    }

    /// Sorted distinct initialization dates.
    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    /// Sorted distinct lead times.
    pub fn lead_times(&self) -> Vec<u16> {
        let set: BTreeSet<u16> = self.by_date_lead.keys().map(|k| k.1).collect();
        set.into_iter().collect()
    }

    pub fn get(&self, station: &str, date: NaiveDate, lead: u16) -> Option<&ForecastCase> {
        self.keys
            .get(&(station.to_string(), date, lead))
            .map(|&i| &self.cases[i])
    }

    /// Cases initialized on `date` at `lead`, ordered by station.
    pub fn cases_at(&self, date: NaiveDate, lead: u16) -> impl Iterator<Item = &ForecastCase> {
        self.by_date_lead
            .get(&(date, lead))
            .into_iter()
            .flatten()
            .map(|&i| &self.cases[i])
    }

    /// Training cases for `target_date`: the given lead time, initializations
    /// in `[target - n_days, target - 1]`, observation present.
    pub fn rolling_window(
        &self,
        target_date: NaiveDate,
        lead_time_index: u16,
        n_days: u32,
        scope: &Scope,
    ) -> Result<Vec<&ForecastCase>> {
        if n_days == 0 {
            return Err(Error::invalid("window length must be at least one day"));
        }
        let mut out = Vec::new();
        for back in (1..=u64::from(n_days)).rev() {
            let Some(date) = target_date.checked_sub_days(Days::new(back)) else {
                continue;
            };
            for c in self.cases_at(date, lead_time_index) {
                if c.observation.is_none() {
                    continue;
                }
                if let Scope::Local(s) = scope {
                    if &c.station != s {
                        continue;
                    }
                }
                out.push(c);
            }
        }
        if out.is_empty() {
            return Err(Error::InsufficientData(format!(
                "no training cases for {} lead {lead_time_index} ({} days before {target_date})",
                scope.unit(),
                n_days
            )));
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(std::io::BufReader::new(file))
}

pub fn read_csv(reader: impl Read) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    if names != CSV_HEADER {
        return Err(Error::Schema(format!(
            "expected columns `{}`, found `{}`",
            CSV_HEADER.join(","),
            names.join(",")
        )));
    }
    let mut cases = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let parse_err = |message: String| Error::Parse { line, message };
        if record.len() != CSV_HEADER.len() {
            return Err(parse_err(format!(
                "expected {} fields, found {}",
                CSV_HEADER.len(),
                record.len()
            )));
        }
        let field = |i: usize| record[i].trim();
        let number = |i: usize| -> Result<f64> {
            field(i)
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(format!("{}: invalid number `{}`", CSV_HEADER[i], field(i))))
        };
        let station = field(0).to_string();
        if station.is_empty() {
            return Err(parse_err("empty station identifier".into()));
        }
        let init_date = NaiveDate::parse_from_str(field(1), "%Y-%m-%d")
            .map_err(|e| parse_err(format!("init_date `{}`: {e}", field(1))))?;
        let lead_time_index = field(2)
            .parse::<u16>()
            .map_err(|e| parse_err(format!("lead_time_index `{}`: {e}", field(2))))?;
        let observation = if field(3).is_empty() { None } else { Some(number(3)?) };
        let mut members = [0.0; ENSEMBLE_SIZE];
        for (k, m) in members.iter_mut().enumerate() {
            *m = number(4 + k)?;
        }
        let case = ForecastCase {
            station,
            init_date,
            lead_time_index,
            members,
            observation,
        };
        case.validate().map_err(|e| match e {
            Error::Integrity(m) => Error::Integrity(format!("line {line}: {m}")),
            other => other,
        })?;
        cases.push(case);
    }
    Dataset::new(cases)
}

pub fn write_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_csv_to(dataset, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes every value in shortest round-trip decimal form, so reloading is
/// bit-exact.
pub fn write_csv_to(dataset: &Dataset, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER)?;
    let mut row: Vec<String> = Vec::with_capacity(CSV_HEADER.len());
    for c in dataset.cases() {
        row.clear();
        row.push(c.station.clone());
        row.push(c.init_date.format("%Y-%m-%d").to_string());
        row.push(c.lead_time_index.to_string());
        row.push(c.observation.map_or_else(String::new, |o| o.to_string()));
        row.extend(c.members.iter().map(|m| m.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<csv output>", e))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

/// Parameters of the synthetic station generator.
///
/// A latent wind speed per station and 15-minute valid time combines a
/// station base speed, a diurnal cycle and a daily AR(1) anomaly
/// (interpolated linearly within the day). Each valid day draws a
/// predictability level `σ = obs_noise_sd + ensemble_spread_sd·|N(0,1)|`;
/// observations scatter around the truth with sd `σ` and members around
/// `truth + ensemble_bias` with sd `spread_deficiency_factor·σ`, so the
/// ensemble is underdispersive but its spread still tracks the error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_stations: usize,
    pub n_days: usize,
    /// Cycled when shorter than `n_stations`.
    pub station_base_speeds: Vec<f64>,
    pub diurnal_amplitude: f64,
    pub ar1_coefficient: f64,
    /// Stationary sd of the daily anomaly.
    pub anomaly_sd: f64,
    pub obs_noise_sd: f64,
    pub ensemble_spread_sd: f64,
    pub ensemble_bias: f64,
    pub spread_deficiency_factor: f64,
    pub start_date: NaiveDate,
    pub lead_times: u16,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_stations: 3,
            n_days: 120,
            station_base_speeds: vec![6.5, 7.5, 8.5],
            diurnal_amplitude: 1.5,
            ar1_coefficient: 0.7,
            anomaly_sd: 2.5,
            obs_noise_sd: 1.0,
            ensemble_spread_sd: 0.6,
            ensemble_bias: 0.3,
            spread_deficiency_factor: 0.5,
            start_date: NaiveDate::from_ymd_opt(2020, 5, 7).expect("valid date"),
            lead_times: MAX_LEAD_TIME,
            seed: 1,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(m.to_string()));
        if self.n_stations == 0 || self.n_days == 0 {
            return bad("n_stations and n_days must be positive");
        }
        if self.station_base_speeds.is_empty() || self.station_base_speeds.iter().any(|v| !v.is_finite()) {
            return bad("station_base_speeds must be nonempty and finite");
        }
        if !(1..=MAX_LEAD_TIME).contains(&self.lead_times) {
            return bad("lead_times must lie in 1..=192");
        }
        if !(self.ar1_coefficient.abs() < 1.0) {
            return bad("ar1_coefficient must lie in (-1, 1)");
        }
        for (name, v) in [
            ("obs_noise_sd", self.obs_noise_sd),
            ("ensemble_spread_sd", self.ensemble_spread_sd),
            ("anomaly_sd", self.anomaly_sd),
            ("diurnal_amplitude", self.diurnal_amplitude),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("{name} must be finite and nonnegative")));
            }
        }
        if !self.ensemble_bias.is_finite() {
            return bad("ensemble_bias must be finite");
        }
        if !(self.spread_deficiency_factor > 0.0 && self.spread_deficiency_factor < 1.0) {
            return bad("spread_deficiency_factor must lie in (0, 1)");
        }
        Ok(())
    }
}

fn quantize(v: f64) -> f64 {
    format!("{v:.8e}").parse().expect("formatted float parses")
}

pub fn synthetic_generate(config: &SyntheticConfig) -> Result<Dataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut normal = move || -> f64 { rng.sample(StandardNormal) };
    let lead_days = (usize::from(config.lead_times)).div_ceil(STEPS_PER_DAY);
    let valid_days = config.n_days + lead_days + 1;
    let steps = valid_days * STEPS_PER_DAY;
    let phi = config.ar1_coefficient;
    let innovation = config.anomaly_sd * (1.0 - phi * phi).sqrt();

    let mut cases = Vec::with_capacity(config.n_stations * config.n_days * usize::from(config.lead_times));
    for s in 0..config.n_stations {
        let station = format!("S{:02}", s + 1);
        let base = config.station_base_speeds[s % config.station_base_speeds.len()];
        let phase = 2.0 * PI * s as f64 / config.n_stations as f64;

        let mut anomaly = Vec::with_capacity(valid_days + 1);
        anomaly.push(config.anomaly_sd * normal());
        for d in 1..=valid_days {
            let next = phi * anomaly[d - 1] + innovation * normal();
            anomaly.push(next);
        }
        let sigma: Vec<f64> = (0..valid_days)
            .map(|_| config.obs_noise_sd + config.ensemble_spread_sd * normal().abs())
            .collect();
        let truth: Vec<f64> = (0..steps)
            .map(|q| {
                let day = q / STEPS_PER_DAY;
                let frac = (q % STEPS_PER_DAY) as f64 / STEPS_PER_DAY as f64;
                let anom = anomaly[day] + frac * (anomaly[day + 1] - anomaly[day]);
                let hour = 24.0 * frac;
                (base + config.diurnal_amplitude * (2.0 * PI * hour / 24.0 + phase).sin() + anom).max(0.0)
            })
            .collect();
        let obs: Vec<f64> = (0..steps)
            .map(|q| quantize((truth[q] + sigma[q / STEPS_PER_DAY] * normal()).max(0.0)))
            .collect();

        for d in 0..config.n_days {
            let init_date = config.start_date + Days::new(d as u64);
            for lead in 1..=config.lead_times {
                let q = d * STEPS_PER_DAY + usize::from(lead);
                let sd = config.spread_deficiency_factor * sigma[q / STEPS_PER_DAY];
                let centre = truth[q] + config.ensemble_bias;
                let mut members = [0.0; ENSEMBLE_SIZE];
                for m in members.iter_mut() {
                    *m = quantize((centre + sd * normal()).max(0.0));
                }
                cases.push(ForecastCase {
                    station: station.clone(),
                    init_date,
                    lead_time_index: lead,
                    members,
                    observation: Some(obs[q]),
                });
            }
        }
    }
    Dataset::new(cases)
}
