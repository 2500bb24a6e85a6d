//! EMOS regression models: link functions from ensemble statistics to the
//! truncated normal, log-normal and truncated GEV laws, CRPS-minimizing
//! coefficient estimation and the rolling train/predict driver.

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dists::{Family, LogNormalMV, PredictiveDistribution, Tgev, TruncNormal, SHAPE_MAX, SHAPE_MIN};
use crate::ensemble_data::{Dataset, EnsembleStats, Scope};
use crate::error::{Error, Result};
use crate::optim::{nelder_mead, NelderMeadOptions};

pub const SCALE_FLOOR: f64 = 1e-4;
pub const MEAN_FLOOR: f64 = 1e-4;
pub const VARIANCE_FLOOR: f64 = 1e-8;
pub const DEFAULT_WINDOW_DAYS: u32 = 51;
/// Initial simplex edge when warm-starting from the previous window.
pub const WARM_STEP: f64 = 0.1;
/// Bound on the raw TGEV shape of the alternative warm start; beyond it the
/// logistic is flat and the simplex cannot move the shape back.
pub const WARM_SHAPE_RAW_LIMIT: f64 = 3.0;

/// Truncated normal: `loc = a0 + a_ctrl² f_ctrl + a_ens² mean_ens`,
/// `scale² = b0² + b1² md`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TnCoefficients {
    pub a0: f64,
    pub a_ctrl: f64,
    pub a_ens: f64,
    pub b0: f64,
    pub b1: f64,
}

/// Log-normal by mean and variance: `m = α0 + α_ctrl² f_ctrl + α_ens² mean_ens`,
/// `v = β0² + β1² s2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LnCoefficients {
    pub alpha0: f64,
    pub alpha_ctrl: f64,
    pub alpha_ens: f64,
    pub beta0: f64,
    pub beta1: f64,
}

/// Truncated GEV: `loc = γ0 + γ_ctrl f_ctrl + γ_ens mean_ens`,
/// `scale = s0² + s1² mean_all`, `shape = shape_from_raw(xi_raw)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TgevCoefficients {
    pub gamma0: f64,
    pub gamma_ctrl: f64,
    pub gamma_ens: f64,
    pub s0: f64,
    pub s1: f64,
    pub xi_raw: f64,
}

impl Default for TnCoefficients {
    fn default() -> Self {
        Self {
            a0: 0.0,
            a_ctrl: 0.5f64.sqrt(),
            a_ens: 0.5f64.sqrt(),
            b0: 1.0,
            b1: 1.0,
        }
    }
}

impl Default for LnCoefficients {
    fn default() -> Self {
        Self {
            alpha0: 0.0,
            alpha_ctrl: 0.5f64.sqrt(),
            alpha_ens: 0.5f64.sqrt(),
            beta0: 1.0,
            beta1: 1.0,
        }
    }
}

impl Default for TgevCoefficients {
    fn default() -> Self {
        Self {
            gamma0: 0.0,
            gamma_ctrl: 0.5,
            gamma_ens: 0.5,
            s0: 1.0,
            s1: 0.1f64.sqrt(),
            xi_raw: 0.0,
        }
    }
}

/// Smooth bijection from the real line onto `(SHAPE_MIN, SHAPE_MAX)`.
pub fn shape_from_raw(xi_raw: f64) -> f64 {
    let logistic = 1.0 / (1.0 + (-xi_raw).exp());
    let width = SHAPE_MAX - SHAPE_MIN;
    // keep the image open even where the logistic saturates
    (SHAPE_MIN + width * logistic).clamp(SHAPE_MIN + 1e-12, SHAPE_MAX - 1e-12)
}

pub fn tn_link(c: &TnCoefficients, s: &EnsembleStats) -> Result<TruncNormal> {
    let loc = c.a0 + c.a_ctrl * c.a_ctrl * s.f_ctrl + c.a_ens * c.a_ens * s.mean_ens;
    let scale = (c.b0 * c.b0 + c.b1 * c.b1 * s.md).sqrt().max(SCALE_FLOOR);
    TruncNormal::new(loc, scale)
}

pub fn ln_link(c: &LnCoefficients, s: &EnsembleStats) -> Result<LogNormalMV> {
    let m = c.alpha0 + c.alpha_ctrl * c.alpha_ctrl * s.f_ctrl + c.alpha_ens * c.alpha_ens * s.mean_ens;
    let v = c.beta0 * c.beta0 + c.beta1 * c.beta1 * s.s2;
    LogNormalMV::new(m.max(MEAN_FLOOR), v.max(VARIANCE_FLOOR))
}

pub fn tgev_link(c: &TgevCoefficients, s: &EnsembleStats) -> Result<Tgev> {
    let loc = c.gamma0 + c.gamma_ctrl * s.f_ctrl + c.gamma_ens * s.mean_ens;
    let scale = (c.s0 * c.s0 + c.s1 * c.s1 * s.mean_all).max(SCALE_FLOOR);
    Tgev::new(loc, scale, shape_from_raw(c.xi_raw))
}

/// Coefficients of any of the three EMOS families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum EmosCoefficients {
    Tn(TnCoefficients),
    Ln(LnCoefficients),
    Tgev(TgevCoefficients),
}

impl EmosCoefficients {
    pub fn default_for(family: Family) -> Self {
        match family {
            Family::TruncNormal => EmosCoefficients::Tn(TnCoefficients::default()),
            Family::LogNormal => EmosCoefficients::Ln(LnCoefficients::default()),
            Family::Tgev => EmosCoefficients::Tgev(TgevCoefficients::default()),
        }
    }

    pub fn family(&self) -> Family {
        match self {
            EmosCoefficients::Tn(_) => Family::TruncNormal,
            EmosCoefficients::Ln(_) => Family::LogNormal,
            EmosCoefficients::Tgev(_) => Family::Tgev,
        }
    }

    pub fn n_params(family: Family) -> usize {
        match family {
            Family::TruncNormal | Family::LogNormal => 5,
            Family::Tgev => 6,
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        match *self {
            EmosCoefficients::Tn(c) => vec![c.a0, c.a_ctrl, c.a_ens, c.b0, c.b1],
            EmosCoefficients::Ln(c) => vec![c.alpha0, c.alpha_ctrl, c.alpha_ens, c.beta0, c.beta1],
            EmosCoefficients::Tgev(c) => vec![c.gamma0, c.gamma_ctrl, c.gamma_ens, c.s0, c.s1, c.xi_raw],
        }
    }

    pub fn from_slice(family: Family, v: &[f64]) -> Result<Self> {
        let n = Self::n_params(family);
        if v.len() != n {
            return Err(Error::invalid(format!("{family} EMOS has {n} coefficients, got {}", v.len())));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("coefficients must be finite"));
        }
        Ok(match family {
            Family::TruncNormal => EmosCoefficients::Tn(TnCoefficients {
                a0: v[0],
                a_ctrl: v[1],
                a_ens: v[2],
                b0: v[3],
                b1: v[4],
            }),
            Family::LogNormal => EmosCoefficients::Ln(LnCoefficients {
                alpha0: v[0],
                alpha_ctrl: v[1],
                alpha_ens: v[2],
                beta0: v[3],
                beta1: v[4],
            }),
            Family::Tgev => EmosCoefficients::Tgev(TgevCoefficients {
                gamma0: v[0],
                gamma_ctrl: v[1],
                gamma_ens: v[2],
                s0: v[3],
                s1: v[4],
                xi_raw: v[5],
            }),
        })
    }

    pub fn link(&self, s: &EnsembleStats) -> Result<PredictiveDistribution> {
        Ok(match self {
            EmosCoefficients::Tn(c) => tn_link(c, s)?.into(),
            EmosCoefficients::Ln(c) => ln_link(c, s)?.into(),
            EmosCoefficients::Tgev(c) => tgev_link(c, s)?.into(),
        })
    }
}

/// Mean CRPS of the linked distributions over `training`; `+inf` when any
/// link fails.
pub fn mean_crps(coefficients: &EmosCoefficients, training: &[(EnsembleStats, f64)]) -> f64 {
    let mut total = 0.0;
    for (s, y) in training {
        match coefficients.link(s) {
            Ok(d) => total += d.crps_unchecked(*y),
            Err(_) => return f64::INFINITY,
        }
    }
    total / training.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmosFit {
    pub coefficients: EmosCoefficients,
    pub train_crps: f64,
    pub initial_crps: f64,
    pub evaluations: usize,
    pub converged: bool,
}

/// The previous window's coefficients, or the same with a saturated TGEV
/// shape pulled back to `±WARM_SHAPE_RAW_LIMIT` when that scores better on
/// the new window.
fn warm_start_point(previous: EmosCoefficients, training: &[(EnsembleStats, f64)]) -> EmosCoefficients {
    let EmosCoefficients::Tgev(c) = previous else {
        return previous;
    };
    if c.xi_raw.abs() <= WARM_SHAPE_RAW_LIMIT {
        return previous;
    }
    let pulled = EmosCoefficients::Tgev(TgevCoefficients {
        xi_raw: c.xi_raw.clamp(-WARM_SHAPE_RAW_LIMIT, WARM_SHAPE_RAW_LIMIT),
        ..c
    });
    if mean_crps(&pulled, training) < mean_crps(&previous, training) {
        pulled
    } else {
        previous
    }
}

/// Minimize the mean CRPS over `training` with Nelder–Mead, starting from
/// `init` (or the family default).
pub fn fit_emos(
    family: Family,
    training: &[(EnsembleStats, f64)],
    init: Option<&EmosCoefficients>,
    options: &NelderMeadOptions,
) -> Result<EmosFit> {
    let p = EmosCoefficients::n_params(family);
    if training.len() < p + 1 {
        return Err(Error::InsufficientData(format!(
            "{family} EMOS needs at least {} training cases, got {}",
            p + 1,
            training.len()
        )));
    }
    let start = match init {
        Some(c) if c.family() != family => {
            return Err(Error::invalid(format!(
                "initial coefficients are {} but fitting {family}",
                c.family()
            )))
        }
        Some(c) => *c,
        None => EmosCoefficients::default_for(family),
    };
    let objective = |v: &[f64]| match EmosCoefficients::from_slice(family, v) {
        Ok(c) => mean_crps(&c, training),
        Err(_) => f64::INFINITY,
    };
    let x0 = start.to_vec();
    let initial_crps = objective(&x0);
    let min = nelder_mead(objective, &x0, options);
    if !min.value.is_finite() {
        return Err(Error::NumericalFailure(format!(
            "{family} EMOS objective not finite after {} evaluations (start {x0:?}, initial CRPS {initial_crps})",
            min.evaluations
        )));
    }
    Ok(EmosFit {
        coefficients: EmosCoefficients::from_slice(family, &min.x)?,
        train_crps: min.value,
        initial_crps,
        evaluations: min.evaluations,
        converged: min.converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScopeKind {
    Local,
    Regional,
}

impl std::fmt::Display for ScopeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ScopeKind::Local => "local",
            ScopeKind::Regional => "regional",
        })
    }
}

impl std::str::FromStr for ScopeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "local" => Ok(ScopeKind::Local),
            "regional" => Ok(ScopeKind::Regional),
            other => Err(Error::invalid(format!("unknown scope `{other}` (local|regional)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmosTrainingConfig {
    pub family: Family,
    pub window_days: u32,
    pub scope: ScopeKind,
    pub warm_start: bool,
    pub optimizer: NelderMeadOptions,
}

impl EmosTrainingConfig {
    pub fn new(family: Family) -> Self {
        Self {
            family,
            window_days: DEFAULT_WINDOW_DAYS,
            scope: ScopeKind::Local,
            warm_start: true,
            optimizer: NelderMeadOptions::default(),
        }
    }
}

/// A predictive distribution for one case.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseForecast {
    pub station: String,
    pub init_date: NaiveDate,
    pub lead_time_index: u16,
    pub distribution: PredictiveDistribution,
}

/// Coefficients fitted for one (scope unit, date, lead time).
#[derive(Debug, Clone, PartialEq)]
pub struct WindowFit {
    pub unit: String,
    pub date: NaiveDate,
    pub lead_time_index: u16,
    pub coefficients: EmosCoefficients,
    pub train_crps: f64,
    pub initial_crps: f64,
    pub n_train: usize,
    pub max_train_date: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedWindow {
    pub unit: String,
    pub date: NaiveDate,
    pub lead_time_index: u16,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct RollingOutput {
    pub forecasts: Vec<CaseForecast>,
    pub fits: Vec<WindowFit>,
    pub skipped: Vec<SkippedWindow>,
}

/// Training pairs `(stats, observation)` of a rolling window.
pub fn training_pairs(
    dataset: &Dataset,
    date: NaiveDate,
    lead: u16,
    window_days: u32,
    scope: &Scope,
) -> Result<(Vec<(EnsembleStats, f64)>, NaiveDate)> {
    let window = dataset.rolling_window(date, lead, window_days, scope)?;
    let max_date = window.iter().map(|c| c.init_date).max().expect("nonempty window");
    let pairs = window
        .iter()
        .map(|c| (c.stats(), c.observation.expect("window cases have observations")))
        .collect();
    Ok((pairs, max_date))
}

fn scopes(dataset: &Dataset, kind: ScopeKind) -> Vec<Scope> {
    match kind {
        ScopeKind::Local => dataset.stations().iter().cloned().map(Scope::Local).collect(),
        ScopeKind::Regional => vec![Scope::Regional],
    }
}

/// Fit one coefficient set per (scope unit, verification date, lead time) on
/// the preceding window and emit forecasts for the cases it covers. Windows
/// with too little data are reported in `skipped`.
pub fn rolling_train_predict(
    dataset: &Dataset,
    verification_dates: &[NaiveDate],
    config: &EmosTrainingConfig,
) -> Result<RollingOutput> {
    if config.window_days == 0 {
        return Err(Error::invalid("window_days must be at least 1"));
    }
    let mut dates = verification_dates.to_vec();
    dates.sort();
    dates.dedup();
    let tasks: Vec<(u16, Scope)> = dataset
        .lead_times()
        .into_iter()
        .flat_map(|lead| scopes(dataset, config.scope).into_iter().map(move |s| (lead, s)))
        .collect();

    let chains: Vec<Result<RollingOutput>> = tasks
        .par_iter()
        .map(|(lead, scope)| run_chain(dataset, &dates, *lead, scope, config))
        .collect();

    let mut out = RollingOutput::default();
    for chain in chains {
        let chain = chain?;
        out.forecasts.extend(chain.forecasts);
        out.fits.extend(chain.fits);
        out.skipped.extend(chain.skipped);
    }
    out.forecasts
        .sort_by(|a, b| (a.init_date, &a.station, a.lead_time_index).cmp(&(b.init_date, &b.station, b.lead_time_index)));
    out.fits
        .sort_by(|a, b| (a.date, &a.unit, a.lead_time_index).cmp(&(b.date, &b.unit, b.lead_time_index)));
    out.skipped
        .sort_by(|a, b| (a.date, &a.unit, a.lead_time_index).cmp(&(b.date, &b.unit, b.lead_time_index)));
    Ok(out)
}

fn run_chain(
    dataset: &Dataset,
    dates: &[NaiveDate],
    lead: u16,
    scope: &Scope,
    config: &EmosTrainingConfig,
) -> Result<RollingOutput> {
    let family = config.family;
    let mut out = RollingOutput::default();
    let mut previous: Option<EmosCoefficients> = None;
    for &date in dates {
        let targets: Vec<_> = dataset
            .cases_at(date, lead)
            .filter(|c| match scope {
                Scope::Local(s) => &c.station == s,
                Scope::Regional => true,
            })
            .collect();
        if targets.is_empty() {
            continue;
        }
        let skip = |reason: String| SkippedWindow {
            unit: scope.unit().to_string(),
            date,
            lead_time_index: lead,
            reason,
        };
        let (pairs, max_train_date) = match training_pairs(dataset, date, lead, config.window_days, scope) {
            Ok(p) => p,
            Err(Error::InsufficientData(m)) => {
                log::debug!("skipping window: {m}");
                out.skipped.push(skip(m));
                continue;
            }
            Err(e) => return Err(e),
        };
        let warm = config
            .warm_start
            .then_some(previous)
            .flatten()
            .map(|c| warm_start_point(c, &pairs));
        let mut options = config.optimizer;
        if warm.is_some() {
            options.initial_step = WARM_STEP;
            options.restart = false;
        }
        let fit = match fit_emos(family, &pairs, warm.as_ref(), &options) {
            Ok(f) => f,
            Err(Error::InsufficientData(m)) => {
                out.skipped.push(skip(m));
                continue;
            }
            Err(e) => return Err(e),
        };
        for c in targets {
            out.forecasts.push(CaseForecast {
                station: c.station.clone(),
                init_date: date,
                lead_time_index: lead,
                distribution: fit.coefficients.link(&c.stats())?,
            });
        }
        out.fits.push(WindowFit {
            unit: scope.unit().to_string(),
            date,
            lead_time_index: lead,
            coefficients: fit.coefficients,
            train_crps: fit.train_crps,
            initial_crps: fit.initial_crps,
            n_train: pairs.len(),
            max_train_date,
        });
        previous = Some(fit.coefficients);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble_data::{synthetic_generate, SyntheticConfig};

    fn stats(members: [f64; 11]) -> EnsembleStats {
        EnsembleStats::from_members(&members)
    }

    #[test]
    fn tn_link_examples() {
        let s = EnsembleStats {
            f_ctrl: 5.0,
            mean_ens: 3.0,
            mean_all: 3.2,
            s2: 1.0,
            md: 4.0,
            sd: 1.0,
        };
        let c = TnCoefficients {
            a0: 0.0,
            a_ctrl: 1.0,
            a_ens: 0.0,
            b0: 1.0,
            b1: 0.0,
        };
        let d = tn_link(&c, &s).unwrap();
        assert_eq!((d.loc(), d.scale()), (5.0, 1.0));
        let c = TnCoefficients {
            a0: 1.0,
            a_ctrl: 0.0,
            a_ens: 0.0,
            b0: 0.0,
            b1: 1.0,
        };
        let d = tn_link(&c, &s).unwrap();
        assert_eq!((d.loc(), d.scale()), (1.0, 2.0));
        let c = TnCoefficients {
            a0: 0.3,
            a_ctrl: 0.7,
            a_ens: -0.4,
            b0: 0.2,
            b1: 0.9,
        };
        let neg = TnCoefficients {
            a_ctrl: -0.7,
            a_ens: 0.4,
            b0: -0.2,
            b1: -0.9,
            ..c
        };
        assert_eq!(tn_link(&c, &s).unwrap(), tn_link(&neg, &s).unwrap());
    }

    #[test]
    fn ln_link_examples() {
        let s = stats(std::array::from_fn(|i| (i + 1) as f64));
        let c = LnCoefficients {
            alpha0: 2.0,
            alpha_ctrl: 0.0,
            alpha_ens: 0.0,
            beta0: 1.0,
            beta1: 0.0,
        };
        let d = ln_link(&c, &s).unwrap();
        assert_eq!((d.mean(), d.var()), (2.0, 1.0));
        let flat = stats([4.0; 11]);
        let c = LnCoefficients {
            alpha0: 1.0,
            alpha_ctrl: 1.0,
            alpha_ens: 1.0,
            beta0: 0.1,
            beta1: 3.0,
        };
        assert!((ln_link(&c, &flat).unwrap().var() - 0.01).abs() < 1e-15);
        let c = LnCoefficients {
            alpha0: 0.0,
            alpha_ctrl: 1.0,
            alpha_ens: 0.0,
            beta0: 1.0,
            beta1: 0.0,
        };
        assert_eq!(ln_link(&c, &s).unwrap().mean(), 1.0);
    }

    #[test]
    fn tgev_link_examples() {
        let s = EnsembleStats {
            f_ctrl: 6.0,
            mean_ens: 5.0,
            mean_all: 4.0,
            s2: 1.0,
            md: 1.0,
            sd: 1.0,
        };
        let c = TgevCoefficients {
            gamma0: 0.0,
            gamma_ctrl: 1.0,
            gamma_ens: 0.0,
            s0: 1.0,
            s1: 0.0,
            xi_raw: 0.0,
        };
        let d = tgev_link(&c, &s).unwrap();
        assert_eq!((d.loc(), d.scale()), (6.0, 1.0));
        assert!((d.shape() - 0.027_666_666_666_666_7).abs() < 1e-12);
        let neg = TgevCoefficients { gamma_ctrl: -1.0, ..c };
        assert_eq!(tgev_link(&neg, &s).unwrap().loc(), -6.0);
        let c = TgevCoefficients {
            s0: 0.0,
            s1: 1.0,
            ..c
        };
        assert_eq!(tgev_link(&c, &s).unwrap().scale(), 4.0);
        for raw in [-1e3, -30.0, 0.0, 30.0, 1e3] {
            let xi = shape_from_raw(raw);
            assert!(xi > SHAPE_MIN && xi < SHAPE_MAX);
        }
    }

    #[test]
    fn links_are_monotone_in_spread() {
        let tn = TnCoefficients::default();
        let ln = LnCoefficients::default();
        let narrow = stats([5.0, 5.1, 4.9, 5.0, 5.2, 4.8, 5.0, 5.0, 5.1, 4.9, 5.0]);
        let wide = stats([5.0, 6.1, 3.9, 5.0, 7.2, 2.8, 5.0, 5.0, 6.1, 3.9, 5.0]);
        assert!(tn_link(&tn, &wide).unwrap().scale() > tn_link(&tn, &narrow).unwrap().scale());
        assert!(ln_link(&ln, &wide).unwrap().var() > ln_link(&ln, &narrow).unwrap().var());
    }

    #[test]
    fn fit_requires_enough_cases() {
        let pairs = vec![(stats([1.0; 11]), 1.0); 5];
        let err = fit_emos(Family::TruncNormal, &pairs, None, &NelderMeadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::InsufficientData(_)));
        let pairs = vec![(stats([1.0; 11]), 1.0); 6];
        let err = fit_emos(Family::Tgev, &pairs, None, &NelderMeadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::InsufficientData(_)));
    }

    #[test]
    fn fit_recovers_deterministic_relation() {
        // y = 1.5 + f_ctrl exactly, members identical so md = 0
        let pairs: Vec<_> = (0..40)
            .map(|i| {
                let f = 2.0 + 0.25 * i as f64;
                (stats([f; 11]), 1.5 + f)
            })
            .collect();
        let fit = fit_emos(Family::TruncNormal, &pairs, None, &NelderMeadOptions::default()).unwrap();
        assert!(fit.train_crps <= fit.initial_crps);
        for (s, y) in &pairs {
            let d = fit.coefficients.link(s).unwrap();
            let PredictiveDistribution::TruncNormal(tn) = d else { unreachable!() };
            assert!((tn.loc() - y).abs() < 0.05, "loc {} vs {y}", tn.loc());
            assert!(tn.scale() < 0.05);
        }
    }

    #[test]
    fn rolling_driver_scopes_and_leakage() {
        let cfg = SyntheticConfig {
            n_days: 14,
            lead_times: 2,
            ..Default::default()
        };
        let ds = synthetic_generate(&cfg).unwrap();
        let dates: Vec<NaiveDate> = ds.dates()[10..].to_vec();
        let mut config = EmosTrainingConfig::new(Family::TruncNormal);
        config.window_days = 10;
        config.scope = ScopeKind::Regional;
        let out = rolling_train_predict(&ds, &dates, &config).unwrap();
        assert_eq!(out.fits.len(), dates.len() * 2);
        assert_eq!(out.forecasts.len(), dates.len() * 2 * 3);
        assert!(out.fits.iter().all(|f| f.max_train_date < f.date && f.train_crps <= f.initial_crps));

        config.scope = ScopeKind::Local;
        let out = rolling_train_predict(&ds, &dates, &config).unwrap();
        assert_eq!(out.fits.len(), dates.len() * 2 * 3);

        // first date has no history at all
        let out = rolling_train_predict(&ds, &ds.dates()[..1], &config).unwrap();
        assert!(out.fits.is_empty());
        assert_eq!(out.skipped.len(), 2 * 3);
    }
}
