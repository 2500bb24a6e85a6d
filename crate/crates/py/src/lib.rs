//! Python bindings: predictive distributions, CRPS, EMOS fitting and the
//! train / predict / verify workflow.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use windcal::dists::{Family, LogNormalMV, PredictiveDistribution, Tgev, TruncNormal};
use windcal::emos::{fit_emos as fit, EmosCoefficients, ScopeKind};
use windcal::ensemble_data::{load_csv, synthetic_generate, write_csv, Dataset as CoreDataset, EnsembleStats, SyntheticConfig};
use windcal::optim::NelderMeadOptions;
use windcal::pipeline::{
    default_verification_dates, forecast_rows, predict as core_predict, train as core_train, verify as core_verify,
    write_forecast_table, ForecastRow, TrainOptions,
};
use windcal::scoring::{crps_ensemble as core_crps_ensemble, pit as core_pit, IntervalSpec, ReportOptions};
use windcal::store::{ModelKind, ModelStore as CoreStore};

fn err(e: windcal::Error) -> PyErr {
    match e {
        windcal::Error::NumericalFailure(m) => PyArithmeticError::new_err(m),
        e @ windcal::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = windcal::Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(err)
}

fn parse_date(s: &str) -> PyResult<NaiveDate> {
    s.parse()
        .map_err(|_| PyValueError::new_err(format!("`{s}` is not a YYYY-MM-DD date")))
}

fn members(v: &[f64]) -> PyResult<[f64; 11]> {
    v.try_into()
        .map_err(|_| PyValueError::new_err(format!("expected 11 members, got {}", v.len())))
}

/// A predictive distribution: truncated normal, log-normal or truncated GEV.
#[pyclass(frozen, skip_from_py_object, module = "windcal")]
#[derive(Clone)]
struct Distribution(PredictiveDistribution);

#[pymethods]
impl Distribution {
    #[staticmethod]
    fn truncnormal(loc: f64, scale: f64) -> PyResult<Self> {
        Ok(Self(TruncNormal::new(loc, scale).map_err(err)?.into()))
    }

    /// Log-normal given its mean and variance.
    #[staticmethod]
    fn lognormal(mean: f64, variance: f64) -> PyResult<Self> {
        Ok(Self(LogNormalMV::new(mean, variance).map_err(err)?.into()))
    }

    #[staticmethod]
    fn tgev(loc: f64, scale: f64, shape: f64) -> PyResult<Self> {
        Ok(Self(Tgev::new(loc, scale, shape).map_err(err)?.into()))
    }

    #[staticmethod]
    fn from_params(family: &str, params: Vec<f64>) -> PyResult<Self> {
        let family: Family = parse(family)?;
        Ok(Self(PredictiveDistribution::from_params(family, &params).map_err(err)?))
    }

    #[getter]
    fn family(&self) -> &'static str {
        self.0.family().as_str()
    }

    #[getter]
    fn params(&self) -> Vec<f64> {
        self.0.params()
    }

    fn cdf(&self, x: f64) -> f64 {
        self.0.cdf(x)
    }

    fn pdf(&self, x: f64) -> f64 {
        self.0.pdf(x)
    }

    fn quantile(&self, p: f64) -> PyResult<f64> {
        self.0.quantile(p).map_err(err)
    }

    fn median(&self) -> f64 {
        self.0.median()
    }

    fn mean(&self) -> f64 {
        self.0.mean()
    }

    fn crps(&self, x: f64) -> PyResult<f64> {
        self.0.crps(x).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Distribution({}, {:?})", self.0.family(), self.0.params())
    }
}

#[pyfunction]
fn crps_ensemble(members: Vec<f64>, x: f64) -> PyResult<f64> {
    core_crps_ensemble(&members, x).map_err(err)
}

#[pyfunction]
fn pit(distribution: &Distribution, y: f64) -> f64 {
    core_pit(&distribution.0, y)
}

/// Summary statistics of an 11-member ensemble (control first).
#[pyfunction]
fn ensemble_stats<'py>(py: Python<'py>, members: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
    let s = EnsembleStats::from_members(&self::members(&members)?);
    let d = PyDict::new(py);
    d.set_item("f_ctrl", s.f_ctrl)?;
    d.set_item("mean_ens", s.mean_ens)?;
    d.set_item("mean_all", s.mean_all)?;
    d.set_item("s2", s.s2)?;
    d.set_item("md", s.md)?;
    d.set_item("sd", s.sd)?;
    Ok(d)
}

/// Coefficients of one EMOS fit.
#[pyclass(frozen, module = "windcal")]
struct EmosModel {
    coefficients: EmosCoefficients,
    #[pyo3(get)]
    train_crps: f64,
    #[pyo3(get)]
    evaluations: usize,
}

#[pymethods]
impl EmosModel {
    #[getter]
    fn family(&self) -> &'static str {
        self.coefficients.family().as_str()
    }

    #[getter]
    fn coefficients(&self) -> Vec<f64> {
        self.coefficients.to_vec()
    }

    fn predict(&self, members: Vec<f64>) -> PyResult<Distribution> {
        let s = EnsembleStats::from_members(&self::members(&members)?);
        Ok(Distribution(self.coefficients.link(&s).map_err(err)?))
    }
}

/// Fit an EMOS model by minimum mean CRPS on `(ensemble, observation)` pairs.
#[pyfunction]
fn fit_emos(py: Python<'_>, family: &str, ensembles: Vec<Vec<f64>>, observations: Vec<f64>) -> PyResult<EmosModel> {
    let family: Family = parse(family)?;
    if ensembles.len() != observations.len() {
        return Err(PyValueError::new_err("ensembles and observations differ in length"));
    }
    let pairs = ensembles
        .iter()
        .zip(&observations)
        .map(|(m, y)| Ok((EnsembleStats::from_members(&members(m)?), *y)))
        .collect::<PyResult<Vec<_>>>()?;
    let f = py
        .detach(|| fit(family, &pairs, None, &NelderMeadOptions::default()))
        .map_err(err)?;
    Ok(EmosModel {
        coefficients: f.coefficients,
        train_crps: f.train_crps,
        evaluations: f.evaluations,
    })
}

/// Ensemble forecasts with observations, one case per (station, date, lead time).
#[pyclass(frozen, module = "windcal")]
struct Dataset(CoreDataset);

#[pymethods]
impl Dataset {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self(load_csv(path).map_err(err)?))
    }

    #[staticmethod]
    #[pyo3(signature = (stations = 3, days = 120, lead_times = 192, seed = 1))]
    fn simulate(py: Python<'_>, stations: usize, days: usize, lead_times: u16, seed: u64) -> PyResult<Self> {
        let config = SyntheticConfig {
            n_stations: stations,
            n_days: days,
            lead_times,
            seed,
            ..Default::default()
        };
        Ok(Self(py.detach(|| synthetic_generate(&config)).map_err(err)?))
    }

    fn save(&self, path: &str) -> PyResult<()> {
        write_csv(&self.0, path).map_err(err)
    }

    #[getter]
    fn stations(&self) -> Vec<String> {
        self.0.stations().to_vec()
    }

    #[getter]
    fn dates(&self) -> Vec<String> {
        self.0.dates().iter().map(ToString::to_string).collect()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

/// Fitted coefficients or networks for every training window.
#[pyclass(frozen, module = "windcal")]
struct ModelStore(CoreStore);

#[pymethods]
impl ModelStore {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self(CoreStore::load(path).map_err(err)?))
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.0.save(path).map_err(err)
    }

    #[getter]
    fn model(&self) -> &'static str {
        self.0.model().as_str()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

/// Per-case forecasts with summary quantities at a central interval level.
#[pyclass(frozen, module = "windcal")]
struct Forecasts {
    rows: Vec<ForecastRow>,
    interval: IntervalSpec,
}

#[pymethods]
impl Forecasts {
    fn __len__(&self) -> usize {
        self.rows.len()
    }

    /// `(station, init_date, lead_time_index, distribution, median, mean, lower, upper)` tuples.
    #[allow(clippy::type_complexity)]
    fn rows(&self) -> Vec<(String, String, u16, Distribution, f64, f64, f64, f64)> {
        self.rows
            .iter()
            .map(|r| {
                (
                    r.station.clone(),
                    r.init_date.to_string(),
                    r.lead_time_index,
                    Distribution(r.distribution),
                    r.median,
                    r.mean,
                    r.lower,
                    r.upper,
                )
            })
            .collect()
    }

    fn save(&self, path: &str) -> PyResult<()> {
        let file = std::fs::File::create(path).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))?;
        write_forecast_table(&self.rows, self.interval, std::io::BufWriter::new(file)).map_err(err)
    }
}

/// Fit `model` (tn-emos, ln-emos, tgev-emos or tn-mlp) over rolling windows.
#[pyfunction]
#[pyo3(signature = (dataset, model, window = 51, scope = "local", seed = 1, epochs = 200))]
fn train(
    py: Python<'_>,
    dataset: &Dataset,
    model: &str,
    window: u32,
    scope: &str,
    seed: u64,
    epochs: usize,
) -> PyResult<ModelStore> {
    let model: ModelKind = parse(model)?;
    let mut options = TrainOptions::new(model);
    if model != ModelKind::TnMlp {
        options.scope = parse::<ScopeKind>(scope)?;
    }
    options.window_days = window;
    options.mlp.seed = seed;
    options.mlp.epochs = epochs;
    let out = py.detach(|| core_train(&dataset.0, &options)).map_err(err)?;
    Ok(ModelStore(out.store))
}

/// Forecast the cases on `dates` (default: every date with a full window).
#[pyfunction]
#[pyo3(signature = (store, dataset, dates = None, level = 10.0 / 12.0))]
fn predict(
    py: Python<'_>,
    store: &ModelStore,
    dataset: &Dataset,
    dates: Option<Vec<String>>,
    level: f64,
) -> PyResult<Forecasts> {
    let interval = IntervalSpec::new(level).map_err(err)?;
    let dates = match dates {
        Some(d) => d.iter().map(|s| parse_date(s)).collect::<PyResult<Vec<_>>>()?,
        None => default_verification_dates(&dataset.0, store.0.header.window_days),
    };
    let rows = py
        .detach(|| {
            let (forecasts, _missing) = core_predict(&store.0, &dataset.0, &dates)?;
            forecast_rows(&forecasts, interval)
        })
        .map_err(err)?;
    Ok(Forecasts { rows, interval })
}

/// Verification reports (as dicts) for the raw ensemble and each named
/// forecast set over their common cases.
#[pyfunction]
fn verify<'py>(
    py: Python<'py>,
    dataset: &Dataset,
    forecasts: BTreeMap<String, PyRef<'py, Forecasts>>,
) -> PyResult<Bound<'py, PyAny>> {
    let models: Vec<(String, Vec<ForecastRow>)> = forecasts.iter().map(|(k, f)| (k.clone(), f.rows.clone())).collect();
    let reports = py
        .detach(|| core_verify(&models, &dataset.0, &ReportOptions::default()))
        .map_err(err)?;
    let text = serde_json::to_string(&reports).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

#[pymodule]
#[pyo3(name = "windcal")]
fn windcal_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Distribution>()?;
    m.add_class::<EmosModel>()?;
    m.add_class::<Dataset>()?;
    m.add_class::<ModelStore>()?;
    m.add_class::<Forecasts>()?;
    m.add_function(wrap_pyfunction!(crps_ensemble, m)?)?;
    m.add_function(wrap_pyfunction!(pit, m)?)?;
    m.add_function(wrap_pyfunction!(ensemble_stats, m)?)?;
    m.add_function(wrap_pyfunction!(fit_emos, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(predict, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
