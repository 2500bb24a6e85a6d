//! Single-hidden-layer perceptron mapping three ensemble features to the
//! location and scale of a truncated normal, trained by minimizing the mean
//! CRPS with analytic gradients.

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dists::{PredictiveDistribution, TruncNormal};
use crate::emos::CaseForecast;
use crate::ensemble_data::{Dataset, ForecastCase, MAX_LEAD_TIME};
use crate::error::{Error, Result};

pub const INPUT_DIM: usize = 3;
pub const HIDDEN_DIM: usize = 25;
pub const OUTPUT_DIM: usize = 2;
/// Length of the flat parameter vector: W1, b1, W2, b2.
pub const N_PARAMS: usize = HIDDEN_DIM * INPUT_DIM + HIDDEN_DIM + OUTPUT_DIM * HIDDEN_DIM + OUTPUT_DIM;

const W1: usize = 0;
const B1: usize = W1 + HIDDEN_DIM * INPUT_DIM;
const W2: usize = B1 + HIDDEN_DIM;
const B2: usize = W2 + OUTPUT_DIM * HIDDEN_DIM;

/// Exponential linear unit with unit slope parameter.
#[inline]
pub fn elu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        z.exp_m1()
    }
}

/// Which lead times a network serves: `Day1` covers 1–96, `Day2` 97–192.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LeadTimeGroup {
    Day1,
    Day2,
}

impl LeadTimeGroup {
    pub const ALL: [LeadTimeGroup; 2] = [LeadTimeGroup::Day1, LeadTimeGroup::Day2];

    pub fn for_lead(lead: u16) -> Option<Self> {
        match lead {
            1..=96 => Some(LeadTimeGroup::Day1),
            97..=MAX_LEAD_TIME => Some(LeadTimeGroup::Day2),
            _ => None,
        }
    }

    pub fn contains(self, lead: u16) -> bool {
        Self::for_lead(lead) == Some(self)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LeadTimeGroup::Day1 => "day1",
            LeadTimeGroup::Day2 => "day2",
        }
    }
}

impl std::fmt::Display for LeadTimeGroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Network inputs: control forecast, mean of the exchangeable members and
/// standard deviation of all 11 members.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlpFeatures {
    pub f_ctrl: f64,
    pub mean_ens: f64,
    pub sd: f64,
}

impl MlpFeatures {
    pub fn as_array(&self) -> [f64; INPUT_DIM] {
        [self.f_ctrl, self.mean_ens, self.sd]
    }
}

pub fn mlp_features(case: &ForecastCase) -> MlpFeatures {
    let s = case.stats();
    MlpFeatures {
        f_ctrl: s.f_ctrl,
        mean_ens: s.mean_ens,
        sd: s.sd,
    }
}

/// Per-feature mean and standard deviation used to standardize inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: [f64; INPUT_DIM],
    pub sd: [f64; INPUT_DIM],
}

impl Default for Standardization {
    fn default() -> Self {
        Self {
            mean: [0.0; INPUT_DIM],
            sd: [1.0; INPUT_DIM],
        }
    }
}

impl Standardization {
    /// Fit on `features`; constant features get unit sd.
    pub fn fit(features: &[MlpFeatures]) -> Self {
        let n = features.len().max(1) as f64;
        let mut mean = [0.0; INPUT_DIM];
        let mut sd = [0.0; INPUT_DIM];
        for f in features {
            for (m, v) in mean.iter_mut().zip(f.as_array()) {
                *m += v / n;
            }
        }
        for f in features {
            for ((s, m), v) in sd.iter_mut().zip(&mean).zip(f.as_array()) {
                *s += (v - m).powi(2) / n;
            }
        }
        for s in &mut sd {
            *s = if *s > 1e-16 { s.sqrt() } else { 1.0 };
        }
        Self { mean, sd }
    }

    pub fn apply(&self, f: &MlpFeatures) -> [f64; INPUT_DIM] {
        let raw = f.as_array();
        std::array::from_fn(|i| (raw[i] - self.mean[i]) / self.sd[i])
    }
}

/// A 3→25→2 network with ELU hidden units and exponential output links.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub group: LeadTimeGroup,
    pub standardization: Standardization,
    /// Hidden weights, row-major `HIDDEN_DIM × INPUT_DIM`.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// Output weights, row-major `OUTPUT_DIM × HIDDEN_DIM`.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

struct Activations {
    pre: [f64; HIDDEN_DIM],
    hidden: [f64; HIDDEN_DIM],
    theta: [f64; OUTPUT_DIM],
}

impl MlpModel {
    /// All weights and biases zero: predicts `TruncNormal(1, 1)` everywhere.
    pub fn zeros(group: LeadTimeGroup) -> Self {
        Self {
            group,
            standardization: Standardization::default(),
            w1: vec![0.0; HIDDEN_DIM * INPUT_DIM],
            b1: vec![0.0; HIDDEN_DIM],
            w2: vec![0.0; OUTPUT_DIM * HIDDEN_DIM],
            b2: vec![0.0; OUTPUT_DIM],
        }
    }

    /// Glorot-uniform weights, zero hidden biases and the given output biases.
    pub fn glorot(group: LeadTimeGroup, output_bias: [f64; OUTPUT_DIM], rng: &mut impl Rng) -> Self {
        let mut m = Self::zeros(group);
        let l1 = (6.0 / (INPUT_DIM + HIDDEN_DIM) as f64).sqrt();
        let l2 = (6.0 / (HIDDEN_DIM + OUTPUT_DIM) as f64).sqrt();
        for w in &mut m.w1 {
            *w = rng.random_range(-l1..l1);
        }
        for w in &mut m.w2 {
            *w = rng.random_range(-l2..l2);
        }
        m.b2.copy_from_slice(&output_bias);
        m
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            (self.w1.len(), HIDDEN_DIM * INPUT_DIM, "w1"),
            (self.b1.len(), HIDDEN_DIM, "b1"),
            (self.w2.len(), OUTPUT_DIM * HIDDEN_DIM, "w2"),
            (self.b2.len(), OUTPUT_DIM, "b2"),
        ];
        for (got, want, name) in dims {
            if got != want {
                return Err(Error::Schema(format!("{name} has {got} entries, expected {want}")));
            }
        }
        let finite = self.params().iter().all(|v| v.is_finite())
            && self.standardization.mean.iter().all(|v| v.is_finite())
            && self.standardization.sd.iter().all(|v| v.is_finite() && *v > 0.0);
        if !finite {
            return Err(Error::Schema("model weights and standardization must be finite".into()));
        }
        Ok(())
    }

    /// Flat parameter vector in the order W1, b1, W2, b2.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(N_PARAMS);
        p.extend_from_slice(&self.w1);
        p.extend_from_slice(&self.b1);
        p.extend_from_slice(&self.w2);
        p.extend_from_slice(&self.b2);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != N_PARAMS {
            return Err(Error::invalid(format!("expected {N_PARAMS} parameters, got {}", p.len())));
        }
        self.w1.copy_from_slice(&p[W1..B1]);
        self.b1.copy_from_slice(&p[B1..W2]);
        self.w2.copy_from_slice(&p[W2..B2]);
        self.b2.copy_from_slice(&p[B2..]);
        Ok(())
    }

    fn activations(&self, x: &[f64; INPUT_DIM]) -> Activations {
        let mut pre = [0.0; HIDDEN_DIM];
        let mut hidden = [0.0; HIDDEN_DIM];
        for j in 0..HIDDEN_DIM {
            let row = &self.w1[j * INPUT_DIM..(j + 1) * INPUT_DIM];
            let a = self.b1[j] + row[0] * x[0] + row[1] * x[1] + row[2] * x[2];
            pre[j] = a;
            hidden[j] = elu(a);
        }
        let mut theta = [0.0; OUTPUT_DIM];
        for (k, t) in theta.iter_mut().enumerate() {
            let row = &self.w2[k * HIDDEN_DIM..(k + 1) * HIDDEN_DIM];
            *t = self.b2[k] + row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>();
        }
        Activations { pre, hidden, theta }
    }

    /// Raw outputs `(θ1, θ2)` for already standardized inputs.
    pub fn theta(&self, x: &[f64; INPUT_DIM]) -> [f64; OUTPUT_DIM] {
        self.activations(x).theta
    }

    fn distribution(theta: [f64; OUTPUT_DIM]) -> Result<TruncNormal> {
        let (loc, scale) = (theta[0].exp(), theta[1].exp());
        if !(scale > 0.0) {
            return Err(Error::NumericalFailure(format!("network scale underflow (θ2 = {})", theta[1])));
        }
        TruncNormal::new(loc, scale).map_err(|e| Error::NumericalFailure(e.to_string()))
    }

    /// Predictive distribution for raw (unstandardized) features.
    pub fn forward(&self, feat: &MlpFeatures) -> Result<TruncNormal> {
        Self::distribution(self.theta(&self.standardization.apply(feat)))
    }
}

/// Partial derivatives of the truncated normal CRPS with respect to
/// `(loc, scale)`.
pub fn crps_grad_tn(d: &TruncNormal, x: f64) -> (f64, f64) {
    d.crps_gradient(x)
}

/// Mean CRPS over `batch` and its gradient with respect to the flat
/// parameter vector (see [`MlpModel::params`]). Features are standardized
/// with the model's statistics.
pub fn loss_and_gradients(model: &MlpModel, batch: &[(MlpFeatures, f64)]) -> Result<(f64, Vec<f64>)> {
    let inputs: Vec<([f64; INPUT_DIM], f64)> = batch
        .iter()
        .map(|(f, y)| (model.standardization.apply(f), *y))
        .collect();
    let mut grad = vec![0.0; N_PARAMS];
    let loss = accumulate(model, &inputs, &mut grad)?;
    Ok((loss, grad))
}

/// Mean loss over standardized `inputs`, writing the mean gradient into `grad`.
fn accumulate(model: &MlpModel, inputs: &[([f64; INPUT_DIM], f64)], grad: &mut [f64]) -> Result<f64> {
    if inputs.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    grad.iter_mut().for_each(|g| *g = 0.0);
    let n = inputs.len() as f64;
    let mut loss = 0.0;
    for (x, y) in inputs {
        let act = model.activations(x);
        let d = MlpModel::distribution(act.theta)?;
        let (crps, (g_loc, g_scale)) = d.crps_with_gradient(*y);
        loss += crps;
        let d_theta = [g_loc * d.loc() / n, g_scale * d.scale() / n];
        for k in 0..OUTPUT_DIM {
            grad[B2 + k] += d_theta[k];
            let row = &mut grad[W2 + k * HIDDEN_DIM..W2 + (k + 1) * HIDDEN_DIM];
            for (g, h) in row.iter_mut().zip(&act.hidden) {
                *g += d_theta[k] * h;
            }
        }
        for j in 0..HIDDEN_DIM {
            let back = d_theta[0] * model.w2[j] + d_theta[1] * model.w2[HIDDEN_DIM + j];
            let slope = if act.pre[j] > 0.0 { 1.0 } else { act.hidden[j] + 1.0 };
            let da = back * slope;
            grad[B1 + j] += da;
            for i in 0..INPUT_DIM {
                grad[W1 + j * INPUT_DIM + i] += da * x[i];
            }
        }
    }
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NumericalFailure("non-finite loss or gradient".into()));
    }
    Ok(loss / n)
}

fn mean_loss(model: &MlpModel, inputs: &[([f64; INPUT_DIM], f64)]) -> Result<f64> {
    let mut total = 0.0;
    for (x, y) in inputs {
        total += MlpModel::distribution(model.theta(x))?.crps(*y);
    }
    Ok(total / inputs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlpTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Stop after this many epochs without the epoch loss improving by `min_delta`.
    pub patience: usize,
    pub min_delta: f64,
    /// Elementwise gradient clipping bound.
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for MlpTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 64,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            patience: 10,
            min_delta: 1e-4,
            grad_clip: 10.0,
            seed: 1,
        }
    }
}

impl MlpTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::invalid("epochs, batch_size and learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return Err(Error::invalid("moment decay rates must lie in [0, 1) and epsilon be positive"));
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::invalid("grad_clip must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedMlp {
    pub model: MlpModel,
    pub initial_crps: f64,
    pub train_crps: f64,
    /// Per-epoch running mean of the batch losses.
    pub epoch_losses: Vec<f64>,
}

/// Train a network on `(features, observation)` pairs. The returned model
/// never has a higher training mean CRPS than the initial network.
pub fn train_mlp(group: LeadTimeGroup, data: &[(MlpFeatures, f64)], config: &MlpTrainConfig) -> Result<TrainedMlp> {
    config.validate()?;
    if data.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "network training needs at least 2 cases, got {}",
            data.len()
        )));
    }
    let feats: Vec<MlpFeatures> = data.iter().map(|(f, _)| *f).collect();
    let standardization = Standardization::fit(&feats);
    let n = data.len() as f64;
    let obs_mean = data.iter().map(|(_, y)| y).sum::<f64>() / n;
    let obs_sd = (data.iter().map(|(_, y)| (y - obs_mean).powi(2)).sum::<f64>() / n).sqrt();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = MlpModel::glorot(group, [obs_mean.max(1e-3).ln(), obs_sd.max(1e-3).ln()], &mut rng);
    model.standardization = standardization;
    let inputs: Vec<([f64; INPUT_DIM], f64)> = data.iter().map(|(f, y)| (standardization.apply(f), *y)).collect();

    let initial_params = model.params();
    let initial_crps = mean_loss(&model, &inputs)?;
    let mut params = initial_params.clone();
    let mut m = vec![0.0; N_PARAMS];
    let mut v = vec![0.0; N_PARAMS];
    let mut grad = vec![0.0; N_PARAMS];
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut batch: Vec<([f64; INPUT_DIM], f64)> = Vec::with_capacity(config.batch_size);
    let mut step = 0i32;
    let mut best = (f64::INFINITY, params.clone());
    let mut since_best = 0;
    let mut epoch_losses = Vec::new();

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| inputs[i]));
            let loss = accumulate(&model, &batch, &mut grad)?;
            epoch_loss += loss * batch.len() as f64;
            step += 1;
            let c1 = 1.0 - config.beta1.powi(step);
            let c2 = 1.0 - config.beta2.powi(step);
            for i in 0..N_PARAMS {
                let g = grad[i].clamp(-config.grad_clip, config.grad_clip);
                m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
                v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
                params[i] -= config.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + config.epsilon);
            }
            model.set_params(&params)?;
        }
        let epoch_loss = epoch_loss / n;
        epoch_losses.push(epoch_loss);
        if epoch_loss < best.0 - config.min_delta {
            best = (epoch_loss, params.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }

    // keep the end-of-training weights unless the best-epoch snapshot scores better
    let mut train_crps = mean_loss(&model, &inputs)?;
    let mut candidate = model.clone();
    candidate.set_params(&best.1)?;
    let snapshot_crps = mean_loss(&candidate, &inputs)?;
    if snapshot_crps < train_crps {
        model = candidate;
        train_crps = snapshot_crps;
    }
    if train_crps > initial_crps {
        model.set_params(&initial_params)?;
        train_crps = initial_crps;
    }
    Ok(TrainedMlp {
        model,
        initial_crps,
        train_crps,
        epoch_losses,
    })
}

pub type TrainingPairs = Vec<(MlpFeatures, f64)>;

/// Training pairs for `group`: all stations and lead times of the group,
/// initializations in `[date - window_days, date - 1]`, observation present.
pub fn window_training_data(
    dataset: &Dataset,
    date: NaiveDate,
    group: LeadTimeGroup,
    window_days: u32,
) -> Result<(TrainingPairs, Option<NaiveDate>)> {
    if window_days == 0 {
        return Err(Error::invalid("window length must be at least one day"));
    }
    let mut data = Vec::new();
    let mut max_date = None;
    for back in (1..=u64::from(window_days)).rev() {
        let Some(d) = date.checked_sub_days(chrono::Days::new(back)) else {
            continue;
        };
        for lead in 1..=MAX_LEAD_TIME {
            if !group.contains(lead) {
                continue;
            }
            for c in dataset.cases_at(d, lead) {
                if let Some(y) = c.observation {
                    data.push((mlp_features(c), y));
                    max_date = Some(d);
                }
            }
        }
    }
    Ok((data, max_date))
}

/// Seed for one (date, group) training run, derived from the base seed.
fn window_seed(base: u64, date: NaiveDate, group: LeadTimeGroup) -> u64 {
    crate::scoring::case_seed(group.as_str(), &date.to_string(), 0) ^ base.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpWindowModel {
    pub date: NaiveDate,
    pub group: LeadTimeGroup,
    pub model: MlpModel,
    pub initial_crps: f64,
    pub train_crps: f64,
    pub n_train: usize,
    pub max_train_date: NaiveDate,
}

#[derive(Debug, Clone, Default)]
pub struct MlpRollingOutput {
    pub forecasts: Vec<CaseForecast>,
    pub models: Vec<MlpWindowModel>,
    pub skipped: Vec<(NaiveDate, LeadTimeGroup, String)>,
}

/// Train two regional networks per verification date on the preceding
/// window and forecast that date's cases.
pub fn rolling_train_predict_mlp(
    dataset: &Dataset,
    verification_dates: &[NaiveDate],
    window_days: u32,
    config: &MlpTrainConfig,
) -> Result<MlpRollingOutput> {
    config.validate()?;
    let mut dates = verification_dates.to_vec();
    dates.sort();
    dates.dedup();
    let tasks: Vec<(NaiveDate, LeadTimeGroup)> = dates
        .iter()
        .flat_map(|&d| LeadTimeGroup::ALL.into_iter().map(move |g| (d, g)))
        .filter(|&(d, g)| (1..=MAX_LEAD_TIME).any(|l| g.contains(l) && dataset.cases_at(d, l).next().is_some()))
        .collect();
    type TaskResult = Result<std::result::Result<(MlpWindowModel, Vec<CaseForecast>), String>>;
    let results: Vec<TaskResult> = tasks
        .par_iter()
        .map(|&(date, group)| {
            let targets: Vec<&ForecastCase> = (1..=MAX_LEAD_TIME)
                .filter(|&l| group.contains(l))
                .flat_map(|l| dataset.cases_at(date, l))
                .collect();
            let (data, max_date) = window_training_data(dataset, date, group, window_days)?;
            let Some(max_train_date) = max_date else {
                return Ok(Err(format!("no training cases in the {window_days} days before {date}")));
            };
            let cfg = MlpTrainConfig {
                seed: window_seed(config.seed, date, group),
                ..*config
            };
            let trained = match train_mlp(group, &data, &cfg) {
                Ok(t) => t,
                Err(Error::InsufficientData(m)) => return Ok(Err(m)),
                Err(e) => return Err(e),
            };
            let forecasts = targets
                .iter()
                .map(|c| {
                    Ok(CaseForecast {
                        station: c.station.clone(),
                        init_date: c.init_date,
                        lead_time_index: c.lead_time_index,
                        distribution: PredictiveDistribution::from(trained.model.forward(&mlp_features(c))?),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Ok((
                MlpWindowModel {
                    date,
                    group,
                    model: trained.model,
                    initial_crps: trained.initial_crps,
                    train_crps: trained.train_crps,
                    n_train: data.len(),
                    max_train_date,
                },
                forecasts,
            )))
        })
        .collect();

    let mut out = MlpRollingOutput::default();
    for ((date, group), r) in tasks.into_iter().zip(results) {
        match r? {
            Ok((model, forecasts)) => {
                out.models.push(model);
                out.forecasts.extend(forecasts);
            }
            Err(reason) => out.skipped.push((date, group, reason)),
        }
    }
    out.forecasts
        .sort_by(|a, b| (a.init_date, &a.station, a.lead_time_index).cmp(&(b.init_date, &b.station, b.lead_time_index)));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feat(a: f64, b: f64, c: f64) -> MlpFeatures {
        MlpFeatures {
            f_ctrl: a,
            mean_ens: b,
            sd: c,
        }
    }

    #[test]
    fn elu_examples() {
        assert_eq!(elu(0.0), 0.0);
        assert_eq!(elu(2.0), 2.0);
        assert!((elu(-1.0) - (-0.632_120_558_828_557_7)).abs() < 1e-15);
    }

    #[test]
    fn forward_examples() {
        let m = MlpModel::zeros(LeadTimeGroup::Day1);
        let d = m.forward(&feat(3.0, 4.0, 1.0)).unwrap();
        assert_eq!((d.loc(), d.scale()), (1.0, 1.0));
        let mut m = MlpModel::zeros(LeadTimeGroup::Day1);
        m.b2 = vec![5f64.ln(), 2f64.ln()];
        let d = m.forward(&feat(3.0, 4.0, 1.0)).unwrap();
        assert!((d.loc() - 5.0).abs() < 1e-14 && (d.scale() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn feature_examples() {
        let case = ForecastCase {
            station: "A".into(),
            init_date: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
            lead_time_index: 1,
            members: std::array::from_fn(|i| (i + 1) as f64),
            observation: None,
        };
        let f = mlp_features(&case);
        assert_eq!((f.f_ctrl, f.mean_ens), (1.0, 6.5));
        assert!((f.sd - 11f64.sqrt()).abs() < 1e-12);
        let doubled = ForecastCase {
            members: case.members.map(|v| 2.0 * v),
            ..case.clone()
        };
        let g = mlp_features(&doubled);
        assert!((g.sd - 2.0 * f.sd).abs() < 1e-12 && g.mean_ens == 2.0 * f.mean_ens);
        let flat = ForecastCase {
            members: [4.0; 11],
            ..case
        };
        assert_eq!(mlp_features(&flat), feat(4.0, 4.0, 0.0));
    }

    #[test]
    fn lead_groups_partition() {
        assert_eq!(LeadTimeGroup::for_lead(1), Some(LeadTimeGroup::Day1));
        assert_eq!(LeadTimeGroup::for_lead(96), Some(LeadTimeGroup::Day1));
        assert_eq!(LeadTimeGroup::for_lead(97), Some(LeadTimeGroup::Day2));
        assert_eq!(LeadTimeGroup::for_lead(192), Some(LeadTimeGroup::Day2));
        assert_eq!(LeadTimeGroup::for_lead(0), None);
        assert_eq!(LeadTimeGroup::for_lead(193), None);
    }

    #[test]
    fn batch_loss_composition() {
        let m = MlpModel::zeros(LeadTimeGroup::Day1);
        let batch = [(feat(1.0, 2.0, 0.5), 1.7)];
        let (loss, _) = loss_and_gradients(&m, &batch).unwrap();
        assert!((loss - TruncNormal::new(1.0, 1.0).unwrap().crps(1.7)).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = MlpModel::glorot(LeadTimeGroup::Day1, [1.5, 0.0], &mut rng);
        let batch: Vec<_> = (0..5).map(|i| (feat(i as f64, 1.0 + i as f64, 0.3), 2.0 + 0.5 * i as f64)).collect();
        let doubled: Vec<_> = batch.iter().chain(batch.iter()).copied().collect();
        let (l1, g1) = loss_and_gradients(&m, &batch).unwrap();
        let (l2, g2) = loss_and_gradients(&m, &doubled).unwrap();
        assert!((l1 - l2).abs() < 1e-14);
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut m = MlpModel::glorot(LeadTimeGroup::Day1, [1.6, -0.2], &mut rng);
        for b in &mut m.b1 {
            *b = rng.random_range(-0.5..0.5);
        }
        let batch: Vec<_> = (0..7)
            .map(|i| (feat(0.3 * i as f64 - 1.0, 0.2 * i as f64 - 0.5, 0.1 * i as f64), 3.0 + 0.7 * i as f64))
            .collect();
        let (_, g) = loss_and_gradients(&m, &batch).unwrap();
        let p0 = m.params();
        for i in 0..N_PARAMS {
            let h = 1e-6;
            let mut p = p0.clone();
            p[i] += h;
            m.set_params(&p).unwrap();
            let up = loss_and_gradients(&m, &batch).unwrap().0;
            p[i] -= 2.0 * h;
            m.set_params(&p).unwrap();
            let down = loss_and_gradients(&m, &batch).unwrap().0;
            let fd = (up - down) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6 * (1.0 + g[i].abs()), "param {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn params_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = MlpModel::glorot(LeadTimeGroup::Day2, [0.1, 0.2], &mut rng);
        let mut other = MlpModel::zeros(LeadTimeGroup::Day2);
        other.set_params(&m.params()).unwrap();
        assert_eq!(other, m);
        assert_eq!(m.params().len(), N_PARAMS);
        assert!(other.set_params(&[0.0; 3]).is_err());
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data: Vec<_> = (0..400)
            .map(|_| {
                let f: f64 = rng.random_range(2.0..10.0);
                let sd: f64 = rng.random_range(0.2..2.0);
                let y = (f + 0.5 + sd * rng.random_range(-1.5..1.5)).max(0.0);
                (feat(f, f + 0.1, sd), y)
            })
            .collect();
        let cfg = MlpTrainConfig {
            epochs: 30,
            ..Default::default()
        };
        let a = train_mlp(LeadTimeGroup::Day1, &data, &cfg).unwrap();
        let b = train_mlp(LeadTimeGroup::Day1, &data, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert!(a.train_crps < a.initial_crps);
        assert!(a.epoch_losses.last().unwrap() < &a.epoch_losses[0]);
    }
}
