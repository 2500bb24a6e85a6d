//! Proper scores, point-forecast errors, interval statistics and calibration
//! diagnostics, plus a quadrature CRPS that serves as the reference for the
//! closed forms in [`crate::dists`].

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dists::PredictiveDistribution;
use crate::error::{ensure_finite, Error, Result};

/// Number of members of the raw ensemble.
pub const ENSEMBLE_SIZE: usize = 11;
/// Nominal coverage of the range of an 11-member exchangeable ensemble.
pub const ENSEMBLE_RANGE_LEVEL: f64 = 10.0 / 12.0;
/// Verification ranks run over `1..=ENSEMBLE_SIZE + 1`.
pub const RANK_BINS: usize = ENSEMBLE_SIZE + 1;
pub const DEFAULT_PIT_BINS: usize = 12;

const QUAD_TOL: f64 = 1e-8;
const QUAD_PANELS: usize = 16;
const QUAD_MAX_DEPTH: u32 = 48;
const QUAD_MAX_EVALS: usize = 4_000_000;
const MIN_PANEL_WIDTH: f64 = 1e-11;

// ---------------------------------------------------------------------------
// CRPS
// ---------------------------------------------------------------------------

/// CRPS by adaptive Simpson quadrature of `∫ [F(y) - 1{y ≥ x}]² dy`.
///
/// `support` bounds the region where `F` moves from 0 to 1: below it `F` is
/// taken as 0, above it as 1.
pub fn crps_quadrature(cdf: impl Fn(f64) -> f64, x: f64, support: (f64, f64)) -> Result<f64> {
    crps_quadrature_with_breaks(cdf, x, support, &[])
}

/// [`crps_quadrature`] with the integration range also split at `breaks`,
/// the known jumps or kinks of `F` (for instance ensemble members).
pub fn crps_quadrature_with_breaks(
    cdf: impl Fn(f64) -> f64,
    x: f64,
    support: (f64, f64),
    breaks: &[f64],
) -> Result<f64> {
    ensure_finite("observation", x)?;
    let (lo, hi) = support;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::invalid(format!("bad support hint ({lo}, {hi})")));
    }
    if breaks.iter().any(|b| !b.is_finite()) {
        return Err(Error::invalid("breakpoints must be finite"));
    }
    let mut total = 0.0;
    if x < lo {
        total += lo - x;
    }
    if x > hi {
        total += x - hi;
    }
    let mut points: Vec<f64> = std::iter::once(lo)
        .chain(breaks.iter().copied().chain(std::iter::once(x)).filter(|b| *b > lo && *b < hi))
        .chain(std::iter::once(hi))
        .collect();
    points.sort_by(f64::total_cmp);
    points.dedup();
    let segments: Vec<(f64, f64, f64)> = points
        .windows(2)
        .map(|w| (w[0], w[1], if w[0] >= x { 1.0 } else { 0.0 }))
        .collect();
    let mut budget = QUAD_MAX_EVALS;
    let panel_tol = QUAD_TOL / (segments.len() * QUAD_PANELS) as f64;
    for (a, b, indicator) in segments {
        let f = |y: f64| {
            let d = cdf(y) - indicator;
            d * d
        };
        let h = (b - a) / QUAD_PANELS as f64;
        for i in 0..QUAD_PANELS {
            let pa = a + h * i as f64;
            let pb = if i + 1 == QUAD_PANELS { b } else { pa + h };
            total += adaptive_simpson(&f, pa, pb, panel_tol, &mut budget)?;
        }
    }
    Ok(total)
}

/// Support hint for [`crps_quadrature`] covering all but ~1e-9 of the mass.
pub fn quadrature_support(d: &PredictiveDistribution) -> (f64, f64) {
    let upper = d.quantile(1.0 - 1e-9).unwrap_or(0.0) + 10.0 * d.spread();
    (0.0, upper.max(1e-12))
}

fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, budget: &mut usize) -> Result<f64> {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, QUAD_MAX_DEPTH, budget)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    budget: &mut usize,
) -> Result<f64> {
    if *budget < 2 {
        return Err(Error::NumericalFailure("quadrature evaluation budget exhausted".into()));
    }
    *budget -= 2;
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol {
        return Ok(left + right + delta / 15.0);
    }
    // The integrand lies in [0, 1], so an unresolved jump inside a panel this
    // narrow perturbs the total by less than the panel width.
    if b - a <= MIN_PANEL_WIDTH {
        return Ok(left + right);
    }
    if depth == 0 {
        return Err(Error::NumericalFailure(format!(
            "quadrature did not converge on [{a}, {b}]"
        )));
    }
    Ok(simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, budget)?
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, budget)?)
}

/// CRPS of the empirical distribution of `members`.
pub fn crps_ensemble(members: &[f64], x: f64) -> Result<f64> {
    if members.is_empty() {
        return Err(Error::invalid("ensemble must have at least one member"));
    }
    ensure_finite("observation", x)?;
    if members.iter().any(|m| !m.is_finite()) {
        return Err(Error::invalid("ensemble members must be finite"));
    }
    let k = members.len() as f64;
    let mut sorted = members.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let abs_err: f64 = sorted.iter().map(|f| (f - x).abs()).sum::<f64>() / k;
    // Σ_{i<j} (f_(j) - f_(i)) = Σ_j f_(j) (2j - K - 1), 1-based j
    let pair_sum: f64 = sorted
        .iter()
        .enumerate()
        .map(|(j, f)| f * (2.0 * (j as f64 + 1.0) - k - 1.0))
        .sum();
    Ok(abs_err - pair_sum / (k * k))
}

/// Skill score `1 - crps / crps_ref`.
pub fn crpss(mean_crps: f64, mean_crps_ref: f64) -> Result<f64> {
    if !(mean_crps_ref > 0.0) || !mean_crps_ref.is_finite() {
        return Err(Error::invalid(format!(
            "reference CRPS must be positive, got {mean_crps_ref}"
        )));
    }
    Ok(1.0 - mean_crps / mean_crps_ref)
}

fn check_pairs(forecasts: &[f64], observations: &[f64]) -> Result<()> {
    if forecasts.len() != observations.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} forecasts vs {} observations",
            forecasts.len(),
            observations.len()
        )));
    }
    if forecasts.is_empty() {
        return Err(Error::invalid("no forecast-observation pairs"));
    }
    Ok(())
}

pub fn mae(forecasts: &[f64], observations: &[f64]) -> Result<f64> {
    check_pairs(forecasts, observations)?;
    let s: f64 = forecasts.iter().zip(observations).map(|(f, o)| (f - o).abs()).sum();
    Ok(s / forecasts.len() as f64)
}

pub fn rmse(forecasts: &[f64], observations: &[f64]) -> Result<f64> {
    check_pairs(forecasts, observations)?;
    let s: f64 = forecasts.iter().zip(observations).map(|(f, o)| (f - o).powi(2)).sum();
    Ok((s / forecasts.len() as f64).sqrt())
}

// ---------------------------------------------------------------------------
// Intervals
// ---------------------------------------------------------------------------

/// Central prediction interval at nominal coverage `level`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalSpec {
    level: f64,
}

impl IntervalSpec {
    pub fn new(level: f64) -> Result<Self> {
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::invalid(format!("interval level must lie in (0, 1), got {level}")));
        }
        Ok(Self { level })
    }

    pub fn level(&self) -> f64 {
        self.level
    }

    pub fn lower_p(&self) -> f64 {
        0.5 * (1.0 - self.level)
    }

    pub fn upper_p(&self) -> f64 {
        1.0 - self.lower_p()
    }
}

impl Default for IntervalSpec {
    /// The level matching the range of an 11-member ensemble (10/12).
    fn default() -> Self {
        Self {
            level: ENSEMBLE_RANGE_LEVEL,
        }
    }
}

pub fn central_interval(d: &PredictiveDistribution, spec: IntervalSpec) -> Result<(f64, f64)> {
    let lo = d.quantile(spec.lower_p())?;
    let hi = d.quantile(spec.upper_p())?;
    Ok((lo, hi.max(lo)))
}

/// The ensemble range `(min, max)`; its nominal coverage is [`ENSEMBLE_RANGE_LEVEL`].
pub fn ensemble_interval(members: &[f64]) -> Result<(f64, f64)> {
    check_members(members)?;
    let lo = members.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = members.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((lo, hi))
}

fn check_members(members: &[f64]) -> Result<()> {
    if members.len() != ENSEMBLE_SIZE {
        return Err(Error::invalid(format!(
            "expected {ENSEMBLE_SIZE} ensemble members, got {}",
            members.len()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Calibration diagnostics
// ---------------------------------------------------------------------------

/// Probability integral transform. Negative observations map to 0.
pub fn pit(d: &PredictiveDistribution, y: f64) -> f64 {
    if y < 0.0 {
        return 0.0;
    }
    d.cdf(y)
}

/// Rank of `y` among the pooled ensemble + observation, in `1..=12`, with
/// ties broken uniformly at random.
pub fn verification_rank(members: &[f64], y: f64, seed: u64) -> Result<usize> {
    check_members(members)?;
    ensure_finite("observation", y)?;
    let below = members.iter().filter(|&&m| m < y).count();
    let ties = members.iter().filter(|&&m| m == y).count();
    if ties == 0 {
        return Ok(below + 1);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(below + 1 + rng.random_range(0..=ties))
}

/// Kolmogorov–Smirnov distance between the empirical CDF of `pit_values`
/// and the standard uniform CDF.
pub fn ks_statistic(pit_values: &[f64]) -> Result<f64> {
    if pit_values.is_empty() {
        return Err(Error::invalid("KS statistic needs at least one value"));
    }
    let mut v = pit_values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len() as f64;
    Ok(v.iter()
        .enumerate()
        .map(|(i, &u)| {
            let u = u.clamp(0.0, 1.0);
            let above = (i as f64 + 1.0) / n - u;
            let below = u - i as f64 / n;
            above.max(below)
        })
        .fold(0.0, f64::max))
}

/// Equal-width histogram of values in `[0, 1]`; out-of-range values are
/// clamped into the end bins.
pub fn histogram(values: &[f64], bins: usize) -> Vec<usize> {
    let bins = bins.max(1);
    let mut counts = vec![0; bins];
    for &v in values {
        let idx = ((v.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    counts
}

/// Categorical histogram of ranks in `1..=RANK_BINS`.
pub fn rank_histogram(ranks: &[usize]) -> Vec<usize> {
    let mut counts = vec![0; RANK_BINS];
    for &r in ranks {
        counts[r.clamp(1, RANK_BINS) - 1] += 1;
    }
    counts
}

/// Relative excess of the two end bins over a flat histogram:
/// `mean(first, last) / (total / bins) - 1`. Zero for a flat histogram,
/// positive for U shapes.
pub fn end_bin_excess(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    if counts.is_empty() || total == 0 {
        return 0.0;
    }
    let expected = total as f64 / counts.len() as f64;
    let ends = 0.5 * (counts[0] + counts[counts.len() - 1]) as f64;
    ends / expected - 1.0
}

/// Deterministic 64-bit seed derived from a case identifier (FNV-1a).
pub fn case_seed(station: &str, date: &str, lead_time_index: u16) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    };
    eat(station.as_bytes());
    eat(&[0x1f]);
    eat(date.as_bytes());
    eat(&[0x1f]);
    eat(&lead_time_index.to_le_bytes());
    h
}

// ---------------------------------------------------------------------------
// Lead-time groups and reports
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeadGroup {
    pub label: String,
    pub first: u16,
    pub last: u16,
}

impl LeadGroup {
    pub fn contains(&self, lead: u16) -> bool {
        (self.first..=self.last).contains(&lead)
    }
}

/// The four 12-hour panels `0-12h`, `12-24h`, `24-36h`, `36-48h` of the
/// 192 quarter-hourly lead times.
pub fn default_lead_groups() -> Vec<LeadGroup> {
    (0..4)
        .map(|q| LeadGroup {
            label: format!("{}-{}h", 12 * q, 12 * (q + 1)),
            first: 48 * q as u16 + 1,
            last: 48 * (q as u16 + 1),
        })
        .collect()
}

/// Everything needed to score one forecast case.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaseScore {
    pub lead_time_index: u16,
    pub observation: f64,
    pub crps: f64,
    pub median: f64,
    pub mean: f64,
    pub interval: (f64, f64),
    /// PIT for continuous forecasts.
    pub pit: Option<f64>,
    /// Verification rank for ensemble forecasts.
    pub rank: Option<usize>,
}

impl CaseScore {
    pub fn from_distribution(
        d: &PredictiveDistribution,
        lead_time_index: u16,
        observation: f64,
        spec: IntervalSpec,
    ) -> Result<Self> {
        Ok(Self {
            lead_time_index,
            observation,
            crps: d.crps(observation)?,
            median: d.median(),
            mean: d.mean(),
            interval: central_interval(d, spec)?,
            pit: Some(pit(d, observation)),
            rank: None,
        })
    }

    pub fn from_ensemble(members: &[f64], lead_time_index: u16, observation: f64, rank_seed: u64) -> Result<Self> {
        check_members(members)?;
        let mut sorted = members.to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        Ok(Self {
            lead_time_index,
            observation,
            crps: crps_ensemble(members, observation)?,
            median: sorted[ENSEMBLE_SIZE / 2],
            mean: members.iter().sum::<f64>() / ENSEMBLE_SIZE as f64,
            interval: (sorted[0], sorted[ENSEMBLE_SIZE - 1]),
            pit: None,
            rank: Some(verification_rank(members, observation, rank_seed)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCounts {
    pub group: String,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub n_cases: usize,
    pub mean_crps: f64,
    pub crpss: Option<f64>,
    pub mae: f64,
    pub rmse: f64,
    pub coverage: f64,
    pub mean_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeadScores {
    pub lead_time_index: u16,
    #[serde(flatten)]
    pub scores: Scores,
}

/// Per-lead-time and pooled verification scores of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub model: String,
    pub interval_level: f64,
    pub per_lead: Vec<LeadScores>,
    pub overall: Scores,
    pub pit_histograms: Vec<GroupCounts>,
    pub rank_histogram: Option<Vec<usize>>,
    pub ks_statistic: Option<f64>,
    pub negative_observations: usize,
}

#[derive(Debug, Clone)]
pub struct ReportOptions {
    pub interval: IntervalSpec,
    pub lead_groups: Vec<LeadGroup>,
    pub pit_bins: usize,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            interval: IntervalSpec::default(),
            lead_groups: default_lead_groups(),
            pit_bins: DEFAULT_PIT_BINS,
        }
    }
}

#[derive(Default)]
struct Accumulator {
    n: usize,
    crps: f64,
    abs_err: f64,
    sq_err: f64,
    covered: usize,
    width: f64,
}

impl Accumulator {
    fn push(&mut self, c: &CaseScore) {
        self.n += 1;
        self.crps += c.crps;
        self.abs_err += (c.median - c.observation).abs();
        self.sq_err += (c.mean - c.observation).powi(2);
        if c.observation >= c.interval.0 && c.observation <= c.interval.1 {
            self.covered += 1;
        }
        self.width += c.interval.1 - c.interval.0;
    }

    fn finish(&self, reference_crps: Option<f64>) -> Scores {
        let n = self.n.max(1) as f64;
        let mean_crps = self.crps / n;
        Scores {
            n_cases: self.n,
            mean_crps,
            crpss: reference_crps.and_then(|r| crpss(mean_crps, r).ok()),
            mae: self.abs_err / n,
            rmse: (self.sq_err / n).sqrt(),
            coverage: self.covered as f64 / n,
            mean_width: self.width / n,
        }
    }
}

impl VerificationReport {
    /// Aggregate case scores. Skill scores are computed against `reference`
    /// (matched per lead time and overall) when given.
    pub fn build(
        model: &str,
        cases: &[CaseScore],
        reference: Option<&VerificationReport>,
        options: &ReportOptions,
    ) -> Result<Self> {
        if cases.is_empty() {
            return Err(Error::InsufficientData(format!("no verification cases for `{model}`")));
        }
        let mut by_lead: BTreeMap<u16, Accumulator> = BTreeMap::new();
        let mut pooled = Accumulator::default();
        let mut pits: Vec<f64> = Vec::new();
        let mut ranks: Vec<usize> = Vec::new();
        let mut group_pits: Vec<Vec<f64>> = vec![Vec::new(); options.lead_groups.len()];
        let mut negative = 0;
        for c in cases {
            by_lead.entry(c.lead_time_index).or_default().push(c);
            pooled.push(c);
            if c.observation < 0.0 {
                negative += 1;
            }
            if let Some(p) = c.pit {
                pits.push(p);
                if let Some(g) = options.lead_groups.iter().position(|g| g.contains(c.lead_time_index)) {
                    group_pits[g].push(p);
                }
            }
            if let Some(r) = c.rank {
                ranks.push(r);
            }
        }
        if negative > 0 {
            log::warn!("{model}: {negative} negative observations clamped to PIT 0");
        }
        let ref_lead: BTreeMap<u16, f64> = reference
            .map(|r| r.per_lead.iter().map(|l| (l.lead_time_index, l.scores.mean_crps)).collect())
            .unwrap_or_default();
        let per_lead = by_lead
            .iter()
            .map(|(&lead, acc)| LeadScores {
                lead_time_index: lead,
                scores: acc.finish(ref_lead.get(&lead).copied()),
            })
            .collect();
        let pit_histograms = if pits.is_empty() {
            Vec::new()
        } else {
            options
                .lead_groups
                .iter()
                .zip(&group_pits)
                .map(|(g, v)| GroupCounts {
                    group: g.label.clone(),
                    counts: histogram(v, options.pit_bins),
                })
                .collect()
        };
        Ok(Self {
            model: model.to_string(),
            interval_level: options.interval.level(),
            per_lead,
            overall: pooled.finish(reference.map(|r| r.overall.mean_crps)),
            pit_histograms,
            rank_histogram: (!ranks.is_empty()).then(|| rank_histogram(&ranks)),
            ks_statistic: if pits.is_empty() { None } else { Some(ks_statistic(&pits)?) },
            negative_observations: negative,
        })
    }

    /// PIT counts pooled over all lead-time groups.
    pub fn pooled_pit_histogram(&self) -> Option<Vec<usize>> {
        let first = self.pit_histograms.first()?;
        let mut total = vec![0; first.counts.len()];
        for g in &self.pit_histograms {
            for (t, c) in total.iter_mut().zip(&g.counts) {
                *t += c;
            }
        }
        Some(total)
    }

    /// Rank histogram for ensembles, pooled PIT histogram otherwise.
    pub fn calibration_histogram(&self) -> Option<Vec<usize>> {
        self.rank_histogram.clone().or_else(|| self.pooled_pit_histogram())
    }
}
