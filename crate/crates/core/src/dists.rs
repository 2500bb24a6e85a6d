//! Predictive distribution families for non-negative wind speed.
//!
//! All three laws live on `[0, ∞)`: a normal truncated from below at zero, a
//! log-normal parameterized by its mean and variance, and a generalized
//! extreme value law truncated from below at zero. Each exposes its CDF, PDF,
//! quantile, mean and closed-form CRPS.

use std::f64::consts::{PI, SQRT_2};
use std::cell::RefCell;
use std::fmt;
use std::str::FromStr;

use crate::error::{ensure_finite, Error, Result};
use crate::special::{
    integrate_gl, log_exp_integral, LowerGamma, norm_cdf, norm_ln_cdf, norm_ln_pdf, norm_pdf,
};

/// Open interval for the TGEV shape: finite mean and positive skewness.
pub const SHAPE_MIN: f64 = -0.278;
pub const SHAPE_MAX: f64 = 1.0 / 3.0;

/// Lower bound applied to `Φ(μ/σ)` wherever it appears as a divisor.
const MASS_FLOOR: f64 = 1e-300;
/// Below this standardized location the truncated-normal closed form loses
/// precision to cancellation; CRPS falls back to quadrature.
const TN_CLOSED_FORM_MIN_RATIO: f64 = -5.0;
/// Minimum retained GEV mass above zero for the TGEV closed form.
const TGEV_CLOSED_FORM_MIN_MASS: f64 = 1e-3;
/// Half-width of the shape band around zero bridged by interpolation.
const TGEV_SHAPE_BRIDGE: f64 = 1e-3;

const QUANTILE_MAX_ITER: usize = 200;
const QUANTILE_PROB_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    #[serde(rename = "tn")]
    TruncNormal,
    #[serde(rename = "ln")]
    LogNormal,
    Tgev,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::TruncNormal, Family::LogNormal, Family::Tgev];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::TruncNormal => "tn",
            Family::LogNormal => "ln",
            Family::Tgev => "tgev",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tn" => Ok(Family::TruncNormal),
            "ln" => Ok(Family::LogNormal),
            "tgev" => Ok(Family::Tgev),
            other => Err(Error::invalid(format!("unknown distribution family `{other}`"))),
        }
    }
}

// ---------------------------------------------------------------------------
// Truncated normal
// ---------------------------------------------------------------------------

/// Normal law `N(loc, scale²)` truncated from below at zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncNormal {
    loc: f64,
    scale: f64,
}

impl TruncNormal {
    pub fn new(loc: f64, scale: f64) -> Result<Self> {
        ensure_finite("loc", loc)?;
        ensure_finite("scale", scale)?;
        if scale <= 0.0 {
            return Err(Error::invalid(format!("scale must be positive, got {scale}")));
        }
        Ok(Self { loc, scale })
    }

    pub fn loc(&self) -> f64 {
        self.loc
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    #[inline]
    fn ratio(&self) -> f64 {
        self.loc / self.scale
    }

    /// `ln Φ(loc/scale)`, the log of the untruncated mass above zero.
    #[inline]
    fn ln_mass(&self) -> f64 {
        norm_ln_cdf(self.ratio())
    }

    pub fn sf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 1.0;
        }
        let ln_tail = norm_ln_cdf((self.loc - x) / self.scale);
        (ln_tail - self.ln_mass()).exp().min(1.0)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        1.0 - self.sf(x)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        let z = (x - self.loc) / self.scale;
        (norm_ln_pdf(z) - self.ln_mass()).exp() / self.scale
    }

    pub fn mean(&self) -> f64 {
        let m = self.ratio();
        self.loc + self.scale * (norm_ln_pdf(m) - self.ln_mass()).exp()
    }

    fn quantile_guess(&self) -> f64 {
        self.loc.max(0.0) + 10.0 * self.scale
    }

    pub fn crps(&self, x: f64) -> f64 {
        let y = x.max(0.0);
        let below = (-x).max(0.0);
        if self.ratio() < TN_CLOSED_FORM_MIN_RATIO {
            let upper = invert_cdf(|t| self.cdf(t), |t| self.pdf(t), 1.0 - 1e-12, self.quantile_guess());
            return numeric_crps(|t| self.cdf(t), y, upper) + below;
        }
        let m = self.ratio();
        let z = (y - self.loc) / self.scale;
        let p = norm_cdf(m).max(MASS_FLOOR);
        let cdf_z = norm_cdf(z);
        let value = z * (2.0 * cdf_z + p - 2.0) / p + 2.0 * norm_pdf(z) / p
            - norm_cdf(SQRT_2 * m) / (PI.sqrt() * p * p);
        self.scale * value + below
    }

    /// Partial derivatives of the CRPS with respect to `(loc, scale)`.
    pub fn crps_gradient(&self, x: f64) -> (f64, f64) {
        let y = x.max(0.0);
        if self.ratio() < TN_CLOSED_FORM_MIN_RATIO {
            return self.crps_gradient_numeric(x);
        }
        let t = self.crps_terms(y);
        let d_loc = -t.d_z + t.d_m;
        let d_scale = t.value - t.z * t.d_z - t.m * t.d_m;
        (d_loc, d_scale)
    }

    /// CRPS together with its `(loc, scale)` gradient.
    pub fn crps_with_gradient(&self, x: f64) -> (f64, (f64, f64)) {
        if self.ratio() < TN_CLOSED_FORM_MIN_RATIO {
            return (self.crps(x), self.crps_gradient_numeric(x));
        }
        let t = self.crps_terms(x.max(0.0));
        let d_loc = -t.d_z + t.d_m;
        let d_scale = t.value - t.z * t.d_z - t.m * t.d_m;
        (self.scale * t.value + (-x).max(0.0), (d_loc, d_scale))
    }

    fn crps_gradient_numeric(&self, x: f64) -> (f64, f64) {
        let h_loc = 1e-6 * self.scale.max(1e-3);
        let h_scale = 1e-6 * self.scale;
        let at = |loc: f64, scale: f64| TruncNormal { loc, scale }.crps(x);
        let d_loc = (at(self.loc + h_loc, self.scale) - at(self.loc - h_loc, self.scale)) / (2.0 * h_loc);
        let d_scale = (at(self.loc, self.scale + h_scale) - at(self.loc, self.scale - h_scale)) / (2.0 * h_scale);
        (d_loc, d_scale)
    }

    // CRPS/scale as H(z, m) with z = (y - loc)/scale and m = loc/scale,
    // together with ∂H/∂z and ∂H/∂m.
    fn crps_terms(&self, y: f64) -> TnTerms {
        let m = self.ratio();
        let z = (y - self.loc) / self.scale;
        let p = norm_cdf(m).max(MASS_FLOOR);
        let phi_m = norm_pdf(m);
        let cdf_z = norm_cdf(z);
        let pdf_z = norm_pdf(z);
        let cdf_r = norm_cdf(SQRT_2 * m);
        let pdf_r = norm_pdf(SQRT_2 * m);
        let inv_sqrt_pi = 1.0 / PI.sqrt();

        let value = z * (2.0 * cdf_z + p - 2.0) / p + 2.0 * pdf_z / p - inv_sqrt_pi * cdf_r / (p * p);
        let d_z = (2.0 * cdf_z + p - 2.0) / p;
        let d_m = -phi_m / (p * p) * (z * (2.0 * cdf_z - 2.0) + 2.0 * pdf_z)
            - SQRT_2 * inv_sqrt_pi * pdf_r / (p * p)
            + 2.0 * inv_sqrt_pi * cdf_r * phi_m / (p * p * p);
        TnTerms { value, d_z, d_m, z, m }
    }
}

struct TnTerms {
    value: f64,
    d_z: f64,
    d_m: f64,
    z: f64,
    m: f64,
}

// ---------------------------------------------------------------------------
// Log-normal (mean / variance parameterization)
// ---------------------------------------------------------------------------

/// Log-normal law parameterized by its mean `m` and variance `v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogNormalMV {
    mean: f64,
    var: f64,
    mu_log: f64,
    sigma_log: f64,
}

/// Convert a log-normal mean and variance to the location and scale of `ln X`.
pub fn ln_from_moments(m: f64, v: f64) -> Result<(f64, f64)> {
    ensure_finite("mean", m)?;
    ensure_finite("variance", v)?;
    if m <= 0.0 || v <= 0.0 {
        return Err(Error::invalid(format!(
            "log-normal mean and variance must be positive, got m={m}, v={v}"
        )));
    }
    let sigma2 = (v / (m * m)).ln_1p();
    Ok((m.ln() - 0.5 * sigma2, sigma2.sqrt()))
}

impl LogNormalMV {
    pub fn new(mean: f64, var: f64) -> Result<Self> {
        let (mu_log, sigma_log) = ln_from_moments(mean, var)?;
        Ok(Self {
            mean,
            var,
            mu_log,
            sigma_log,
        })
    }

    /// Build from the parameters of `ln X ~ N(mu_log, sigma_log²)`.
    pub fn from_log_params(mu_log: f64, sigma_log: f64) -> Result<Self> {
        ensure_finite("mu_log", mu_log)?;
        ensure_finite("sigma_log", sigma_log)?;
        if sigma_log <= 0.0 {
            return Err(Error::invalid("sigma_log must be positive"));
        }
        let s2 = sigma_log * sigma_log;
        let mean = (mu_log + 0.5 * s2).exp();
        let var = s2.exp_m1() * (2.0 * mu_log + s2).exp();
        Ok(Self {
            mean,
            var,
            mu_log,
            sigma_log,
        })
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn var(&self) -> f64 {
        self.var
    }

    pub fn log_params(&self) -> (f64, f64) {
        (self.mu_log, self.sigma_log)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        norm_cdf((x.ln() - self.mu_log) / self.sigma_log)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        norm_pdf((x.ln() - self.mu_log) / self.sigma_log) / (x * self.sigma_log)
    }

    pub fn crps(&self, x: f64) -> f64 {
        let s = self.sigma_log;
        let tail = 2.0 * self.mean * (1.0 - norm_cdf(s / SQRT_2));
        if x <= 0.0 {
            return tail - x;
        }
        let w = (x.ln() - self.mu_log) / s;
        x * (2.0 * norm_cdf(w) - 1.0) - 2.0 * self.mean * (norm_cdf(w - s) + norm_cdf(s / SQRT_2) - 1.0)
    }

    fn quantile_guess(&self) -> f64 {
        (self.mu_log + 6.0 * self.sigma_log).exp()
    }
}

// ---------------------------------------------------------------------------
// GEV and truncated GEV
// ---------------------------------------------------------------------------

/// `t(x) = [1 + ξ(x-μ)/σ]^{-1/ξ}` (or `exp(-(x-μ)/σ)` for ξ = 0), so that
/// `G(x) = exp(-t(x))`. Outside the support `t` is `+inf` (below) or `0` (above).
#[inline]
fn gev_t(loc: f64, scale: f64, shape: f64, x: f64) -> f64 {
    let z = (x - loc) / scale;
    if shape == 0.0 {
        return (-z).exp();
    }
    let a = shape * z;
    if a <= -1.0 {
        return if shape > 0.0 { f64::INFINITY } else { 0.0 };
    }
    (-a.ln_1p() / shape).exp()
}

/// GEV distribution function `G(x | loc, scale, shape)`, including the
/// Gumbel branch at `shape = 0` and the zero/one values outside the support.
pub fn gev_cdf(loc: f64, scale: f64, shape: f64, x: f64) -> Result<f64> {
    ensure_finite("loc", loc)?;
    ensure_finite("scale", scale)?;
    ensure_finite("shape", shape)?;
    ensure_finite("x", x)?;
    if scale <= 0.0 {
        return Err(Error::invalid(format!("scale must be positive, got {scale}")));
    }
    Ok((-gev_t(loc, scale, shape, x)).exp())
}

/// GEV law truncated from below at zero, with shape in `(SHAPE_MIN, SHAPE_MAX)`.
///
/// When the untruncated law puts all its mass below zero the truncation is
/// degenerate and the distribution is a point mass at zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tgev {
    loc: f64,
    scale: f64,
    shape: f64,
}

impl Tgev {
    pub fn new(loc: f64, scale: f64, shape: f64) -> Result<Self> {
        ensure_finite("loc", loc)?;
        ensure_finite("scale", scale)?;
        ensure_finite("shape", shape)?;
        if scale <= 0.0 {
            return Err(Error::invalid(format!("scale must be positive, got {scale}")));
        }
        if !(shape > SHAPE_MIN && shape < SHAPE_MAX) {
            return Err(Error::invalid(format!(
                "shape must lie in ({SHAPE_MIN}, {SHAPE_MAX:.6}), got {shape}"
            )));
        }
        Ok(Self { loc, scale, shape })
    }

    pub fn loc(&self) -> f64 {
        self.loc
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    #[inline]
    fn t(&self, x: f64) -> f64 {
        gev_t(self.loc, self.scale, self.shape, x)
    }

    /// `1 - G(0)`: mass of the untruncated GEV above zero.
    #[inline]
    fn retained_mass(&self) -> f64 {
        -(-self.t(0.0)).exp_m1()
    }

    pub fn is_degenerate(&self) -> bool {
        self.retained_mass() <= 0.0
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        let c = self.retained_mass();
        if c <= 0.0 {
            return 1.0;
        }
        let sf = -(-self.t(x)).exp_m1();
        (1.0 - sf / c).clamp(0.0, 1.0)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        let c = self.retained_mass();
        if c <= 0.0 {
            return 0.0;
        }
        let t = self.t(x);
        if t == 0.0 || t.is_infinite() {
            return 0.0;
        }
        t.powf(self.shape + 1.0) * (-t).exp() / (self.scale * c)
    }

    pub fn mean(&self) -> f64 {
        if self.is_degenerate() {
            return 0.0;
        }
        self.bridged(|d| {
            let c = d.retained_mass();
            d.upper_integral(d.t(0.0), 1.0) / c
        })
    }

    pub fn crps(&self, x: f64) -> f64 {
        let t0 = self.t(0.0);
        let c = -(-t0).exp_m1();
        if c <= 0.0 {
            return x.abs();
        }
        let y = x.max(0.0);
        let below = (-x).max(0.0);
        if c < TGEV_CLOSED_FORM_MIN_MASS {
            let upper = invert_cdf(|t| self.cdf(t), |t| self.pdf(t), 1.0 - 1e-12, self.quantile_guess());
            return numeric_crps(|t| self.cdf(t), y, upper) + below;
        }
        if self.needs_bridge() {
            return self.bridged(|d| d.crps_closed_form(y)) + below;
        }
        self.crps_closed_parts(y, t0, c) + below
    }

    fn needs_bridge(&self) -> bool {
        self.shape != 0.0 && self.shape.abs() < TGEV_SHAPE_BRIDGE
    }

    /// Evaluate `f` directly, or, for shapes within `TGEV_SHAPE_BRIDGE` of zero,
    /// by quadratic interpolation between shapes `-δ, 0, δ`. This avoids the
    /// `σ/ξ` cancellation of the closed forms near the Gumbel limit.
    fn bridged(&self, f: impl Fn(&Tgev) -> f64) -> f64 {
        let xi = self.shape;
        if !self.needs_bridge() {
            return f(self);
        }
        let d = TGEV_SHAPE_BRIDGE;
        let at = |shape: f64| f(&Tgev { shape, ..*self });
        let (fm, f0, fp) = (at(-d), at(0.0), at(d));
        let u = xi / d;
        f0 + 0.5 * u * (fp - fm) + 0.5 * u * u * (fp - 2.0 * f0 + fm)
    }

    /// `∫_{u}^{1} v^{k-1} Q(v) dv` for `k ∈ {1, 2}` where `u = exp(-t)` and
    /// `Q` is the GEV quantile function.
    fn upper_integral(&self, t: f64, k: f64) -> f64 {
        let mass = -(-k * t).exp_m1() / k;
        self.with_gamma(|g| self.upper_integral_with(t, k, mass, g))
    }

    /// Run `f` with the incomplete gamma table for `s = 1 - ξ` (unused on the
    /// Gumbel branch). Fitting evaluates many cases with a shared shape, so
    /// the last table is kept per thread.
    fn with_gamma<R>(&self, f: impl FnOnce(&LowerGamma) -> R) -> R {
        thread_local! {
            static LAST: RefCell<LowerGamma> = RefCell::new(LowerGamma::new(1.0));
        }
        let s = if self.shape == 0.0 { 1.0 } else { 1.0 - self.shape };
        LAST.with(|cell| {
            if cell.borrow().s() != s {
                *cell.borrow_mut() = LowerGamma::new(s);
            }
            f(&cell.borrow())
        })
    }

    /// `mass` must equal `(1 - exp(-k t)) / k`.
    fn upper_integral_with(&self, t: f64, k: f64, mass: f64, gamma: &LowerGamma) -> f64 {
        let (mu, sigma, xi) = (self.loc, self.scale, self.shape);
        if xi == 0.0 {
            mu * mass - sigma * log_exp_integral(k, t)
        } else {
            let gamma_part = if k == 1.0 {
                gamma.eval(t)
            } else {
                gamma.half_power() * gamma.eval(k * t)
            };
            (mu - sigma / xi) * mass + sigma / xi * gamma_part
        }
    }

    fn crps_closed_form(&self, y: f64) -> f64 {
        let t0 = self.t(0.0);
        self.crps_closed_parts(y, t0, -(-t0).exp_m1())
    }

    /// Closed-form CRPS at `y ≥ 0` given `t0 = t(0)` and the retained mass
    /// `c = 1 - exp(-t0)`.
    fn crps_closed_parts(&self, y: f64, t0: f64, c: f64) -> f64 {
        let ty = self.t(y);
        let p0 = 1.0 - c;
        let sf_y = -(-ty).exp_m1();
        let f_y = 1.0 - sf_y / c;
        self.with_gamma(|g| {
            let j1_y = self.upper_integral_with(ty, 1.0, sf_y, g);
            let j1_0 = self.upper_integral_with(t0, 1.0, c, g);
            let j2_0 = self.upper_integral_with(t0, 2.0, 0.5 * c * (1.0 + p0), g);
            y * (2.0 * f_y - 1.0) + 2.0 * j1_y / c - 2.0 * (j2_0 - p0 * j1_0) / (c * c)
        })
    }

    fn quantile_guess(&self) -> f64 {
        self.loc.max(0.0) + 10.0 * self.scale
    }
}

// ---------------------------------------------------------------------------
// Tagged union
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PredictiveDistribution {
    TruncNormal(TruncNormal),
    LogNormal(LogNormalMV),
    Tgev(Tgev),
}

impl From<TruncNormal> for PredictiveDistribution {
    fn from(d: TruncNormal) -> Self {
        PredictiveDistribution::TruncNormal(d)
    }
}

impl From<LogNormalMV> for PredictiveDistribution {
    fn from(d: LogNormalMV) -> Self {
        PredictiveDistribution::LogNormal(d)
    }
}

impl From<Tgev> for PredictiveDistribution {
    fn from(d: Tgev) -> Self {
        PredictiveDistribution::Tgev(d)
    }
}

impl PredictiveDistribution {
    pub fn family(&self) -> Family {
        match self {
            PredictiveDistribution::TruncNormal(_) => Family::TruncNormal,
            PredictiveDistribution::LogNormal(_) => Family::LogNormal,
            PredictiveDistribution::Tgev(_) => Family::Tgev,
        }
    }

    /// Native parameters: `(loc, scale)` for TN, `(mean, variance)` for LN,
    /// `(loc, scale, shape)` for TGEV.
    pub fn params(&self) -> Vec<f64> {
        match self {
            PredictiveDistribution::TruncNormal(d) => vec![d.loc, d.scale],
            PredictiveDistribution::LogNormal(d) => vec![d.mean, d.var],
            PredictiveDistribution::Tgev(d) => vec![d.loc, d.scale, d.shape],
        }
    }

    pub fn from_params(family: Family, params: &[f64]) -> Result<Self> {
        let expect = match family {
            Family::TruncNormal | Family::LogNormal => 2,
            Family::Tgev => 3,
        };
        if params.len() != expect {
            return Err(Error::invalid(format!(
                "{family} expects {expect} parameters, got {}",
                params.len()
            )));
        }
        Ok(match family {
            Family::TruncNormal => TruncNormal::new(params[0], params[1])?.into(),
            Family::LogNormal => LogNormalMV::new(params[0], params[1])?.into(),
            Family::Tgev => Tgev::new(params[0], params[1], params[2])?.into(),
        })
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            PredictiveDistribution::TruncNormal(d) => d.cdf(x),
            PredictiveDistribution::LogNormal(d) => d.cdf(x),
            PredictiveDistribution::Tgev(d) => d.cdf(x),
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match self {
            PredictiveDistribution::TruncNormal(d) => d.pdf(x),
            PredictiveDistribution::LogNormal(d) => d.pdf(x),
            PredictiveDistribution::Tgev(d) => d.pdf(x),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            PredictiveDistribution::TruncNormal(d) => d.mean(),
            PredictiveDistribution::LogNormal(d) => d.mean(),
            PredictiveDistribution::Tgev(d) => d.mean(),
        }
    }

    /// Quantile by bracketed bisection with Newton polishing.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::invalid(format!("probability must lie in (0, 1), got {p}")));
        }
        let guess = match self {
            PredictiveDistribution::TruncNormal(d) => d.quantile_guess(),
            PredictiveDistribution::LogNormal(d) => d.quantile_guess(),
            PredictiveDistribution::Tgev(d) => {
                if d.is_degenerate() {
                    return Ok(0.0);
                }
                d.quantile_guess()
            }
        };
        Ok(invert_cdf(|x| self.cdf(x), |x| self.pdf(x), p, guess))
    }

    pub fn median(&self) -> f64 {
        self.quantile(0.5).expect("0.5 is a valid probability")
    }

    /// Closed-form CRPS against observation `x`.
    pub fn crps(&self, x: f64) -> Result<f64> {
        ensure_finite("observation", x)?;
        Ok(self.crps_unchecked(x))
    }

    #[inline]
    pub(crate) fn crps_unchecked(&self, x: f64) -> f64 {
        match self {
            PredictiveDistribution::TruncNormal(d) => d.crps(x),
            PredictiveDistribution::LogNormal(d) => d.crps(x),
            PredictiveDistribution::Tgev(d) => d.crps(x),
        }
    }

    /// A characteristic spread in m/s (scale or standard deviation).
    pub fn spread(&self) -> f64 {
        match self {
            PredictiveDistribution::TruncNormal(d) => d.scale,
            PredictiveDistribution::LogNormal(d) => d.var.sqrt(),
            PredictiveDistribution::Tgev(d) => d.scale,
        }
    }
}

/// Closed-form CRPS of `d` at observation `x`.
pub fn crps_closed(d: &PredictiveDistribution, x: f64) -> Result<f64> {
    d.crps(x)
}

/// Solve `cdf(x) = p` on `[0, ∞)`.
fn invert_cdf(cdf: impl Fn(f64) -> f64, pdf: impl Fn(f64) -> f64, p: f64, guess: f64) -> f64 {
    let mut lo = 0.0;
    let mut hi = if guess.is_finite() && guess > 0.0 { guess } else { 1.0 };
    let mut expansions = 0;
    while cdf(hi) < p && expansions < 2000 {
        lo = hi;
        hi *= 2.0;
        expansions += 1;
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..QUANTILE_MAX_ITER {
        let f = cdf(x) - p;
        if f.abs() <= QUANTILE_PROB_TOL {
            break;
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi.abs() {
            break;
        }
        let dens = pdf(x);
        let newton = x - f / dens;
        x = if dens > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    x
}

/// CRPS of a CDF on `[0, ∞)` at `y ≥ 0` by fixed Gauss–Legendre panels;
/// mass above `upper` is treated as negligible.
fn numeric_crps(cdf: impl Fn(f64) -> f64, y: f64, upper: f64) -> f64 {
    const PANELS: usize = 64;
    let split = y.min(upper);
    let mut total = integrate_gl(|t| cdf(t).powi(2), 0.0, split, PANELS);
    if y > upper {
        total += y - upper;
    } else {
        total += integrate_gl(|t| (1.0 - cdf(t)).powi(2), y, upper, PANELS);
    }
    total
}
