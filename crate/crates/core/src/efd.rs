//! Exponential-family input models and their conjugate posteriors.
//!
//! Every input density is written as `κ(x) exp(θ·T(x) − A(θ))`, and every
//! posterior keeps the running sufficient statistic `χ_t = Σ T(ξ_i)` next to
//! its closed-form hyperparameters. All densities are evaluated in log space.

use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma, Normal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};
use std::f64::consts::PI;

use crate::error::{Result, UqError};

/// Relative tolerance of the posterior quantile root finder.
pub const QUANTILE_REL_TOL: f64 = 1e-10;
/// Iteration cap of the posterior quantile root finder.
pub const QUANTILE_MAX_ITER: usize = 200;
/// Proposals tried per accepted draw before sampling gives up.
const MAX_REJECTIONS: usize = 1_000_000;

/// Parametric input distribution `F(·; θ)` with a scalar parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum InputModel {
    /// Exponential distribution with rate `θ > 0`, support `[0, ∞)`.
    ExponentialRate,
    /// Normal distribution with unknown mean `θ` and known standard deviation.
    NormalKnownVariance { sd: f64 },
}

impl InputModel {
    pub fn normal(sd: f64) -> Result<Self> {
        if !(sd.is_finite() && sd > 0.0) {
            return Err(UqError::Domain(format!("normal sd must be positive, got {sd}")));
        }
        Ok(InputModel::NormalKnownVariance { sd })
    }

    pub fn in_support(&self, x: f64) -> bool {
        match self {
            InputModel::ExponentialRate => x.is_finite() && x >= 0.0,
            InputModel::NormalKnownVariance { .. } => x.is_finite(),
        }
    }

    pub fn in_natural_space(&self, theta: f64) -> bool {
        match self {
            InputModel::ExponentialRate => theta.is_finite() && theta > 0.0,
            InputModel::NormalKnownVariance { .. } => theta.is_finite(),
        }
    }

    /// `T(x)`.
    pub fn sufficient_stat(&self, x: f64) -> f64 {
        match self {
            InputModel::ExponentialRate => -x,
            InputModel::NormalKnownVariance { sd } => x / (sd * sd),
        }
    }

    /// `A(θ)`.
    pub fn log_partition(&self, theta: f64) -> f64 {
        match self {
            InputModel::ExponentialRate => -theta.ln(),
            InputModel::NormalKnownVariance { sd } => theta * theta / (2.0 * sd * sd),
        }
    }

    /// `ln κ(x)`.
    pub fn log_base_measure(&self, x: f64) -> f64 {
        match self {
            InputModel::ExponentialRate => 0.0,
            InputModel::NormalKnownVariance { sd } => {
                let var = sd * sd;
                -x * x / (2.0 * var) - 0.5 * (2.0 * PI * var).ln()
            }
        }
    }

    /// `ln p(x | θ)` without argument checks. Callers guarantee support.
    #[inline]
    pub(crate) fn log_pdf_unchecked(&self, x: f64, theta: f64) -> f64 {
        self.log_base_measure(x) + theta * self.sufficient_stat(x) - self.log_partition(theta)
    }

    /// `ln p(x | θ)`.
    pub fn log_pdf(&self, x: f64, theta: f64) -> Result<f64> {
        if !self.in_support(x) {
            return Err(UqError::Domain(format!("x = {x} outside the support of {self:?}")));
        }
        if !self.in_natural_space(theta) {
            return Err(UqError::Domain(format!(
                "θ = {theta} outside the natural parameter space of {self:?}"
            )));
        }
        Ok(self.log_pdf_unchecked(x, theta))
    }

    /// Draw one input `ξ ~ F(·; θ)`.
    pub fn sample<R: Rng + ?Sized>(&self, theta: f64, rng: &mut R) -> Result<f64> {
        if !self.in_natural_space(theta) {
            return Err(UqError::Domain(format!("cannot sample {self:?} at θ = {theta}")));
        }
        let x = match self {
            InputModel::ExponentialRate => Exp::new(theta)
                .map_err(|e| UqError::Domain(e.to_string()))?
                .sample(rng),
            InputModel::NormalKnownVariance { sd } => Normal::new(theta, *sd)
                .map_err(|e| UqError::Domain(e.to_string()))?
                .sample(rng),
        };
        Ok(x)
    }
}

/// Compact box for θ. Used as an optional truncation of the posterior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    lower: f64,
    upper: f64,
}

impl ParamBox {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(UqError::Domain(format!("invalid parameter box [{lower}, {upper}]")));
        }
        Ok(ParamBox { lower, upper })
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn contains(&self, theta: f64) -> bool {
        theta >= self.lower && theta <= self.upper
    }
}

/// Hyperparameters of a conjugate posterior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum PosteriorParams {
    /// Gamma posterior on an exponential rate; `rate` is the inverse scale.
    Gamma { shape: f64, rate: f64 },
    /// Normal posterior on a normal mean with known observation variance.
    Normal { mean: f64, variance: f64, obs_variance: f64 },
}

/// `E_den[(π_num/π_den)²]`, which may diverge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SecondMoment {
    Finite(f64),
    Infinite,
}

impl SecondMoment {
    pub fn value(&self) -> f64 {
        match self {
            SecondMoment::Finite(v) => *v,
            SecondMoment::Infinite => f64::INFINITY,
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, SecondMoment::Finite(_))
    }
}

/// Posterior `π_t` over the input parameter, closed under [`ConjugatePosterior::update`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConjugatePosterior {
    params: PosteriorParams,
    count: u64,
    suff_stat: f64,
    truncation: Option<ParamBox>,
    /// Log normalizing constant, including the truncation mass.
    log_norm: f64,
}

impl ConjugatePosterior {
    /// Gamma prior/posterior with the given shape and rate (inverse scale).
    pub fn gamma(shape: f64, rate: f64) -> Result<Self> {
        Self::from_params(PosteriorParams::Gamma { shape, rate }, 0, 0.0, None)
    }

    /// Normal prior/posterior on the mean, for data with known standard deviation `obs_sd`.
    pub fn normal(mean: f64, variance: f64, obs_sd: f64) -> Result<Self> {
        if !(obs_sd.is_finite() && obs_sd > 0.0) {
            return Err(UqError::Domain(format!("observation sd must be positive, got {obs_sd}")));
        }
        Self::from_params(
            PosteriorParams::Normal { mean, variance, obs_variance: obs_sd * obs_sd },
            0,
            0.0,
            None,
        )
    }

    /// Restrict the posterior to `bx`. Densities are renormalized so every ratio
    /// and quantile stays exact for the truncated distribution.
    pub fn with_truncation(self, bx: ParamBox) -> Result<Self> {
        Self::from_params(self.params, self.count, self.suff_stat, Some(bx))
    }

    fn from_params(
        params: PosteriorParams,
        count: u64,
        suff_stat: f64,
        truncation: Option<ParamBox>,
    ) -> Result<Self> {
        let base = match params {
            PosteriorParams::Gamma { shape, rate } => {
                if !(shape.is_finite() && shape > 0.0 && rate.is_finite() && rate > 0.0) {
                    return Err(UqError::Domain(format!(
                        "gamma posterior needs shape > 0 and rate > 0, got ({shape}, {rate})"
                    )));
                }
                shape * rate.ln() - ln_gamma(shape)
            }
            PosteriorParams::Normal { mean, variance, obs_variance } => {
                if !(mean.is_finite() && variance.is_finite() && variance > 0.0) {
                    return Err(UqError::Domain(format!(
                        "normal posterior needs finite mean and variance > 0, got ({mean}, {variance})"
                    )));
                }
                if !(obs_variance.is_finite() && obs_variance > 0.0) {
                    return Err(UqError::Domain("observation variance must be positive".into()));
                }
                -0.5 * (2.0 * PI * variance).ln()
            }
        };
        let mut post = ConjugatePosterior { params, count, suff_stat, truncation, log_norm: base };
        if let Some(bx) = truncation {
            if matches!(params, PosteriorParams::Gamma { .. }) && bx.lower < 0.0 {
                return Err(UqError::Domain("gamma truncation box must lie in [0, ∞)".into()));
            }
            let mass = post.untruncated_mass(bx.lower, bx.upper);
            if !(mass > 0.0) {
                return Err(UqError::Domain(format!(
                    "posterior {params:?} has no mass in [{}, {}]",
                    bx.lower, bx.upper
                )));
            }
            post.log_norm -= mass.ln();
        }
        Ok(post)
    }

    pub fn params(&self) -> PosteriorParams {
        self.params
    }

    /// Number of observations absorbed since construction.
    pub fn count(&self) -> u64 {
        self.count
    }

    /// Running sufficient statistic `χ_t = Σ T(ξ_i)`.
    pub fn sufficient_stat(&self) -> f64 {
        self.suff_stat
    }

    pub fn truncation(&self) -> Option<ParamBox> {
        self.truncation
    }

    /// The likelihood this posterior is conjugate to.
    pub fn input_model(&self) -> InputModel {
        match self.params {
            PosteriorParams::Gamma { .. } => InputModel::ExponentialRate,
            PosteriorParams::Normal { obs_variance, .. } => {
                InputModel::NormalKnownVariance { sd: obs_variance.sqrt() }
            }
        }
    }

    pub fn same_family(&self, other: &Self) -> bool {
        matches!(
            (self.params, other.params),
            (PosteriorParams::Gamma { .. }, PosteriorParams::Gamma { .. })
                | (PosteriorParams::Normal { .. }, PosteriorParams::Normal { .. })
        ) && self.input_model() == other.input_model()
    }

    /// Exact conjugate update with one observation.
    pub fn update(&self, x: f64) -> Result<Self> {
        if !x.is_finite() {
            return Err(UqError::Input(format!("observation must be finite, got {x}")));
        }
        let model = self.input_model();
        if !model.in_support(x) {
            return Err(UqError::Domain(format!("observation {x} outside the support of {model:?}")));
        }
        let params = match self.params {
            PosteriorParams::Gamma { shape, rate } => {
                PosteriorParams::Gamma { shape: shape + 1.0, rate: rate + x }
            }
            PosteriorParams::Normal { mean, variance, obs_variance } => {
                let precision = 1.0 / variance + 1.0 / obs_variance;
                let mean = (mean / variance + x / obs_variance) / precision;
                PosteriorParams::Normal { mean, variance: 1.0 / precision, obs_variance }
            }
        };
        Self::from_params(
            params,
            self.count + 1,
            self.suff_stat + model.sufficient_stat(x),
            self.truncation,
        )
    }

    pub fn update_many(&self, xs: &[f64]) -> Result<Self> {
        xs.iter().try_fold(self.clone(), |post, &x| post.update(x))
    }

    fn in_family_support(&self, theta: f64) -> bool {
        match self.params {
            PosteriorParams::Gamma { .. } => theta.is_finite() && theta > 0.0,
            PosteriorParams::Normal { .. } => theta.is_finite(),
        }
    }

    #[inline]
    pub(crate) fn log_pdf_unchecked(&self, theta: f64) -> f64 {
        if let Some(bx) = self.truncation {
            if !bx.contains(theta) {
                return f64::NEG_INFINITY;
            }
        }
        match self.params {
            PosteriorParams::Gamma { shape, rate } => {
                self.log_norm + (shape - 1.0) * theta.ln() - rate * theta
            }
            PosteriorParams::Normal { mean, variance, .. } => {
                let d = theta - mean;
                self.log_norm - d * d / (2.0 * variance)
            }
        }
    }

    /// Log density with its normalizing constant. Points outside a truncation
    /// box have density zero (`-∞`); points outside the family support are errors.
    pub fn log_pdf(&self, theta: f64) -> Result<f64> {
        if !self.in_family_support(theta) {
            return Err(UqError::Domain(format!("θ = {theta} outside the posterior support")));
        }
        Ok(self.log_pdf_unchecked(theta))
    }

    fn untruncated_cdf(&self, theta: f64) -> f64 {
        match self.params {
            PosteriorParams::Gamma { shape, rate } => {
                if theta <= 0.0 {
                    0.0
                } else if theta.is_infinite() {
                    1.0
                } else {
                    gamma_lr(shape, rate * theta)
                }
            }
            PosteriorParams::Normal { mean, variance, .. } => {
                std_normal_cdf((theta - mean) / variance.sqrt())
            }
        }
    }

    fn untruncated_sf(&self, theta: f64) -> f64 {
        match self.params {
            PosteriorParams::Gamma { shape, rate } => {
                if theta <= 0.0 {
                    1.0
                } else if theta.is_infinite() {
                    0.0
                } else {
                    gamma_ur(shape, rate * theta)
                }
            }
            PosteriorParams::Normal { mean, variance, .. } => {
                std_normal_cdf(-(theta - mean) / variance.sqrt())
            }
        }
    }

    fn untruncated_mass(&self, lo: f64, hi: f64) -> f64 {
        // subtract in whichever tail keeps precision
        let median_side = self.untruncated_cdf(lo) > 0.5;
        if median_side {
            self.untruncated_sf(lo) - self.untruncated_sf(hi)
        } else {
            self.untruncated_cdf(hi) - self.untruncated_cdf(lo)
        }
    }

    pub fn cdf(&self, theta: f64) -> f64 {
        match self.truncation {
            None => self.untruncated_cdf(theta),
            Some(bx) => {
                if theta < bx.lower {
                    0.0
                } else if theta >= bx.upper {
                    1.0
                } else {
                    self.untruncated_mass(bx.lower, theta) / self.untruncated_mass(bx.lower, bx.upper)
                }
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match self.params {
            PosteriorParams::Gamma { shape, rate } => shape / rate,
            PosteriorParams::Normal { mean, .. } => mean,
        }
    }

    /// Inverse CDF. Accurate to [`QUANTILE_REL_TOL`] relative error.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(UqError::Domain(format!("quantile level must lie in (0, 1), got {p}")));
        }
        match self.truncation {
            None => self.untruncated_quantile(p),
            Some(bx) => {
                let lo = self.untruncated_cdf(bx.lower);
                let hi = self.untruncated_cdf(bx.upper);
                let target = lo + p * (hi - lo);
                let q = self.untruncated_quantile(target.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON))?;
                Ok(q.clamp(bx.lower, bx.upper))
            }
        }
    }

    fn untruncated_quantile(&self, p: f64) -> Result<f64> {
        match self.params {
            PosteriorParams::Gamma { shape, rate } => Ok(standard_gamma_quantile(shape, p)? / rate),
            PosteriorParams::Normal { mean, variance, .. } => {
                Ok(mean - std::f64::consts::SQRT_2 * variance.sqrt() * erfc_inv(2.0 * p))
            }
        }
    }

    /// `m` independent draws. Draws outside the family support (a gamma variate
    /// that underflowed to zero) or outside the truncation box are rejected.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, m: usize) -> Result<Vec<f64>> {
        if m == 0 {
            return Err(UqError::Usage("sample count must be at least 1".into()));
        }
        let mut out = Vec::with_capacity(m);
        match self.params {
            PosteriorParams::Gamma { shape, rate } => {
                let dist = Gamma::new(shape, 1.0 / rate).map_err(|e| UqError::Domain(e.to_string()))?;
                for _ in 0..m {
                    out.push(self.draw_accepted(|| dist.sample(rng))?);
                }
            }
            PosteriorParams::Normal { mean, variance, .. } => {
                let dist =
                    Normal::new(mean, variance.sqrt()).map_err(|e| UqError::Domain(e.to_string()))?;
                for _ in 0..m {
                    out.push(self.draw_accepted(|| dist.sample(rng))?);
                }
            }
        }
        Ok(out)
    }

    fn draw_accepted(&self, mut draw: impl FnMut() -> f64) -> Result<f64> {
        for _ in 0..MAX_REJECTIONS {
            let theta = draw();
            if self.in_family_support(theta) && self.truncation.is_none_or(|bx| bx.contains(theta)) {
                return Ok(theta);
            }
        }
        Err(UqError::Domain(format!(
            "rejection sampling from {:?} accepted nothing in {MAX_REJECTIONS} proposals",
            self.params
        )))
    }

    fn check_pair(&self, den: &Self) -> Result<()> {
        if !self.same_family(den) {
            return Err(UqError::Usage(format!(
                "posterior family mismatch: {:?} vs {:?}",
                self.params, den.params
            )));
        }
        Ok(())
    }
}

/// `ln(π_num(θ) / π_den(θ))` with closed-form normalizers.
pub fn log_ratio_posteriors(num: &ConjugatePosterior, den: &ConjugatePosterior, theta: f64) -> Result<f64> {
    num.check_pair(den)?;
    Ok(num.log_pdf(theta)? - den.log_pdf(theta)?)
}

/// Closed-form `E_den[(π_num/π_den)²] = ∫ π_num² / π_den`.
///
/// For untruncated gamma pairs the integral exists iff `2a₁ − a₂ > 0` and
/// `2b₁ − b₂ > 0`; for normal pairs iff `2v_den − v_num > 0`. Truncated pairs
/// must share one box and are only supported when the same conditions hold.
pub fn ratio_second_moment(num: &ConjugatePosterior, den: &ConjugatePosterior) -> Result<SecondMoment> {
    num.check_pair(den)?;
    if num.truncation != den.truncation {
        return Err(UqError::Usage("second moment needs identical truncation boxes".into()));
    }
    match (num.params, den.params) {
        (PosteriorParams::Gamma { shape: a1, rate: b1 }, PosteriorParams::Gamma { shape: a2, rate: b2 }) => {
            let a = 2.0 * a1 - a2;
            let b = 2.0 * b1 - b2;
            if !(a > 0.0 && b > 0.0) {
                return match num.truncation {
                    None => Ok(SecondMoment::Infinite),
                    Some(_) => Err(UqError::Unsupported(
                        "truncated second moment outside the closed-form region".into(),
                    )),
                };
            }
            let mut ln_m = 2.0 * a1 * b1.ln() - 2.0 * ln_gamma(a1) - a2 * b2.ln() + ln_gamma(a2)
                + ln_gamma(a) - a * b.ln();
            if let Some(bx) = num.truncation {
                let combined = ConjugatePosterior::gamma(a, b)?;
                ln_m += 2.0 * (num.log_norm - (a1 * b1.ln() - ln_gamma(a1)))
                    - (den.log_norm - (a2 * b2.ln() - ln_gamma(a2)))
                    + combined.untruncated_mass(bx.lower, bx.upper).ln();
            }
            Ok(SecondMoment::Finite(ln_m.exp()))
        }
        (
            PosteriorParams::Normal { mean: m1, variance: v1, .. },
            PosteriorParams::Normal { mean: m2, variance: v2, .. },
        ) => {
            let s = 2.0 * v2 - v1;
            if !(s > 0.0) {
                return match num.truncation {
                    None => Ok(SecondMoment::Infinite),
                    Some(_) => Err(UqError::Unsupported(
                        "truncated second moment outside the closed-form region".into(),
                    )),
                };
            }
            let d = m1 - m2;
            let mut ln_m = v2.ln() - 0.5 * v1.ln() - 0.5 * s.ln() + d * d / s;
            if let Some(bx) = num.truncation {
                let centre = (2.0 * m1 * v2 - m2 * v1) / s;
                let var = v1 * v2 / s;
                let combined = ConjugatePosterior::normal(centre, var, 1.0)?;
                let base = |v: f64| -0.5 * (2.0 * PI * v).ln();
                ln_m += 2.0 * (num.log_norm - base(v1)) - (den.log_norm - base(v2))
                    + combined.untruncated_mass(bx.lower, bx.upper).ln();
            }
            Ok(SecondMoment::Finite(ln_m.exp()))
        }
        _ => unreachable!("family checked above"),
    }
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Quantile of Gamma(shape, 1) by safeguarded Newton iteration on `ln x`.
fn standard_gamma_quantile(shape: f64, p: f64) -> Result<f64> {
    // Work with whichever tail is smaller so p near 1 keeps its digits.
    let upper = p > 0.5;
    let target = if upper { 1.0 - p } else { p };
    let resid = |u: f64| {
        let x = u.exp();
        if upper {
            target - gamma_ur(shape, x)
        } else {
            gamma_lr(shape, x) - target
        }
    };
    // d/du P(a, e^u) = e^u · density(e^u)
    let slope = |u: f64| (shape * u - u.exp() - ln_gamma(shape)).exp();

    let mut lo = shape.ln().min(0.0) - 1.0;
    let mut hi = shape.ln().max(0.0) + 1.0;
    let mut guard = 0;
    while resid(lo) > 0.0 {
        lo = 2.0 * lo - 1.0;
        guard += 1;
        if guard > 64 || lo < -745.0 {
            // the quantile sits below the smallest positive double
            return Ok(f64::MIN_POSITIVE);
        }
    }
    while resid(hi) < 0.0 {
        hi = 2.0 * hi + 1.0;
        guard += 1;
        if guard > 128 {
            return Err(UqError::Domain(format!("cannot bracket gamma quantile (a={shape}, p={p})")));
        }
    }

    let mut u = 0.5 * (lo + hi);
    for _ in 0..QUANTILE_MAX_ITER {
        let f = resid(u);
        if f == 0.0 {
            break;
        }
        if f > 0.0 {
            hi = u;
        } else {
            lo = u;
        }
        let d = slope(u);
        let newton = u - f / d;
        let next = if d > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        // |Δ ln x| bounds the relative error in x
        if (next - u).abs() <= QUANTILE_REL_TOL * 1e-2 || (hi - lo) <= QUANTILE_REL_TOL * 1e-2 {
            u = next;
            break;
        }
        u = next;
    }
    Ok(u.exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::LN_2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn log_pdf_examples() {
        let e = InputModel::ExponentialRate;
        assert_eq!(e.log_pdf(1.0, 1.0).unwrap(), -1.0);
        assert_relative_eq!(e.log_pdf(0.5, 2.0).unwrap(), -0.306_852_819_440_054_7, epsilon = 1e-12);
        let n = InputModel::normal(1.0).unwrap();
        assert_relative_eq!(n.log_pdf(0.0, 0.0).unwrap(), -0.918_938_533_204_672_7, epsilon = 1e-12);
    }

    #[test]
    fn log_pdf_domain_errors() {
        let e = InputModel::ExponentialRate;
        assert!(matches!(e.log_pdf(-1.0, 1.0), Err(UqError::Domain(_))));
        assert!(matches!(e.log_pdf(1.0, 0.0), Err(UqError::Domain(_))));
        assert!(matches!(e.log_pdf(f64::NAN, 1.0), Err(UqError::Domain(_))));
    }

    #[test]
    fn gamma_update_follows_experiment_prior() {
        let prior = ConjugatePosterior::gamma(0.001, 0.001).unwrap();
        let post = prior.update(2.0).unwrap();
        match post.params() {
            PosteriorParams::Gamma { shape, rate } => {
                assert_relative_eq!(shape, 1.001, epsilon = 1e-15);
                assert_relative_eq!(rate, 2.001, epsilon = 1e-15);
            }
            _ => unreachable!(),
        }
        assert_eq!(post.count(), 1);
        assert_eq!(post.sufficient_stat(), -2.0);
    }

    #[test]
    fn update_rejects_non_finite() {
        let prior = ConjugatePosterior::gamma(1.0, 1.0).unwrap();
        assert!(matches!(prior.update(f64::INFINITY), Err(UqError::Input(_))));
        assert!(matches!(prior.update(f64::NAN), Err(UqError::Input(_))));
        assert!(matches!(prior.update(-0.5), Err(UqError::Domain(_))));
    }

    #[test]
    fn normal_update_halves_variance() {
        let prior = ConjugatePosterior::normal(0.0, 1.0, 1.0).unwrap();
        let post = prior.update(0.0).unwrap();
        assert_eq!(post.params(), PosteriorParams::Normal { mean: 0.0, variance: 0.5, obs_variance: 1.0 });
    }

    #[test]
    fn posterior_log_pdf_examples() {
        let g11 = ConjugatePosterior::gamma(1.0, 1.0).unwrap();
        assert_relative_eq!(g11.log_pdf(1.0).unwrap(), -1.0, epsilon = 1e-14);
        let g22 = ConjugatePosterior::gamma(2.0, 2.0).unwrap();
        assert_relative_eq!(g22.log_pdf(1.0).unwrap(), 4f64.ln() - 2.0, epsilon = 1e-14);
        assert!(matches!(g22.log_pdf(0.0), Err(UqError::Domain(_))));
        assert!(matches!(g22.log_pdf(-1.0), Err(UqError::Domain(_))));
    }

    #[test]
    fn quantile_examples() {
        let g11 = ConjugatePosterior::gamma(1.0, 1.0).unwrap();
        assert_relative_eq!(g11.quantile(0.5).unwrap(), LN_2, max_relative = 1e-10);
        let n = ConjugatePosterior::normal(0.0, 1.0, 1.0).unwrap();
        assert_relative_eq!(n.quantile(0.975).unwrap(), 1.959_963_984_540_054, max_relative = 1e-10);
        let g22 = ConjugatePosterior::gamma(2.0, 2.0).unwrap();
        // root of 1 − e^{−2θ}(1 + 2θ) = 0.95, solved independently with Brent's method
        assert_relative_eq!(g22.quantile(0.95).unwrap(), 2.371_932_259_195_289, max_relative = 1e-10);
        assert!(matches!(g22.quantile(0.0), Err(UqError::Domain(_))));
        assert!(matches!(g22.quantile(1.0), Err(UqError::Domain(_))));
    }

    #[test]
    fn quantile_inverts_cdf_over_wide_shapes() {
        for &(a, b) in &[(0.001, 0.001), (0.5, 3.0), (1.001, 2.001), (50.0, 47.0), (400.0, 390.0)] {
            let g = ConjugatePosterior::gamma(a, b).unwrap();
            for &p in &[1e-6, 0.01, 0.05, 0.3, 0.5, 0.95, 0.999_999] {
                let q = g.quantile(p).unwrap();
                if q > 1e-300 {
                    assert_relative_eq!(g.cdf(q), p, max_relative = 1e-8);
                }
            }
        }
    }

    #[test]
    fn ratio_examples() {
        let g11 = ConjugatePosterior::gamma(1.0, 1.0).unwrap();
        let g22 = ConjugatePosterior::gamma(2.0, 2.0).unwrap();
        assert_eq!(log_ratio_posteriors(&g22, &g22, 0.7).unwrap(), 0.0);
        assert_relative_eq!(
            log_ratio_posteriors(&g22, &g11, 1.0).unwrap(),
            4f64.ln() - 1.0,
            epsilon = 1e-14
        );
        let n = ConjugatePosterior::normal(0.0, 1.0, 1.0).unwrap();
        assert!(matches!(log_ratio_posteriors(&g11, &n, 1.0), Err(UqError::Usage(_))));
    }

    #[test]
    fn second_moment_examples() {
        let g11 = ConjugatePosterior::gamma(1.0, 1.0).unwrap();
        let g22 = ConjugatePosterior::gamma(2.0, 2.0).unwrap();
        let g31 = ConjugatePosterior::gamma(3.0, 1.0).unwrap();
        assert_relative_eq!(ratio_second_moment(&g22, &g22).unwrap().value(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(ratio_second_moment(&g22, &g11).unwrap().value(), 32.0 / 27.0, epsilon = 1e-12);
        assert_eq!(ratio_second_moment(&g11, &g31).unwrap(), SecondMoment::Infinite);
        let n = ConjugatePosterior::normal(0.0, 1.0, 1.0).unwrap();
        assert!(matches!(ratio_second_moment(&g11, &n), Err(UqError::Usage(_))));
    }

    #[test]
    fn sampling_is_deterministic_and_centred() {
        let g = ConjugatePosterior::gamma(1.0, 1.0).unwrap();
        let a = g.sample(&mut ChaCha8Rng::seed_from_u64(11), 100).unwrap();
        let b = g.sample(&mut ChaCha8Rng::seed_from_u64(11), 100).unwrap();
        assert_eq!(a, b);
        let big = g.sample(&mut ChaCha8Rng::seed_from_u64(12), 1_000_000).unwrap();
        let mean = big.iter().sum::<f64>() / big.len() as f64;
        assert!((mean - 1.0).abs() < 3e-3, "mean {mean}");
        assert!(matches!(g.sample(&mut ChaCha8Rng::seed_from_u64(1), 0), Err(UqError::Usage(_))));
    }

    #[test]
    fn tiny_shape_prior_never_yields_zero() {
        let prior = ConjugatePosterior::gamma(0.001, 0.001).unwrap();
        let draws = prior.sample(&mut ChaCha8Rng::seed_from_u64(5), 10_000).unwrap();
        assert!(draws.iter().all(|&t| t > 0.0 && t.is_finite()));
    }

    #[test]
    fn truncation_renormalizes() {
        let bx = ParamBox::new(0.1, 10.0).unwrap();
        let prior = ConjugatePosterior::gamma(0.001, 0.001).unwrap().with_truncation(bx).unwrap();
        let draws = prior.sample(&mut ChaCha8Rng::seed_from_u64(9), 2_000).unwrap();
        assert!(draws.iter().all(|&t| bx.contains(t)));
        assert_eq!(prior.cdf(0.05), 0.0);
        assert_eq!(prior.cdf(10.0), 1.0);
        let med = prior.quantile(0.5).unwrap();
        assert_relative_eq!(prior.cdf(med), 0.5, max_relative = 1e-8);
        // truncated log density integrates to one: trapezoid in ln θ
        let n = 200_000;
        let (lo, hi) = (bx.lower().ln(), bx.upper().ln());
        let h = (hi - lo) / n as f64;
        let total: f64 = (0..=n)
            .map(|i| {
                let u = lo + i as f64 * h;
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                // exp(ln 10) can round past the box edge
                let theta = u.exp().clamp(bx.lower(), bx.upper());
                w * (prior.log_pdf(theta).unwrap() + theta.ln()).exp()
            })
            .sum::<f64>()
            * h;
        assert_relative_eq!(total, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn invalid_boxes_and_params() {
        assert!(ParamBox::new(1.0, 1.0).is_err());
        assert!(ParamBox::new(0.0, f64::INFINITY).is_err());
        assert!(ConjugatePosterior::gamma(0.0, 1.0).is_err());
        assert!(ConjugatePosterior::gamma(1.0, -1.0).is_err());
        assert!(ConjugatePosterior::normal(0.0, 0.0, 1.0).is_err());
        let g = ConjugatePosterior::gamma(1.0, 1.0).unwrap();
        assert!(g.with_truncation(ParamBox::new(-1.0, 1.0).unwrap()).is_err());
    }
}
