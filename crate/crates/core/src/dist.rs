//! Three-parameter lognormal base consumption and the population prior.
//!
//! A user's base consumption is `X = loc + scale * exp(sigma * Z)` with `Z`
//! standard normal, so `X` has support `(loc, inf)`. The closed-form moments
//! below feed the expected-utility integrals in [`crate::analytic`].

use std::f64::consts::SQRT_2;
use std::path::Path;

use rand::Rng;
use rand_distr::{Cauchy, Distribution, Exp, Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ConsumptionParams, UserType};

/// Standard normal CDF, `0.5 * erfc(-x / sqrt 2)`.
///
/// `erfc` keeps full relative precision in the lower tail, so the absolute
/// error is far below 1e-12 everywhere.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// CDF, mean and partial expectation `E[X 1{X <= a}]` evaluated at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub cdf: f64,
    pub mean: f64,
    pub partial_expectation: f64,
}

impl ConsumptionParams {
    pub fn mean(&self) -> f64 {
        self.loc + self.scale * (0.5 * self.sigma * self.sigma).exp()
    }

    pub fn variance(&self) -> f64 {
        let s2 = self.sigma * self.sigma;
        self.scale * self.scale * s2.exp() * s2.exp_m1()
    }

    pub fn cdf(&self, a: f64) -> f64 {
        if a <= self.loc {
            return 0.0;
        }
        if a == f64::INFINITY {
            return 1.0;
        }
        std_normal_cdf(((a - self.loc) / self.scale).ln() / self.sigma)
    }

    pub fn partial_expectation(&self, a: f64) -> f64 {
        if a <= self.loc {
            return 0.0;
        }
        if a == f64::INFINITY {
            return self.mean();
        }
        let z = ((a - self.loc) / self.scale).ln() / self.sigma;
        self.loc * std_normal_cdf(z)
            + self.scale * (0.5 * self.sigma * self.sigma).exp() * std_normal_cdf(z - self.sigma)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        self.loc + self.scale * (self.sigma * z).exp()
    }
}

pub fn lognorm_moments(params: &ConsumptionParams, a: f64) -> Result<Moments> {
    params.validate()?;
    if a.is_nan() {
        return Err(Error::Domain("evaluation point is NaN".into()));
    }
    Ok(Moments {
        cdf: params.cdf(a),
        mean: params.mean(),
        partial_expectation: params.partial_expectation(a),
    })
}

pub fn sample_base_consumption<R: Rng + ?Sized>(
    params: &ConsumptionParams,
    n: usize,
    rng: &mut R,
) -> Vec<f64> {
    (0..n).map(|_| params.sample(rng)).collect()
}

pub const MIN_FIT_SAMPLES: usize = 20;
const LOC_CAP_FRACTION: f64 = 1.0 - 1e-6;
const LOC_GRID: usize = 200;
const GOLDEN_REL_TOL: f64 = 1e-6;

// Conditional MLE of (mu, sigma) for a fixed location. The profile
// log-likelihood drops the constant -n/2 (1 + ln 2 pi).
fn profile_at(samples: &[f64], loc: f64) -> (f64, f64, f64) {
    let n = samples.len() as f64;
    let mut sum = 0.0;
    for &x in samples {
        sum += (x - loc).ln();
    }
    let mu = sum / n;
    let mut ss = 0.0;
    for &x in samples {
        let d = (x - loc).ln() - mu;
        ss += d * d;
    }
    let var = ss / n;
    let ll = if var > 0.0 { -sum - 0.5 * n * var.ln() } else { f64::NEG_INFINITY };
    (ll, mu, var.sqrt())
}

/// Profile maximum-likelihood fit of a three-parameter lognormal.
///
/// The location is searched on `[0, (1 - 1e-6) min(x)]`. The search runs in
/// `t = ln(min(x) - loc)`: a coarse grid picks the best cell, then a
/// golden-section search refines it to a relative bracket width of 1e-6.
pub fn fit_lognormal3(samples: &[f64]) -> Result<ConsumptionParams> {
    if samples.len() < MIN_FIT_SAMPLES {
        return Err(Error::Fit(format!(
            "need at least {MIN_FIT_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    if let Some(bad) = samples.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
        return Err(Error::Fit(format!("samples must be finite and > 0, found {bad}")));
    }
    let min = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let max = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max <= min {
        return Err(Error::Fit("samples have zero variance".into()));
    }

    let loc_of = |t: f64| (min - t.exp()).clamp(0.0, LOC_CAP_FRACTION * min);
    let objective = |t: f64| profile_at(samples, loc_of(t)).0;

    let t_max = min.ln();
    let t_min = ((1.0 - LOC_CAP_FRACTION) * min).ln();
    let step = (t_max - t_min) / (LOC_GRID - 1) as f64;
    let grid: Vec<f64> = (0..LOC_GRID).map(|k| t_min + step * k as f64).collect();
    let (best, _) = grid
        .iter()
        .map(|&t| objective(t))
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (k, v)| if v > acc.1 { (k, v) } else { acc });

    let mut lo = grid[best.saturating_sub(1)];
    let mut hi = grid[(best + 1).min(LOC_GRID - 1)];
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let mut fc = objective(c);
    let mut fd = objective(d);
    while (hi - lo).abs() > GOLDEN_REL_TOL * lo.abs().max(hi.abs()).max(1.0) {
        if fc > fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = objective(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = objective(d);
        }
    }
    // Keep the grid optimum if refinement landed somewhere worse.
    let t_star = 0.5 * (lo + hi);
    let t_best = if objective(t_star) >= objective(grid[best]) { t_star } else { grid[best] };

    let loc = loc_of(t_best);
    let (_, mu, sigma) = profile_at(samples, loc);
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Fit("degenerate log-spread at the fitted location".into()));
    }
    ConsumptionParams::new(sigma, mu.exp(), loc).map_err(|e| Error::Fit(e.to_string()))
}

/// A one-dimensional population distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum Marginal {
    Normal { mean: f64, std: f64 },
    Cauchy { location: f64, scale: f64 },
    Exponential { rate: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl Marginal {
    fn validate(&self, name: &str) -> Result<()> {
        let ok = match *self {
            Marginal::Normal { mean, std } => mean.is_finite() && std.is_finite() && std > 0.0,
            Marginal::Cauchy { location, scale } => {
                location.is_finite() && scale.is_finite() && scale > 0.0
            }
            Marginal::Exponential { rate } => rate.is_finite() && rate > 0.0,
            Marginal::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo < hi,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Prior(format!("invalid {name}: {self:?}")))
        }
    }

    fn sampler(&self) -> Sampler {
        match *self {
            Marginal::Normal { mean, std } => Sampler::Normal(Normal::new(mean, std).unwrap()),
            Marginal::Cauchy { location, scale } => {
                Sampler::Cauchy(Cauchy::new(location, scale).unwrap())
            }
            Marginal::Exponential { rate } => Sampler::Exp(Exp::new(rate).unwrap()),
            Marginal::Uniform { lo, hi } => Sampler::Uniform(Uniform::new_inclusive(lo, hi).unwrap()),
        }
    }
}

enum Sampler {
    Normal(Normal<f64>),
    Cauchy(Cauchy<f64>),
    Exp(Exp<f64>),
    Uniform(Uniform<f64>),
}

impl Sampler {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Sampler::Normal(d) => d.sample(rng),
            Sampler::Cauchy(d) => d.sample(rng),
            Sampler::Exp(d) => d.sample(rng),
            Sampler::Uniform(d) => d.sample(rng),
        }
    }
}

pub const DEFAULT_PARAM_CAP: f64 = 100.0;
pub const DEFAULT_ALPHA_BOUNDS: (f64, f64) = (0.05, 0.06);

fn default_cap() -> f64 {
    DEFAULT_PARAM_CAP
}

/// Population distributions of `(sigma, scale, loc, alpha)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompoundPrior {
    pub sigma_prior: Marginal,
    pub scale_prior: Marginal,
    pub loc_prior: Marginal,
    pub alpha_prior: Marginal,
    /// Scale and location draws above this cap (kWh) are rejected.
    #[serde(default = "default_cap")]
    pub param_cap: f64,
}

impl CompoundPrior {
    /// Synthetic stand-in used when no fitted prior is available. It yields
    /// households with a mean hourly base consumption of roughly 0.8 kWh.
    pub fn synthetic_default() -> Self {
        CompoundPrior {
            sigma_prior: Marginal::Normal { mean: 0.9, std: 0.2 },
            scale_prior: Marginal::Cauchy { location: 0.45, scale: 0.1 },
            loc_prior: Marginal::Exponential { rate: 8.0 },
            alpha_prior: Marginal::Uniform {
                lo: DEFAULT_ALPHA_BOUNDS.0,
                hi: DEFAULT_ALPHA_BOUNDS.1,
            },
            param_cap: DEFAULT_PARAM_CAP,
        }
    }

    pub fn with_alpha_bounds(mut self, lo: f64, hi: f64) -> Result<Self> {
        self.alpha_prior = Marginal::Uniform { lo, hi };
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.sigma_prior.validate("sigma_prior")?;
        self.scale_prior.validate("scale_prior")?;
        self.loc_prior.validate("loc_prior")?;
        self.alpha_prior.validate("alpha_prior")?;
        if let Marginal::Uniform { lo, .. } = self.alpha_prior {
            if lo <= 0.0 {
                return Err(Error::Prior(format!("alpha bounds must be positive, lo = {lo}")));
            }
        }
        if !(self.param_cap > 0.0) {
            return Err(Error::Prior(format!("param_cap must be > 0, got {}", self.param_cap)));
        }
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let prior: CompoundPrior = serde_json::from_str(&text)?;
        prior.validate()?;
        Ok(prior)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

pub const MIN_PRIOR_USERS: usize = 30;

/// Which lognormal parameter receives the Cauchy marginal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PriorAssignment {
    /// `scale ~ Cauchy`, `loc ~ Exponential`.
    #[default]
    CauchyScale,
    /// `loc ~ Cauchy`, `scale ~ Exponential`.
    CauchyLoc,
}

fn fit_normal(values: &[f64]) -> Result<Marginal> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if !(var > 0.0) {
        return Err(Error::Fit("sigma values have zero spread".into()));
    }
    Ok(Marginal::Normal { mean, std: var.sqrt() })
}

fn fit_exponential(values: &[f64], name: &str) -> Result<Marginal> {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    if !(mean > 0.0) {
        return Err(Error::Fit(format!("{name} values have non-positive mean {mean}")));
    }
    Ok(Marginal::Exponential { rate: 1.0 / mean })
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn fit_cauchy(values: &[f64], name: &str) -> Result<Marginal> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let location = quantile(&sorted, 0.5);
    let scale = 0.5 * (quantile(&sorted, 0.75) - quantile(&sorted, 0.25));
    if !(scale > 0.0) {
        return Err(Error::Fit(format!("{name} values have zero interquartile range")));
    }
    Ok(Marginal::Cauchy { location, scale })
}

/// Fit the population prior from per-user lognormal fits.
///
/// With `alphas` given, the slope prior is uniform over their range,
/// otherwise `unif[0.05, 0.06]`.
pub fn fit_compound_prior(
    per_user: &[ConsumptionParams],
    alphas: Option<&[f64]>,
    assignment: PriorAssignment,
) -> Result<CompoundPrior> {
    if per_user.len() < MIN_PRIOR_USERS {
        return Err(Error::Fit(format!(
            "need fitted parameters for at least {MIN_PRIOR_USERS} users, got {}",
            per_user.len()
        )));
    }
    let sigmas: Vec<f64> = per_user.iter().map(|p| p.sigma).collect();
    let scales: Vec<f64> = per_user.iter().map(|p| p.scale).collect();
    let locs: Vec<f64> = per_user.iter().map(|p| p.loc).collect();

    let (scale_prior, loc_prior) = match assignment {
        PriorAssignment::CauchyScale => (fit_cauchy(&scales, "scale")?, fit_exponential(&locs, "loc")?),
        PriorAssignment::CauchyLoc => (fit_exponential(&scales, "scale")?, fit_cauchy(&locs, "loc")?),
    };

    let alpha_prior = match alphas {
        Some(a) if !a.is_empty() => {
            let lo = a.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            Marginal::Uniform { lo, hi }
        }
        _ => Marginal::Uniform {
            lo: DEFAULT_ALPHA_BOUNDS.0,
            hi: DEFAULT_ALPHA_BOUNDS.1,
        },
    };

    let prior = CompoundPrior {
        sigma_prior: fit_normal(&sigmas)?,
        scale_prior,
        loc_prior,
        alpha_prior,
        param_cap: DEFAULT_PARAM_CAP,
    };
    prior.validate()?;
    Ok(prior)
}

const MAX_ATTEMPTS_PER_DRAW: u64 = 100_000;
const MIN_ATTEMPTS_FOR_RATE: u64 = 1_000;
const MAX_REJECTION_RATE: f64 = 0.99;

struct RejectionCounter {
    attempts: u64,
    rejected: u64,
}

impl RejectionCounter {
    fn draw<R: Rng + ?Sized>(
        &mut self,
        sampler: &Sampler,
        rng: &mut R,
        name: &str,
        accept: impl Fn(f64) -> bool,
    ) -> Result<f64> {
        for _ in 0..MAX_ATTEMPTS_PER_DRAW {
            self.attempts += 1;
            let v = sampler.draw(rng);
            if v.is_finite() && accept(v) {
                return Ok(v);
            }
            self.rejected += 1;
        }
        Err(Error::Prior(format!(
            "{name}: no valid draw in {MAX_ATTEMPTS_PER_DRAW} attempts"
        )))
    }

    fn check(&self) -> Result<()> {
        if self.attempts >= MIN_ATTEMPTS_FOR_RATE
            && self.rejected as f64 > MAX_REJECTION_RATE * self.attempts as f64
        {
            return Err(Error::Prior(format!(
                "rejection rate {:.4} exceeds {MAX_REJECTION_RATE}",
                self.rejected as f64 / self.attempts as f64
            )));
        }
        Ok(())
    }
}

/// Draw `n` user types. Out-of-domain draws are rejected and redrawn.
pub fn sample_user_types<R: Rng + ?Sized>(
    prior: &CompoundPrior,
    n: usize,
    rng: &mut R,
) -> Result<Vec<UserType>> {
    if n == 0 {
        return Err(Error::Domain("need at least one user".into()));
    }
    prior.validate()?;
    let sigma = prior.sigma_prior.sampler();
    let scale = prior.scale_prior.sampler();
    let loc = prior.loc_prior.sampler();
    let alpha = prior.alpha_prior.sampler();
    let cap = prior.param_cap;

    let mut counter = RejectionCounter { attempts: 0, rejected: 0 };
    let mut users = Vec::with_capacity(n);
    for _ in 0..n {
        let s = counter.draw(&sigma, rng, "sigma", |v| v > 0.0)?;
        let sc = counter.draw(&scale, rng, "scale", |v| v > 0.0 && v <= cap)?;
        let l = counter.draw(&loc, rng, "loc", |v| (0.0..=cap).contains(&v))?;
        let a = counter.draw(&alpha, rng, "alpha", |v| v > 0.0)?;
        counter.check()?;
        users.push(UserType::new(a, ConsumptionParams::new(s, sc, l)?)?);
    }
    Ok(users)
}

/// One row of the fitted-parameter table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedParams {
    pub user_id: String,
    pub hour: u8,
    pub sigma: f64,
    pub scale: f64,
    pub loc: f64,
}

impl FittedParams {
    pub fn params(&self) -> Result<ConsumptionParams> {
        ConsumptionParams::new(self.sigma, self.scale, self.loc)
    }
}

pub fn write_params_csv(path: &Path, rows: &[FittedParams]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["user_id", "hour", "sigma", "scale", "loc"])?;
    for r in rows {
        w.serialize((&r.user_id, r.hour, r.sigma, r.scale, r.loc))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_params_csv(path: &Path) -> Result<Vec<FittedParams>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in rdr.deserialize() {
        let row: FittedParams = rec?;
        row.params()?;
        rows.push(row);
    }
    Ok(rows)
}
