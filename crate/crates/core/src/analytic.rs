//! Expected utility, expected reduction and threshold rewards.
//!
//! For a targeted user with base consumption `X`, slope `alpha`, baseline
//! `b` and reward `r`, consumption is `X e^{-alpha r}`. The user reduces iff
//! `X < a = b e^{alpha r}`, so both the reward income and the penalty
//! exposure are lognormal partial expectations split at `a`:
//!
//! ```text
//! mu(r) = r [b G(a) - e^{-alpha r} PE(a)] - q [e^{-alpha r} UE(a) - b (1 - G(a))]
//! ```
//!
//! with `PE(a) = E[X 1{X <= a}]` and `UE(a) = E[X 1{X > a}]`.

use rayon::prelude::*;

use crate::dist::std_normal_cdf;
use crate::error::{ensure_finite, Error, Result};
use crate::mechanism::{feasible_target_bound, Bidder};
use crate::model::{ConsumptionParams, UserType};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ThresholdSolveConfig {
    /// Convergence tolerance on `|mu(r)|`, in $.
    pub abs_tol: f64,
    /// Upper cap on the bracket search, in $/kWh.
    pub r_max: f64,
    pub max_iter: usize,
}

impl Default for ThresholdSolveConfig {
    fn default() -> Self {
        ThresholdSolveConfig {
            abs_tol: 1e-8,
            r_max: 1e4,
            max_iter: 200,
        }
    }
}

impl ThresholdSolveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0) || !(self.r_max > 0.0) || self.max_iter == 0 {
            return Err(Error::Domain(format!("invalid solver config {self:?}")));
        }
        Ok(())
    }
}

// Lower and upper pieces of the distribution split at `a`:
// (G(a), 1 - G(a), E[X 1{X<=a}], E[X 1{X>a}]).
fn split_moments(p: &ConsumptionParams, a: f64) -> (f64, f64, f64, f64) {
    let tail_mean = p.scale * (0.5 * p.sigma * p.sigma).exp();
    if a <= p.loc {
        return (0.0, 1.0, 0.0, p.loc + tail_mean);
    }
    if a == f64::INFINITY {
        return (1.0, 0.0, p.loc + tail_mean, 0.0);
    }
    let z = ((a - p.loc) / p.scale).ln() / p.sigma;
    let below = std_normal_cdf(z);
    let above = std_normal_cdf(-z);
    let pe = p.loc * below + tail_mean * std_normal_cdf(z - p.sigma);
    let ue = p.loc * above + tail_mean * std_normal_cdf(p.sigma - z);
    (below, above, pe, ue)
}

fn check_inputs(theta: &UserType, baseline: f64, q: f64, r: f64) -> Result<()> {
    theta.validate()?;
    for (name, v) in [("baseline", baseline), ("q", q), ("r", r)] {
        ensure_finite(name, v)?;
        if v < 0.0 {
            return Err(Error::Domain(format!("{name} must be >= 0, got {v}")));
        }
    }
    Ok(())
}

pub(crate) fn utility_unchecked(theta: &UserType, baseline: f64, q: f64, r: f64) -> f64 {
    let a = baseline * (theta.alpha * r).exp();
    let decay = (-theta.alpha * r).exp();
    let (below, above, pe, ue) = split_moments(&theta.params, a);
    let income = r * (baseline * below - decay * pe);
    let penalty = q * (decay * ue - baseline * above);
    income - penalty
}

pub(crate) fn income_unchecked(theta: &UserType, baseline: f64, r: f64) -> f64 {
    if r == 0.0 {
        return 0.0;
    }
    let a = baseline * (theta.alpha * r).exp();
    let decay = (-theta.alpha * r).exp();
    let (below, _, pe, _) = split_moments(&theta.params, a);
    r * (baseline * below - decay * pe)
}

pub(crate) fn reduction_unchecked(theta: &UserType, baseline: f64, r: f64) -> f64 {
    baseline - theta.params.mean() * (-theta.alpha * r).exp()
}

/// Expected utility (equivalently, expected payment) of a targeted user.
pub fn expected_utility(theta: &UserType, baseline: f64, q: f64, r: f64) -> Result<f64> {
    check_inputs(theta, baseline, q, r)?;
    Ok(utility_unchecked(theta, baseline, q, r))
}

/// Expected gross reward income `E[r [b - x(r)]_+]`, ignoring penalties.
pub fn expected_reward_income(theta: &UserType, baseline: f64, r: f64) -> Result<f64> {
    check_inputs(theta, baseline, 0.0, r)?;
    Ok(income_unchecked(theta, baseline, r))
}

pub fn expected_reduction(theta: &UserType, baseline: f64, r: f64) -> Result<f64> {
    check_inputs(theta, baseline, 0.0, r)?;
    Ok(reduction_unchecked(theta, baseline, r))
}

/// Reward at which the user's expected utility crosses zero.
///
/// Safeguarded Newton: the bracket `[0, r_hi]` is found by doubling `r_hi`
/// from 1, Newton steps use a central-difference slope and fall back to
/// bisection whenever they leave the bracket.
pub fn threshold_reward(
    theta: &UserType,
    baseline: f64,
    q: f64,
    cfg: &ThresholdSolveConfig,
) -> Result<f64> {
    check_inputs(theta, baseline, q, 0.0)?;
    cfg.validate()?;
    if baseline <= 0.0 {
        return Err(Error::Domain("threshold needs a positive baseline".into()));
    }
    if q == 0.0 {
        return Ok(0.0);
    }
    let f = |r: f64| utility_unchecked(theta, baseline, q, r);
    let tol = cfg.abs_tol;

    let f0 = f(0.0);
    if f0 >= -tol {
        return Ok(0.0);
    }
    let (mut lo, mut f_lo) = (0.0, f0);
    let mut hi = 1.0;
    let mut f_hi;
    loop {
        if hi > cfg.r_max {
            return Err(Error::UnboundedThreshold {
                r_hi: hi,
                r_max: cfg.r_max,
                alpha: theta.alpha,
                sigma: theta.params.sigma,
                scale: theta.params.scale,
                loc: theta.params.loc,
                baseline,
            });
        }
        f_hi = f(hi);
        if f_hi > 0.0 {
            break;
        }
        if f_hi >= -tol {
            return Ok(hi);
        }
        lo = hi;
        f_lo = f_hi;
        hi *= 2.0;
    }

    // Regula-falsi start inside the bracket.
    let mut x = lo - f_lo * (hi - lo) / (f_hi - f_lo);
    if !(x > lo && x < hi) {
        x = 0.5 * (lo + hi);
    }
    let mut fx = f(x);
    for _ in 0..cfg.max_iter {
        if fx == 0.0 {
            return Ok(x);
        }
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let scale = x.max(1.0);
        let h = 1e-6 * scale;
        let slope = if x - h >= 0.0 {
            (f(x + h) - f(x - h)) / (2.0 * h)
        } else {
            (f(x + h) - fx) / h
        };
        let correction = if slope > 0.0 { fx / slope } else { f64::INFINITY };
        if fx.abs() <= tol && correction.abs() <= 1e-10 * scale {
            return Ok(x);
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi.max(1.0) {
            if fx.abs() <= tol {
                return Ok(x);
            }
            break;
        }
        let newton = x - correction;
        x = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        fx = f(x);
    }
    if fx.abs() <= tol {
        return Ok(x);
    }
    Err(Error::Convergence {
        iterations: cfg.max_iter,
        r: x,
        mu: fx,
    })
}

/// Thresholds for many users, solved in parallel.
pub fn threshold_rewards(
    users: &[(UserType, f64)],
    q: f64,
    cfg: &ThresholdSolveConfig,
) -> Result<Vec<f64>> {
    users
        .par_iter()
        .map(|(theta, baseline)| threshold_reward(theta, *baseline, q, cfg))
        .collect()
}

/// Lognormal-backed bidders, one per user, with ids equal to the user index.
pub fn lognormal_bidders(
    users: &[(UserType, f64)],
    thresholds: &[f64],
) -> Result<Vec<Bidder>> {
    users
        .iter()
        .zip(thresholds)
        .enumerate()
        .map(|(id, ((theta, baseline), &t))| Bidder::lognormal(id, t, *theta, *baseline))
        .collect()
}

/// Largest target for which the mechanism is guaranteed to terminate:
/// the sum over sorted users `2..=n-1` of their expected reduction at the
/// `(n-1)`-th smallest threshold.
pub fn max_feasible_target(
    users: &[(UserType, f64)],
    q: f64,
    cfg: &ThresholdSolveConfig,
) -> Result<f64> {
    if users.len() < 3 {
        return Err(Error::Size { required: 3, got: users.len() });
    }
    let thresholds = threshold_rewards(users, q, cfg)?;
    let bidders = lognormal_bidders(users, &thresholds)?;
    feasible_target_bound(&bidders)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::decompose_reduction;
    use crate::rng::seeded;
    use rand::Rng;

    fn user(alpha: f64, sigma: f64, scale: f64, loc: f64) -> UserType {
        UserType::new(alpha, ConsumptionParams::new(sigma, scale, loc).unwrap()).unwrap()
    }

    #[test]
    fn utility_at_zero_reward_is_negative() {
        for (s, c, l, b) in [(1.0, 1.0, 0.0, 1.0), (0.3, 0.5, 0.2, 2.0), (1.5, 2.0, 0.0, 0.1)] {
            let u = expected_utility(&user(0.5, s, c, l), b, 5.0, 0.0).unwrap();
            assert!(u < 0.0, "{u}");
        }
    }

    #[test]
    fn utility_without_penalty_is_non_negative() {
        for r in [0.1, 1.0, 10.0] {
            assert!(expected_utility(&user(0.5, 1.0, 1.0, 0.0), 1.0, 0.0, r).unwrap() >= 0.0);
        }
    }

    #[test]
    fn zero_reward_matches_tail_integral() {
        let t = user(0.5, 0.7, 1.2, 0.3);
        let b = 1.4;
        let p = &t.params;
        let upper = p.mean() - p.partial_expectation(b);
        let expected = 5.0 * (b * (1.0 - p.cdf(b)) - upper);
        assert!((expected_utility(&t, b, 5.0, 0.0).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn reduction_examples() {
        let t = user(0.5, 1.0, 1.0, 0.0);
        let mean = t.params.mean();
        assert_eq!(expected_reduction(&t, mean, 0.0).unwrap(), 0.0);
        let r = 4f64.ln() / 0.5;
        let got = expected_reduction(&t, 1.0, r).unwrap();
        assert!((got - (1.0 - mean / 4.0)).abs() < 1e-12);
        assert!((got - 0.587_820).abs() < 1e-6);
        assert!((expected_reduction(&t, 0.5, 0.0).unwrap() + 1.148_721).abs() < 1e-6);
    }

    #[test]
    fn reduction_matches_sampled_decomposition() {
        let t = user(0.3, 0.6, 1.0, 0.2);
        let (b, r) = (1.5, 2.5);
        let mut rng = seeded(21);
        let n = 1_000_000;
        let (mut s, mut ss) = (0.0, 0.0);
        for _ in 0..n {
            let x = t.params.sample(&mut rng);
            let d = decompose_reduction(b, x, t.alpha, r).unwrap().total;
            s += d;
            ss += d * d;
        }
        let mean = s / n as f64;
        let se = ((ss / n as f64 - mean * mean) / n as f64).sqrt();
        let exact = expected_reduction(&t, b, r).unwrap();
        assert!((mean - exact).abs() < 3.0 * se, "{mean} vs {exact} (se {se})");
    }

    #[test]
    fn degenerate_threshold_examples() {
        let cfg = ThresholdSolveConfig::default();
        let r = threshold_reward(&user(0.5, 1e-6, 2.0, 0.0), 1.0, 5.0, &cfg).unwrap();
        assert!((r - 2f64.ln() / 0.5).abs() < 1e-4, "{r}");
        let r = threshold_reward(&user(0.5, 1e-6, 0.5, 0.0), 1.0, 5.0, &cfg).unwrap();
        assert!(r < 1e-3, "{r}");
    }

    #[test]
    fn zero_penalty_threshold_is_zero() {
        let cfg = ThresholdSolveConfig::default();
        assert_eq!(threshold_reward(&user(0.5, 1.0, 1.0, 0.0), 1.0, 0.0, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn tight_cap_reports_unbounded_threshold() {
        let cfg = ThresholdSolveConfig { r_max: 2.0, ..Default::default() };
        let err = threshold_reward(&user(0.05, 1.0, 1.0, 0.0), 0.5, 5.0, &cfg).unwrap_err();
        assert!(matches!(err, Error::UnboundedThreshold { .. }), "{err}");
        assert!(threshold_reward(&user(0.05, 1.0, 1.0, 0.0), 0.0, 5.0, &cfg).is_err());
    }

    #[test]
    fn solver_contract_on_random_types() {
        let cfg = ThresholdSolveConfig::default();
        let mut rng = seeded(3);
        for _ in 0..300 {
            let t = user(
                rng.random_range(0.02..1.0),
                rng.random_range(0.05..1.5),
                rng.random_range(0.1..3.0),
                rng.random_range(0.0..1.0),
            );
            let b = t.params.mean() * rng.random_range(0.5..1.5);
            let r = threshold_reward(&t, b, 5.0, &cfg).unwrap();
            assert!(utility_unchecked(&t, b, 5.0, r).abs() <= cfg.abs_tol);
        }
    }

    #[test]
    fn strictly_increasing_on_grid() {
        let mut rng = seeded(4);
        for _ in 0..100 {
            let t = user(
                rng.random_range(0.02..1.0),
                rng.random_range(0.05..1.5),
                rng.random_range(0.1..3.0),
                rng.random_range(0.0..1.0),
            );
            let b = t.params.mean() * rng.random_range(0.5..1.5);
            let q = rng.random_range(0.5..10.0);
            let mut prev = f64::NEG_INFINITY;
            for k in 0..=100 {
                let u = expected_utility(&t, b, q, 0.5 * k as f64).unwrap();
                assert!(u > prev, "not increasing at r = {}", 0.5 * k as f64);
                prev = u;
            }
        }
    }

    #[test]
    fn feasible_target_needs_three_users() {
        let t = user(0.5, 1.0, 1.0, 0.0);
        let err = max_feasible_target(&[(t, 1.0), (t, 1.0)], 5.0, &Default::default()).unwrap_err();
        assert!(matches!(err, Error::Size { required: 3, got: 2 }));
    }

    #[test]
    fn feasible_target_with_identical_users() {
        let t = user(0.5, 0.5, 1.0, 0.1);
        let b = 1.5;
        let cfg = ThresholdSolveConfig::default();
        let r = threshold_reward(&t, b, 5.0, &cfg).unwrap();
        let bound = max_feasible_target(&[(t, b); 3], 5.0, &cfg).unwrap();
        assert!((bound - expected_reduction(&t, b, r).unwrap()).abs() < 1e-12);
    }
}
