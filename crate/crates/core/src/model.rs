//! Domain types and the deterministic per-user relations.
//!
//! Energy is in kWh, money in $, rewards and penalties in $/kWh.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Parameters of a three-parameter lognormal: `X = loc + scale * exp(sigma * Z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsumptionParams {
    pub sigma: f64,
    pub scale: f64,
    pub loc: f64,
}

impl ConsumptionParams {
    pub fn new(sigma: f64, scale: f64, loc: f64) -> Result<Self> {
        let p = ConsumptionParams { sigma, scale, loc };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite("sigma", self.sigma)?;
        ensure_finite("scale", self.scale)?;
        ensure_finite("loc", self.loc)?;
        if self.sigma <= 0.0 || self.scale <= 0.0 || self.loc < 0.0 {
            return Err(Error::Domain(format!(
                "lognormal parameters need sigma > 0, scale > 0, loc >= 0; got {self:?}"
            )));
        }
        Ok(())
    }
}

/// A user's private type: demand-curve slope plus base-consumption distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserType {
    pub alpha: f64,
    pub params: ConsumptionParams,
}

impl UserType {
    pub fn new(alpha: f64, params: ConsumptionParams) -> Result<Self> {
        let t = UserType { alpha, params };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite("alpha", self.alpha)?;
        if self.alpha <= 0.0 {
            return Err(Error::Domain(format!("alpha must be > 0, got {}", self.alpha)));
        }
        self.params.validate()
    }
}

/// Market-side constants faced by the DRP.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketParams {
    /// Per-unit penalty charged to users for consumption above baseline.
    pub q: f64,
    /// Wholesale per-unit reward.
    pub r_bar: f64,
    /// Wholesale per-unit shortfall penalty.
    pub q_bar: f64,
    /// Aggregate reduction target M.
    pub target: f64,
}

/// Measured reduction split into its baseline-error and behavioural parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReductionDecomposition {
    pub total: f64,
    /// `baseline - base consumption`; non-zero only because the baseline is an estimate.
    pub virtual_reduction: f64,
    /// `base * (1 - exp(-alpha * r))`, the response to the reward.
    pub actual_reduction: f64,
}

fn non_negative(name: &str, v: f64) -> Result<()> {
    ensure_finite(name, v)?;
    if v < 0.0 {
        return Err(Error::Domain(format!("{name} must be >= 0, got {v}")));
    }
    Ok(())
}

fn positive(name: &str, v: f64) -> Result<()> {
    ensure_finite(name, v)?;
    if v <= 0.0 {
        return Err(Error::Domain(format!("{name} must be > 0, got {v}")));
    }
    Ok(())
}

/// Semi-log demand curve `base * exp(-alpha * reward)`.
pub fn demand(base: f64, alpha: f64, reward: f64) -> Result<f64> {
    positive("base", base)?;
    positive("alpha", alpha)?;
    non_negative("reward", reward)?;
    Ok(base * (-alpha * reward).exp())
}

/// Realized utility of a user, which is also the DRP's payment to that user.
pub fn realized_utility(
    baseline: f64,
    consumption: f64,
    reward: f64,
    q: f64,
    targeted: bool,
) -> Result<f64> {
    non_negative("baseline", baseline)?;
    non_negative("consumption", consumption)?;
    non_negative("reward", reward)?;
    non_negative("q", q)?;
    if !targeted {
        return Ok(0.0);
    }
    Ok(payment(baseline - consumption, reward, q))
}

// Reward on the reduced part, penalty on the increase.
fn payment(reduction: f64, reward: f64, q: f64) -> f64 {
    if reduction >= 0.0 {
        reward * reduction
    } else {
        q * reduction
    }
}

pub fn decompose_reduction(
    baseline: f64,
    base: f64,
    alpha: f64,
    reward: f64,
) -> Result<ReductionDecomposition> {
    non_negative("baseline", baseline)?;
    let consumption = demand(base, alpha, reward)?;
    Ok(ReductionDecomposition {
        total: baseline - consumption,
        virtual_reduction: baseline - base,
        actual_reduction: -base * (-alpha * reward).exp_m1(),
    })
}

/// Realized DRP profit for a vector of measured reductions and the per-unit
/// rewards offered.
///
/// Payments follow the per-user utility definition: `r_i * delta_i` for a
/// reduction and `q * delta_i` (a transfer to the DRP) for an increase.
pub fn realized_profit(reductions: &[f64], rewards: &[f64], market: &MarketParams) -> Result<f64> {
    if reductions.len() != rewards.len() {
        return Err(Error::Domain(format!(
            "reductions ({}) and rewards ({}) differ in length",
            reductions.len(),
            rewards.len()
        )));
    }
    non_negative("q", market.q)?;
    non_negative("r_bar", market.r_bar)?;
    non_negative("q_bar", market.q_bar)?;
    non_negative("target", market.target)?;
    let cap = market.q_bar.min(market.r_bar);
    for (i, &r) in rewards.iter().enumerate() {
        non_negative("reward", r)?;
        if r >= cap {
            return Err(Error::Precondition(format!(
                "reward {r} of user {i} is not below min(q_bar, r_bar) = {cap}"
            )));
        }
    }
    let mut delta_sum = 0.0;
    let mut paid = 0.0;
    for (&d, &r) in reductions.iter().zip(rewards) {
        ensure_finite("reduction", d)?;
        delta_sum += d;
        paid += payment(d, r, market.q);
    }
    let shortfall = (market.target - delta_sum).max(0.0);
    Ok(market.r_bar * delta_sum.min(market.target) - market.q_bar * shortfall - paid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn market(q: f64, r_bar: f64, q_bar: f64, target: f64) -> MarketParams {
        MarketParams { q, r_bar, q_bar, target }
    }

    #[test]
    fn demand_examples() {
        assert_eq!(demand(2.0, 0.5, 0.0).unwrap(), 2.0);
        assert!((demand(2.0, 0.5, 4f64.ln()).unwrap() - 1.0).abs() < 1e-14);
        assert!((demand(2.0, 0.5, 4f64.ln() / 0.5).unwrap() - 0.5).abs() < 1e-14);
        assert!((demand(1.0, 0.05, 5.0).unwrap() - (-0.25f64).exp()).abs() < 1e-14);
        assert!((demand(1.0, 0.05, 5.0).unwrap() - 0.778801).abs() < 1e-6);
    }

    #[test]
    fn demand_rejects_bad_input() {
        assert!(matches!(demand(0.0, 0.5, 1.0), Err(Error::Domain(_))));
        assert!(demand(1.0, -0.5, 1.0).is_err());
        assert!(demand(1.0, 0.5, -1.0).is_err());
        assert!(demand(f64::NAN, 0.5, 1.0).is_err());
        assert!(demand(1.0, 0.5, f64::INFINITY).is_err());
    }

    #[test]
    fn utility_examples() {
        assert_eq!(realized_utility(1.0, 1.0, 3.0, 5.0, true).unwrap(), 0.0);
        assert_eq!(realized_utility(2.0, 1.0, 3.0, 5.0, true).unwrap(), 3.0);
        assert_eq!(realized_utility(1.0, 2.0, 3.0, 5.0, false).unwrap(), 0.0);
        assert_eq!(realized_utility(1.0, 2.0, 3.0, 5.0, true).unwrap(), -5.0);
    }

    #[test]
    fn decomposition_examples() {
        let d = decompose_reduction(1.0, 1.0, 0.1, 0.0).unwrap();
        assert_eq!((d.total, d.virtual_reduction, d.actual_reduction), (0.0, 0.0, 0.0));

        let d = decompose_reduction(1.5, 1.0, 0.5, 2f64.ln()).unwrap();
        assert!((d.total - 0.7928932188134524).abs() < 1e-14);
        assert!((d.virtual_reduction - 0.5).abs() < 1e-14);
        assert!((d.actual_reduction - 0.2928932188134524).abs() < 1e-14);

        let d = decompose_reduction(0.8, 1.0, 0.5, 0.0).unwrap();
        assert!((d.total + 0.2).abs() < 1e-14);
        assert!((d.virtual_reduction + 0.2).abs() < 1e-14);
        assert_eq!(d.actual_reduction, 0.0);
    }

    #[test]
    fn profit_examples() {
        let m = market(5.0, 10.0, 10.0, 0.0);
        assert_eq!(realized_profit(&[], &[], &m).unwrap(), 0.0);

        let m = market(5.0, 10.0, 20.0, 5.0);
        assert_eq!(realized_profit(&[2.0, 3.0], &[1.0, 1.0], &m).unwrap(), 45.0);
        assert_eq!(realized_profit(&[2.0, -1.0], &[1.0, 1.0], &m).unwrap(), -67.0);
    }

    #[test]
    fn profit_enforces_wholesale_reward_cap() {
        let m = market(5.0, 10.0, 3.0, 5.0);
        let err = realized_profit(&[1.0, 1.0], &[1.0, 3.0], &m).unwrap_err();
        match err {
            Error::Precondition(msg) => assert!(msg.contains("user 1"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(realized_profit(&[1.0], &[1.0, 2.0], &m).is_err());
    }

    #[test]
    fn profit_with_full_delivery_and_no_payments() {
        let m = market(5.0, 12.5, 20.0, 3.0);
        assert_eq!(realized_profit(&[4.0, 1.0], &[0.0, 0.0], &m).unwrap(), 12.5 * 3.0);
    }

    proptest! {
        #[test]
        fn decomposition_identity(
            baseline in 0.0f64..20.0,
            base in 1e-3f64..20.0,
            alpha in 1e-3f64..2.0,
            reward in 0.0f64..50.0,
        ) {
            let d = decompose_reduction(baseline, base, alpha, reward).unwrap();
            let direct = baseline - demand(base, alpha, reward).unwrap();
            prop_assert_eq!(d.total, direct);
            let tol = 4.0 * f64::EPSILON * baseline.max(base);
            prop_assert!((d.total - (d.virtual_reduction + d.actual_reduction)).abs() <= tol);
            prop_assert!(d.actual_reduction >= 0.0);
        }

        #[test]
        fn demand_is_log_affine_and_decreasing(
            base in 1e-3f64..20.0,
            alpha in 1e-3f64..2.0,
        ) {
            let mut prev = f64::INFINITY;
            for k in 0..20 {
                let r = k as f64 * 0.5;
                let x = demand(base, alpha, r).unwrap();
                prop_assert!(x > 0.0 && x < prev);
                let slope_err = (x.ln() - base.ln() + alpha * r).abs();
                prop_assert!(slope_err <= 1e-12 * (1.0 + alpha * r));
                prev = x;
            }
        }

        #[test]
        fn utility_monotone_in_reward(
            baseline in 0.0f64..5.0,
            consumption in 0.0f64..5.0,
            r1 in 0.0f64..20.0,
            dr in 0.0f64..20.0,
            q in 0.0f64..10.0,
        ) {
            let u1 = realized_utility(baseline, consumption, r1, q, true).unwrap();
            let u2 = realized_utility(baseline, consumption, r1 + dr, q, true).unwrap();
            if consumption <= baseline {
                prop_assert!(u2 >= u1);
            } else {
                prop_assert_eq!(u1, u2);
            }
        }
    }
}
