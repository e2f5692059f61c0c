//! Reward allocation.
//!
//! Bidders are ranked by threshold reward `t_1 <= t_2 <= ... <= t_n`. With
//! `S(j) = sum_{i<=j} delta_i(t_j)`, the mechanism targets users `1..=j_max`
//! where `j_max = min { j : S(j) >= M }`. Each targeted user `i` is paid
//! `t_{j(i)}`, where `j(i)` is the same search run on the pool without `i`
//! (so `t_i` itself is never a candidate). A user's reward therefore does
//! not depend on their own report.
//!
//! The omniscient benchmark instead pays every targeted user their own
//! threshold and targets the shortest prefix whose reductions at those
//! thresholds reach `M`.

use std::cell::OnceCell;
use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use serde::Serialize;

use crate::analytic::{
    income_unchecked, reduction_unchecked, threshold_reward, threshold_rewards, utility_unchecked,
    ThresholdSolveConfig,
};
use crate::error::{ensure_finite, Error, Result};
use crate::model::{ConsumptionParams, UserType};
use crate::rng::seeded;

pub type BidderId = usize;

/// Expected reduction (kWh) as a function of the offered reward ($/kWh).
pub type ReductionFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Thresholds closer than this are treated as tied and ordered by id.
pub const TIE_EPSILON: f64 = 1e-12;

#[derive(Clone)]
pub struct Bidder {
    pub id: BidderId,
    pub threshold: f64,
    reduction: ReductionFn,
}

impl fmt::Debug for Bidder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Bidder")
            .field("id", &self.id)
            .field("threshold", &self.threshold)
            .finish_non_exhaustive()
    }
}

impl Bidder {
    /// The reduction function is spot-checked for monotonicity at
    /// `t/2`, `t` and `2t + 1`.
    pub fn new(
        id: BidderId,
        threshold: f64,
        reduction: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        ensure_finite("threshold", threshold)?;
        if threshold < 0.0 {
            return Err(Error::Domain(format!("threshold must be >= 0, got {threshold}")));
        }
        let grid = [0.5 * threshold, threshold, 2.0 * threshold + 1.0];
        let vals = grid.map(&reduction);
        if vals.iter().any(|v| !v.is_finite()) || vals[0] > vals[1] || vals[1] > vals[2] {
            return Err(Error::Domain(format!(
                "reduction function of bidder {id} is not non-decreasing: {vals:?} at {grid:?}"
            )));
        }
        Ok(Bidder {
            id,
            threshold,
            reduction: Arc::new(reduction),
        })
    }

    /// `delta(r) = intercept + slope * r`.
    pub fn linear(id: BidderId, threshold: f64, intercept: f64, slope: f64) -> Result<Self> {
        Bidder::new(id, threshold, move |r| intercept + slope * r)
    }

    /// Expected reduction of a lognormal user with the given baseline.
    pub fn lognormal(id: BidderId, threshold: f64, theta: UserType, baseline: f64) -> Result<Self> {
        theta.validate()?;
        ensure_finite("baseline", baseline)?;
        Bidder::new(id, threshold, move |r| reduction_unchecked(&theta, baseline, r))
    }

    pub fn reduction(&self, reward: f64) -> f64 {
        (self.reduction)(reward)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Allocation {
    pub target: f64,
    /// Bidder ids in ascending threshold order.
    pub order: Vec<BidderId>,
    /// Targeted ids, in ranking order.
    pub targeted: Vec<BidderId>,
    pub rewards: BTreeMap<BidderId, f64>,
    pub decisions: BTreeMap<BidderId, bool>,
    /// Number of targeted users (1-based index of the last one); 0 when empty.
    pub j_max: usize,
    /// 1-based rank whose threshold sets each targeted user's reward.
    pub j_of: BTreeMap<BidderId, usize>,
}

impl Allocation {
    fn empty(target: f64, order: Vec<BidderId>) -> Self {
        Allocation {
            target,
            rewards: order.iter().map(|&id| (id, 0.0)).collect(),
            decisions: order.iter().map(|&id| (id, false)).collect(),
            order,
            targeted: Vec::new(),
            j_max: 0,
            j_of: BTreeMap::new(),
        }
    }

    pub fn reward(&self, id: BidderId) -> f64 {
        self.rewards.get(&id).copied().unwrap_or(0.0)
    }

    pub fn is_targeted(&self, id: BidderId) -> bool {
        self.decisions.get(&id).copied().unwrap_or(false)
    }
}

fn check_target(target: f64) -> Result<()> {
    ensure_finite("target", target)?;
    if target < 0.0 {
        return Err(Error::Domain(format!("target must be >= 0, got {target}")));
    }
    Ok(())
}

/// Ascending threshold order; near-ties ordered by id.
fn rank(bidders: &[Bidder]) -> Result<Vec<&Bidder>> {
    let mut ranked: Vec<&Bidder> = bidders.iter().collect();
    ranked.sort_by(|a, b| a.threshold.total_cmp(&b.threshold).then(a.id.cmp(&b.id)));
    let mut start = 0;
    for k in 1..=ranked.len() {
        if k == ranked.len() || ranked[k].threshold - ranked[k - 1].threshold > TIE_EPSILON {
            ranked[start..k].sort_by_key(|b| b.id);
            start = k;
        }
    }
    let mut ids: Vec<BidderId> = ranked.iter().map(|b| b.id).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Domain(format!("duplicate bidder id {}", w[0])));
    }
    Ok(ranked)
}

struct Ranking<'a> {
    bidders: Vec<&'a Bidder>,
    /// `S(j)` is non-decreasing in `j`, with or without an exclusion.
    monotone: bool,
    /// `sum_at(k, None)` for every `k`, filled on first use by the linear scan.
    full_sums: OnceCell<Vec<f64>>,
}

impl<'a> Ranking<'a> {
    fn new(bidders: &'a [Bidder]) -> Result<Self> {
        let bidders = rank(bidders)?;
        // S(j+1) - S(j) >= delta_{j+1}(t_{j+1}), so non-negative own-threshold
        // reductions make every prefix sum monotone.
        let monotone = bidders.iter().all(|b| b.reduction(b.threshold) >= 0.0);
        Ok(Ranking { bidders, monotone, full_sums: OnceCell::new() })
    }

    fn len(&self) -> usize {
        self.bidders.len()
    }

    fn threshold(&self, pos: usize) -> f64 {
        self.bidders[pos].threshold
    }

    /// `sum_{s <= k, s != excluded} delta_s(t_k)`, positions 0-based.
    fn sum_at(&self, k: usize, excluded: Option<usize>) -> f64 {
        let r = self.threshold(k);
        self.bidders[..=k]
            .iter()
            .enumerate()
            .filter(|(s, _)| Some(*s) != excluded)
            .map(|(_, b)| b.reduction(r))
            .sum()
    }

    /// Smallest candidate position `k` (skipping `excluded`) with
    /// `sum_at(k) >= target`.
    fn first_reaching(&self, target: f64, excluded: Option<usize>) -> Option<usize> {
        let n_cand = self.len() - usize::from(excluded.is_some());
        let pos = |c: usize| match excluded {
            Some(e) if c >= e => c + 1,
            _ => c,
        };
        let reaches = |c: usize| self.sum_at(pos(c), excluded) >= target;
        if n_cand == 0 {
            return None;
        }
        if self.monotone {
            if !reaches(n_cand - 1) {
                return None;
            }
            let (mut lo, mut hi) = (0, n_cand - 1);
            while lo < hi {
                let mid = lo + (hi - lo) / 2;
                if reaches(mid) {
                    hi = mid;
                } else {
                    lo = mid + 1;
                }
            }
            Some(pos(lo))
        } else {
            let full = self.full_sums.get_or_init(|| (0..self.len()).map(|k| self.sum_at(k, None)).collect());
            (0..n_cand).map(pos).find(|&k| {
                let approx = match excluded {
                    Some(e) if e <= k => full[k] - self.bidders[e].reduction(self.threshold(k)),
                    _ => full[k],
                };
                // Recompute exactly when rounding could decide the comparison.
                if (approx - target).abs() <= 1e-9 * (1.0 + target.abs() + full[k].abs()) {
                    self.sum_at(k, excluded) >= target
                } else {
                    approx >= target
                }
            })
        }
    }

    fn bound(&self) -> Result<f64> {
        let n = self.len();
        if n < 3 {
            return Err(Error::Size { required: 3, got: n });
        }
        let r = self.threshold(n - 2);
        let sum: f64 = self.bidders[1..n - 1].iter().map(|b| b.reduction(r)).sum();
        // Negative middle reductions leave only M = 0.
        Ok(sum.max(0.0))
    }

    fn order(&self) -> Vec<BidderId> {
        self.bidders.iter().map(|b| b.id).collect()
    }
}

/// Upper end of the guaranteed-feasible target range: over ranked bidders
/// `2..=n-1`, the sum of reductions at the `(n-1)`-th threshold.
pub fn feasible_target_bound(bidders: &[Bidder]) -> Result<f64> {
    Ranking::new(bidders)?.bound()
}

pub fn run_dr_mechanism(bidders: &[Bidder], target: f64) -> Result<Allocation> {
    check_target(target)?;
    let ranking = Ranking::new(bidders)?;
    let mut alloc = Allocation::empty(target, ranking.order());
    if target == 0.0 {
        return Ok(alloc);
    }
    let bound = ranking.bound()?;
    let infeasible = Error::InfeasibleTarget { target, bound };
    if target > bound {
        return Err(infeasible);
    }
    let Some(last) = ranking.first_reaching(target, None) else {
        return Err(infeasible);
    };
    for i in 0..=last {
        let Some(k) = ranking.first_reaching(target, Some(i)) else {
            return Err(infeasible);
        };
        let id = ranking.bidders[i].id;
        alloc.targeted.push(id);
        alloc.decisions.insert(id, true);
        alloc.rewards.insert(id, ranking.threshold(k));
        alloc.j_of.insert(id, k + 1);
    }
    alloc.j_max = last + 1;
    Ok(alloc)
}

/// Benchmark with public types: the shortest ranked prefix whose reductions
/// at each user's own threshold reach the target; users are paid their
/// threshold plus `epsilon`.
pub fn run_omniscient(bidders: &[Bidder], target: f64, epsilon: f64) -> Result<Allocation> {
    check_target(target)?;
    ensure_finite("epsilon", epsilon)?;
    if epsilon < 0.0 {
        return Err(Error::Domain(format!("epsilon must be >= 0, got {epsilon}")));
    }
    let ranking = Ranking::new(bidders)?;
    let mut alloc = Allocation::empty(target, ranking.order());
    if target == 0.0 {
        return Ok(alloc);
    }
    // Own-threshold reductions can be negative, so the largest prefix sum,
    // not the total, is the reachable maximum.
    let mut acc = 0.0;
    let mut best = 0.0f64;
    let mut reached = None;
    for (k, b) in ranking.bidders.iter().enumerate() {
        acc += b.reduction(b.threshold);
        best = best.max(acc);
        if acc >= target {
            reached = Some(k);
            break;
        }
    }
    let Some(last) = reached else {
        return Err(Error::InfeasibleTarget { target, bound: best });
    };
    for k in 0..=last {
        let b = ranking.bidders[k];
        alloc.targeted.push(b.id);
        alloc.decisions.insert(b.id, true);
        alloc.rewards.insert(b.id, b.threshold + epsilon);
        alloc.j_of.insert(b.id, k + 1);
    }
    alloc.j_max = last + 1;
    Ok(alloc)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Payments {
    /// Sum of expected utilities (expected net transfers) of targeted users.
    pub net: f64,
    /// Sum of expected reward income, penalties not netted out.
    pub gross: f64,
}

/// Expected payments for an allocation whose bidder ids index `users`.
pub fn expected_payments(alloc: &Allocation, users: &[(UserType, f64)], q: f64) -> Result<Payments> {
    let mut out = Payments::default();
    for &id in &alloc.targeted {
        let (theta, baseline) = users.get(id).ok_or(Error::Lookup(id))?;
        let r = alloc.reward(id);
        out.net += utility_unchecked(theta, *baseline, q, r);
        out.gross += income_unchecked(theta, *baseline, r);
    }
    Ok(out)
}

/// A pool of lognormal users with baselines, thresholds and bidders computed
/// once from truthful reports.
#[derive(Debug, Clone)]
pub struct LognormalPool {
    pub users: Vec<(UserType, f64)>,
    pub thresholds: Vec<f64>,
    pub bidders: Vec<Bidder>,
    pub q: f64,
    pub solver: ThresholdSolveConfig,
}

/// Result of replacing one user's report and rerunning the mechanism.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MisreportOutcome {
    pub user: BidderId,
    pub truthful_targeted: bool,
    pub misreport_targeted: bool,
    pub truthful_reward: f64,
    pub misreport_reward: f64,
    /// Expected utilities under the user's true type.
    pub truthful_utility: f64,
    pub misreport_utility: f64,
}

impl LognormalPool {
    pub fn new(users: Vec<(UserType, f64)>, q: f64, solver: ThresholdSolveConfig) -> Result<Self> {
        let thresholds = threshold_rewards(&users, q, &solver)?;
        let bidders = crate::analytic::lognormal_bidders(&users, &thresholds)?;
        Ok(LognormalPool { users, thresholds, bidders, q, solver })
    }

    pub fn bound(&self) -> Result<f64> {
        feasible_target_bound(&self.bidders)
    }

    pub fn run(&self, target: f64) -> Result<Allocation> {
        run_dr_mechanism(&self.bidders, target)
    }

    /// True expected utility of `user` under `alloc` (zero if not targeted).
    pub fn true_utility(&self, alloc: &Allocation, user: BidderId) -> f64 {
        if !alloc.is_targeted(user) {
            return 0.0;
        }
        let (theta, baseline) = &self.users[user];
        utility_unchecked(theta, *baseline, self.q, alloc.reward(user))
    }

    /// Rerun the mechanism with `user` reporting `report`. Returns `None`
    /// when the report has no finite threshold or makes the target
    /// infeasible, since the mechanism would not run.
    pub fn misreport(
        &self,
        truthful: &Allocation,
        user: BidderId,
        report: UserType,
    ) -> Result<Option<MisreportOutcome>> {
        let (_, baseline) = self.users.get(user).ok_or(Error::Lookup(user))?;
        let reported_threshold = match threshold_reward(&report, *baseline, self.q, &self.solver) {
            Ok(t) => t,
            Err(Error::UnboundedThreshold { .. }) | Err(Error::Convergence { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        let mut bidders = self.bidders.clone();
        bidders[user] = Bidder::lognormal(user, reported_threshold, report, *baseline)?;
        let alloc = match run_dr_mechanism(&bidders, truthful.target) {
            Ok(a) => a,
            Err(Error::InfeasibleTarget { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        Ok(Some(MisreportOutcome {
            user,
            truthful_targeted: truthful.is_targeted(user),
            misreport_targeted: alloc.is_targeted(user),
            truthful_reward: truthful.reward(user),
            misreport_reward: alloc.reward(user),
            truthful_utility: self.true_utility(truthful, user),
            misreport_utility: self.true_utility(&alloc, user),
        }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IrViolation {
    pub user: BidderId,
    pub reward: f64,
    pub utility: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IcViolation {
    /// Seed of the generator that produced this misreport.
    pub seed: u64,
    pub report: UserType,
    pub outcome: MisreportOutcome,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AuditReport {
    pub target: f64,
    pub targeted: usize,
    pub ir_violations: Vec<IrViolation>,
    pub ic_violations: Vec<IcViolation>,
    pub misreports_checked: usize,
    /// Misreports under which the mechanism would not run.
    pub misreports_skipped: usize,
    /// Targeted users whose misreport dropped them from the target set.
    pub left_target_set: usize,
    /// Non-targeted users whose misreport got them targeted.
    pub entered_target_set: usize,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.ir_violations.is_empty() && self.ic_violations.is_empty()
    }
}

/// Multiplicative perturbation range for audit misreports.
pub const MISREPORT_FACTOR_RANGE: (f64, f64) = (0.5, 2.0);

/// Perturb every component of a type by an independent log-uniform factor.
pub fn perturb_type<R: Rng + ?Sized>(theta: &UserType, rng: &mut R) -> UserType {
    let (lo, hi) = (MISREPORT_FACTOR_RANGE.0.ln(), MISREPORT_FACTOR_RANGE.1.ln());
    let mut factor = || rng.random_range(lo..=hi).exp();
    UserType {
        alpha: theta.alpha * factor(),
        params: ConsumptionParams {
            sigma: theta.params.sigma * factor(),
            scale: theta.params.scale * factor(),
            loc: theta.params.loc * factor(),
        },
    }
}

/// Check individual rationality on the truthful allocation and incentive
/// compatibility against `n_misreports` random single-user misreports.
pub fn audit_incentives<R: Rng + ?Sized>(
    users: &[(UserType, f64)],
    target: f64,
    q: f64,
    n_misreports: usize,
    rng: &mut R,
    solver: &ThresholdSolveConfig,
) -> Result<AuditReport> {
    let pool = LognormalPool::new(users.to_vec(), q, *solver)?;
    let truthful = pool.run(target)?;
    let slack = 10.0 * solver.abs_tol;
    let mut report = AuditReport {
        target,
        targeted: truthful.targeted.len(),
        ..Default::default()
    };

    for id in 0..users.len() {
        let utility = pool.true_utility(&truthful, id);
        let reward = truthful.reward(id);
        let bad = if truthful.is_targeted(id) { utility < -slack } else { reward != 0.0 };
        if bad {
            report.ir_violations.push(IrViolation { user: id, reward, utility });
        }
    }

    for _ in 0..n_misreports {
        let seed: u64 = rng.random();
        let mut local = seeded(seed);
        let user = local.random_range(0..users.len());
        let report_type = perturb_type(&users[user].0, &mut local);
        match pool.misreport(&truthful, user, report_type)? {
            None => report.misreports_skipped += 1,
            Some(outcome) => {
                report.misreports_checked += 1;
                if outcome.truthful_targeted && !outcome.misreport_targeted {
                    report.left_target_set += 1;
                }
                if !outcome.truthful_targeted && outcome.misreport_targeted {
                    report.entered_target_set += 1;
                }
                if outcome.misreport_utility > outcome.truthful_utility + slack {
                    report.ic_violations.push(IcViolation { seed, report: report_type, outcome });
                }
            }
        }
    }
    Ok(report)
}

/// Run metadata written as the leading comment line of an allocation CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AllocationMeta {
    pub q: f64,
    pub seed: Option<u64>,
}

/// `# M=.. q=.. j_max=.. seed=..` followed by `id,targeted,reward,j_of`.
pub fn write_allocation_csv<W: Write>(
    alloc: &Allocation,
    meta: &AllocationMeta,
    label: impl Fn(BidderId) -> String,
    mut out: W,
) -> Result<()> {
    let seed = meta.seed.map_or_else(|| "none".to_string(), |s| s.to_string());
    let io = |e| Error::io("<allocation output>", e);
    writeln!(out, "# M={} q={} j_max={} seed={}", alloc.target, meta.q, alloc.j_max, seed)
        .map_err(io)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["id", "targeted", "reward", "j_of"])?;
    for (&id, &targeted) in &alloc.decisions {
        let j = alloc.j_of.get(&id).map_or_else(String::new, |j| j.to_string());
        w.write_record([label(id), targeted.to_string(), alloc.reward(id).to_string(), j])?;
    }
    w.flush().map_err(io)?;
    Ok(())
}
