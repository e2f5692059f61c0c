//! Target sweeps over synthetic user pools.
//!
//! A run samples `n` user types from a compound prior, gives each user a
//! synthetic k-day baseline, solves thresholds once per baseline accuracy and
//! then runs the mechanism and the omniscient benchmark at every target in
//! the grid. One baseline draw per user per `(k, seed)` is reused across the
//! whole grid, as on a single DR day.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::ThresholdSolveConfig;
use crate::dist::{sample_user_types, CompoundPrior};
use crate::error::{Error, Result};
use crate::mechanism::{expected_payments, run_omniscient, Allocation, LognormalPool};
use crate::model::{ConsumptionParams, UserType};
use crate::rng::{stream, StreamKind};

/// Baseline averaging window used by `compare` mode.
pub const COMPARE_K: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Mechanism against the omniscient benchmark at `k = 10`.
    Compare,
    /// Virtual and actual reduction averaged over consumption realizations.
    Decompose,
    /// Payments for every baseline window in `k_set`.
    Payments,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "compare" => Ok(Mode::Compare),
            "decompose" => Ok(Mode::Decompose),
            "payments" => Ok(Mode::Payments),
            _ => Err(Error::Config(format!("unknown mode {s:?}, expected compare|decompose|payments"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Compare => "compare",
            Mode::Decompose => "decompose",
            Mode::Payments => "payments",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioConfig {
    pub n: usize,
    pub q: f64,
    pub alpha_bounds: (f64, f64),
    pub prior: CompoundPrior,
    /// Written to output metadata so synthetic runs are never mistaken for fitted ones.
    pub prior_label: String,
    pub m_grid: Vec<f64>,
    pub k_set: Vec<usize>,
    pub mc_reps: usize,
    pub seed: u64,
    /// Premium over the threshold paid in the omniscient benchmark.
    pub epsilon: f64,
    pub solver: ThresholdSolveConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            n: 500,
            q: 5.0,
            alpha_bounds: (0.05, 0.06),
            prior: CompoundPrior::synthetic_default(),
            prior_label: "synthetic-default".into(),
            m_grid: linspace(0.0, 200.0, 21),
            k_set: vec![5, 10, 20, 40],
            mc_reps: 200,
            seed: 20170101,
            epsilon: 0.0,
            solver: ThresholdSolveConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n < 3 {
            return bad(format!("n must be at least 3, got {}", self.n));
        }
        if !(self.q.is_finite() && self.q >= 0.0) {
            return bad(format!("q must be finite and >= 0, got {}", self.q));
        }
        let (lo, hi) = self.alpha_bounds;
        if !(lo.is_finite() && hi.is_finite() && 0.0 < lo && lo <= hi) {
            return bad(format!("alpha bounds must satisfy 0 < lo <= hi, got ({lo}, {hi})"));
        }
        if self.m_grid.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return bad("M grid entries must be finite and non-negative".into());
        }
        if self.m_grid.windows(2).any(|w| w[0] > w[1]) {
            return bad("M grid must be ascending".into());
        }
        if self.k_set.is_empty() || self.k_set.contains(&0) {
            return bad("k set must be non-empty with every k >= 1".into());
        }
        if self.mc_reps == 0 {
            return bad("mc_reps must be at least 1".into());
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return bad(format!("epsilon must be finite and >= 0, got {}", self.epsilon));
        }
        self.solver.validate()?;
        self.prior.validate().map_err(|e| Error::Config(e.to_string()))
    }

    fn windows(&self, mode: Mode) -> Vec<usize> {
        match mode {
            Mode::Compare => vec![COMPARE_K],
            Mode::Decompose | Mode::Payments => self.k_set.clone(),
        }
    }
}

/// `steps` evenly spaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    match steps {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..steps)
            .map(|k| if k + 1 == steps { hi } else { lo + (hi - lo) * k as f64 / (steps - 1) as f64 })
            .collect(),
    }
}

/// Parse `lo:hi:steps`.
pub fn parse_m_grid(s: &str) -> Result<Vec<f64>> {
    let bad = || Error::Config(format!("bad M grid {s:?}, expected lo:hi:steps"));
    let parts: Vec<&str> = s.split(':').map(str::trim).collect();
    let [lo, hi, steps] = parts.as_slice() else { return Err(bad()) };
    let lo: f64 = lo.parse().map_err(|_| bad())?;
    let hi: f64 = hi.parse().map_err(|_| bad())?;
    let steps: usize = steps.parse().map_err(|_| bad())?;
    if steps == 0 || !(lo.is_finite() && hi.is_finite()) || lo < 0.0 || hi < lo {
        return Err(bad());
    }
    Ok(linspace(lo, hi, steps))
}

/// Parse `a,b,c`.
pub fn parse_k_set(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .ok()
                .filter(|&k| k >= 1)
                .ok_or_else(|| Error::Config(format!("bad k set {s:?}, expected comma-separated positive integers")))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    #[serde(rename = "M")]
    pub m: f64,
    pub n_targeted_mech: usize,
    pub n_targeted_omn: usize,
    pub gross_mech: f64,
    pub gross_omn: f64,
    pub net_mech: f64,
    pub sum_delta_bl: f64,
    pub sum_delta_r: f64,
    pub k: usize,
    pub seed: u64,
}

/// A grid point dropped because one of the allocations could not meet it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedPoint {
    #[serde(rename = "M")]
    pub m: f64,
    pub k: usize,
    /// Largest target the failing allocation could meet.
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub mode: Mode,
    pub config: ScenarioConfig,
    pub rows: Vec<SweepRow>,
    pub skipped: Vec<SkippedPoint>,
}

/// Synthetic baselines for every window in `ks`, coupled across windows: the
/// k-day baseline of a user is the mean of the first k draws of that user's
/// baseline stream.
fn coupled_baselines(users: &[UserType], ks: &[usize], seed: u64) -> Vec<Vec<f64>> {
    let k_max = ks.iter().copied().max().unwrap_or(0);
    let per_user: Vec<Vec<f64>> = users
        .par_iter()
        .enumerate()
        .map(|(i, u)| {
            let mut rng = stream(seed, StreamKind::Baseline, i as u64);
            let mut acc = 0.0;
            let mut means = Vec::with_capacity(k_max);
            for d in 1..=k_max {
                acc += u.params.sample(&mut rng);
                means.push(acc / d as f64);
            }
            ks.iter().map(|&k| means[k - 1]).collect()
        })
        .collect();
    (0..ks.len()).map(|j| per_user.iter().map(|b| b[j]).collect()).collect()
}

/// `mc_reps` base-consumption realizations per user, shared across targets.
fn realizations(users: &[UserType], reps: usize, seed: u64) -> Vec<Vec<f64>> {
    users
        .par_iter()
        .enumerate()
        .map(|(i, u)| {
            let mut rng = stream(seed, StreamKind::Realization, i as u64);
            (0..reps).map(|_| u.params.sample(&mut rng)).collect()
        })
        .collect()
}

/// Expected virtual and actual reduction of the targeted users.
fn analytic_split(pool: &LognormalPool, alloc: &Allocation) -> (f64, f64) {
    let mut bl = 0.0;
    let mut r = 0.0;
    for &id in &alloc.targeted {
        let (theta, baseline) = &pool.users[id];
        let mean = theta.params.mean();
        bl += baseline - mean;
        r += -mean * (-theta.alpha * alloc.reward(id)).exp_m1();
    }
    (bl, r)
}

/// Virtual and actual reduction of the targeted users averaged over realizations.
fn sampled_split(pool: &LognormalPool, alloc: &Allocation, real: &[Vec<f64>]) -> (f64, f64) {
    let reps = real.first().map_or(0, Vec::len);
    let mut bl = 0.0;
    let mut r = 0.0;
    for &id in &alloc.targeted {
        let (theta, baseline) = &pool.users[id];
        let keep = -(-theta.alpha * alloc.reward(id)).exp_m1();
        let draws = &real[id];
        let total: f64 = draws.iter().sum();
        bl += baseline * reps as f64 - total;
        r += total * keep;
    }
    (bl / reps as f64, r / reps as f64)
}


pub fn run_scenario(cfg: &ScenarioConfig, mode: Mode) -> Result<SweepResult> {
    cfg.validate()?;
    let (lo, hi) = cfg.alpha_bounds;
    let prior = cfg.prior.clone().with_alpha_bounds(lo, hi)?;
    let users = sample_user_types(&prior, cfg.n, &mut stream(cfg.seed, StreamKind::UserTypes, 0))?;

    let ks = cfg.windows(mode);
    let baselines = coupled_baselines(&users, &ks, cfg.seed);
    let real = match mode {
        Mode::Decompose => realizations(&users, cfg.mc_reps, cfg.seed),
        _ => Vec::new(),
    };

    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for (&k, base) in ks.iter().zip(&baselines) {
        let pool_users = users.iter().copied().zip(base.iter().copied()).collect();
        let pool = LognormalPool::new(pool_users, cfg.q, cfg.solver)?;
        let points: Vec<Result<std::result::Result<SweepRow, SkippedPoint>>> = cfg
            .m_grid
            .par_iter()
            .map(|&m| {
                let allocs = pool
                    .run(m)
                    .and_then(|mech| Ok((mech, run_omniscient(&pool.bidders, m, cfg.epsilon)?)));
                let (mech, omn) = match allocs {
                    Ok(pair) => pair,
                    Err(Error::InfeasibleTarget { bound, .. }) => return Ok(Err(SkippedPoint { m, k, bound })),
                    Err(e) => return Err(e),
                };
                let pay_mech = expected_payments(&mech, &pool.users, cfg.q)?;
                let pay_omn = expected_payments(&omn, &pool.users, cfg.q)?;
                let (sum_delta_bl, sum_delta_r) = match mode {
                    Mode::Decompose => sampled_split(&pool, &mech, &real),
                    _ => analytic_split(&pool, &mech),
                };
                Ok(Ok(SweepRow {
                    m,
                    n_targeted_mech: mech.targeted.len(),
                    n_targeted_omn: omn.targeted.len(),
                    gross_mech: pay_mech.gross,
                    gross_omn: pay_omn.gross,
                    net_mech: pay_mech.net,
                    sum_delta_bl,
                    sum_delta_r,
                    k,
                    seed: cfg.seed,
                }))
            })
            .collect();
        for p in points {
            match p? {
                Ok(row) => rows.push(row),
                Err(s) => skipped.push(s),
            }
        }
    }

    if let (true, Some(first)) = (rows.is_empty(), skipped.first()) {
        return Err(Error::InfeasibleTarget { target: first.m, bound: first.bound });
    }
    Ok(SweepResult { mode, config: cfg.clone(), rows, skipped })
}

/// `%.9g`: nine significant digits, trailing zeros trimmed.
pub fn fmt_sig9(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { "0".into() } else { x.to_string() };
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-5..9).contains(&exp) {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{m}e{sign}{:02}", exp.abs());
    }
    trim_zeros(&format!("{x:.*}", (8 - exp) as usize)).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn round_sig9(x: f64) -> f64 {
    fmt_sig9(x).parse().unwrap_or(x)
}

pub const CSV_HEADER: [&str; 10] = [
    "M",
    "n_targeted_mech",
    "n_targeted_omn",
    "gross_mech",
    "gross_omn",
    "net_mech",
    "sum_delta_bl",
    "sum_delta_r",
    "k",
    "seed",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(Error::Config(format!("unknown format {s:?}, expected csv|json"))),
        }
    }
}

pub fn write_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            fmt_sig9(r.m),
            r.n_targeted_mech.to_string(),
            r.n_targeted_omn.to_string(),
            fmt_sig9(r.gross_mech),
            fmt_sig9(r.gross_omn),
            fmt_sig9(r.net_mech),
            fmt_sig9(r.sum_delta_bl),
            fmt_sig9(r.sum_delta_r),
            r.k.to_string(),
            r.seed.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<sweep output>", e))
}

#[derive(Serialize)]
struct JsonDoc<'a> {
    metadata: Metadata<'a>,
    rows: Vec<SweepRow>,
}

#[derive(Serialize)]
struct Metadata<'a> {
    mode: Mode,
    n: usize,
    q: f64,
    alpha_bounds: (f64, f64),
    prior_label: &'a str,
    prior: &'a CompoundPrior,
    m_grid: &'a [f64],
    k_set: &'a [usize],
    mc_reps: usize,
    seed: u64,
    epsilon: f64,
    skipped: &'a [SkippedPoint],
}

pub fn write_json<W: Write>(result: &SweepResult, out: W) -> Result<()> {
    let c = &result.config;
    let rows = result
        .rows
        .iter()
        .map(|r| SweepRow {
            m: round_sig9(r.m),
            gross_mech: round_sig9(r.gross_mech),
            gross_omn: round_sig9(r.gross_omn),
            net_mech: round_sig9(r.net_mech),
            sum_delta_bl: round_sig9(r.sum_delta_bl),
            sum_delta_r: round_sig9(r.sum_delta_r),
            ..*r
        })
        .collect();
    let doc = JsonDoc {
        metadata: Metadata {
            mode: result.mode,
            n: c.n,
            q: c.q,
            alpha_bounds: c.alpha_bounds,
            prior_label: &c.prior_label,
            prior: &c.prior,
            m_grid: &c.m_grid,
            k_set: &c.k_set,
            mc_reps: c.mc_reps,
            seed: c.seed,
            epsilon: c.epsilon,
            skipped: &result.skipped,
        },
        rows,
    };
    let mut out = out;
    serde_json::to_writer_pretty(&mut out, &doc)?;
    writeln!(out).map_err(|e| Error::io("<sweep output>", e))
}

pub fn emit_results(result: &SweepResult, path: &Path, format: Format) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    match format {
        Format::Csv => write_csv(&result.rows, &mut out)?,
        Format::Json => write_json(result, &mut out)?,
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(std::io::BufReader::new(file));
    let header: Vec<&str> = rdr.headers()?.iter().collect();
    if header != CSV_HEADER {
        return Err(Error::Parse { line: 1, msg: format!("unexpected header {}", header.join(",")) });
    }
    let mut rows = Vec::new();
    for rec in rdr.deserialize() {
        rows.push(rec?);
    }
    Ok(rows)
}

/// One row of a user-pool file: a type and the baseline measured against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub id: String,
    pub alpha: f64,
    pub sigma: f64,
    pub scale: f64,
    pub loc: f64,
    pub baseline: f64,
}

impl UserRecord {
    pub fn user(&self) -> Result<(UserType, f64)> {
        let theta = UserType::new(self.alpha, ConsumptionParams::new(self.sigma, self.scale, self.loc)?)?;
        if !(self.baseline.is_finite() && self.baseline >= 0.0) {
            return Err(Error::Domain(format!("user {}: baseline must be finite and >= 0", self.id)));
        }
        Ok((theta, self.baseline))
    }
}

/// Sample `n` users from `prior` with synthetic `k`-day baselines, using the
/// same streams as [`run_scenario`].
pub fn sample_pool(prior: &CompoundPrior, n: usize, k: usize, seed: u64) -> Result<Vec<UserRecord>> {
    if k == 0 {
        return Err(Error::Config("baseline window k must be at least 1".into()));
    }
    let users = sample_user_types(prior, n, &mut stream(seed, StreamKind::UserTypes, 0))?;
    let baselines = coupled_baselines(&users, &[k], seed).remove(0);
    Ok(users
        .iter()
        .zip(baselines)
        .enumerate()
        .map(|(i, (u, b))| UserRecord {
            id: i.to_string(),
            alpha: u.alpha,
            sigma: u.params.sigma,
            scale: u.params.scale,
            loc: u.params.loc,
            baseline: b,
        })
        .collect())
}

pub fn write_users_csv<W: Write>(users: &[UserRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for u in users {
        w.serialize(u)?;
    }
    w.flush().map_err(|e| Error::io("<users output>", e))
}

pub fn read_users_csv(path: &Path) -> Result<Vec<UserRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        let u: UserRecord = rec?;
        u.user()?;
        out.push(u);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(mode_k: Vec<usize>) -> ScenarioConfig {
        ScenarioConfig {
            n: 60,
            m_grid: linspace(0.0, 10.0, 6),
            k_set: mode_k,
            mc_reps: 50,
            seed: 7,
            ..Default::default()
        }
    }

    #[test]
    fn parses_grid_and_k_set() {
        assert_eq!(parse_m_grid("0:200:21").unwrap().len(), 21);
        assert_eq!(parse_m_grid("0:200:21").unwrap()[1], 10.0);
        assert_eq!(parse_m_grid("5:5:1").unwrap(), vec![5.0]);
        assert!(parse_m_grid("0:200").is_err());
        assert!(parse_m_grid("10:0:3").is_err());
        assert!(parse_m_grid("-1:3:3").is_err());
        assert_eq!(parse_k_set("5, 10,20").unwrap(), vec![5, 10, 20]);
        assert!(parse_k_set("0,5").is_err());
        assert!(parse_k_set("a").is_err());
    }

    #[test]
    fn rejects_bad_config() {
        let ok = ScenarioConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            ScenarioConfig { n: 2, ..ok.clone() },
            ScenarioConfig { m_grid: vec![2.0, 1.0], ..ok.clone() },
            ScenarioConfig { m_grid: vec![-1.0], ..ok.clone() },
            ScenarioConfig { mc_reps: 0, ..ok.clone() },
            ScenarioConfig { k_set: vec![], ..ok.clone() },
            ScenarioConfig { alpha_bounds: (0.06, 0.05), ..ok.clone() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn zero_target_gives_zero_row() {
        let cfg = ScenarioConfig { m_grid: vec![0.0], ..small(vec![5]) };
        let res = run_scenario(&cfg, Mode::Compare).unwrap();
        assert_eq!(res.rows.len(), 1);
        let r = res.rows[0];
        assert_eq!((r.n_targeted_mech, r.n_targeted_omn), (0, 0));
        assert_eq!((r.gross_mech, r.gross_omn, r.net_mech), (0.0, 0.0, 0.0));
        assert_eq!((r.sum_delta_bl, r.sum_delta_r), (0.0, 0.0));
        assert_eq!(r.k, COMPARE_K);
    }

    #[test]
    fn rows_per_window_and_determinism() {
        let cfg = small(vec![5, 40]);
        let a = run_scenario(&cfg, Mode::Payments).unwrap();
        let b = run_scenario(&cfg, Mode::Payments).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len() + a.skipped.len(), 12);
        assert!(a.rows.iter().any(|r| r.k == 5) && a.rows.iter().any(|r| r.k == 40));
    }

    #[test]
    fn infeasible_targets_are_skipped() {
        let cfg = ScenarioConfig { m_grid: vec![1.0, 1e6], ..small(vec![5]) };
        let res = run_scenario(&cfg, Mode::Compare).unwrap();
        assert_eq!(res.rows.len(), 1);
        assert_eq!(res.skipped.len(), 1);
        assert_eq!(res.skipped[0].m, 1e6);

        let cfg = ScenarioConfig { m_grid: vec![1e6], ..small(vec![5]) };
        assert!(matches!(run_scenario(&cfg, Mode::Compare), Err(Error::InfeasibleTarget { .. })));
    }

    #[test]
    fn actual_reduction_grows_with_target() {
        let res = run_scenario(&small(vec![10]), Mode::Decompose).unwrap();
        for w in res.rows.windows(2) {
            assert!(w[1].sum_delta_r >= w[0].sum_delta_r, "{w:?}");
        }
    }

    #[test]
    fn sig9_formatting() {
        assert_eq!(fmt_sig9(0.0), "0");
        assert_eq!(fmt_sig9(200.0), "200");
        assert_eq!(fmt_sig9(1.0 / 3.0), "0.333333333");
        assert_eq!(fmt_sig9(-2.5), "-2.5");
        assert_eq!(fmt_sig9(123456789.4), "123456789");
        assert_eq!(fmt_sig9(1234567890.0), "1.23456789e+09");
        assert_eq!(fmt_sig9(1.5e-7), "1.5e-07");
        assert_eq!(fmt_sig9(0.0001), "0.0001");
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sweep.csv");
        let res = run_scenario(&small(vec![5]), Mode::Compare).unwrap();
        emit_results(&res, &path, Format::Csv).unwrap();
        let back = read_sweep_csv(&path).unwrap();
        assert_eq!(back.len(), res.rows.len());
        for (a, b) in res.rows.iter().zip(&back) {
            assert_eq!(fmt_sig9(a.gross_mech), fmt_sig9(b.gross_mech));
            assert_eq!(fmt_sig9(a.sum_delta_r), fmt_sig9(b.sum_delta_r));
            assert_eq!((a.n_targeted_mech, a.k, a.seed), (b.n_targeted_mech, b.k, b.seed));
        }

        let empty = SweepResult { rows: vec![], skipped: vec![], ..res };
        emit_results(&empty, &path, Format::Csv).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), CSV_HEADER.join(",") + "\n");
    }

    #[test]
    fn user_pool_round_trip() {
        let pool = sample_pool(&CompoundPrior::synthetic_default(), 10, 10, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("users.csv");
        write_users_csv(&pool, std::fs::File::create(&path).unwrap()).unwrap();
        assert_eq!(read_users_csv(&path).unwrap(), pool);
        assert!(sample_pool(&CompoundPrior::synthetic_default(), 10, 0, 3).is_err());
    }

    #[test]
    fn json_carries_metadata() {
        let res = run_scenario(&small(vec![5]), Mode::Compare).unwrap();
        let mut buf = Vec::new();
        write_json(&res, &mut buf).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        assert_eq!(v["metadata"]["prior_label"], "synthetic-default");
        assert_eq!(v["metadata"]["mode"], "compare");
        assert!(v["rows"][0].get("M").is_some());
        assert!(v["rows"][0].get("gross_mech").is_some());
    }
}
