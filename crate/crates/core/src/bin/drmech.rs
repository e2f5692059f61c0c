use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};

use drmech::analytic::ThresholdSolveConfig;
use drmech::baseline::{caiso_baseline, write_baselines_csv, BaselineRecord, Calendar, HistoryMode};
use drmech::dist::{fit_compound_prior, fit_lognormal3, write_params_csv, CompoundPrior, FittedParams, PriorAssignment};
use drmech::ingest::{hour_slice, read_meter_csv};
use drmech::mechanism::{run_dr_mechanism, run_omniscient, write_allocation_csv, AllocationMeta, Bidder};
use drmech::scenario::{
    emit_results, parse_k_set, parse_m_grid, read_users_csv, run_scenario, sample_pool, write_csv,
    write_json, write_users_csv, Format, Mode, ScenarioConfig,
};
use drmech::{Error, Result};

#[derive(Parser)]
#[command(name = "drmech", version, about = "Residential demand-response auction toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit per-user lognormal parameters at one hour of day.
    Fit(FitArgs),
    /// Sample a synthetic user pool with k-day baselines.
    SampleUsers(SampleArgs),
    /// CAISO baselines for every user on an event day.
    Baseline(BaselineArgs),
    /// Run the mechanism (or the omniscient benchmark) on a user pool.
    Mechanism(MechanismArgs),
    /// Sweep targets over a synthetic pool.
    Scenario(ScenarioArgs),
}

#[derive(Args)]
struct FitArgs {
    /// Meter CSV (`user_id,timestamp,kwh[,dr_event]`).
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u8).range(0..24))]
    hour: u8,
    /// Keep readings flagged as DR events.
    #[arg(long)]
    include_dr: bool,
    /// Per-user parameter CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also fit the compound prior across users and write it as JSON.
    #[arg(long)]
    prior_out: Option<PathBuf>,
    /// Fit the Cauchy marginal to `loc` instead of `scale`.
    #[arg(long)]
    cauchy_loc: bool,
}

#[derive(Args)]
struct PriorArgs {
    /// Compound prior JSON; the synthetic default when omitted.
    #[arg(long)]
    prior: Option<PathBuf>,
    /// Uniform slope prior as `lo:hi`.
    #[arg(long, default_value = "0.05:0.06")]
    alpha_bounds: String,
}

impl PriorArgs {
    fn load(&self) -> Result<(CompoundPrior, String, (f64, f64))> {
        let bounds = parse_bounds(&self.alpha_bounds)?;
        let (prior, label) = match &self.prior {
            Some(p) => (CompoundPrior::read_json(p)?, p.display().to_string()),
            None => (CompoundPrior::synthetic_default(), "synthetic-default".to_string()),
        };
        Ok((prior, label, bounds))
    }
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long, default_value_t = 500)]
    n: usize,
    /// Baseline window in days.
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = ScenarioConfig::default().seed)]
    seed: u64,
    #[command(flatten)]
    prior: PriorArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long)]
    input: PathBuf,
    /// Event day, `YYYY-MM-DD`.
    #[arg(long)]
    date: NaiveDate,
    #[arg(long, value_parser = clap::value_parser!(u8).range(0..24))]
    hour: u8,
    /// Holiday file, one `YYYY-MM-DD` per line.
    #[arg(long)]
    holidays: Option<PathBuf>,
    /// Fail unless every user has the full 10 (or 4) qualifying days.
    #[arg(long)]
    strict_baseline: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MechanismArgs {
    /// User pool CSV as written by `sample-users`.
    #[arg(long)]
    users: PathBuf,
    #[arg(long, default_value_t = 5.0)]
    q: f64,
    /// Aggregate reduction target in kWh.
    #[arg(long)]
    m: f64,
    /// Run the omniscient benchmark instead.
    #[arg(long)]
    omniscient: bool,
    #[arg(long, default_value_t = 0.0)]
    epsilon: f64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScenarioArgs {
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, default_value_t = 5.0)]
    q: f64,
    /// Targets as `lo:hi:steps`.
    #[arg(long, default_value = "0:200:21")]
    m_grid: String,
    #[arg(long, default_value = "5,10,20,40")]
    k_set: String,
    #[arg(long, default_value_t = ScenarioConfig::default().seed)]
    seed: u64,
    #[arg(long, default_value_t = ScenarioConfig::default().mc_reps)]
    mc_reps: usize,
    /// compare, decompose or payments.
    #[arg(long, default_value = "compare")]
    mode: String,
    #[command(flatten)]
    prior: PriorArgs,
    #[arg(long)]
    out: Option<PathBuf>,
    /// csv or json.
    #[arg(long, default_value = "csv")]
    format: String,
}

fn parse_bounds(s: &str) -> Result<(f64, f64)> {
    let bad = || Error::Config(format!("bad bounds {s:?}, expected lo:hi"));
    let (lo, hi) = s.split_once(':').ok_or_else(bad)?;
    Ok((lo.trim().parse().map_err(|_| bad())?, hi.trim().parse().map_err(|_| bad())?))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| Error::io(p, e))?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn fit(args: FitArgs) -> Result<()> {
    let series = read_meter_csv(&args.input)?;
    let mut rows = Vec::new();
    for s in &series {
        let slice = hour_slice(s, args.hour, !args.include_dr);
        if slice.dropped_zeros > 0 {
            eprintln!("warning: {}: dropped {} zero readings", s.user_id, slice.dropped_zeros);
        }
        match fit_lognormal3(&slice.values) {
            Ok(p) => rows.push(FittedParams {
                user_id: s.user_id.clone(),
                hour: args.hour,
                sigma: p.sigma,
                scale: p.scale,
                loc: p.loc,
            }),
            Err(Error::Fit(msg)) => eprintln!("warning: {}: skipped, {msg}", s.user_id),
            Err(e) => return Err(e),
        }
    }
    match &args.out {
        Some(p) => write_params_csv(p, &rows)?,
        None => {
            let mut w = csv::Writer::from_writer(io::stdout());
            w.write_record(["user_id", "hour", "sigma", "scale", "loc"])?;
            for r in &rows {
                w.serialize((&r.user_id, r.hour, r.sigma, r.scale, r.loc))?;
            }
            w.flush().map_err(|e| Error::io("<stdout>", e))?;
        }
    }
    if let Some(path) = &args.prior_out {
        let params = rows.iter().map(FittedParams::params).collect::<Result<Vec<_>>>()?;
        let assignment = if args.cauchy_loc { PriorAssignment::CauchyLoc } else { PriorAssignment::CauchyScale };
        fit_compound_prior(&params, None, assignment)?.write_json(path)?;
    }
    Ok(())
}

fn sample_users(args: SampleArgs) -> Result<()> {
    let (prior, _, (lo, hi)) = args.prior.load()?;
    if args.n < 3 {
        return Err(Error::Config(format!("n must be at least 3, got {}", args.n)));
    }
    let pool = sample_pool(&prior.with_alpha_bounds(lo, hi)?, args.n, args.k, args.seed)?;
    write_users_csv(&pool, output(args.out.as_deref())?)
}

fn baseline(args: BaselineArgs) -> Result<()> {
    let cal = match &args.holidays {
        Some(p) => Calendar::from_holiday_file(p)?,
        None => Calendar::default(),
    };
    let mode = if args.strict_baseline { HistoryMode::Strict } else { HistoryMode::Relaxed };
    let mut rows = Vec::new();
    for s in read_meter_csv(&args.input)? {
        match caiso_baseline(&s, args.date, args.hour, &cal, mode) {
            Ok(estimate) => rows.push(BaselineRecord { user_id: s.user_id.clone(), date: args.date, estimate }),
            Err(e @ Error::InsufficientHistory { .. }) if mode == HistoryMode::Relaxed => {
                eprintln!("warning: {}: skipped, {e}", s.user_id)
            }
            Err(e) => return Err(e),
        }
    }
    write_baselines_csv(&rows, output(args.out.as_deref())?)
}

fn mechanism(args: MechanismArgs) -> Result<()> {
    let records = read_users_csv(&args.users)?;
    let users = records.iter().map(|r| r.user()).collect::<Result<Vec<_>>>()?;
    let solver = ThresholdSolveConfig::default();
    let thresholds = drmech::analytic::threshold_rewards(&users, args.q, &solver)?;
    let bidders: Vec<Bidder> = drmech::analytic::lognormal_bidders(&users, &thresholds)?;
    let alloc = if args.omniscient {
        run_omniscient(&bidders, args.m, args.epsilon)?
    } else {
        run_dr_mechanism(&bidders, args.m)?
    };
    let meta = AllocationMeta { q: args.q, seed: args.seed };
    write_allocation_csv(&alloc, &meta, |id| records[id].id.clone(), output(args.out.as_deref())?)
}

fn scenario(args: ScenarioArgs) -> Result<()> {
    let (prior, prior_label, alpha_bounds) = args.prior.load()?;
    let mode: Mode = args.mode.parse()?;
    let format: Format = args.format.parse()?;
    let cfg = ScenarioConfig {
        n: args.n,
        q: args.q,
        alpha_bounds,
        prior,
        prior_label,
        m_grid: parse_m_grid(&args.m_grid)?,
        k_set: parse_k_set(&args.k_set)?,
        mc_reps: args.mc_reps,
        seed: args.seed,
        ..Default::default()
    };
    let result = run_scenario(&cfg, mode)?;
    for s in &result.skipped {
        eprintln!("warning: M={} k={} infeasible (bound {}), row skipped", s.m, s.k, s.bound);
    }
    match &args.out {
        Some(p) => emit_results(&result, p, format),
        None => {
            let mut out = BufWriter::new(io::stdout());
            match format {
                Format::Csv => write_csv(&result.rows, &mut out)?,
                Format::Json => write_json(&result, &mut out)?,
            }
            out.flush().map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Fit(a) => fit(a),
        Command::SampleUsers(a) => sample_users(a),
        Command::Baseline(a) => baseline(a),
        Command::Mechanism(a) => mechanism(a),
        Command::Scenario(a) => scenario(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
