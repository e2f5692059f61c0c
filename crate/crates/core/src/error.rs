use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the demand-response pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("degenerate prior: {0}")]
    Prior(String),

    #[error(
        "threshold reward unbounded: expected utility still non-positive at r = {r_hi} \
         (r_max = {r_max}) for type alpha={alpha}, sigma={sigma}, scale={scale}, loc={loc}, baseline={baseline}"
    )]
    UnboundedThreshold {
        r_hi: f64,
        r_max: f64,
        alpha: f64,
        sigma: f64,
        scale: f64,
        loc: f64,
        baseline: f64,
    },

    #[error("threshold solver did not converge after {iterations} iterations (last r = {r}, mu = {mu})")]
    Convergence { iterations: usize, r: f64, mu: f64 },

    #[error("need at least {required} users, got {got}")]
    Size { required: usize, got: usize },

    #[error("target {target} kWh is infeasible (feasible range is [0, {bound}])")]
    InfeasibleTarget { target: f64, bound: f64 },

    #[error("unknown bidder id {0}")]
    Lookup(usize),

    #[error("insufficient history: found {found} of {required} qualifying days for {date} hour {hour}")]
    InsufficientHistory {
        date: chrono::NaiveDate,
        hour: u8,
        found: usize,
        required: usize,
    },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error("integrity error at line {line}: {msg}")]
    Integrity { line: u64, msg: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Domain(_) | Error::Precondition(_) | Error::Size { .. } => 2,
            Error::InfeasibleTarget { .. } => 4,
            _ => 3,
        }
    }
}

pub(crate) fn ensure_finite(name: &str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must be finite, got {value}")))
    }
}
