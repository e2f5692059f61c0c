//! Residential demand-response auctions.
//!
//! The crate covers the whole pipeline a demand-response provider (DRP) runs
//! on smart-meter data:
//!
//! * [`ingest`] reads hourly meter CSVs and slices them by hour of day.
//! * [`dist`] fits three-parameter lognormal base-consumption distributions
//!   per user and a compound prior across the population.
//! * [`baseline`] computes counterfactual baselines, both the CAISO
//!   "10-in-10" rule and synthetic k-day averages.
//! * [`analytic`] evaluates expected utility and expected reduction in closed
//!   form and solves each user's threshold reward.
//! * [`mechanism`] runs the incentive-compatible allocation, the omniscient
//!   benchmark, payment accounting and IR/IC audits.
//! * [`scenario`] sweeps reduction targets over synthetic user pools and
//!   writes result tables.

pub mod analytic;
pub mod baseline;
pub mod dist;
pub mod error;
pub mod ingest;
pub mod mechanism;
pub mod model;
pub mod rng;
pub mod scenario;

pub use error::{Error, Result};
pub use model::{ConsumptionParams, MarketParams, ReductionDecomposition, UserType};
