use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use drmech::analytic::{self, ThresholdSolveConfig};
use drmech::mechanism::{self, Bidder};
use drmech::scenario::{self, Mode, ScenarioConfig};
use drmech::Error;

create_exception!(pydrmech, InfeasibleTarget, PyRuntimeError, "Target exceeds what the pool can deliver.");

fn to_py(e: Error) -> PyErr {
    match e {
        Error::InfeasibleTarget { .. } => InfeasibleTarget::new_err(e.to_string()),
        Error::Domain(_) | Error::Config(_) | Error::Precondition(_) | Error::Size { .. } => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Three-parameter lognormal `loc + scale * exp(sigma * Z)`.
#[pyclass(name = "ConsumptionParams", frozen, from_py_object)]
#[derive(Clone, Copy)]
struct PyParams(drmech::ConsumptionParams);

#[pymethods]
impl PyParams {
    #[new]
    fn new(sigma: f64, scale: f64, loc: f64) -> PyResult<Self> {
        drmech::ConsumptionParams::new(sigma, scale, loc).map(PyParams).map_err(to_py)
    }

    #[getter]
    fn sigma(&self) -> f64 {
        self.0.sigma
    }

    #[getter]
    fn scale(&self) -> f64 {
        self.0.scale
    }

    #[getter]
    fn loc(&self) -> f64 {
        self.0.loc
    }

    fn mean(&self) -> f64 {
        self.0.mean()
    }

    fn variance(&self) -> f64 {
        self.0.variance()
    }

    /// `(cdf, mean, partial_expectation)` at `a`.
    fn moments(&self, a: f64) -> PyResult<(f64, f64, f64)> {
        let m = drmech::dist::lognorm_moments(&self.0, a).map_err(to_py)?;
        Ok((m.cdf, m.mean, m.partial_expectation))
    }

    fn __repr__(&self) -> String {
        format!("ConsumptionParams(sigma={}, scale={}, loc={})", self.0.sigma, self.0.scale, self.0.loc)
    }
}

#[pyclass(name = "UserType", frozen, from_py_object)]
#[derive(Clone, Copy)]
struct PyUserType(drmech::UserType);

#[pymethods]
impl PyUserType {
    #[new]
    fn new(alpha: f64, params: PyParams) -> PyResult<Self> {
        drmech::UserType::new(alpha, params.0).map(PyUserType).map_err(to_py)
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.0.alpha
    }

    #[getter]
    fn params(&self) -> PyParams {
        PyParams(self.0.params)
    }

    fn __repr__(&self) -> String {
        let p = self.0.params;
        format!("UserType(alpha={}, sigma={}, scale={}, loc={})", self.0.alpha, p.sigma, p.scale, p.loc)
    }
}

#[pyclass(name = "Allocation", frozen)]
struct PyAllocation(mechanism::Allocation);

#[pymethods]
impl PyAllocation {
    #[getter]
    fn target(&self) -> f64 {
        self.0.target
    }

    #[getter]
    fn j_max(&self) -> usize {
        self.0.j_max
    }

    /// Bidder ids in ascending threshold order.
    #[getter]
    fn order(&self) -> Vec<usize> {
        self.0.order.clone()
    }

    #[getter]
    fn targeted(&self) -> Vec<usize> {
        self.0.targeted.clone()
    }

    fn reward(&self, id: usize) -> f64 {
        self.0.reward(id)
    }

    fn rewards(&self) -> Vec<(usize, f64)> {
        self.0.rewards.iter().map(|(&id, &r)| (id, r)).collect()
    }

    fn is_targeted(&self, id: usize) -> bool {
        self.0.is_targeted(id)
    }

    fn __len__(&self) -> usize {
        self.0.targeted.len()
    }
}

fn pool(users: &[PyUserType], baselines: &[f64]) -> PyResult<Vec<(drmech::UserType, f64)>> {
    if users.len() != baselines.len() {
        return Err(PyValueError::new_err(format!(
            "{} users but {} baselines",
            users.len(),
            baselines.len()
        )));
    }
    Ok(users.iter().map(|u| u.0).zip(baselines.iter().copied()).collect())
}

fn allocate(bidders: &[Bidder], target: f64, omniscient: bool, epsilon: f64) -> PyResult<PyAllocation> {
    let alloc = if omniscient {
        mechanism::run_omniscient(bidders, target, epsilon)
    } else {
        mechanism::run_dr_mechanism(bidders, target)
    };
    alloc.map(PyAllocation).map_err(to_py)
}

#[pyfunction]
fn demand(base: f64, alpha: f64, reward: f64) -> PyResult<f64> {
    drmech::model::demand(base, alpha, reward).map_err(to_py)
}

/// `(total, virtual, actual)` reduction.
#[pyfunction]
fn decompose_reduction(baseline: f64, base: f64, alpha: f64, reward: f64) -> PyResult<(f64, f64, f64)> {
    let d = drmech::model::decompose_reduction(baseline, base, alpha, reward).map_err(to_py)?;
    Ok((d.total, d.virtual_reduction, d.actual_reduction))
}

#[pyfunction]
fn fit_lognormal3(samples: Vec<f64>) -> PyResult<PyParams> {
    drmech::dist::fit_lognormal3(&samples).map(PyParams).map_err(to_py)
}

#[pyfunction]
fn expected_utility(user: PyUserType, baseline: f64, q: f64, reward: f64) -> PyResult<f64> {
    analytic::expected_utility(&user.0, baseline, q, reward).map_err(to_py)
}

#[pyfunction]
fn expected_reduction(user: PyUserType, baseline: f64, reward: f64) -> PyResult<f64> {
    analytic::expected_reduction(&user.0, baseline, reward).map_err(to_py)
}

#[pyfunction]
fn threshold_reward(user: PyUserType, baseline: f64, q: f64) -> PyResult<f64> {
    analytic::threshold_reward(&user.0, baseline, q, &ThresholdSolveConfig::default()).map_err(to_py)
}

#[pyfunction]
fn feasible_target_bound(py: Python<'_>, users: Vec<PyUserType>, baselines: Vec<f64>, q: f64) -> PyResult<f64> {
    let users = pool(&users, &baselines)?;
    py.detach(|| analytic::max_feasible_target(&users, q, &ThresholdSolveConfig::default()))
        .map_err(to_py)
}

/// Run the auction over lognormal users; bidder ids are list positions.
#[pyfunction]
#[pyo3(signature = (users, baselines, q, target, omniscient=false, epsilon=0.0))]
fn run_mechanism(
    py: Python<'_>,
    users: Vec<PyUserType>,
    baselines: Vec<f64>,
    q: f64,
    target: f64,
    omniscient: bool,
    epsilon: f64,
) -> PyResult<PyAllocation> {
    let users = pool(&users, &baselines)?;
    py.detach(|| {
        let thresholds = analytic::threshold_rewards(&users, q, &ThresholdSolveConfig::default()).map_err(to_py)?;
        let bidders = analytic::lognormal_bidders(&users, &thresholds).map_err(to_py)?;
        allocate(&bidders, target, omniscient, epsilon)
    })
}

/// Run the auction over bidders with `delta_i(r) = intercept_i + slope_i * r`.
#[pyfunction]
#[pyo3(signature = (thresholds, intercepts, slopes, target, omniscient=false, epsilon=0.0))]
fn run_linear(
    thresholds: Vec<f64>,
    intercepts: Vec<f64>,
    slopes: Vec<f64>,
    target: f64,
    omniscient: bool,
    epsilon: f64,
) -> PyResult<PyAllocation> {
    if thresholds.len() != intercepts.len() || thresholds.len() != slopes.len() {
        return Err(PyValueError::new_err("thresholds, intercepts and slopes differ in length"));
    }
    let bidders = thresholds
        .iter()
        .zip(&intercepts)
        .zip(&slopes)
        .enumerate()
        .map(|(id, ((&t, &a), &b))| Bidder::linear(id, t, a, b))
        .collect::<drmech::Result<Vec<_>>>()
        .map_err(to_py)?;
    allocate(&bidders, target, omniscient, epsilon)
}

/// Sweep targets over a synthetic pool; returns `(rows, skipped)` as lists of dicts.
#[pyfunction]
#[pyo3(signature = (mode="compare", n=500, q=5.0, m_grid=None, k_set=None, mc_reps=200, seed=None))]
#[allow(clippy::too_many_arguments)]
fn run_scenario<'py>(
    py: Python<'py>,
    mode: &str,
    n: usize,
    q: f64,
    m_grid: Option<Vec<f64>>,
    k_set: Option<Vec<usize>>,
    mc_reps: usize,
    seed: Option<u64>,
) -> PyResult<(Vec<Bound<'py, PyDict>>, Vec<Bound<'py, PyDict>>)> {
    let mode: Mode = mode.parse().map_err(to_py)?;
    let base = ScenarioConfig::default();
    let cfg = ScenarioConfig {
        n,
        q,
        m_grid: m_grid.unwrap_or(base.m_grid.clone()),
        k_set: k_set.unwrap_or(base.k_set.clone()),
        mc_reps,
        seed: seed.unwrap_or(base.seed),
        ..base
    };
    let result = py.detach(|| scenario::run_scenario(&cfg, mode)).map_err(to_py)?;
    let rows = result
        .rows
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("M", r.m)?;
            d.set_item("n_targeted_mech", r.n_targeted_mech)?;
            d.set_item("n_targeted_omn", r.n_targeted_omn)?;
            d.set_item("gross_mech", r.gross_mech)?;
            d.set_item("gross_omn", r.gross_omn)?;
            d.set_item("net_mech", r.net_mech)?;
            d.set_item("sum_delta_bl", r.sum_delta_bl)?;
            d.set_item("sum_delta_r", r.sum_delta_r)?;
            d.set_item("k", r.k)?;
            d.set_item("seed", r.seed)?;
            Ok(d)
        })
        .collect::<PyResult<Vec<_>>>()?;
    let skipped = result
        .skipped
        .iter()
        .map(|s| {
            let d = PyDict::new(py);
            d.set_item("M", s.m)?;
            d.set_item("k", s.k)?;
            d.set_item("bound", s.bound)?;
            Ok(d)
        })
        .collect::<PyResult<Vec<_>>>()?;
    Ok((rows, skipped))
}

#[pymodule]
mod pydrmech {
    #[pymodule_export]
    use super::{
        decompose_reduction, demand, expected_reduction, expected_utility, feasible_target_bound, fit_lognormal3,
        run_linear, run_mechanism, run_scenario, threshold_reward, InfeasibleTarget, PyAllocation, PyParams,
        PyUserType,
    };
}
