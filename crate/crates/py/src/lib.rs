//! Python bindings. Matrices cross the boundary as lists of rows and vectors
//! as flat lists of floats.

use belief_mpc::controllers::{self, ControllerKind, ControllerSpec};
use belief_mpc::estimation;
use belief_mpc::experiments::{self, ExperimentConfig, ExperimentKind};
use belief_mpc::rng::{self, StreamTag};
use belief_mpc::system::{
    make_double_integrator, make_random_system, DoubleIntegratorParams, RandomSystemParams, SystemKind,
};
use belief_mpc::{Belief, InitScheme, LbfgsConfig, PlanningProblem, SystemModel};
use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: belief_mpc::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(PyValueError::new_err("ragged matrix"));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn vector(v: Vec<f64>) -> DVector<f64> {
    DVector::from_vec(v)
}

/// A validated linear system with bilinear observations.
#[pyclass(name = "System", module = "belief_mpc_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PySystem {
    inner: SystemModel,
}

#[pymethods]
impl PySystem {
    /// Random benchmark system.
    #[staticmethod]
    #[pyo3(signature = (seed=0, rho=0.95, c0=0.01, r_scale=1.0, sigma_w=0.1, sigma_z=0.1, n=6, p=3, m=3))]
    #[allow(clippy::too_many_arguments)]
    fn random(seed: u64, rho: f64, c0: f64, r_scale: f64, sigma_w: f64, sigma_z: f64, n: usize, p: usize, m: usize) -> PyResult<Self> {
        let params = RandomSystemParams { n, p, m, rho, c0, r_scale, sigma_w, sigma_z, seed };
        Ok(Self { inner: make_random_system(&params).map_err(err)? })
    }

    /// Three decoupled double-integrator blocks.
    #[staticmethod]
    #[pyo3(signature = (rho=0.95, c0=0.01, c1=3.0, h=0.3, r_scale=1.0, sigma_w=0.1, sigma_z=1.0))]
    fn double_integrator(rho: f64, c0: f64, c1: f64, h: f64, r_scale: f64, sigma_w: f64, sigma_z: f64) -> PyResult<Self> {
        let params = DoubleIntegratorParams { rho, c0, c1, h, r_scale, sigma_w, sigma_z };
        Ok(Self { inner: make_double_integrator(&params).map_err(err)? })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn p(&self) -> usize {
        self.inner.p()
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m()
    }

    #[getter]
    fn a(&self) -> Vec<Vec<f64>> {
        to_rows(self.inner.a())
    }

    #[getter]
    fn b(&self) -> Vec<Vec<f64>> {
        to_rows(self.inner.b())
    }

    /// `C(u) = C0 + Σ u_k C_k`.
    fn observation_matrix(&self, u: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        Ok(to_rows(&self.inner.observation_matrix(&vector(u)).map_err(err)?))
    }

    /// Prior belief `(x̂0, Σ0)`.
    fn prior(&self) -> PyBelief {
        PyBelief { inner: Belief::prior(&self.inner) }
    }

    fn __repr__(&self) -> String {
        format!("System(n={}, p={}, m={})", self.inner.n(), self.inner.p(), self.inner.m())
    }
}

/// Gaussian belief `(mean, cov)`.
#[pyclass(name = "Belief", module = "belief_mpc_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyBelief {
    inner: Belief,
}

#[pymethods]
impl PyBelief {
    #[new]
    fn new(mean: Vec<f64>, cov: Vec<Vec<f64>>) -> PyResult<Self> {
        Ok(Self { inner: Belief::new(vector(mean), from_rows(&cov)?).map_err(err)? })
    }

    #[getter]
    fn mean(&self) -> Vec<f64> {
        self.inner.mean.iter().copied().collect()
    }

    #[getter]
    fn cov(&self) -> Vec<Vec<f64>> {
        to_rows(&self.inner.cov)
    }

    fn trace(&self) -> f64 {
        self.inner.cov.trace()
    }

    /// Filter update after applying `u` and observing `y`.
    fn update(&self, system: &PySystem, u: Vec<f64>, y: Vec<f64>) -> PyResult<Self> {
        let next = estimation::kalman_update(&system.inner, &self.inner, &vector(u), &vector(y)).map_err(err)?;
        Ok(Self { inner: next })
    }
}

fn problem<'a>(system: &'a PySystem, belief: &PyBelief, plan: &[Vec<f64>]) -> PyResult<(PlanningProblem<'a>, DMatrix<f64>)> {
    let plan = from_rows(plan)?;
    let prob = PlanningProblem::new(&system.inner, belief.inner.clone(), plan.nrows()).map_err(err)?;
    Ok((prob, plan))
}

/// Planning objective of an `H × p` plan rooted at `belief`.
#[pyfunction]
fn objective(system: &PySystem, belief: &PyBelief, plan: Vec<Vec<f64>>) -> PyResult<f64> {
    let (prob, plan) = problem(system, belief, &plan)?;
    prob.objective(&plan).map_err(err)
}

/// Objective value and gradient with respect to the plan.
#[pyfunction]
fn value_and_gradient(system: &PySystem, belief: &PyBelief, plan: Vec<Vec<f64>>) -> PyResult<(f64, Vec<Vec<f64>>)> {
    let (prob, plan) = problem(system, belief, &plan)?;
    let (v, g) = prob.value_and_gradient(&plan).map_err(err)?;
    Ok((v, to_rows(&g)))
}

/// First input of the certainty-equivalent LQ plan.
#[pyfunction]
fn sep_mpc_action(system: &PySystem, belief: &PyBelief, horizon: usize) -> PyResult<Vec<f64>> {
    let u = controllers::sep_mpc_action(&system.inner, &belief.inner, horizon).map_err(err)?;
    Ok(u.iter().copied().collect())
}

/// Belief-space MPC step. Returns `(u, plan, value)`.
#[pyfunction]
#[pyo3(signature = (system, belief, horizon, seed=0, max_iters=20, warm_start=false))]
fn bmpc_action(
    system: &PySystem,
    belief: &PyBelief,
    horizon: usize,
    seed: u64,
    max_iters: usize,
    warm_start: bool,
) -> PyResult<(Vec<f64>, Vec<Vec<f64>>, f64)> {
    let cfg = LbfgsConfig { max_iters, ..LbfgsConfig::default() };
    let scheme = if warm_start { InitScheme::SepMpcWarmStart } else { InitScheme::RandomGaussian };
    let mut stream = rng::stream(seed, 0, StreamTag::PlannerInit);
    let out = controllers::bmpc_action(&system.inner, &belief.inner, horizon, &cfg, scheme, &mut stream).map_err(err)?;
    Ok((out.u.iter().copied().collect(), to_rows(&out.plan), out.value))
}

/// One closed-loop trajectory. Returns a dict of cost totals and per-step traces.
#[pyfunction]
#[pyo3(signature = (system, controller, horizon, steps=300, seed=0))]
fn rollout<'py>(
    py: Python<'py>,
    system: &PySystem,
    controller: &str,
    horizon: usize,
    steps: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let kind = ControllerKind::parse(controller).map_err(err)?;
    let spec = ControllerSpec::new(kind, horizon);
    let noise = system.inner.sample_noise(steps, seed).map_err(err)?;
    let rec = experiments::rollout(&system.inner, &spec, steps, &noise, rng::stream(seed, 0, StreamTag::PlannerInit))
        .map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("total_cost", rec.total_cost)?;
    d.set_item("state_cost", rec.state_cost_sum)?;
    d.set_item("input_cost", rec.input_cost_sum)?;
    d.set_item("terminal_cost", rec.terminal_cost)?;
    d.set_item("tr_sigma", rec.tr_sigma.clone())?;
    d.set_item("est_err", rec.estimation_errors())?;
    let inputs: Vec<Vec<f64>> = rec.inputs.iter().map(|u| u.iter().copied().collect()).collect();
    d.set_item("inputs", inputs)?;
    Ok(d)
}

/// Runs a named experiment and returns its summary table as CSV text.
#[pyfunction]
#[pyo3(signature = (experiment, system="random", seed=0, trials=10, steps=None, horizon=None))]
fn run_experiment(
    py: Python<'_>,
    experiment: &str,
    system: &str,
    seed: u64,
    trials: usize,
    steps: Option<usize>,
    horizon: Option<usize>,
) -> PyResult<String> {
    let kind = ExperimentKind::parse(experiment).map_err(err)?;
    let mut cfg = ExperimentConfig::baseline(SystemKind::parse(system).map_err(err)?);
    cfg.system.seed = seed;
    cfg.trials = trials;
    cfg.steps = steps;
    cfg.horizon = horizon;
    let res = py.detach(|| experiments::run(kind, &cfg)).map_err(err)?;
    res.summary().to_csv(true).map_err(err)
}

#[pymodule]
fn belief_mpc_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySystem>()?;
    m.add_class::<PyBelief>()?;
    m.add_function(wrap_pyfunction!(objective, m)?)?;
    m.add_function(wrap_pyfunction!(value_and_gradient, m)?)?;
    m.add_function(wrap_pyfunction!(sep_mpc_action, m)?)?;
    m.add_function(wrap_pyfunction!(bmpc_action, m)?)?;
    m.add_function(wrap_pyfunction!(rollout, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
