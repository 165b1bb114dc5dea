//! Python bindings: the monitoring MDP with its exact oracle, the continuous
//! monitoring task, the RBF policy with training and execution, and the dual
//! update.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use acrl::baselines::{run_primal_dual, switch_delay_compare, PrimalDualConfig, SoftmaxTabularPolicy};
use acrl::dual::{dual_update as core_dual_update, lagrangian_reward as core_lagrangian_reward, DualState};
use acrl::env::{ContinuousMonitoringEnv, Environment, Rect, RewardVector, TabularCmdp, R1};
use acrl::executor::{execute_acrl, ExecConfig, ExecReport};
use acrl::oracle::{certify_primal_recovery_gap, certify_strong_duality, dual_function, solve_cmdp_lp};
use acrl::policy::{solve_lagrangian_tabular, ExactMaximizer, RbfLayout, RbfPolicy};
use acrl::seed::SeedStream;
use acrl::trainer::{direction_probe, lambda_grid, train_acrl, BaselineMode, TrainConfig};

fn py_err(e: acrl::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn dual(values: Vec<f64>) -> PyResult<DualState> {
    DualState::new(values).map_err(py_err)
}

fn exec_config(eta_lambda: f64, t0: usize, epochs: usize, record_steps: bool) -> ExecConfig {
    ExecConfig {
        eta_lambda,
        t0,
        epochs,
        record_steps,
        ..ExecConfig::default()
    }
}

/// Common fields of an execution report as a dict.
fn report_dict<'py, S, A>(py: Python<'py>, rep: &ExecReport<S, A>, thresholds: &[f64]) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("running_average", rep.running_average.clone())?;
    d.set_item("margins", rep.margins(thresholds))?;
    d.set_item("mean_lambda", rep.mean_lambda.clone())?;
    d.set_item("final_lambda", rep.final_lambda.as_slice().to_vec())?;
    d.set_item("slackness_average", rep.slackness_average())?;
    d.set_item("max_lambda_l1", rep.max_lambda_l1())?;
    let lambdas: Vec<Vec<f64>> = rep.dual_trace.iter().map(|r| r.lambda.as_slice().to_vec()).collect();
    d.set_item("lambda_trace", lambdas)?;
    let probe: Vec<Vec<f64>> = rep.probe_trace.iter().map(|r| r.law.clone()).collect();
    d.set_item("probe_trace", probe)?;
    d.set_item("occupancy", rep.occupancy.clone())?;
    d.set_item("total_steps", rep.total_steps)?;
    Ok(d)
}

/// Three-state monitoring MDP with thresholds `(c1, c2)`.
#[pyclass(name = "MonitoringMdp", module = "acrl_py")]
struct PyMonitoringMdp {
    inner: TabularCmdp,
}

#[pymethods]
impl PyMonitoringMdp {
    #[new]
    fn new(c1: f64, c2: f64) -> Self {
        Self {
            inner: TabularCmdp::monitoring(c1, c2),
        }
    }

    #[getter]
    fn thresholds(&self) -> Vec<f64> {
        self.inner.thresholds().to_vec()
    }

    fn actions(&self, state: usize) -> PyResult<Vec<usize>> {
        if state >= self.inner.n_states() {
            return Err(PyValueError::new_err(format!("no state {state}")));
        }
        Ok(self.inner.actions(state).to_vec())
    }

    /// Exact constrained optimum: `p_star`, `occupation`, `policy`, `values`.
    fn solve_lp<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let sol = solve_cmdp_lp(&self.inner).map_err(py_err)?;
        let d = PyDict::new(py);
        d.set_item("p_star", sol.p_star)?;
        d.set_item("occupation", sol.occupation.clone())?;
        d.set_item("policy", sol.policy.rows().to_vec())?;
        d.set_item("values", sol.values.clone())?;
        Ok(d)
    }

    fn dual_function(&self, lam: Vec<f64>) -> PyResult<f64> {
        dual_function(&self.inner, &dual(lam)?).map_err(py_err)
    }

    /// Gain and policy rows of the exact Lagrangian maximizer at `lam`.
    fn lagrangian_maximizer(&self, lam: Vec<f64>) -> PyResult<(f64, Vec<Vec<f64>>)> {
        let rep = solve_lagrangian_tabular(&self.inner, &dual(lam)?).map_err(py_err)?;
        Ok((rep.gain, rep.policy.rows().to_vec()))
    }

    #[pyo3(signature = (grid_step = 0.05, grid_max = 3.0, refine_step = 0.001))]
    fn certify_strong_duality<'py>(&self, py: Python<'py>, grid_step: f64, grid_max: f64, refine_step: f64) -> PyResult<Bound<'py, PyDict>> {
        let grid = lambda_grid(self.inner.num_constraints(), grid_step, grid_max).map_err(py_err)?;
        let rep = certify_strong_duality(&self.inner, &grid, refine_step).map_err(py_err)?;
        let d = PyDict::new(py);
        d.set_item("p_star", rep.p_star)?;
        d.set_item("argmin", rep.refined_argmin.as_slice().to_vec())?;
        d.set_item("min", rep.refined_min)?;
        d.set_item("gap", rep.gap)?;
        d.set_item("weak_duality_slack", rep.weak_duality_slack)?;
        d.set_item("evaluations", rep.evaluations)?;
        Ok(d)
    }

    fn certify_recovery<'py>(&self, py: Python<'py>, lambda_star: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
        let rep = certify_primal_recovery_gap(&self.inner, &dual(lambda_star)?).map_err(py_err)?;
        let d = PyDict::new(py);
        d.set_item("inclusion_error", rep.inclusion_error())?;
        d.set_item("strict", rep.is_strict())?;
        if let Some((pi, v)) = &rep.infeasible_maximizer {
            d.set_item("infeasible_maximizer", pi.rows().to_vec())?;
            d.set_item("infeasible_values", v.clone())?;
        }
        d.set_item("description", rep.describe())?;
        Ok(d)
    }

    /// Executes the exact Lagrangian maximizer under the dual dynamics,
    /// probing the action law at the first monitored state.
    #[pyo3(signature = (eta_lambda = 0.5, t0 = 10, epochs = 1000, seed = 0))]
    fn execute<'py>(&self, py: Python<'py>, eta_lambda: f64, t0: usize, epochs: usize, seed: u64) -> PyResult<Bound<'py, PyDict>> {
        let mut rng = SeedStream::new(seed).rng("executor");
        let rep = execute_acrl(
            &self.inner,
            &mut ExactMaximizer::new(),
            &exec_config(eta_lambda, t0, epochs, false),
            Some(&R1),
            &mut rng,
        )
        .map_err(py_err)?;
        report_dict(py, &rep, self.inner.thresholds())
    }

    /// Switch events and multiplier peaks of primal-dual against exact
    /// execution on the same dual step and budget.
    #[pyo3(signature = (eta_theta = 0.025, eta_lambda = 0.0025, t0 = 10, epochs = 40000, seed = 0))]
    fn compare_primal_dual<'py>(
        &self,
        py: Python<'py>,
        eta_theta: f64,
        eta_lambda: f64,
        t0: usize,
        epochs: usize,
        seed: u64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let streams = SeedStream::new(seed);
        let mdp = &self.inner;
        let acrl = execute_acrl(
            mdp,
            &mut ExactMaximizer::new(),
            &exec_config(eta_lambda, t0, epochs, false),
            Some(&R1),
            &mut streams.rng("executor"),
        )
        .map_err(py_err)?;
        let cfg = PrimalDualConfig {
            eta_theta,
            eta_lambda,
            t0,
            epochs,
            occupancy_resolution: 1,
        };
        let pd = run_primal_dual(mdp, SoftmaxTabularPolicy::uniform(mdp), &cfg, None, Some(&R1), &mut streams.rng("primal-dual"))
            .map_err(py_err)?;
        let cmp = switch_delay_compare(mdp, &acrl, &pd.execution, R1, 0).map_err(py_err)?;
        let d = PyDict::new(py);
        d.set_item("acrl_cross", cmp.acrl.lambda_cross)?;
        d.set_item("acrl_switch", cmp.acrl.policy_switch)?;
        d.set_item("primal_dual_cross", cmp.primal_dual.lambda_cross)?;
        d.set_item("primal_dual_switch", cmp.primal_dual.policy_switch)?;
        d.set_item("acrl_peak", cmp.acrl_peak)?;
        d.set_item("primal_dual_peak", cmp.primal_dual_peak)?;
        Ok(d)
    }
}

/// Continuous region-monitoring task; the default layout when no regions
/// are given.
#[pyclass(name = "ContinuousEnv", module = "acrl_py")]
struct PyContinuousEnv {
    inner: ContinuousMonitoringEnv,
}

#[pymethods]
impl PyContinuousEnv {
    #[new]
    #[pyo3(signature = (thresholds = None, regions = None, bounds = None, max_step = None))]
    fn new(
        thresholds: Option<Vec<f64>>,
        regions: Option<Vec<[f64; 4]>>,
        bounds: Option<[f64; 4]>,
        max_step: Option<f64>,
    ) -> PyResult<Self> {
        let default = ContinuousMonitoringEnv::default_four_regions();
        let rect = |v: [f64; 4]| Rect::new(v[0], v[1], v[2], v[3]);
        let inner = ContinuousMonitoringEnv::new(
            bounds.map(rect).unwrap_or(default.bounds()),
            regions.map_or_else(|| default.regions().to_vec(), |r| r.into_iter().map(rect).collect()),
            thresholds.unwrap_or_else(|| default.thresholds().to_vec()),
            max_step.unwrap_or(default.max_step()),
        )
        .map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn thresholds(&self) -> Vec<f64> {
        self.inner.thresholds().to_vec()
    }

    #[getter]
    fn regions(&self) -> Vec<[f64; 4]> {
        self.inner.regions().iter().map(|r| [r.x_min, r.x_max, r.y_min, r.y_max]).collect()
    }

    /// Deterministic transition: next position and reward vector.
    fn step(&self, state: [f64; 2], action: [f64; 2]) -> PyResult<([f64; 2], Vec<f64>)> {
        let next = self.inner.advance(state, action).map_err(py_err)?;
        Ok((next, self.inner.reward_at(&state, &action).as_slice().to_vec()))
    }
}

/// RBF-Gaussian policy over `(s, λ)`.
#[pyclass(name = "RbfPolicy", module = "acrl_py")]
struct PyRbfPolicy {
    inner: RbfPolicy,
}

#[pymethods]
impl PyRbfPolicy {
    #[new]
    #[pyo3(signature = (env, lambda_max = 3.0, spatial_centers = 6, lambda_centers = 3, bandwidth_factor = 0.6, sigma = 0.5))]
    fn new(env: &PyContinuousEnv, lambda_max: f64, spatial_centers: usize, lambda_centers: usize, bandwidth_factor: f64, sigma: f64) -> PyResult<Self> {
        let layout = RbfLayout {
            spatial_centers,
            lambda_centers,
            bandwidth_factor,
            sigma,
        };
        let inner = RbfPolicy::grid(env.inner.bounds(), env.inner.num_constraints(), lambda_max, &layout).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_checkpoint(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: RbfPolicy::from_checkpoint(text).map_err(py_err)?,
        })
    }

    fn to_checkpoint(&self) -> String {
        self.inner.to_checkpoint()
    }

    #[getter]
    fn num_kernels(&self) -> usize {
        self.inner.num_kernels()
    }

    #[getter]
    fn theta_norm(&self) -> f64 {
        self.inner.theta_norm()
    }

    fn features(&self, state: [f64; 2], lam: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.features(state, &lam).map_err(py_err)
    }

    fn mean(&self, state: [f64; 2], lam: Vec<f64>) -> PyResult<[f64; 2]> {
        self.inner.mean(state, &lam).map_err(py_err)
    }

    fn log_density(&self, state: [f64; 2], lam: Vec<f64>, action: [f64; 2]) -> PyResult<f64> {
        self.inner.log_density(state, &lam, action).map_err(py_err)
    }

    fn logprob_grad(&self, state: [f64; 2], lam: Vec<f64>, action: [f64; 2]) -> PyResult<Vec<[f64; 2]>> {
        self.inner.logprob_grad(state, &lam, action).map_err(py_err)
    }

    /// REINFORCE on sampled `(s, λ)`; returns the learning curve as
    /// `(rollouts, mean augmented return)` pairs.
    #[pyo3(signature = (env, iterations = 50000, step_size = 0.001, horizon = 20, batch_size = 10, log_every = 1000, seed = 0))]
    fn train(
        &mut self,
        env: &PyContinuousEnv,
        iterations: usize,
        step_size: f64,
        horizon: usize,
        batch_size: usize,
        log_every: usize,
        seed: u64,
    ) -> PyResult<Vec<(usize, f64)>> {
        let cfg = TrainConfig {
            iterations,
            step_size,
            horizon,
            batch_size,
            lambda_max: self.inner.lambda_max(),
            baseline: BaselineMode::OffsetBatchMean,
            log_every,
            checkpoint_every: None,
        };
        let rep = train_acrl(&env.inner, &mut self.inner, &cfg, &mut SeedStream::new(seed).rng("trainer")).map_err(py_err)?;
        Ok(rep.curve.iter().map(|p| (p.iteration, p.mean_augmented_return)).collect())
    }

    #[pyo3(signature = (env, eta_lambda = 0.01, t0 = 1, epochs = 20000, seed = 0))]
    fn execute<'py>(&mut self, py: Python<'py>, env: &PyContinuousEnv, eta_lambda: f64, t0: usize, epochs: usize, seed: u64) -> PyResult<Bound<'py, PyDict>> {
        let cfg = exec_config(eta_lambda, t0, epochs, false);
        let rep = execute_acrl(&env.inner, &mut self.inner, &cfg, None, &mut SeedStream::new(seed).rng("executor")).map_err(py_err)?;
        report_dict(py, &rep, env.inner.thresholds())
    }

    /// Fraction of grid cell centres where the mean action at `lam` points
    /// toward region `region` (1-based).
    #[pyo3(signature = (env, lam, region = 1, resolution = 10))]
    fn direction_probe(&self, env: &PyContinuousEnv, lam: Vec<f64>, region: usize, resolution: usize) -> PyResult<f64> {
        let target = *region
            .checked_sub(1)
            .and_then(|i| env.inner.regions().get(i))
            .ok_or_else(|| PyValueError::new_err(format!("no region {region}")))?;
        let p = direction_probe(&self.inner, env.inner.bounds(), target, &dual(lam)?, resolution).map_err(py_err)?;
        Ok(p.fraction())
    }
}

/// One projected dual step: `(new λ, projection active per component)`.
#[pyfunction]
fn dual_update(lam: Vec<f64>, mean_gap: Vec<f64>, eta_lambda: f64) -> PyResult<(Vec<f64>, Vec<bool>)> {
    let u = core_dual_update(&dual(lam)?, &mean_gap, eta_lambda).map_err(py_err)?;
    Ok((u.lambda.as_slice().to_vec(), u.projection_active))
}

/// `r_0 + Σ λ_i (r_i − c_i)`.
#[pyfunction]
fn lagrangian_reward(rewards: Vec<f64>, lam: Vec<f64>, thresholds: Vec<f64>) -> PyResult<f64> {
    core_lagrangian_reward(&RewardVector::new(rewards), &dual(lam)?, &thresholds).map_err(py_err)
}

#[pymodule]
fn acrl_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMonitoringMdp>()?;
    m.add_class::<PyContinuousEnv>()?;
    m.add_class::<PyRbfPolicy>()?;
    m.add_function(wrap_pyfunction!(dual_update, m)?)?;
    m.add_function(wrap_pyfunction!(lagrangian_reward, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
