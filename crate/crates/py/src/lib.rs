use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use movesd::dynamics::{beta_log_pdf, sample_constraint as sample_beta};
use movesd::envsim::{audit_trajectories, generate_demonstrations as gen_demos, Env as CoreEnv, EnvConfig};
use movesd::evalbench::{self, EvalTask};
use movesd::experiment::{evaluate_trained, ExperimentConfig};
use movesd::gailtrain::{train, TrainOptions, TrainOutput};
use movesd::rewards::{self, JudgerMode};
use movesd::types::{rescale_duration, Action, Trajectory};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn err(e: movesd::Error) -> PyErr {
    match e {
        movesd::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Converts any serializable value into plain Python objects via JSON.
fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn from_py<T: serde::de::DeserializeOwned>(py: Python<'_>, value: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = py.import("json")?.call_method1("dumps", (value,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn parse_mode(mode: &str) -> PyResult<JudgerMode> {
    match mode {
        "as_written" => Ok(JudgerMode::AsWritten),
        "prose" => Ok(JudgerMode::Prose),
        _ => Err(PyValueError::new_err(format!("unknown judger mode `{mode}`"))),
    }
}

fn parse_task(task: &str) -> PyResult<EvalTask> {
    match task {
        "next-loc" => Ok(EvalTask::NextLoc),
        "gen" => Ok(EvalTask::Gen),
        "both" => Ok(EvalTask::Both),
        _ => Err(PyValueError::new_err(format!("unknown task `{task}`"))),
    }
}

fn env_config(config: Option<&str>) -> PyResult<EnvConfig> {
    match config {
        Some(text) => EnvConfig::from_toml_str(text).map_err(err),
        None => Ok(ExperimentConfig::default().train.env),
    }
}

/// A simulator instance. `config` is an environment table in TOML.
#[pyclass(module = "movesd")]
struct Env {
    inner: CoreEnv,
}

#[pymethods]
impl Env {
    #[new]
    #[pyo3(signature = (config=None, seed=None))]
    fn new(config: Option<&str>, seed: Option<u64>) -> PyResult<Self> {
        let cfg = Arc::new(env_config(config)?);
        let seed = seed.unwrap_or_else(|| cfg.seed());
        let inner = CoreEnv::reset_with_seed(cfg, seed).map_err(err)?;
        Ok(Self { inner })
    }

    #[pyo3(signature = (seed=None))]
    fn reset(&mut self, seed: Option<u64>) -> PyResult<()> {
        let cfg = self.inner.shared_config();
        let seed = seed.unwrap_or_else(|| cfg.seed());
        self.inner = CoreEnv::reset_with_seed(cfg, seed).map_err(err)?;
        Ok(())
    }

    /// Advances every agent by one step, one action id per agent.
    fn step(&mut self, actions: Vec<usize>) -> PyResult<()> {
        let actions: Vec<Action> = actions.into_iter().map(Action).collect();
        self.inner.step(&actions).map_err(err)
    }

    fn observe(&self, py: Python<'_>, agent: usize) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.observe(agent).map_err(err)?)
    }

    fn observe_all(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.observe_all())
    }

    fn candidates(&self, agent: usize) -> PyResult<Vec<usize>> {
        self.inner.candidate_next_locations(agent).map_err(err)
    }

    /// Hidden dwell, in steps, the agent must reach before leaving.
    fn constraint(&self, agent: usize) -> PyResult<usize> {
        self.inner.constraint(agent).map_err(err)
    }

    fn coordinates(&self, loc: usize) -> PyResult<(f64, f64)> {
        self.inner.config().loc_coordinates(loc).map_err(err)
    }

    #[getter]
    fn clock(&self) -> usize {
        self.inner.clock()
    }

    #[getter]
    fn done(&self) -> bool {
        self.inner.is_done()
    }

    #[getter]
    fn n_agents(&self) -> usize {
        self.inner.n_agents()
    }

    #[getter]
    fn n_actions(&self) -> usize {
        self.inner.config().n_actions()
    }

    #[getter]
    fn n_locations(&self) -> usize {
        self.inner.config().n_locations()
    }

    #[getter]
    fn max_steps(&self) -> usize {
        self.inner.config().max_steps()
    }

    fn __repr__(&self) -> String {
        format!(
            "Env(kind={:?}, agents={}, clock={}/{})",
            self.inner.config().kind(),
            self.inner.n_agents(),
            self.inner.clock(),
            self.inner.config().max_steps()
        )
    }
}

/// Demonstrations, training and evaluation driven by one TOML configuration.
#[pyclass(module = "movesd")]
struct Experiment {
    cfg: ExperimentConfig,
    demos: Option<Vec<Trajectory>>,
    trained: Option<TrainOutput>,
}

impl Experiment {
    fn demos(&mut self) -> PyResult<&[Trajectory]> {
        if self.demos.is_none() {
            self.demos = Some(self.cfg.demonstrations().map_err(err)?);
        }
        Ok(self.demos.as_deref().unwrap_or_default())
    }
}

#[pymethods]
impl Experiment {
    #[new]
    #[pyo3(signature = (config="", seed=None))]
    fn new(config: &str, seed: Option<u64>) -> PyResult<Self> {
        let mut cfg = ExperimentConfig::from_toml_str(config).map_err(err)?;
        if let Some(s) = seed {
            cfg = cfg.with_seed(s);
        }
        Ok(Self {
            cfg,
            demos: None,
            trained: None,
        })
    }

    /// The effective configuration as TOML.
    fn config(&self) -> PyResult<String> {
        self.cfg.to_toml_string().map_err(err)
    }

    /// Expert trajectories, generated on first use.
    fn demonstrations(&mut self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let demos = self.demos()?.to_vec();
        to_py(py, &demos)
    }

    /// Trains the policy; returns the per-iteration log.
    #[pyo3(signature = (out_dir=None))]
    fn train(&mut self, py: Python<'_>, out_dir: Option<PathBuf>) -> PyResult<Py<PyAny>> {
        let demos = self.demos()?.to_vec();
        let cfg = self.cfg.train.clone();
        let opts = TrainOptions {
            out_dir,
            ..Default::default()
        };
        let out = py.detach(|| train(&cfg, &demos, opts)).map_err(err)?;
        let log = to_py(py, &out.log)?;
        self.trained = Some(out);
        Ok(log)
    }

    /// Scores the trained policy and both baselines; `task` is "next-loc", "gen" or "both".
    #[pyo3(signature = (task="gen"))]
    fn evaluate(&mut self, py: Python<'_>, task: &str) -> PyResult<Py<PyAny>> {
        let task = parse_task(task)?;
        let demos = self.demos()?.to_vec();
        let trained = self
            .trained
            .as_ref()
            .ok_or_else(|| PyValueError::new_err("train() must run before evaluate()"))?;
        let cfg = &self.cfg;
        let report = py.detach(|| evaluate_trained(cfg, trained, &demos, task)).map_err(err)?;
        to_py(py, &report)
    }

    #[getter]
    fn trained(&self) -> bool {
        self.trained.is_some()
    }
}

/// Expert trajectories for `episodes` episodes of the environment `config`.
#[pyfunction]
#[pyo3(signature = (episodes, config=None))]
fn generate_demonstrations(py: Python<'_>, episodes: usize, config: Option<&str>) -> PyResult<Py<PyAny>> {
    let cfg = env_config(config)?;
    to_py(py, &gen_demos(&cfg, episodes).map_err(err)?)
}

/// Structural audit of trajectories against the environment `config`.
#[pyfunction]
#[pyo3(signature = (trajectories, config=None))]
fn audit(py: Python<'_>, trajectories: &Bound<'_, PyAny>, config: Option<&str>) -> PyResult<Py<PyAny>> {
    let cfg = env_config(config)?;
    let trajs: Vec<Trajectory> = from_py(py, trajectories)?;
    let report = audit_trajectories(&cfg, &trajs).map_err(err)?;
    let out = serde_json::json!({
        "records": report.records,
        "departures": report.departures,
        "violations": report.violations,
    });
    to_py(py, &out)
}

/// Whether `truth` ranks within the top `k` of `dist`; None when absent from it.
#[pyfunction]
fn acc_at_k(dist: Vec<(usize, f64)>, truth: usize, k: usize) -> PyResult<Option<bool>> {
    evalbench::acc_at_k(&dist, truth, k).map_err(err)
}

#[pyfunction]
fn ade(generated: Vec<Vec<(f64, f64)>>, truth: Vec<Vec<(f64, f64)>>) -> PyResult<f64> {
    evalbench::ade(&generated, &truth).map_err(err)
}

#[pyfunction]
fn fde(generated: Vec<Vec<(f64, f64)>>, truth: Vec<Vec<(f64, f64)>>) -> PyResult<f64> {
    evalbench::fde(&generated, &truth).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (gamma_next, is_stay, g, mode="as_written"))]
fn judger_value(gamma_next: f64, is_stay: bool, g: f64, mode: &str) -> PyResult<f64> {
    rewards::judger_value(gamma_next, is_stay, g, parse_mode(mode)?).map_err(err)
}

#[pyfunction]
fn surrogate_reward(d_score: f64) -> PyResult<f64> {
    rewards::surrogate_reward(d_score).map_err(err)
}

#[pyfunction]
fn combined_reward(r_judger: f64, r_disc: f64, eta: f64) -> f64 {
    rewards::combined_reward(r_judger, r_disc, eta)
}

#[pyfunction]
fn duration_to_unit(steps: usize, max_steps: usize) -> PyResult<f64> {
    rescale_duration(steps, max_steps).map_err(err)
}

#[pyfunction]
fn beta_logpdf(g: f64, alpha: f64, beta: f64) -> PyResult<f64> {
    beta_log_pdf(g, alpha, beta).map_err(err)
}

/// `n` draws from Beta(alpha, beta).
#[pyfunction]
#[pyo3(signature = (alpha, beta, n, seed=0))]
fn sample_constraint(alpha: f64, beta: f64, n: usize, seed: u64) -> PyResult<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| sample_beta(alpha, beta, &mut rng).map_err(err)).collect()
}

#[pymodule(name = "movesd")]
fn movesd_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Env>()?;
    m.add_class::<Experiment>()?;
    m.add_function(wrap_pyfunction!(generate_demonstrations, m)?)?;
    m.add_function(wrap_pyfunction!(audit, m)?)?;
    m.add_function(wrap_pyfunction!(acc_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(ade, m)?)?;
    m.add_function(wrap_pyfunction!(fde, m)?)?;
    m.add_function(wrap_pyfunction!(judger_value, m)?)?;
    m.add_function(wrap_pyfunction!(surrogate_reward, m)?)?;
    m.add_function(wrap_pyfunction!(combined_reward, m)?)?;
    m.add_function(wrap_pyfunction!(duration_to_unit, m)?)?;
    m.add_function(wrap_pyfunction!(beta_logpdf, m)?)?;
    m.add_function(wrap_pyfunction!(sample_constraint, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
