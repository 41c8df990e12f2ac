//! Python bindings for the `popo` crate.
//!
//! Structured results cross the boundary as JSON and come back as plain
//! dicts and lists.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyModule;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use popo::agent::{Agent, TrainConfig};
use popo::cli::{self, CliError, EXIT_IO, EXIT_NUMERICAL};
use popo::critic::quantile_huber as quantile_huber_loss;
use popo::data::Dataset;
use popo::envs::{collect_dataset, BehaviorKind, BehaviorPolicy, EnvKind};

fn to_py_err(e: CliError) -> PyErr {
    match e.code {
        EXIT_NUMERICAL => PyRuntimeError::new_err(e.message),
        EXIT_IO => PyOSError::new_err(e.message),
        _ => PyValueError::new_err(e.message),
    }
}

fn core_err(e: popo::Error) -> PyErr {
    to_py_err(e.into())
}

fn to_python<'py>(py: Python<'py>, v: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn load_dataset(path: &str) -> PyResult<Dataset> {
    Dataset::read(path).map_err(|e| PyOSError::new_err(format!("{path}: {e}")))
}

/// Distortion of a quantile level, e.g. `distort("wang:-0.75", 0.5)`.
#[pyfunction]
fn distort(spec: &str, tau: f64) -> PyResult<f64> {
    let m = cli::parse_distortion(spec).map_err(to_py_err)?;
    m.distort(tau)
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Mean quantile Huber loss over paired TD errors and levels.
#[pyfunction]
#[pyo3(signature = (deltas, taus, kappa = 1.0))]
fn quantile_huber(deltas: Vec<f64>, taus: Vec<f64>, kappa: f64) -> PyResult<f64> {
    quantile_huber_loss(&deltas, &taus, kappa).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Tabular estimation-gap report from the JSON inputs of `popo gap`.
#[pyfunction]
#[pyo3(signature = (mdp_json, transitions_json, absorb_uncovered = false))]
fn gap_analyze<'py>(
    py: Python<'py>,
    mdp_json: &str,
    transitions_json: &str,
    absorb_uncovered: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let report =
        cli::gap_from_json(mdp_json, transitions_json, absorb_uncovered).map_err(to_py_err)?;
    to_python(py, &report)
}

/// Rolls out a scripted behavior policy, writes the dataset and returns its
/// summary.
#[pyfunction]
#[pyo3(signature = (env_id, kind, n, seed, path))]
fn generate_dataset<'py>(
    py: Python<'py>,
    env_id: &str,
    kind: &str,
    n: usize,
    seed: u64,
    path: PathBuf,
) -> PyResult<Bound<'py, PyAny>> {
    let env: EnvKind = env_id
        .parse()
        .map_err(|e: popo::envs::EnvError| PyValueError::new_err(e.to_string()))?;
    let kind: BehaviorKind = kind
        .parse()
        .map_err(|e: popo::envs::EnvError| PyValueError::new_err(e.to_string()))?;
    let ds = collect_dataset(env, &BehaviorPolicy::new(kind), n, seed, 1).map_err(core_err)?;
    ds.write(&path)
        .map_err(|e| PyOSError::new_err(e.to_string()))?;
    to_python(py, &ds.summary())
}

#[pyfunction]
fn inspect_dataset<'py>(py: Python<'py>, path: &str) -> PyResult<Bound<'py, PyAny>> {
    to_python(py, &load_dataset(path)?.summary())
}

/// Offline agent; `config_json` holds any subset of the training
/// hyperparameters.
#[pyclass(name = "Agent", unsendable)]
struct PyAgent {
    inner: Agent<f32>,
}

#[pymethods]
impl PyAgent {
    #[new]
    #[pyo3(signature = (obs_dim, act_dim, max_action, seed = 0, config_json = "{}"))]
    fn new(
        obs_dim: usize,
        act_dim: usize,
        max_action: f64,
        seed: u64,
        config_json: &str,
    ) -> PyResult<Self> {
        let config: TrainConfig = serde_json::from_str(config_json)
            .map_err(|e| PyValueError::new_err(format!("config: {e}")))?;
        let inner = Agent::new(config, obs_dim, act_dim, max_action, seed).map_err(core_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (inner, _) = Agent::load_checkpoint(&path).map_err(core_err)?;
        Ok(Self { inner })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner
            .save_checkpoint(&path, serde_json::Value::Null)
            .map_err(|e| PyOSError::new_err(e.to_string()))
    }

    #[getter]
    fn steps(&self) -> u64 {
        self.inner.steps()
    }

    #[getter]
    fn variant(&self) -> String {
        self.inner.config().variant.to_string()
    }

    /// Runs `steps` gradient steps on the dataset and returns the per-step
    /// metrics.
    fn train<'py>(
        &mut self,
        py: Python<'py>,
        dataset_path: &str,
        steps: usize,
    ) -> PyResult<Bound<'py, PyAny>> {
        let ds = load_dataset(dataset_path)?;
        let mut rows = Vec::with_capacity(steps);
        for _ in 0..steps {
            rows.push(self.inner.train_step(&ds).map_err(core_err)?);
        }
        to_python(py, &rows)
    }

    #[pyo3(signature = (obs, seed = 0))]
    fn select_action(&self, obs: Vec<f64>, seed: u64) -> PyResult<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.inner.select_action(&obs, &mut rng).map_err(core_err)
    }

    #[pyo3(signature = (env_id, episodes = 10, seed = 0))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        env_id: &str,
        episodes: usize,
        seed: u64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let env: EnvKind = env_id
            .parse()
            .map_err(|e: popo::envs::EnvError| PyValueError::new_err(e.to_string()))?;
        let report = self.inner.evaluate(env, episodes, seed).map_err(core_err)?;
        to_python(py, &report)
    }
}

#[pymodule]
fn popo_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(distort, m)?)?;
    m.add_function(wrap_pyfunction!(quantile_huber, m)?)?;
    m.add_function(wrap_pyfunction!(gap_analyze, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(inspect_dataset, m)?)?;
    m.add_class::<PyAgent>()?;
    Ok(())
}
