//! Python bindings: the navigation environment, benchmark runs and metrics.
//! Structured results cross the boundary as JSON and come back as dicts.

use std::path::PathBuf;
use std::sync::Arc;

use navcore::bench::{self, EpisodeMode};
use navcore::controllers::{
    load_weights, CenterlineFollower, NetworkWeights, NeuralPolicy, Policy, PolicyFactory, RandomPolicy,
};
use navcore::env::{StepInfo, StepResult};
use navcore::eval;
use navcore::geom::mix_seed;
use navcore::imaging::render_fluoro;
use navcore::physics::Action;
use navcore::Error;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::InvalidInput(_) | Error::Usage(_) | Error::Format { .. } => PyValueError::new_err(e.to_string()),
        Error::Io(_) => PyOSError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn json_loads<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    json_loads(py, &text)
}

fn parse_mode(mode: &str) -> PyResult<EpisodeMode> {
    match mode {
        "train" => Ok(EpisodeMode::Train),
        "eval" => Ok(EpisodeMode::Eval),
        other => Err(PyValueError::new_err(format!("mode must be 'train' or 'eval', got {other:?}"))),
    }
}

fn info_dict<'py>(py: Python<'py>, info: &StepInfo) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("step", info.step)?;
    d.set_item("time", info.time)?;
    d.set_item("pathlength", info.pathlength)?;
    d.set_item("tips", info.tips.iter().map(|t| [t.x, t.y, t.z]).collect::<Vec<_>>())?;
    d.set_item("tracking", info.tracking.clone())?;
    d.set_item("action", info.action.to_flat())?;
    d.set_item("outcome", info.outcome.map(|o| o.label()))?;
    Ok(d)
}

/// One benchmark environment. Observations are flat lists of floats and
/// actions flat `[translation, rotation]` pairs per device, outer first.
#[pyclass(name = "NavEnv", unsendable)]
struct PyNavEnv {
    env: navcore::env::NavEnv,
}

#[pymethods]
impl PyNavEnv {
    #[new]
    #[pyo3(signature = (benchmark, mode = "eval", vessel = None))]
    fn new(benchmark: &str, mode: &str, vessel: Option<PathBuf>) -> PyResult<Self> {
        let mut spec = bench::by_name(benchmark).map_err(py_err)?;
        if let Some(p) = vessel {
            spec = spec.with_vessel_file(p);
        }
        let env = navcore::env::NavEnv::new(spec, parse_mode(mode)?).map_err(py_err)?;
        Ok(PyNavEnv { env })
    }

    #[getter]
    fn n_devices(&self) -> usize {
        self.env.n_devices()
    }

    #[getter]
    fn observation_size(&self) -> usize {
        self.env.observation_len()
    }

    #[getter]
    fn action_size(&self) -> usize {
        2 * self.env.n_devices()
    }

    /// Per-channel action limits, `[max_translation, max_rotation]` repeated per device.
    #[getter]
    fn action_high(&self) -> Vec<f64> {
        let s = self.env.spec();
        (0..self.env.n_devices()).flat_map(|_| [s.max_translation, s.max_rotation]).collect()
    }

    #[getter]
    fn max_steps(&self) -> usize {
        self.env.config().max_steps()
    }

    #[getter]
    fn benchmark(&self) -> String {
        self.env.spec().name.clone()
    }

    #[getter]
    fn target_branch(&self) -> PyResult<String> {
        Ok(self.env.target().map_err(py_err)?.branch.clone())
    }

    #[getter]
    fn warnings(&self) -> Vec<String> {
        self.env.warnings().to_vec()
    }

    fn reset<'py>(&mut self, py: Python<'py>, seed: u64) -> PyResult<(Vec<f64>, Bound<'py, PyDict>)> {
        let (obs, info) = self.env.reset(seed).map_err(py_err)?;
        Ok((obs.flatten(), info_dict(py, &info)?))
    }

    /// Returns `(observation, reward, terminated, truncated, info)`.
    #[allow(clippy::type_complexity)]
    fn step<'py>(
        &mut self,
        py: Python<'py>,
        action: Vec<f64>,
    ) -> PyResult<(Vec<f64>, f64, bool, bool, Bound<'py, PyDict>)> {
        let action = Action::from_flat(&action).map_err(py_err)?;
        let StepResult {
            observation,
            reward,
            terminated,
            truncated,
            info,
        } = self.env.step(&action).map_err(py_err)?;
        Ok((observation.flatten(), reward, terminated, truncated, info_dict(py, &info)?))
    }

    /// Synthetic fluoroscopy frame of the current state as
    /// `(width, height, pixels)` with 8-bit row-major pixels.
    #[pyo3(signature = (noise = 0.0, seed = 0))]
    fn render<'py>(&self, py: Python<'py>, noise: f64, seed: u64) -> PyResult<(u32, u32, Bound<'py, PyBytes>)> {
        let frame = render_fluoro(
            self.env.rod_states().map_err(py_err)?,
            self.env.tree().map_err(py_err)?,
            &self.env.spec().imaging,
            noise,
            seed,
        )
        .map_err(py_err)?;
        Ok((frame.width, frame.height, PyBytes::new(py, &frame.pixels)))
    }
}

/// Names of the built-in benchmarks.
#[pyfunction]
fn benchmarks() -> Vec<String> {
    bench::all().into_iter().map(|s| s.name).collect()
}

/// The benchmark card as a dict.
#[pyfunction]
fn benchmark_card<'py>(py: Python<'py>, name: &str) -> PyResult<Bound<'py, PyAny>> {
    let spec = bench::by_name(name).map_err(py_err)?;
    json_loads(py, &bench::card_json(&spec))
}

/// Procedural aortic arch as vessel tree JSON.
#[pyfunction]
fn generate_arch(seed: u64) -> PyResult<String> {
    let tree = navcore::vessel::generate_aortic_arch(seed, &Default::default()).map_err(py_err)?;
    tree.to_json().map_err(py_err)
}

fn factory(policy: &str, n_devices: usize, seed: u64, weights: Option<PathBuf>, stochastic: bool, spec: &bench::BenchmarkSpec) -> PyResult<PolicyFactory> {
    Ok(match policy {
        "random" => Arc::new(move || Ok(Box::new(RandomPolicy::new(n_devices, seed)) as Box<dyn Policy>)),
        "follower" => Arc::new(|| Ok(Box::new(CenterlineFollower::default()) as Box<dyn Policy>)),
        "neural" => {
            let path = weights.ok_or_else(|| PyValueError::new_err("the neural policy needs weights"))?;
            let bundle = load_weights(&path).map_err(py_err)?;
            let w = Arc::new(NetworkWeights::from_bundle(&spec.network, &bundle).map_err(py_err)?);
            Arc::new(move || Ok(Box::new(NeuralPolicy::new(w.clone(), !stochastic, seed)) as Box<dyn Policy>))
        }
        other => return Err(PyValueError::new_err(format!("unknown policy {other:?}"))),
    })
}

/// Rolls out a policy and returns `{"metrics": ..., "episodes": [...]}`.
/// With `trajectory` set, the full step logs are also written there.
#[pyfunction]
#[pyo3(signature = (benchmark, policy = "follower", episodes = 10, seed = 0, parallelism = 1, mode = "eval", weights = None, stochastic = false, trajectory = None))]
#[allow(clippy::too_many_arguments)]
fn run_benchmark<'py>(
    py: Python<'py>,
    benchmark: &str,
    policy: &str,
    episodes: usize,
    seed: u64,
    parallelism: usize,
    mode: &str,
    weights: Option<PathBuf>,
    stochastic: bool,
    trajectory: Option<PathBuf>,
) -> PyResult<Bound<'py, PyDict>> {
    let spec = bench::by_name(benchmark).map_err(py_err)?;
    let make = factory(policy, spec.devices.len(), seed, weights, stochastic, &spec)?;
    let mode = parse_mode(mode)?;
    let records = py
        .detach(|| eval::run_episodes(&spec, mode, &make, episodes, seed, parallelism))
        .map_err(py_err)?;
    if let Some(path) = trajectory {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| py_err(e.into()))?);
        eval::write_trajectories(&records, &mut out).map_err(py_err)?;
    }
    let metrics = eval::compute_metrics(&records).map_err(py_err)?;
    let summary: Vec<serde_json::Value> = records
        .iter()
        .map(|r| {
            serde_json::json!({
                "episode": r.episode,
                "seed": r.seed,
                "target_branch": r.target_branch,
                "outcome": r.outcome.label(),
                "duration": r.duration,
                "steps": r.steps.len(),
                "path_ratio": r.path_ratio(),
                "total_reward": r.total_reward(),
            })
        })
        .collect();
    let d = PyDict::new(py);
    d.set_item("metrics", to_py(py, &metrics)?)?;
    d.set_item("episodes", to_py(py, &summary)?)?;
    Ok(d)
}

/// Re-simulates every episode of a trajectory file; true when all reproduce.
#[pyfunction]
fn replay_trajectories(py: Python<'_>, path: PathBuf) -> PyResult<bool> {
    py.detach(|| {
        let file = std::fs::File::open(&path)?;
        let records = eval::read_trajectories(std::io::BufReader::new(file))?;
        for r in &records {
            if !eval::replay(&bench::by_name(&r.benchmark)?, r)?.matches() {
                return Ok(false);
            }
        }
        Ok(true)
    })
    .map_err(py_err)
}

/// Two-sided p-value of a difference in success proportions.
#[pyfunction]
fn compare_proportions(k1: u64, n1: u64, k2: u64, n2: u64) -> PyResult<f64> {
    eval::compare_proportions(k1, n1, k2, n2).map_err(py_err)
}

/// Two-sided Welch t-test p-value.
#[pyfunction]
fn compare_samples(xs: Vec<f64>, ys: Vec<f64>) -> PyResult<f64> {
    eval::compare_samples(&xs, &ys).map_err(py_err)
}

/// Per-episode seed of a run started from `master_seed`.
#[pyfunction]
fn episode_seed(master_seed: u64, episode: usize) -> u64 {
    eval::episode_seed(master_seed, episode)
}

/// Deterministic seed mixing used throughout the simulator.
#[pyfunction(name = "mix_seed")]
fn py_mix_seed(seed: u64, stream: u64) -> u64 {
    mix_seed(seed, stream)
}

#[pymodule]
fn vesselnav(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNavEnv>()?;
    m.add_function(wrap_pyfunction!(benchmarks, m)?)?;
    m.add_function(wrap_pyfunction!(benchmark_card, m)?)?;
    m.add_function(wrap_pyfunction!(generate_arch, m)?)?;
    m.add_function(wrap_pyfunction!(run_benchmark, m)?)?;
    m.add_function(wrap_pyfunction!(replay_trajectories, m)?)?;
    m.add_function(wrap_pyfunction!(compare_proportions, m)?)?;
    m.add_function(wrap_pyfunction!(compare_samples, m)?)?;
    m.add_function(wrap_pyfunction!(episode_seed, m)?)?;
    m.add_function(wrap_pyfunction!(py_mix_seed, m)?)?;
    m.add("MAX_TRANSLATION", navcore::physics::MAX_TRANSLATION)?;
    m.add("MAX_ROTATION", navcore::physics::MAX_ROTATION)?;
    Ok(())
}
