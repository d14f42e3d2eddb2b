//! Python bindings for `sipl-core`.
//!
//! Beliefs and strategies cross the boundary as flat lists of floats in
//! joint-state order (`s = ci * F + cj` over free cells in row-major order).
//! Records, metrics and manifests come back as plain dicts.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::Serialize;

use sipl_core::belief::{initial_belief, update, Belief, StrategyMode};
use sipl_core::container::{Array, ArrayData};
use sipl_core::dataset::{self, DatasetOptions, PolicyDump};
use sipl_core::env;
use sipl_core::model::{validate_model, Observation};
use sipl_core::nested::NestedSpec;
use sipl_core::task::{Action, Cell, JointAction, TaskParameter};
use sipl_core::trajectory::{self, EpisodeConfig, PolicyKind};
use sipl_core::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn to_dict<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn cells(v: Vec<(usize, usize)>) -> Vec<Cell> {
    v.into_iter().map(|(r, c)| Cell::new(r, c)).collect()
}

fn uncells(v: &[Cell]) -> Vec<(usize, usize)> {
    v.iter().map(|c| (c.row, c.col)).collect()
}

fn action(idx: usize) -> PyResult<Action> {
    Action::from_index(idx).ok_or_else(|| PyValueError::new_err(format!("action index {idx} is out of range 0..6")))
}

fn policy_kind(name: &str, temperature: f64) -> PyResult<PolicyKind> {
    match name {
        "expert" => Ok(PolicyKind::Expert),
        "random" => Ok(PolicyKind::Random),
        "softmax" => Ok(PolicyKind::Softmax { temperature }),
        other => Err(PyValueError::new_err(format!("unknown policy {other:?}; use expert, random or softmax"))),
    }
}

/// One Tiger-grid task.
#[pyclass(name = "Task", module = "sipl", from_py_object)]
#[derive(Clone, Debug)]
struct PyTask {
    inner: TaskParameter,
}

#[pymethods]
impl PyTask {
    #[new]
    #[pyo3(signature = (n, gold, init_i, init_j, obstacles = Vec::new()))]
    fn new(
        n: usize,
        gold: (usize, usize),
        init_i: Vec<(usize, usize)>,
        init_j: Vec<(usize, usize)>,
        obstacles: Vec<(usize, usize)>,
    ) -> PyResult<Self> {
        let task = TaskParameter::new(n, Cell::new(gold.0, gold.1), cells(init_i), cells(init_j))
            .with_obstacles(&cells(obstacles));
        task.validate().map_err(to_py)?;
        Ok(PyTask { inner: task })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        TaskParameter::from_json_str(text).map(|inner| PyTask { inner }).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        TaskParameter::load(path).map(|inner| PyTask { inner }).map_err(to_py)
    }

    fn to_json(&self) -> String {
        self.inner.to_json_string()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(to_py)
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n
    }

    #[getter]
    fn gold(&self) -> (usize, usize) {
        (self.inner.gold.row, self.inner.gold.col)
    }

    #[getter]
    fn init_i(&self) -> Vec<(usize, usize)> {
        uncells(&self.inner.init_i)
    }

    #[getter]
    fn init_j(&self) -> Vec<(usize, usize)> {
        uncells(&self.inner.init_j)
    }

    /// Rows of 0/1, 1 = obstacle.
    #[getter]
    fn grid(&self) -> Vec<Vec<u32>> {
        self.inner.obstacles.chunks(self.inner.n).map(|row| row.iter().map(|&b| b as u32).collect()).collect()
    }

    /// Free cells in state-index order.
    fn free_cells(&self) -> Vec<(usize, usize)> {
        uncells(&self.inner.free_cells())
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma
    }

    #[setter]
    fn set_gamma(&mut self, v: f64) {
        self.inner.gamma = v;
    }

    #[getter]
    fn move_success_prob(&self) -> f64 {
        self.inner.move_success_prob
    }

    #[setter]
    fn set_move_success_prob(&mut self, v: f64) {
        self.inner.move_success_prob = v;
    }

    #[getter]
    fn obs_noise_move(&self) -> f64 {
        self.inner.obs_noise_move
    }

    #[setter]
    fn set_obs_noise_move(&mut self, v: f64) {
        self.inner.obs_noise_move = v;
    }

    #[getter]
    fn obs_noise_listen(&self) -> f64 {
        self.inner.obs_noise_listen
    }

    #[setter]
    fn set_obs_noise_listen(&mut self, v: f64) {
        self.inner.obs_noise_listen = v;
    }

    #[getter]
    fn interaction_radius(&self) -> usize {
        self.inner.interaction_radius
    }

    #[setter]
    fn set_interaction_radius(&mut self, v: usize) {
        self.inner.interaction_radius = v;
    }

    /// Model consistency problems, empty when the task is sound.
    fn check(&self) -> PyResult<Vec<String>> {
        let model = sipl_core::build_model(&self.inner).map_err(to_py)?;
        Ok(validate_model(&model).issues.iter().map(|i| i.to_string()).collect())
    }

    fn __eq__(&self, other: &PyTask) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!(
            "Task(n={}, gold=({}, {}), init_i={:?}, init_j={:?})",
            self.inner.n,
            self.inner.gold.row,
            self.inner.gold.col,
            uncells(&self.inner.init_i),
            uncells(&self.inner.init_j)
        )
    }
}

/// A solved task: agent j's nested strategy and agent i's Q table.
#[pyclass(name = "Expert", module = "sipl")]
struct PyExpert {
    inner: trajectory::Expert,
}

#[pymethods]
impl PyExpert {
    #[new]
    #[pyo3(signature = (task, level = 1, horizon = None, temperature = 1.0))]
    fn new(py: Python<'_>, task: &PyTask, level: usize, horizon: Option<usize>, temperature: f64) -> PyResult<Self> {
        let spec = NestedSpec {
            top_level: level,
            level_dist: vec![1.0 / (level + 1) as f64; level + 1],
            horizon: horizon.unwrap_or(2 * task.inner.n),
            temperature,
        };
        let task = task.inner.clone();
        let inner = py.detach(move || trajectory::Expert::solve(&task, &spec)).map_err(to_py)?;
        Ok(PyExpert { inner })
    }

    #[getter]
    fn num_states(&self) -> usize {
        self.inner.model.num_states()
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.inner.spec.horizon
    }

    fn state_index(&self, pos_i: (usize, usize), pos_j: (usize, usize)) -> PyResult<usize> {
        let sp = self.inner.model.space();
        let ci = sp.cell_index(Cell::new(pos_i.0, pos_i.1));
        let cj = sp.cell_index(Cell::new(pos_j.0, pos_j.1));
        match (ci, cj) {
            (Some(ci), Some(cj)) => Ok(sp.join(ci, cj)),
            _ => Err(PyValueError::new_err("both positions must be free cells")),
        }
    }

    fn initial_belief(&self) -> Vec<f64> {
        initial_belief(&self.inner.model).as_slice().to_vec()
    }

    /// Filters `belief` through joint action `(a_i, a_j)` and agent i's
    /// observation code. With `use_strategy`, agent j's action is replaced
    /// by the nested strategy's prediction.
    #[pyo3(signature = (belief, a_i, a_j, observation, use_strategy = false))]
    fn update_belief(
        &self,
        belief: Vec<f64>,
        a_i: usize,
        a_j: usize,
        observation: u8,
        use_strategy: bool,
    ) -> PyResult<Vec<f64>> {
        let b = Belief::from_probs(belief).map_err(to_py)?;
        let o = Observation::new(observation)
            .ok_or_else(|| PyValueError::new_err(format!("observation code {observation} is out of range 0..32")))?;
        let a = JointAction::new(action(a_i)?, action(a_j)?);
        let mode = if use_strategy { StrategyMode::Strategy(&self.inner.pi_j) } else { StrategyMode::GivenAction };
        let e = &self.inner;
        update(&b, &e.model, &e.indicator, a, o, mode).map(|b| b.as_slice().to_vec()).map_err(to_py)
    }

    fn action_values(&self, belief: Vec<f64>) -> PyResult<Vec<f64>> {
        let b = Belief::from_probs(belief).map_err(to_py)?;
        sipl_core::action_values(&self.inner.q_i, &b, &self.inner.pi_j).map(|v| v.0.to_vec()).map_err(to_py)
    }

    fn act(&self, belief: Vec<f64>) -> PyResult<usize> {
        let b = Belief::from_probs(belief).map_err(to_py)?;
        if b.len() != self.inner.model.num_states() {
            return Err(PyValueError::new_err("belief length does not match the task"));
        }
        Ok(self.inner.act(&b).index())
    }

    /// Agent i's Q table, flat `[S, 36]`.
    fn q_values(&self) -> Vec<f64> {
        self.inner.q_i.as_slice().to_vec()
    }

    /// Agent j's nested strategy, flat `[S, 6]`.
    fn strategy_j(&self) -> Vec<f64> {
        self.inner.pi_j.as_slice().to_vec()
    }

    fn save_policy(&self, path: PathBuf) -> PyResult<()> {
        PolicyDump::from_expert(&self.inner).and_then(|d| d.write(&path)).map_err(to_py)
    }

    #[pyo3(signature = (policy = "expert", seed = 0, temperature = 1.0))]
    fn simulate<'py>(&self, py: Python<'py>, policy: &str, seed: u64, temperature: f64) -> PyResult<Bound<'py, PyAny>> {
        let kind = policy_kind(policy, temperature)?;
        let e = &self.inner;
        let rec = trajectory::simulate_episode(0, e, &kind, &e.pi_j, seed, &EpisodeConfig::default()).map_err(to_py)?;
        to_dict(py, &rec)
    }
}

#[pyfunction]
#[pyo3(signature = (seed, n, count, obstacle_density = 0.25, belief_support_size = 3))]
fn generate_tasks(seed: u64, n: usize, count: usize, obstacle_density: f64, belief_support_size: usize) -> PyResult<Vec<PyTask>> {
    let specs = env::generate(seed, n, count, obstacle_density, belief_support_size).map_err(to_py)?;
    Ok(specs.into_iter().map(|s| PyTask { inner: s.task }).collect())
}

/// Success rate, discounted return and length statistics for `policy`.
#[pyfunction]
#[pyo3(signature = (tasks, policy = "expert", episodes = 20, seed = 0, temperature = 1.0))]
fn evaluate<'py>(
    py: Python<'py>,
    tasks: Vec<PyTask>,
    policy: &str,
    episodes: usize,
    seed: u64,
    temperature: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let kind = policy_kind(policy, temperature)?;
    let tasks: Vec<TaskParameter> = tasks.into_iter().map(|t| t.inner).collect();
    let metrics = py
        .detach(move || {
            let experts = trajectory::solve_tasks(&tasks, |t| NestedSpec::for_grid(t.n))?;
            trajectory::evaluate_policy(&experts, &kind, episodes, seed, &EpisodeConfig::default())
        })
        .map_err(to_py)?;
    to_dict(py, &metrics)
}

/// Writes an expert-demonstration dataset and returns its manifest.
#[pyfunction]
#[pyo3(signature = (tasks, episodes_per_task, seed, out, split = (0.8, 0.1, 0.1)))]
fn build_dataset<'py>(
    py: Python<'py>,
    tasks: Vec<PyTask>,
    episodes_per_task: usize,
    seed: u64,
    out: PathBuf,
    split: (f64, f64, f64),
) -> PyResult<Bound<'py, PyAny>> {
    let tasks: Vec<TaskParameter> = tasks.into_iter().map(|t| t.inner).collect();
    let options = DatasetOptions { split_fractions: [split.0, split.1, split.2], ..Default::default() };
    let manifest = py
        .detach(move || dataset::build_dataset(&tasks, episodes_per_task, seed, &out, &options))
        .map_err(to_py)?;
    to_dict(py, &manifest)
}

fn array_dict<'py>(py: Python<'py>, a: &Array) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("shape", a.shape.clone())?;
    d.set_item("dtype", format!("{:?}", a.dtype()).to_lowercase())?;
    match &a.data {
        ArrayData::F64(v) => d.set_item("data", v.clone())?,
        ArrayData::F32(v) => d.set_item("data", v.clone())?,
        ArrayData::I32(v) => d.set_item("data", v.clone())?,
        ArrayData::U8(v) => d.set_item("data", v.iter().map(|&x| x as u32).collect::<Vec<_>>())?,
    }
    Ok(d)
}

/// Reads a dataset directory: `(manifest, {name: {"shape", "dtype", "data"}})`
/// with `data` flattened in row-major order.
#[pyfunction]
fn read_dataset<'py>(py: Python<'py>, path: PathBuf) -> PyResult<(Bound<'py, PyAny>, Bound<'py, PyDict>)> {
    let (manifest, arrays) = dataset::read_dataset(&path).map_err(to_py)?;
    let out = PyDict::new(py);
    for (name, a) in &arrays {
        out.set_item(name, array_dict(py, a)?)?;
    }
    Ok((to_dict(py, &manifest)?, out))
}

/// Reads a policy dump: `{"free_cells", "q_i", "pi_j"}` in the same array layout.
#[pyfunction]
fn read_policy<'py>(py: Python<'py>, path: PathBuf) -> PyResult<Bound<'py, PyDict>> {
    let dump = PolicyDump::read(&path).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("free_cells", array_dict(py, &dump.free_cells)?)?;
    out.set_item("q_i", array_dict(py, &dump.q_i)?)?;
    out.set_item("pi_j", array_dict(py, &dump.pi_j)?)?;
    Ok(out)
}

#[pymodule]
fn sipl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTask>()?;
    m.add_class::<PyExpert>()?;
    m.add_function(wrap_pyfunction!(generate_tasks, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(build_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(read_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(read_policy, m)?)?;
    m.add("ACTIONS", Action::ALL.map(|a| a.name()).to_vec())?;
    Ok(())
}
