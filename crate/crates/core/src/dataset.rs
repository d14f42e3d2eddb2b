//! Expert-demonstration datasets and policy dumps.
//!
//! A dataset is a directory holding `manifest.json`, a copy of every task
//! under `tasks/`, and one container file per array. Episodes are padded to
//! the longest one with `-1` in the action and observation arrays.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::belief::{initial_belief, FilterMode, ZeroLikelihoodPolicy};
use crate::container::{read_array, read_arrays, write_array, write_arrays, Array, ArrayData, DType, FORMAT_VERSION};
use crate::env::default_max_steps;
use crate::error::{Error, Result};
use crate::nested::NestedSpec;
use crate::rng::stream;
use crate::task::{Agent, TaskParameter, NUM_ACTIONS, NUM_JOINT_ACTIONS};
use crate::trajectory::{run_episodes, solve_tasks, EpisodeConfig, Expert, PolicyKind, TrajectoryRecord};

pub const MANIFEST_FILE: &str = "manifest.json";
const PAD: i32 = -1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub file: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub master: u64,
    pub episodes_per_task: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvDefaults {
    pub grid_size: usize,
    pub max_steps: usize,
    pub nested: NestedSpec,
    pub filter_mode: FilterMode,
    pub pad_value: i32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u16,
    pub tasks: Vec<String>,
    pub splits: Splits,
    pub arrays: Vec<ArrayEntry>,
    pub seeds: Seeds,
    pub env_defaults: EnvDefaults,
}

impl DatasetManifest {
    pub fn num_records(&self) -> usize {
        self.array("task_id").map(|a| a.shape[0]).unwrap_or(0)
    }

    pub fn array(&self, name: &str) -> Option<&ArrayEntry> {
        self.arrays.iter().find(|a| a.name == name)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetOptions {
    /// Train / valid / test fractions over tasks.
    pub split_fractions: [f64; 3],
    /// Defaults to `4N`.
    pub max_steps: Option<usize>,
    /// Defaults to [`NestedSpec::for_grid`].
    pub nested: Option<NestedSpec>,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        DatasetOptions { split_fractions: [0.8, 0.1, 0.1], max_steps: None, nested: None }
    }
}

/// Assigns whole tasks to splits with a seeded shuffle.
pub fn split_tasks(num_tasks: usize, fractions: [f64; 3], master_seed: u64) -> Result<Splits> {
    let sum: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| !(*f >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("split fractions {fractions:?} must be nonnegative and sum to 1")));
    }
    let mut ids: Vec<usize> = (0..num_tasks).collect();
    ids.shuffle(&mut stream(master_seed, &[u64::MAX]));
    let n_train = ((fractions[0] * num_tasks as f64).round() as usize).min(num_tasks);
    let n_valid = ((fractions[1] * num_tasks as f64).round() as usize).min(num_tasks - n_train);
    let take = |range: std::ops::Range<usize>| {
        let mut v = ids[range].to_vec();
        v.sort_unstable();
        v
    };
    Ok(Splits {
        train: take(0..n_train),
        valid: take(n_train..n_train + n_valid),
        test: take(n_train + n_valid..num_tasks),
    })
}

fn task_file_name(idx: usize, count: usize) -> String {
    let width = count.saturating_sub(1).to_string().len().max(3);
    format!("{idx:0width$}.json")
}

pub fn task_file_names(count: usize) -> Vec<String> {
    (0..count).map(|k| task_file_name(k, count)).collect()
}

struct NamedArray {
    name: &'static str,
    array: Array,
}

fn named(name: &'static str, shape: Vec<usize>, data: ArrayData) -> Result<NamedArray> {
    Ok(NamedArray { name, array: Array::new(shape, data)? })
}

fn episode_arrays(records: &[TrajectoryRecord]) -> Result<Vec<NamedArray>> {
    let r = records.len();
    let l = records.iter().map(|rec| rec.len()).max().unwrap_or(0).max(1);
    let mut actions_i = vec![PAD; r * l];
    let mut actions_j = vec![PAD; r * l];
    let mut observations = vec![PAD; r * l];
    let mut expert_next = vec![PAD; r * l];
    for (k, rec) in records.iter().enumerate() {
        for (t, step) in rec.steps.iter().enumerate() {
            actions_i[k * l + t] = step.a_i.index() as i32;
            actions_j[k * l + t] = step.a_j.index() as i32;
            observations[k * l + t] = step.o_i as i32;
            expert_next[k * l + t] = step.expert_next_a_i.index() as i32;
        }
    }
    Ok(vec![
        named("task_id", vec![r], ArrayData::I32(records.iter().map(|x| x.task_id as i32).collect()))?,
        named("length", vec![r], ArrayData::I32(records.iter().map(|x| x.len() as i32).collect()))?,
        named("first_action", vec![r], ArrayData::I32(records.iter().map(|x| x.first_action.index() as i32).collect()))?,
        named("actions_i", vec![r, l], ArrayData::I32(actions_i))?,
        named("actions_j", vec![r, l], ArrayData::I32(actions_j))?,
        named("observations", vec![r, l], ArrayData::I32(observations))?,
        named("expert_next_actions", vec![r, l], ArrayData::I32(expert_next))?,
        named("success", vec![r], ArrayData::U8(records.iter().map(|x| x.success as u8).collect()))?,
        named("returns", vec![r], ArrayData::F64(records.iter().map(|x| x.discounted_return).collect()))?,
    ])
}

/// Per-task maps on the full grid: obstacles, gold, and both initial belief marginals.
fn task_arrays(experts: &[Expert], n: usize) -> Result<Vec<NamedArray>> {
    let t = experts.len();
    let mut grid = Vec::with_capacity(t * n * n);
    let mut gold = Vec::with_capacity(t * 2);
    let mut belief_i = vec![0.0; t * n * n];
    let mut belief_j = vec![0.0; t * n * n];
    let mut radius = Vec::with_capacity(t);
    for (k, e) in experts.iter().enumerate() {
        grid.extend(e.task.obstacles.iter().map(|&b| b as u8));
        gold.extend([e.task.gold.row as i32, e.task.gold.col as i32]);
        radius.push(e.task.interaction_radius as i32);
        let b0 = initial_belief(&e.model);
        let space = e.model.space();
        for (agent, out) in [(Agent::I, &mut belief_i), (Agent::J, &mut belief_j)] {
            for (c, p) in b0.marginal(&e.model, agent).into_iter().enumerate() {
                let cell = space.cell(c);
                out[k * n * n + cell.row * n + cell.col] = p;
            }
        }
    }
    Ok(vec![
        named("grid", vec![t, n, n], ArrayData::U8(grid))?,
        named("gold", vec![t, 2], ArrayData::I32(gold))?,
        named("init_belief_i", vec![t, n, n], ArrayData::F64(belief_i))?,
        named("init_belief_j", vec![t, n, n], ArrayData::F64(belief_j))?,
        named("interaction_radius", vec![t], ArrayData::I32(radius))?,
    ])
}

/// Solves each task, simulates `episodes_per_task` expert episodes and
/// writes the dataset to `out_path`. Nothing is left behind on failure.
pub fn build_dataset(
    tasks: &[TaskParameter],
    episodes_per_task: usize,
    master_seed: u64,
    out_path: &Path,
    options: &DatasetOptions,
) -> Result<DatasetManifest> {
    if tasks.is_empty() || episodes_per_task == 0 {
        return Err(Error::InvalidArgument("need at least one task and one episode per task".into()));
    }
    let n = tasks[0].n;
    if tasks.iter().any(|t| t.n != n) {
        return Err(Error::InvalidArgument("all tasks in a dataset must share the grid size".into()));
    }
    if out_path.exists() && fs::read_dir(out_path)?.next().is_some() {
        return Err(Error::InvalidArgument(format!("{} exists and is not empty", out_path.display())));
    }
    let splits = split_tasks(tasks.len(), options.split_fractions, master_seed)?;
    let nested = options.nested.clone().unwrap_or_else(|| NestedSpec::for_grid(n));
    let max_steps = options.max_steps.unwrap_or_else(|| default_max_steps(n));

    let experts = solve_tasks(tasks, |_| nested.clone())?;
    let config = EpisodeConfig {
        max_steps: Some(max_steps),
        filter_mode: FilterMode::GivenAction,
        on_zero_likelihood: ZeroLikelihoodPolicy::Error,
    };
    let records = run_episodes(&experts, &PolicyKind::Expert, episodes_per_task, master_seed, &config)?;

    let mut arrays = episode_arrays(&records)?;
    arrays.extend(task_arrays(&experts, n)?);

    let names = task_file_names(tasks.len());
    let manifest = DatasetManifest {
        version: FORMAT_VERSION,
        tasks: names.iter().map(|f| format!("tasks/{f}")).collect(),
        splits,
        arrays: arrays
            .iter()
            .map(|a| ArrayEntry {
                name: a.name.to_string(),
                file: format!("{}.bin", a.name),
                dtype: a.array.dtype(),
                shape: a.array.shape.clone(),
            })
            .collect(),
        seeds: Seeds { master: master_seed, episodes_per_task },
        env_defaults: EnvDefaults { grid_size: n, max_steps, nested, filter_mode: config.filter_mode, pad_value: PAD },
    };

    let parent = match out_path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent)?;
    let staging = tempfile::Builder::new().prefix(".sipl-dataset-").tempdir_in(&parent)?;
    let root = staging.path();
    fs::create_dir(root.join("tasks"))?;
    for (task, name) in tasks.iter().zip(&names) {
        task.save(root.join("tasks").join(name))?;
    }
    for (a, entry) in arrays.iter().zip(&manifest.arrays) {
        write_array(&root.join(&entry.file), &a.array)?;
    }
    fs::write(root.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;

    if out_path.exists() {
        fs::remove_dir(out_path)?;
    }
    fs::rename(staging.keep(), out_path)?;
    Ok(manifest)
}

/// Reads a dataset directory back: the manifest and every listed array.
pub fn read_dataset(dir: &Path) -> Result<(DatasetManifest, BTreeMap<String, Array>)> {
    let manifest = DatasetManifest::load(dir)?;
    let mut arrays = BTreeMap::new();
    for entry in &manifest.arrays {
        let path = dir.join(&entry.file);
        let a = read_array(&path)?;
        if a.shape != entry.shape || a.dtype() != entry.dtype {
            return Err(Error::Format { path, reason: "array header disagrees with the manifest".into() });
        }
        arrays.insert(entry.name.clone(), a);
    }
    Ok((manifest, arrays))
}

/// Solved policy for one task.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyDump {
    /// `[F, 2]` row/col of each free cell, in state-index order.
    pub free_cells: Array,
    /// `[F, F, 6, 6]` agent i's Q over joint states and joint actions.
    pub q_i: Array,
    /// `[F, F, 6]` agent j's nested strategy.
    pub pi_j: Array,
}

impl PolicyDump {
    pub fn from_expert(expert: &Expert) -> Result<Self> {
        let space = expert.model.space();
        let f = space.num_cells();
        let cells: Vec<i32> = space.cells().iter().flat_map(|c| [c.row as i32, c.col as i32]).collect();
        debug_assert_eq!(expert.q_i.as_slice().len(), f * f * NUM_JOINT_ACTIONS);
        Ok(PolicyDump {
            free_cells: Array::new(vec![f, 2], ArrayData::I32(cells))?,
            q_i: Array::new(vec![f, f, NUM_ACTIONS, NUM_ACTIONS], ArrayData::F64(expert.q_i.as_slice().to_vec()))?,
            pi_j: Array::new(vec![f, f, NUM_ACTIONS], ArrayData::F64(expert.pi_j.as_slice().to_vec()))?,
        })
    }

    /// Writes the three arrays back to back: free cells, Q, strategy.
    pub fn write(&self, path: &Path) -> Result<()> {
        write_arrays(path, &[&self.free_cells, &self.q_i, &self.pi_j])
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut arrays = read_arrays(path)?;
        if arrays.len() != 3 {
            return Err(Error::Format { path: path.to_path_buf(), reason: format!("expected 3 arrays, found {}", arrays.len()) });
        }
        let pi_j = arrays.pop().unwrap();
        let q_i = arrays.pop().unwrap();
        let free_cells = arrays.pop().unwrap();
        Ok(PolicyDump { free_cells, q_i, pi_j })
    }
}
