//! Task parameters: the grid, the gold cell, both agents' initial belief
//! supports, noise levels, discount and the interaction radius.

use std::collections::VecDeque;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grid coordinate, serialized as `[row, col]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub const fn new(row: usize, col: usize) -> Self {
        Cell { row, col }
    }

    pub fn manhattan(self, other: Cell) -> usize {
        self.row.abs_diff(other.row) + self.col.abs_diff(other.col)
    }
}

impl From<[usize; 2]> for Cell {
    fn from([row, col]: [usize; 2]) -> Self {
        Cell { row, col }
    }
}

impl From<Cell> for [usize; 2] {
    fn from(c: Cell) -> Self {
        [c.row, c.col]
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.row, self.col)
    }
}

/// Per-agent action set. Both agents share it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    North,
    East,
    South,
    West,
    Listen,
    Open,
}

pub const NUM_ACTIONS: usize = 6;
pub const NUM_JOINT_ACTIONS: usize = NUM_ACTIONS * NUM_ACTIONS;

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [
        Action::North,
        Action::East,
        Action::South,
        Action::West,
        Action::Listen,
        Action::Open,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(idx: usize) -> Option<Action> {
        Self::ALL.get(idx).copied()
    }

    /// Row/column offset for the four moves.
    pub fn offset(self) -> Option<(isize, isize)> {
        match self {
            Action::North => Some((-1, 0)),
            Action::East => Some((0, 1)),
            Action::South => Some((1, 0)),
            Action::West => Some((0, -1)),
            Action::Listen | Action::Open => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::North => "north",
            Action::East => "east",
            Action::South => "south",
            Action::West => "west",
            Action::Listen => "listen",
            Action::Open => "open",
        }
    }
}

impl Serialize for Action {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Action {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let name = String::deserialize(d)?;
        Action::ALL
            .into_iter()
            .find(|a| a.name() == name)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown action {name:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct JointAction {
    pub a_i: Action,
    pub a_j: Action,
}

impl JointAction {
    pub fn new(a_i: Action, a_j: Action) -> Self {
        JointAction { a_i, a_j }
    }

    /// Flat index `a_i * 6 + a_j`.
    pub fn index(self) -> usize {
        self.a_i.index() * NUM_ACTIONS + self.a_j.index()
    }

    pub fn from_index(idx: usize) -> Option<JointAction> {
        if idx >= NUM_JOINT_ACTIONS {
            return None;
        }
        Some(JointAction {
            a_i: Action::ALL[idx / NUM_ACTIONS],
            a_j: Action::ALL[idx % NUM_ACTIONS],
        })
    }

    pub fn all() -> impl Iterator<Item = JointAction> {
        (0..NUM_JOINT_ACTIONS).map(|k| JointAction::from_index(k).unwrap())
    }

    pub fn of(self, agent: Agent) -> Action {
        match agent {
            Agent::I => self.a_i,
            Agent::J => self.a_j,
        }
    }

    /// Builds the joint action from one agent's action and its opponent's.
    pub fn from_roles(agent: Agent, own: Action, other: Action) -> JointAction {
        match agent {
            Agent::I => JointAction::new(own, other),
            Agent::J => JointAction::new(other, own),
        }
    }
}

/// The subjective agent `I` and the modeled agent `J`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Agent {
    I,
    J,
}

impl Agent {
    pub fn other(self) -> Agent {
        match self {
            Agent::I => Agent::J,
            Agent::J => Agent::I,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardParams {
    pub step: f64,
    pub open_gold: f64,
    pub open_wrong: f64,
    pub collision: f64,
    pub shared_gold: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        RewardParams {
            step: -0.1,
            open_gold: 10.0,
            open_wrong: -10.0,
            collision: -5.0,
            shared_gold: 5.0,
        }
    }
}

impl RewardParams {
    pub fn scaled(self, factor: f64) -> Self {
        RewardParams {
            step: self.step * factor,
            open_gold: self.open_gold * factor,
            open_wrong: self.open_wrong * factor,
            collision: self.collision * factor,
            shared_gold: self.shared_gold * factor,
        }
    }

    pub fn max_abs(&self) -> f64 {
        [self.step, self.open_gold, self.open_wrong, self.collision, self.shared_gold]
            .iter()
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

pub const DEFAULT_GAMMA: f64 = 0.95;
pub const DEFAULT_MOVE_SUCCESS: f64 = 0.9;
pub const DEFAULT_OBS_NOISE_MOVE: f64 = 0.1;
pub const DEFAULT_OBS_NOISE_LISTEN: f64 = 0.02;
pub const DEFAULT_INTERACTION_RADIUS: usize = 1;

/// Everything identifying one task instance.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskParameter {
    pub n: usize,
    /// Row-major obstacle map, `true` = blocked.
    pub obstacles: Vec<bool>,
    pub gold: Cell,
    pub init_i: Vec<Cell>,
    pub init_j: Vec<Cell>,
    pub gamma: f64,
    pub move_success_prob: f64,
    pub obs_noise_move: f64,
    pub obs_noise_listen: f64,
    pub interaction_radius: usize,
    pub rewards: RewardParams,
}

impl TaskParameter {
    /// Obstacle-free `n x n` task with default noise, discount and rewards.
    pub fn new(n: usize, gold: Cell, init_i: Vec<Cell>, init_j: Vec<Cell>) -> Self {
        TaskParameter {
            n,
            obstacles: vec![false; n * n],
            gold,
            init_i,
            init_j,
            gamma: DEFAULT_GAMMA,
            move_success_prob: DEFAULT_MOVE_SUCCESS,
            obs_noise_move: DEFAULT_OBS_NOISE_MOVE,
            obs_noise_listen: DEFAULT_OBS_NOISE_LISTEN,
            interaction_radius: DEFAULT_INTERACTION_RADIUS,
            rewards: RewardParams::default(),
        }
    }

    pub fn with_obstacles(mut self, cells: &[Cell]) -> Self {
        for c in cells {
            let idx = c.row * self.n + c.col;
            self.obstacles[idx] = true;
        }
        self
    }

    pub fn in_bounds(&self, cell: Cell) -> bool {
        cell.row < self.n && cell.col < self.n
    }

    pub fn is_free(&self, cell: Cell) -> bool {
        self.in_bounds(cell) && !self.obstacles[cell.row * self.n + cell.col]
    }

    /// The cell reached by a move, or `None` when it leaves the grid or hits an obstacle.
    pub fn neighbor(&self, cell: Cell, action: Action) -> Option<Cell> {
        let (dr, dc) = action.offset()?;
        let row = cell.row.checked_add_signed(dr)?;
        let col = cell.col.checked_add_signed(dc)?;
        let next = Cell::new(row, col);
        self.is_free(next).then_some(next)
    }

    pub fn free_cells(&self) -> Vec<Cell> {
        (0..self.n)
            .flat_map(|r| (0..self.n).map(move |c| Cell::new(r, c)))
            .filter(|&c| self.is_free(c))
            .collect()
    }

    /// Free cells reachable from `start` through 4-connected free cells.
    pub fn reachable_from(&self, start: Cell) -> Vec<bool> {
        let mut seen = vec![false; self.n * self.n];
        if !self.is_free(start) {
            return seen;
        }
        let mut queue = VecDeque::from([start]);
        seen[start.row * self.n + start.col] = true;
        while let Some(c) = queue.pop_front() {
            for a in &Action::ALL[..4] {
                if let Some(nb) = self.neighbor(c, *a) {
                    let k = nb.row * self.n + nb.col;
                    if !seen[k] {
                        seen[k] = true;
                        queue.push_back(nb);
                    }
                }
            }
        }
        seen
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidTask(msg));
        if self.n == 0 {
            return bad("grid size must be positive".into());
        }
        if self.obstacles.len() != self.n * self.n {
            return bad(format!(
                "obstacle map has {} cells, expected {}",
                self.obstacles.len(),
                self.n * self.n
            ));
        }
        if !self.is_free(self.gold) {
            return bad(format!("gold cell {} is not a free cell", self.gold));
        }
        for (name, support) in [("init_i", &self.init_i), ("init_j", &self.init_j)] {
            if support.is_empty() {
                return bad(format!("{name} is empty"));
            }
            if let Some(c) = support.iter().find(|c| !self.is_free(**c)) {
                return bad(format!("{name} contains non-free cell {c}"));
            }
            let mut sorted = support.clone();
            sorted.sort();
            sorted.dedup();
            if sorted.len() != support.len() {
                return bad(format!("{name} contains duplicate cells"));
            }
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        for (name, p) in [
            ("move_success_prob", self.move_success_prob),
            ("obs_noise_move", self.obs_noise_move),
            ("obs_noise_listen", self.obs_noise_listen),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        let r = &self.rewards;
        if ![r.step, r.open_gold, r.open_wrong, r.collision, r.shared_gold]
            .iter()
            .all(|v| v.is_finite())
        {
            return bad("rewards must be finite".into());
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let raw: TaskJson = serde_json::from_str(s)?;
        let task = raw.into_task()?;
        task.validate()?;
        Ok(task)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&TaskJson::from(self)).expect("task serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut s = self.to_json_string();
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }
}

/// On-disk task schema.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskJson {
    n: usize,
    grid: Vec<Vec<u8>>,
    gold: Cell,
    init_i: Vec<Cell>,
    init_j: Vec<Cell>,
    gamma: f64,
    move_success_prob: f64,
    obs_noise_move: f64,
    obs_noise_listen: f64,
    interaction_radius: usize,
    rewards: RewardParams,
}

impl TaskJson {
    fn into_task(self) -> Result<TaskParameter> {
        if self.grid.len() != self.n || self.grid.iter().any(|row| row.len() != self.n) {
            return Err(Error::InvalidTask(format!("grid must be {0}x{0}", self.n)));
        }
        let mut obstacles = Vec::with_capacity(self.n * self.n);
        for row in &self.grid {
            for &v in row {
                match v {
                    0 => obstacles.push(false),
                    1 => obstacles.push(true),
                    other => {
                        return Err(Error::InvalidTask(format!("grid entries must be 0 or 1, got {other}")))
                    }
                }
            }
        }
        Ok(TaskParameter {
            n: self.n,
            obstacles,
            gold: self.gold,
            init_i: self.init_i,
            init_j: self.init_j,
            gamma: self.gamma,
            move_success_prob: self.move_success_prob,
            obs_noise_move: self.obs_noise_move,
            obs_noise_listen: self.obs_noise_listen,
            interaction_radius: self.interaction_radius,
            rewards: self.rewards,
        })
    }
}

impl From<&TaskParameter> for TaskJson {
    fn from(t: &TaskParameter) -> Self {
        TaskJson {
            n: t.n,
            grid: t
                .obstacles
                .chunks(t.n)
                .map(|row| row.iter().map(|&b| b as u8).collect())
                .collect(),
            gold: t.gold,
            init_i: t.init_i.clone(),
            init_j: t.init_j.clone(),
            gamma: t.gamma,
            move_success_prob: t.move_success_prob,
            obs_noise_move: t.obs_noise_move,
            obs_noise_listen: t.obs_noise_listen,
            interaction_radius: t.interaction_radius,
            rewards: t.rewards,
        }
    }
}
