//! Joint state space and the factored Tiger-grid model.
//!
//! Single-agent motion and reward factors are stored as tables. The
//! interactive (coupled) dynamics are derived on demand from the motion
//! factors using the collision rule: when both agents' sampled target cells
//! coincide, both stay where they are.
//!
//! Joint states are indexed `s = ci * F + cj` where `ci`, `cj` index the
//! `F` free cells in row-major order. Joint actions are indexed `a_i * 6 + a_j`.

use std::collections::VecDeque;
use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::task::{Action, Agent, Cell, JointAction, RewardParams, TaskParameter, NUM_ACTIONS};

pub const NUM_OBSERVATIONS: usize = 32;

const ROW_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct JointState {
    pub pos_i: Cell,
    pub pos_j: Cell,
}

impl JointState {
    pub fn new(pos_i: Cell, pos_j: Cell) -> Self {
        JointState { pos_i, pos_j }
    }

    pub fn pos(&self, agent: Agent) -> Cell {
        match agent {
            Agent::I => self.pos_i,
            Agent::J => self.pos_j,
        }
    }
}

/// Five-bit local observation. Bits 0..4 are "blocked" flags for
/// north, east, south and west; bit 4 is the glitter bit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Observation(u8);

impl Observation {
    pub fn new(code: u8) -> Option<Self> {
        ((code as usize) < NUM_OBSERVATIONS).then_some(Observation(code))
    }

    pub fn from_bits(bits: [bool; 5]) -> Self {
        let code = bits
            .iter()
            .enumerate()
            .fold(0u8, |acc, (k, &b)| acc | ((b as u8) << k));
        Observation(code)
    }

    pub fn bits(self) -> [bool; 5] {
        std::array::from_fn(|k| (self.0 >> k) & 1 == 1)
    }

    pub fn code(self) -> u8 {
        self.0
    }
}

impl fmt::Display for Observation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.bits();
        write!(f, "{}{}{}{}{}", b[0] as u8, b[1] as u8, b[2] as u8, b[3] as u8, b[4] as u8)
    }
}

/// Indexing of free cells and joint states.
#[derive(Clone, Debug)]
pub struct StateSpace {
    n: usize,
    free: Vec<Cell>,
    lookup: Vec<Option<usize>>,
}

impl StateSpace {
    pub fn from_task(task: &TaskParameter) -> Self {
        let free = task.free_cells();
        let mut lookup = vec![None; task.n * task.n];
        for (k, c) in free.iter().enumerate() {
            lookup[c.row * task.n + c.col] = Some(k);
        }
        StateSpace { n: task.n, free, lookup }
    }

    pub fn grid_size(&self) -> usize {
        self.n
    }

    pub fn num_cells(&self) -> usize {
        self.free.len()
    }

    pub fn num_states(&self) -> usize {
        self.free.len() * self.free.len()
    }

    pub fn cells(&self) -> &[Cell] {
        &self.free
    }

    pub fn cell(&self, idx: usize) -> Cell {
        self.free[idx]
    }

    pub fn cell_index(&self, cell: Cell) -> Option<usize> {
        if cell.row >= self.n || cell.col >= self.n {
            return None;
        }
        self.lookup[cell.row * self.n + cell.col]
    }

    pub fn join(&self, ci: usize, cj: usize) -> usize {
        ci * self.free.len() + cj
    }

    pub fn split(&self, s: usize) -> (usize, usize) {
        (s / self.free.len(), s % self.free.len())
    }

    pub fn joint_index(&self, s: &JointState) -> Option<usize> {
        Some(self.join(self.cell_index(s.pos_i)?, self.cell_index(s.pos_j)?))
    }

    pub fn joint_state(&self, s: usize) -> JointState {
        let (ci, cj) = self.split(s);
        JointState::new(self.free[ci], self.free[cj])
    }

    /// Cell index of `agent`'s own position in joint state `s`.
    pub fn own_cell(&self, s: usize, agent: Agent) -> usize {
        let (ci, cj) = self.split(s);
        match agent {
            Agent::I => ci,
            Agent::J => cj,
        }
    }
}

/// Interaction indicators for transitions and rewards.
///
/// Each is `X(s, a) = 1` iff the agents' Manhattan distance is within the
/// radius. `None` disables the indicator entirely.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct InteractionIndicator {
    pub transition_radius: Option<usize>,
    pub reward_radius: Option<usize>,
}

impl InteractionIndicator {
    pub fn radius(r: usize) -> Self {
        InteractionIndicator { transition_radius: Some(r), reward_radius: Some(r) }
    }

    /// X identically 0.
    pub fn never() -> Self {
        InteractionIndicator { transition_radius: None, reward_radius: None }
    }

    /// X identically 1.
    pub fn always() -> Self {
        Self::radius(usize::MAX)
    }

    fn within(radius: Option<usize>, s: &JointState) -> bool {
        radius.is_some_and(|r| s.pos_i.manhattan(s.pos_j) <= r)
    }

    pub fn transition(&self, s: &JointState, _a: JointAction) -> bool {
        Self::within(self.transition_radius, s)
    }

    pub fn reward(&self, s: &JointState, _a: JointAction) -> bool {
        Self::within(self.reward_radius, s)
    }

    pub fn is_symmetric(&self) -> bool {
        self.transition_radius == self.reward_radius
    }
}

/// Sparse distribution over at most four joint successor states.
#[derive(Clone, Copy, Debug, Default)]
pub struct JointRow {
    entries: [(usize, f64); 4],
    len: usize,
}

impl JointRow {
    fn add(&mut self, s: usize, p: f64) {
        if let Some(e) = self.entries[..self.len].iter_mut().find(|e| e.0 == s) {
            e.1 += p;
        } else {
            self.entries[self.len] = (s, p);
            self.len += 1;
        }
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries[..self.len]
    }

    pub fn prob(&self, s: usize) -> f64 {
        self.entries().iter().filter(|e| e.0 == s).map(|e| e.1).sum()
    }

    pub fn total(&self) -> f64 {
        self.entries().iter().map(|e| e.1).sum()
    }
}

pub type MotionRow = Vec<(usize, f64)>;

#[derive(Clone, Debug)]
pub struct FactoredModel {
    space: StateSpace,
    gold: usize,
    init_i: Vec<usize>,
    init_j: Vec<usize>,
    gamma: f64,
    rewards: RewardParams,
    indicator: InteractionIndicator,
    motion: [Vec<[MotionRow; NUM_ACTIONS]>; 2],
    reward: [Vec<[f64; NUM_ACTIONS]>; 2],
    observation: Vec<[[f64; NUM_OBSERVATIONS]; NUM_ACTIONS]>,
    true_obs: Vec<Observation>,
    obs_noise_move: f64,
    obs_noise_listen: f64,
}

fn slot(agent: Agent) -> usize {
    match agent {
        Agent::I => 0,
        Agent::J => 1,
    }
}

/// Materializes motion, reward and observation tables for a task.
pub fn build_model(task: &TaskParameter) -> Result<FactoredModel> {
    task.validate()?;
    let space = StateSpace::from_task(task);
    let idx = |c: Cell| space.cell_index(c).expect("validated free cell");

    let mut motion_table = Vec::with_capacity(space.num_cells());
    for &c in space.cells() {
        let here = idx(c);
        motion_table.push(Action::ALL.map(|a| {
            let mut row = MotionRow::new();
            match task.neighbor(c, a) {
                Some(nb) => {
                    let p = task.move_success_prob;
                    if p > 0.0 {
                        row.push((idx(nb), p));
                    }
                    if p < 1.0 {
                        row.push((here, 1.0 - p));
                    }
                }
                None => row.push((here, 1.0)),
            }
            row
        }));
    }

    let gold = idx(task.gold);
    let reward_table: Vec<[f64; NUM_ACTIONS]> = (0..space.num_cells())
        .map(|c| Action::ALL.map(|a| own_reward(&task.rewards, c == gold, a)))
        .collect();

    let true_obs: Vec<Observation> = space.cells().iter().map(|&c| true_observation(task, c)).collect();
    let observation = true_obs
        .iter()
        .map(|&truth| {
            Action::ALL.map(|a| {
                let noise = match a {
                    Action::Listen => task.obs_noise_listen,
                    _ => task.obs_noise_move,
                };
                std::array::from_fn(|o| observation_likelihood(truth, Observation(o as u8), noise))
            })
        })
        .collect();

    let model = FactoredModel {
        gold,
        init_i: task.init_i.iter().map(|&c| idx(c)).collect(),
        init_j: task.init_j.iter().map(|&c| idx(c)).collect(),
        gamma: task.gamma,
        rewards: task.rewards,
        indicator: InteractionIndicator::radius(task.interaction_radius),
        motion: [motion_table.clone(), motion_table],
        reward: [reward_table.clone(), reward_table],
        observation,
        true_obs,
        obs_noise_move: task.obs_noise_move,
        obs_noise_listen: task.obs_noise_listen,
        space,
    };
    if !model.gold_reachable() {
        return Err(Error::UnreachableGold);
    }
    Ok(model)
}

fn own_reward(r: &RewardParams, at_gold: bool, a: Action) -> f64 {
    match a {
        Action::Open if at_gold => r.open_gold,
        Action::Open => r.open_wrong,
        _ => r.step,
    }
}

/// Noise-free observation at `cell`.
pub fn true_observation(task: &TaskParameter, cell: Cell) -> Observation {
    let mut bits = [false; 5];
    for (k, a) in Action::ALL[..4].iter().enumerate() {
        bits[k] = task.neighbor(cell, *a).is_none();
    }
    bits[4] = cell == task.gold;
    Observation::from_bits(bits)
}

fn observation_likelihood(truth: Observation, o: Observation, noise: f64) -> f64 {
    let flipped = (truth.0 ^ o.0).count_ones() as i32;
    noise.powi(flipped) * (1.0 - noise).powi(5 - flipped)
}

impl FactoredModel {
    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn num_states(&self) -> usize {
        self.space.num_states()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn rewards(&self) -> &RewardParams {
        &self.rewards
    }

    pub fn gold_cell(&self) -> usize {
        self.gold
    }

    pub fn init_support(&self, agent: Agent) -> &[usize] {
        match agent {
            Agent::I => &self.init_i,
            Agent::J => &self.init_j,
        }
    }

    /// The indicator carried by the task (`interaction_radius`).
    pub fn indicator(&self) -> InteractionIndicator {
        self.indicator
    }

    /// Single-agent transition row `t(cell, action, .)`.
    pub fn motion(&self, agent: Agent, cell: usize, action: Action) -> &[(usize, f64)] {
        &self.motion[slot(agent)][cell][action.index()]
    }

    /// Single-agent reward `r(cell, action)`.
    pub fn own_reward(&self, agent: Agent, cell: usize, action: Action) -> f64 {
        self.reward[slot(agent)][cell][action.index()]
    }

    pub fn observation_row(&self, cell: usize, action: Action) -> &[f64; NUM_OBSERVATIONS] {
        &self.observation[cell][action.index()]
    }

    /// Noise-free observation code at a cell.
    pub fn true_observation(&self, cell: usize) -> Observation {
        self.true_obs[cell]
    }

    /// Per-bit flip probability under `action`.
    pub fn observation_noise(&self, action: Action) -> f64 {
        match action {
            Action::Listen => self.obs_noise_listen,
            _ => self.obs_noise_move,
        }
    }

    pub fn observation_prob(&self, cell: usize, action: Action, o: Observation) -> f64 {
        self.observation[cell][action.index()][o.code() as usize]
    }

    /// Interactive successor distribution `T_int(s, a, .)` together with the
    /// probability that the collision rule fires with at least one agent
    /// attempting to enter the contested cell.
    pub fn interactive_outcome(&self, s: usize, a: JointAction) -> (JointRow, f64) {
        let (ci, cj) = self.space.split(s);
        let mut row = JointRow::default();
        let mut bump = 0.0;
        for &(ti, pi) in self.motion(Agent::I, ci, a.a_i) {
            for &(tj, pj) in self.motion(Agent::J, cj, a.a_j) {
                let p = pi * pj;
                if ti == tj {
                    row.add(s, p);
                    if ti != ci || tj != cj {
                        bump += p;
                    }
                } else {
                    row.add(self.space.join(ti, tj), p);
                }
            }
        }
        (row, bump)
    }

    pub fn interactive_transition(&self, s: usize, a: JointAction) -> JointRow {
        self.interactive_outcome(s, a).0
    }

    /// Interactive reward `R_int(s, a)` for `agent`: simultaneous Open at gold
    /// pays the shared amount, and a contested move costs the collision penalty.
    pub fn interactive_reward(&self, s: usize, a: JointAction, agent: Agent) -> f64 {
        let (ci, cj) = self.space.split(s);
        let own_cell = self.space.own_cell(s, agent);
        let own_action = a.of(agent);
        let both_open_gold =
            ci == self.gold && cj == self.gold && a.a_i == Action::Open && a.a_j == Action::Open;
        let base = if both_open_gold {
            self.rewards.shared_gold
        } else {
            self.own_reward(agent, own_cell, own_action)
        };
        let (_, bump) = self.interactive_outcome(s, a);
        base + self.rewards.collision * bump
    }

    /// Product of the two single-agent transition rows.
    pub fn product_transition(&self, s: usize, a: JointAction) -> JointRow {
        let (ci, cj) = self.space.split(s);
        let mut row = JointRow::default();
        for &(ti, pi) in self.motion(Agent::I, ci, a.a_i) {
            for &(tj, pj) in self.motion(Agent::J, cj, a.a_j) {
                row.add(self.space.join(ti, tj), pi * pj);
            }
        }
        row
    }

    /// Composed transition row `T(s, a, .)` under indicator `x`.
    pub fn transition_row(&self, x: &InteractionIndicator, s: usize, a: JointAction) -> JointRow {
        if x.transition(&self.space.joint_state(s), a) {
            self.interactive_transition(s, a)
        } else {
            self.product_transition(s, a)
        }
    }

    pub fn transition_prob(&self, x: &InteractionIndicator, s: usize, a: JointAction, next: usize) -> f64 {
        let js = self.space.joint_state(s);
        if x.transition(&js, a) {
            self.interactive_transition(s, a).prob(next)
        } else {
            let (ci, cj) = self.space.split(s);
            let (ni, nj) = self.space.split(next);
            let ti = prob_of(self.motion(Agent::I, ci, a.a_i), ni);
            let tj = prob_of(self.motion(Agent::J, cj, a.a_j), nj);
            ti * tj
        }
    }

    pub fn reward_value(&self, x: &InteractionIndicator, s: usize, a: JointAction, agent: Agent) -> f64 {
        if x.reward(&self.space.joint_state(s), a) {
            self.interactive_reward(s, a, agent)
        } else {
            self.own_reward(agent, self.space.own_cell(s, agent), a.of(agent))
        }
    }

    /// Largest absolute composed reward over all (s, a) and either indicator branch.
    pub fn max_abs_reward(&self) -> f64 {
        let single = self.reward.iter().flatten().flatten().fold(0.0_f64, |m, v| m.max(v.abs()));
        let r = &self.rewards;
        let worst_interactive = r.open_gold.abs().max(r.open_wrong.abs()).max(r.step.abs()).max(r.shared_gold.abs())
            + r.collision.abs();
        single.max(worst_interactive)
    }

    /// Whether agent i's own dynamics can carry some initial cell to gold.
    fn gold_reachable(&self) -> bool {
        let mut seen = vec![false; self.space.num_cells()];
        let mut queue: VecDeque<usize> = VecDeque::new();
        for &c in &self.init_i {
            if !seen[c] {
                seen[c] = true;
                queue.push_back(c);
            }
        }
        while let Some(c) = queue.pop_front() {
            if c == self.gold {
                return true;
            }
            for a in Action::ALL {
                for &(next, p) in self.motion(Agent::I, c, a) {
                    if p > 0.0 && !seen[next] {
                        seen[next] = true;
                        queue.push_back(next);
                    }
                }
            }
        }
        false
    }
}

fn prob_of(row: &[(usize, f64)], target: usize) -> f64 {
    row.iter().filter(|e| e.0 == target).map(|e| e.1).sum()
}

fn joint_index(model: &FactoredModel, s: &JointState) -> Result<usize> {
    model
        .space
        .joint_index(s)
        .ok_or_else(|| Error::InvalidArgument(format!("joint state {:?} is not a free-cell pair", s)))
}

/// `T(s, a, s') = [1 - X] t_i t_j + X T_int`.
pub fn compose_transition(
    model: &FactoredModel,
    x: &InteractionIndicator,
    s: &JointState,
    a: JointAction,
    next: &JointState,
) -> Result<f64> {
    let (s, next) = (joint_index(model, s)?, joint_index(model, next)?);
    Ok(model.transition_prob(x, s, a, next))
}

/// `R(s, a) = [1 - X] r(s_self, a_self) + X R_int(s, a)` for `agent`.
pub fn compose_reward(
    model: &FactoredModel,
    x: &InteractionIndicator,
    s: &JointState,
    a: JointAction,
    agent: Agent,
) -> Result<f64> {
    Ok(model.reward_value(x, joint_index(model, s)?, a, agent))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelIssue {
    TransitionRowSum { agent: Agent, cell: Cell, action: &'static str, sum: f64 },
    NegativeTransition { agent: Agent, cell: Cell, action: &'static str },
    InteractiveRowSum { state: JointState, action: [&'static str; 2], sum: f64 },
    ObservationRowSum { cell: Cell, action: &'static str, sum: f64 },
    NegativeObservation { cell: Cell, action: &'static str },
    UnreachableGold,
    IndicatorAsymmetry { transition_radius: Option<usize>, reward_radius: Option<usize> },
}

impl fmt::Display for ModelIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelIssue::TransitionRowSum { agent, cell, action, sum } => {
                write!(f, "transition row of agent {agent:?} at {cell} / {action} sums to {sum}")
            }
            ModelIssue::NegativeTransition { agent, cell, action } => {
                write!(f, "transition row of agent {agent:?} at {cell} / {action} has a negative entry")
            }
            ModelIssue::InteractiveRowSum { state, action, sum } => write!(
                f,
                "interactive row at i={} j={} / {}+{} sums to {sum}",
                state.pos_i, state.pos_j, action[0], action[1]
            ),
            ModelIssue::ObservationRowSum { cell, action, sum } => {
                write!(f, "observation row at {cell} / {action} sums to {sum}")
            }
            ModelIssue::NegativeObservation { cell, action } => {
                write!(f, "observation row at {cell} / {action} has a negative entry")
            }
            ModelIssue::UnreachableGold => write!(f, "gold is unreachable from agent i's initial cells"),
            ModelIssue::IndicatorAsymmetry { transition_radius, reward_radius } => write!(
                f,
                "transition indicator radius {transition_radius:?} differs from reward indicator radius {reward_radius:?}"
            ),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub issues: Vec<ModelIssue>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }
}

pub fn validate_model(model: &FactoredModel) -> ValidationReport {
    let mut issues = Vec::new();
    let space = &model.space;
    for agent in [Agent::I, Agent::J] {
        for c in 0..space.num_cells() {
            for a in Action::ALL {
                let row = model.motion(agent, c, a);
                if row.iter().any(|e| e.1 < 0.0) {
                    issues.push(ModelIssue::NegativeTransition { agent, cell: space.cell(c), action: a.name() });
                }
                let sum: f64 = row.iter().map(|e| e.1).sum();
                if (sum - 1.0).abs() > ROW_TOLERANCE {
                    issues.push(ModelIssue::TransitionRowSum { agent, cell: space.cell(c), action: a.name(), sum });
                }
            }
        }
    }
    let x = model.indicator;
    for s in 0..space.num_states() {
        let js = space.joint_state(s);
        for a in JointAction::all() {
            if !x.transition(&js, a) {
                continue;
            }
            let sum = model.interactive_transition(s, a).total();
            if (sum - 1.0).abs() > ROW_TOLERANCE {
                issues.push(ModelIssue::InteractiveRowSum {
                    state: js,
                    action: [a.a_i.name(), a.a_j.name()],
                    sum,
                });
            }
        }
    }
    for c in 0..space.num_cells() {
        for a in Action::ALL {
            let row = model.observation_row(c, a);
            if row.iter().any(|&p| p < 0.0) {
                issues.push(ModelIssue::NegativeObservation { cell: space.cell(c), action: a.name() });
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_TOLERANCE {
                issues.push(ModelIssue::ObservationRowSum { cell: space.cell(c), action: a.name(), sum });
            }
        }
    }
    if !model.gold_reachable() {
        issues.push(ModelIssue::UnreachableGold);
    }
    if !x.is_symmetric() {
        issues.push(ModelIssue::IndicatorAsymmetry {
            transition_radius: x.transition_radius,
            reward_radius: x.reward_radius,
        });
    }
    ValidationReport { issues }
}
