//! Nested MDP solver: the level-0 uniform strategy, value iteration over
//! the factored model, softmax policy mapping and the level mixture.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{build_model, FactoredModel, InteractionIndicator};
use crate::task::{Action, Agent, JointAction, TaskParameter, NUM_ACTIONS, NUM_JOINT_ACTIONS};

/// Per-state distribution over one agent's actions, laid out `[s * 6 + a]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MixedStrategy {
    agent: Agent,
    probs: Vec<f64>,
}

impl MixedStrategy {
    pub fn uniform(agent: Agent, num_states: usize) -> Self {
        MixedStrategy { agent, probs: vec![1.0 / NUM_ACTIONS as f64; num_states * NUM_ACTIONS] }
    }

    /// Builds a strategy from a flat table, checking every row is a distribution.
    pub fn from_probs(agent: Agent, probs: Vec<f64>) -> Result<Self> {
        if !probs.len().is_multiple_of(NUM_ACTIONS) {
            return Err(Error::ShapeMismatch(format!(
                "strategy table length {} is not a multiple of {NUM_ACTIONS}",
                probs.len()
            )));
        }
        for (s, row) in probs.chunks(NUM_ACTIONS).enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!("strategy row {s} is not a distribution")));
            }
        }
        Ok(MixedStrategy { agent, probs })
    }

    /// Deterministic strategy that plays `action` everywhere.
    pub fn pure(agent: Agent, num_states: usize, action: Action) -> Self {
        let mut probs = vec![0.0; num_states * NUM_ACTIONS];
        for s in 0..num_states {
            probs[s * NUM_ACTIONS + action.index()] = 1.0;
        }
        MixedStrategy { agent, probs }
    }

    pub fn agent(&self) -> Agent {
        self.agent
    }

    pub fn num_states(&self) -> usize {
        self.probs.len() / NUM_ACTIONS
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * NUM_ACTIONS..(s + 1) * NUM_ACTIONS]
    }

    pub fn prob(&self, s: usize, a: Action) -> f64 {
        self.probs[s * NUM_ACTIONS + a.index()]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    /// Same table attributed to the other agent.
    pub fn relabeled(&self, agent: Agent) -> Self {
        MixedStrategy { agent, probs: self.probs.clone() }
    }
}

/// Joint-action values laid out `[s * 36 + a_i * 6 + a_j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct QFunction {
    agent: Agent,
    horizon: usize,
    values: Vec<f64>,
}

impl QFunction {
    pub fn agent(&self) -> Agent {
        self.agent
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_states(&self) -> usize {
        self.values.len() / NUM_JOINT_ACTIONS
    }

    pub fn get(&self, s: usize, a: JointAction) -> f64 {
        self.values[s * NUM_JOINT_ACTIONS + a.index()]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * NUM_JOINT_ACTIONS..(s + 1) * NUM_JOINT_ACTIONS]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// `Q(s, a_self) = sum_{a_opp} pi_opp(s, a_opp) Q(s, a)`.
    pub fn marginal(&self, s: usize, opponent: &MixedStrategy) -> [f64; NUM_ACTIONS] {
        marginalize(self.agent, self.row(s), opponent.row(s))
    }
}

fn marginalize(agent: Agent, q_row: &[f64], opp_row: &[f64]) -> [f64; NUM_ACTIONS] {
    let mut out = [0.0; NUM_ACTIONS];
    for (own, slot) in out.iter_mut().enumerate() {
        *slot = opp_row
            .iter()
            .enumerate()
            .map(|(other, &p)| {
                let a = match agent {
                    Agent::I => own * NUM_ACTIONS + other,
                    Agent::J => other * NUM_ACTIONS + own,
                };
                p * q_row[a]
            })
            .sum();
    }
    out
}

/// State utilities `U^k(s)`.
#[derive(Clone, Debug, PartialEq)]
pub struct UtilityTable {
    pub values: Vec<f64>,
}

impl UtilityTable {
    pub fn zeros(num_states: usize) -> Self {
        UtilityTable { values: vec![0.0; num_states] }
    }

    /// Sup-norm distance to another table.
    pub fn max_diff(&self, other: &UtilityTable) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NestedSpec {
    pub top_level: usize,
    /// `Pr(l)` for `l = 0..=top_level`.
    pub level_dist: Vec<f64>,
    pub horizon: usize,
    pub temperature: f64,
}

impl NestedSpec {
    /// One reasoning level, equal weight on levels 0 and 1, `K = 2N`, temperature 1.
    pub fn for_grid(n: usize) -> Self {
        NestedSpec { top_level: 1, level_dist: vec![0.5, 0.5], horizon: 2 * n, temperature: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidHorizon(0));
        }
        if self.level_dist.len() != self.top_level + 1 {
            return Err(Error::InvalidArgument(format!(
                "level distribution has {} entries, expected {}",
                self.level_dist.len(),
                self.top_level + 1
            )));
        }
        let sum: f64 = self.level_dist.iter().sum();
        if self.level_dist.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument("level distribution must sum to 1".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::InvalidArgument("softmax temperature must be positive".into()));
        }
        Ok(())
    }
}

pub fn level0_strategy(model: &FactoredModel, agent: Agent) -> MixedStrategy {
    MixedStrategy::uniform(agent, model.num_states())
}

/// Stepwise value iteration for one agent against a fixed opponent strategy.
pub struct ValueIterator<'a> {
    model: &'a FactoredModel,
    me: Agent,
    opponent: &'a MixedStrategy,
    reward: Vec<f64>,
    interactive: Vec<bool>,
    utility: UtilityTable,
    q: Vec<f64>,
    k: usize,
    // scratch for the opponent-first half of the non-interactive update
    partial: Vec<f64>,
}

impl<'a> ValueIterator<'a> {
    pub fn new(
        model: &'a FactoredModel,
        x: &InteractionIndicator,
        me: Agent,
        opponent: &'a MixedStrategy,
    ) -> Result<Self> {
        let ns = model.num_states();
        if opponent.agent() != me.other() {
            return Err(Error::ShapeMismatch(format!(
                "opponent strategy belongs to agent {:?}, expected {:?}",
                opponent.agent(),
                me.other()
            )));
        }
        if opponent.num_states() != ns {
            return Err(Error::ShapeMismatch(format!(
                "opponent strategy covers {} states, model has {ns}",
                opponent.num_states()
            )));
        }
        let space = model.space();
        let mut reward = vec![0.0; ns * NUM_JOINT_ACTIONS];
        let mut interactive = vec![false; ns * NUM_JOINT_ACTIONS];
        for s in 0..ns {
            let js = space.joint_state(s);
            for a in JointAction::all() {
                let k = s * NUM_JOINT_ACTIONS + a.index();
                reward[k] = model.reward_value(x, s, a, me);
                interactive[k] = x.transition(&js, a);
            }
        }
        let f = space.num_cells();
        Ok(ValueIterator {
            model,
            me,
            opponent,
            reward,
            interactive,
            utility: UtilityTable::zeros(ns),
            q: vec![0.0; ns * NUM_JOINT_ACTIONS],
            k: 0,
            partial: vec![0.0; f * f * NUM_ACTIONS],
        })
    }

    pub fn iteration(&self) -> usize {
        self.k
    }

    pub fn utility(&self) -> &UtilityTable {
        &self.utility
    }

    /// One recursion: `Q^{k+1}` from `U^k`, then `U^{k+1}`.
    pub fn step(&mut self) {
        let model = self.model;
        let space = model.space();
        let f = space.num_cells();
        let gamma = model.gamma();
        let u = &self.utility.values;

        // First half of the non-interactive expectation: agent j's factor.
        // partial[(ci' * F + cj) * 6 + a_j] = sum_{cj'} t_j(cj, a_j, cj') U(ci', cj')
        for ci_next in 0..f {
            for cj in 0..f {
                for a_j in Action::ALL {
                    let v: f64 = model
                        .motion(Agent::J, cj, a_j)
                        .iter()
                        .map(|&(cj_next, p)| p * u[space.join(ci_next, cj_next)])
                        .sum();
                    self.partial[(ci_next * f + cj) * NUM_ACTIONS + a_j.index()] = v;
                }
            }
        }

        for s in 0..space.num_states() {
            let (ci, cj) = space.split(s);
            for a in JointAction::all() {
                let k = s * NUM_JOINT_ACTIONS + a.index();
                let future = if self.interactive[k] {
                    model
                        .interactive_transition(s, a)
                        .entries()
                        .iter()
                        .map(|&(next, p)| p * u[next])
                        .sum::<f64>()
                } else {
                    model
                        .motion(Agent::I, ci, a.a_i)
                        .iter()
                        .map(|&(ci_next, p)| p * self.partial[(ci_next * f + cj) * NUM_ACTIONS + a.a_j.index()])
                        .sum::<f64>()
                };
                self.q[k] = self.reward[k] + gamma * future;
            }
        }

        let mut next_u = vec![0.0; space.num_states()];
        for (s, slot) in next_u.iter_mut().enumerate() {
            let q_row = &self.q[s * NUM_JOINT_ACTIONS..(s + 1) * NUM_JOINT_ACTIONS];
            let m = marginalize(self.me, q_row, self.opponent.row(s));
            *slot = m.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        }
        self.utility = UtilityTable { values: next_u };
        self.k += 1;
    }

    pub fn q_function(&self) -> QFunction {
        QFunction { agent: self.me, horizon: self.k, values: self.q.clone() }
    }

    pub fn into_parts(self) -> (QFunction, UtilityTable) {
        (QFunction { agent: self.me, horizon: self.k, values: self.q }, self.utility)
    }
}

/// Runs `horizon` recursions from `U^0 = 0` and returns `(Q^K, U^K)`.
pub fn value_iteration(
    model: &FactoredModel,
    x: &InteractionIndicator,
    me: Agent,
    opponent: &MixedStrategy,
    horizon: usize,
) -> Result<(QFunction, UtilityTable)> {
    if horizon == 0 {
        return Err(Error::InvalidHorizon(horizon));
    }
    let mut vi = ValueIterator::new(model, x, me, opponent)?;
    for _ in 0..horizon {
        vi.step();
    }
    Ok(vi.into_parts())
}

/// Utility tables `U^0 ..= U^K`.
pub fn utility_trace(
    model: &FactoredModel,
    x: &InteractionIndicator,
    me: Agent,
    opponent: &MixedStrategy,
    horizon: usize,
) -> Result<Vec<UtilityTable>> {
    let mut vi = ValueIterator::new(model, x, me, opponent)?;
    let mut trace = vec![vi.utility().clone()];
    for _ in 0..horizon {
        vi.step();
        trace.push(vi.utility().clone());
    }
    Ok(trace)
}

/// Marginalizes `q` over the opponent and applies a per-state softmax.
pub fn softmax_policy(q: &QFunction, opponent: &MixedStrategy, temperature: f64) -> Result<MixedStrategy> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidArgument("softmax temperature must be positive".into()));
    }
    if opponent.num_states() != q.num_states() {
        return Err(Error::ShapeMismatch("strategy and Q cover different state counts".into()));
    }
    let mut probs = Vec::with_capacity(q.num_states() * NUM_ACTIONS);
    for s in 0..q.num_states() {
        probs.extend(softmax(&q.marginal(s, opponent), temperature));
    }
    Ok(MixedStrategy { agent: q.agent(), probs })
}

pub(crate) fn softmax(values: &[f64; NUM_ACTIONS], temperature: f64) -> [f64; NUM_ACTIONS] {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w = values.map(|v| ((v - max) / temperature).exp());
    let z: f64 = w.iter().sum();
    w.map(|v| v / z)
}

/// Policy of `agent` reasoning at `level`, each level responding to the
/// other agent's policy one level below.
fn level_policy(
    model: &FactoredModel,
    x: &InteractionIndicator,
    spec: &NestedSpec,
    agent: Agent,
    level: usize,
) -> Result<MixedStrategy> {
    if level == 0 {
        return Ok(level0_strategy(model, agent));
    }
    let opponent = level_policy(model, x, spec, agent.other(), level - 1)?;
    let (q, _) = value_iteration(model, x, agent, &opponent, spec.horizon)?;
    softmax_policy(&q, &opponent, spec.temperature)
}

/// `pi_j^{l'}` for each level `l = 0..=top_level`.
pub fn level_policies(model: &FactoredModel, x: &InteractionIndicator, spec: &NestedSpec) -> Result<Vec<MixedStrategy>> {
    spec.validate()?;
    (0..=spec.top_level).map(|l| level_policy(model, x, spec, Agent::J, l)).collect()
}

/// `pi_hat_j(s, a_j) = sum_l Pr(l) pi_j^l(s, a_j)`.
pub fn nested_strategy(model: &FactoredModel, x: &InteractionIndicator, spec: &NestedSpec) -> Result<MixedStrategy> {
    let levels = level_policies(model, x, spec)?;
    let mut probs = vec![0.0; model.num_states() * NUM_ACTIONS];
    for (w, pi) in spec.level_dist.iter().zip(&levels) {
        if *w == 0.0 {
            continue;
        }
        for (acc, p) in probs.iter_mut().zip(pi.as_slice()) {
            *acc += w * p;
        }
    }
    Ok(MixedStrategy { agent: Agent::J, probs })
}

/// Builds the task's model and solves for `pi_hat_j` under the task's indicator.
pub fn solve_nested(task: &TaskParameter, spec: &NestedSpec) -> Result<MixedStrategy> {
    let model = build_model(task)?;
    nested_strategy(&model, &model.indicator(), spec)
}
