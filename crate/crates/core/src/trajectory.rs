//! Expert demonstrations and policy evaluation.

use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::belief::{initial_belief, update_with_policy, Belief, FilterMode, StrategyMode, ZeroLikelihoodPolicy};
use crate::env::{default_max_steps, observe, Simulator};
use crate::error::{Error, Result};
use crate::maqmdp::{action_values, argmax, plan, sample_index, select_action_with, ActionValues, SelectionMode};
use crate::model::{build_model, FactoredModel, InteractionIndicator};
use crate::nested::{nested_strategy, MixedStrategy, NestedSpec, QFunction};
use crate::rng::{derive_seed, SimRng};
use crate::task::{Action, JointAction, TaskParameter, NUM_ACTIONS};

/// A solved task: the model, agent j's nested strategy and agent i's Q table.
#[derive(Clone, Debug)]
pub struct Expert {
    pub task: TaskParameter,
    pub model: FactoredModel,
    pub indicator: InteractionIndicator,
    pub spec: NestedSpec,
    pub pi_j: MixedStrategy,
    pub q_i: QFunction,
}

impl Expert {
    pub fn solve(task: &TaskParameter, spec: &NestedSpec) -> Result<Self> {
        let model = build_model(task)?;
        let indicator = model.indicator();
        let pi_j = nested_strategy(&model, &indicator, spec)?;
        let q_i = plan(&model, &indicator, &pi_j, spec.horizon)?;
        Ok(Expert { task: task.clone(), model, indicator, spec: spec.clone(), pi_j, q_i })
    }

    pub fn solve_default(task: &TaskParameter) -> Result<Self> {
        Self::solve(task, &NestedSpec::for_grid(task.n))
    }

    pub fn action_values(&self, belief: &Belief) -> ActionValues {
        action_values(&self.q_i, belief, &self.pi_j).expect("expert tables share the model's shape")
    }

    /// Argmax of the belief-weighted values, ties to the lowest action id.
    pub fn act(&self, belief: &Belief) -> Action {
        Action::from_index(argmax(&self.action_values(belief).0)).unwrap()
    }
}

/// Solves every task in parallel with `spec_for(task)`.
pub fn solve_tasks<F>(tasks: &[TaskParameter], spec_for: F) -> Result<Vec<Expert>>
where
    F: Fn(&TaskParameter) -> NestedSpec + Sync,
{
    tasks.par_iter().map(|t| Expert::solve(t, &spec_for(t))).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyKind {
    Expert,
    Random,
    Softmax { temperature: f64 },
}

impl PolicyKind {
    fn choose(&self, expert: &Expert, belief: &Belief, expert_action: Action, rng: &mut SimRng) -> Action {
        match *self {
            PolicyKind::Expert => expert_action,
            PolicyKind::Random => Action::ALL[rng.gen_range(0..NUM_ACTIONS)],
            PolicyKind::Softmax { temperature } => {
                select_action_with(&expert.action_values(belief), SelectionMode::Softmax { temperature }, rng)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    /// Defaults to `4N` when `None`.
    pub max_steps: Option<usize>,
    pub filter_mode: FilterMode,
    pub on_zero_likelihood: ZeroLikelihoodPolicy,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            max_steps: None,
            filter_mode: FilterMode::GivenAction,
            on_zero_likelihood: ZeroLikelihoodPolicy::Error,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    pub a_i: Action,
    pub a_j: Action,
    pub o_i: u8,
    /// The expert's choice after filtering this step's joint action and observation.
    pub expert_next_a_i: Action,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub task_id: usize,
    /// Agent i's action taken on the initial belief.
    pub first_action: Action,
    pub steps: Vec<StepRecord>,
    pub success: bool,
    pub discounted_return: f64,
    pub discounted_return_j: f64,
    /// How many of agent i's actions matched the expert's choice on the same belief.
    pub expert_agreement: usize,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Runs one episode: agent i acts with `policy` on its filtered belief,
/// agent j samples from `strategy_j` at the true state.
pub fn simulate_episode(
    task_id: usize,
    expert: &Expert,
    policy: &PolicyKind,
    strategy_j: &MixedStrategy,
    seed: u64,
    config: &EpisodeConfig,
) -> Result<TrajectoryRecord> {
    let model = &expert.model;
    let x = expert.indicator;
    let max_steps = config.max_steps.unwrap_or_else(|| default_max_steps(expert.task.n));
    if max_steps == 0 {
        return Err(Error::InvalidArgument("max_steps must be positive".into()));
    }
    let sim = Simulator { model, indicator: x, max_steps };
    let mode = match config.filter_mode {
        FilterMode::GivenAction => StrategyMode::GivenAction,
        FilterMode::Strategy => StrategyMode::Strategy(&expert.pi_j),
    };

    let mut rng = SimRng::seed_from_u64(seed);
    let mut es = sim.initial_state(&mut rng);
    let mut belief = initial_belief(model);
    let expert_first = expert.act(&belief);
    let mut a_i = policy.choose(expert, &belief, expert_first, &mut rng);
    let first_action = a_i;
    let mut agreement = (a_i == expert_first) as usize;
    let mut steps = Vec::new();

    loop {
        let a_j = Action::ALL[sample_index(strategy_j.row(es.state), &mut rng)];
        let a = JointAction::new(a_i, a_j);
        es = sim.step(&es, a, &mut rng)?;
        let o = observe(model, es.state, a_i, &mut rng);
        belief = update_with_policy(&belief, model, &x, a, o, mode, config.on_zero_likelihood)?;
        let expert_next = expert.act(&belief);
        steps.push(StepRecord { a_i, a_j, o_i: o.code(), expert_next_a_i: expert_next });
        if es.done {
            break;
        }
        a_i = policy.choose(expert, &belief, expert_next, &mut rng);
        agreement += (a_i == expert_next) as usize;
    }

    Ok(TrajectoryRecord {
        task_id,
        first_action,
        steps,
        success: es.success,
        discounted_return: es.returns[0],
        discounted_return_j: es.returns[1],
        expert_agreement: agreement,
    })
}

/// Runs `episodes` seeded episodes per expert in parallel; output order is
/// task-major and independent of scheduling.
pub fn run_episodes(
    experts: &[Expert],
    policy: &PolicyKind,
    episodes: usize,
    seed: u64,
    config: &EpisodeConfig,
) -> Result<Vec<TrajectoryRecord>> {
    let jobs: Vec<(usize, usize)> = (0..experts.len()).flat_map(|t| (0..episodes).map(move |e| (t, e))).collect();
    jobs.par_iter()
        .map(|&(t, e)| {
            let expert = &experts[t];
            let episode_seed = derive_seed(seed, &[t as u64, e as u64]);
            simulate_episode(t, expert, policy, &expert.pi_j, episode_seed, config)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task_id: usize,
    pub episodes: usize,
    pub success_rate: f64,
    pub mean_return: f64,
    pub mean_length: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub episodes: usize,
    pub success_rate: f64,
    pub success_rate_se: f64,
    pub mean_return: f64,
    pub return_se: f64,
    pub mean_length: f64,
    pub action_accuracy: Option<f64>,
    pub per_task: Vec<TaskMetrics>,
}

/// Mean and standard error of the mean.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn summarize(records: &[TrajectoryRecord], num_tasks: usize) -> Result<Metrics> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no episodes to summarize".into()));
    }
    let returns: Vec<f64> = records.iter().map(|r| r.discounted_return).collect();
    let successes: Vec<f64> = records.iter().map(|r| r.success as u8 as f64).collect();
    let (mean_return, return_se) = mean_se(&returns);
    let (success_rate, success_rate_se) = mean_se(&successes);
    let mean_length = records.iter().map(|r| r.len() as f64).sum::<f64>() / records.len() as f64;
    let decisions: usize = records.iter().map(|r| r.len()).sum();
    let agreed: usize = records.iter().map(|r| r.expert_agreement).sum();

    let per_task = (0..num_tasks)
        .filter_map(|t| {
            let rs: Vec<&TrajectoryRecord> = records.iter().filter(|r| r.task_id == t).collect();
            if rs.is_empty() {
                return None;
            }
            let k = rs.len() as f64;
            Some(TaskMetrics {
                task_id: t,
                episodes: rs.len(),
                success_rate: rs.iter().filter(|r| r.success).count() as f64 / k,
                mean_return: rs.iter().map(|r| r.discounted_return).sum::<f64>() / k,
                mean_length: rs.iter().map(|r| r.len() as f64).sum::<f64>() / k,
            })
        })
        .collect();

    Ok(Metrics {
        episodes: records.len(),
        success_rate,
        success_rate_se,
        mean_return,
        return_se,
        mean_length,
        action_accuracy: Some(agreed as f64 / decisions as f64),
        per_task,
    })
}

/// Success rate, discounted return (mean and standard error), length and
/// agreement with the expert over `episodes` seeded episodes per task.
pub fn evaluate_policy(
    experts: &[Expert],
    policy: &PolicyKind,
    episodes: usize,
    seed: u64,
    config: &EpisodeConfig,
) -> Result<Metrics> {
    if episodes == 0 {
        return Err(Error::InvalidArgument("episodes must be positive".into()));
    }
    if experts.is_empty() {
        return Err(Error::InvalidArgument("no tasks to evaluate".into()));
    }
    let records = run_episodes(experts, policy, episodes, seed, config)?;
    summarize(&records, experts.len())
}
