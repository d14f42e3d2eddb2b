//! Tiger-grid task generation and ground-truth episode simulation.

use rand::seq::index::sample;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::maqmdp::sample_index;
use crate::model::{FactoredModel, InteractionIndicator, Observation};
use crate::rng::{derive_seed, SimRng};
use crate::task::{Action, Agent, Cell, JointAction, TaskParameter};

pub const MAX_REJECTIONS: usize = 1000;
pub const MAX_OBSTACLE_DENSITY: f64 = 0.35;

/// A generated task plus the metadata that produced it.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridSpec {
    #[serde(skip)]
    pub task: TaskParameter,
    pub seed: u64,
    pub obstacle_density: f64,
}

pub fn generate(
    seed: u64,
    n: usize,
    count: usize,
    obstacle_density: f64,
    belief_support_size: usize,
) -> Result<Vec<GridSpec>> {
    if n < 3 {
        return Err(Error::InvalidArgument(format!("grid size must be at least 3, got {n}")));
    }
    if !(0.0..=MAX_OBSTACLE_DENSITY).contains(&obstacle_density) {
        return Err(Error::InvalidArgument(format!(
            "obstacle density must lie in [0, {MAX_OBSTACLE_DENSITY}], got {obstacle_density}"
        )));
    }
    if belief_support_size == 0 {
        return Err(Error::InvalidArgument("belief support size must be positive".into()));
    }
    (0..count as u64)
        .map(|idx| {
            let spec_seed = derive_seed(seed, &[idx]);
            let mut rng = <SimRng as rand::SeedableRng>::seed_from_u64(spec_seed);
            let task = sample_task(&mut rng, n, obstacle_density, belief_support_size)?;
            Ok(GridSpec { task, seed: spec_seed, obstacle_density })
        })
        .collect()
}

fn sample_task(rng: &mut SimRng, n: usize, density: f64, support: usize) -> Result<TaskParameter> {
    let num_obstacles = (density * (n * n) as f64).round() as usize;
    for _ in 0..MAX_REJECTIONS {
        let mut task = TaskParameter::new(n, Cell::new(0, 0), Vec::new(), Vec::new());
        for k in sample(rng, n * n, num_obstacles) {
            task.obstacles[k] = true;
        }
        let free = task.free_cells();
        if free.len() < support + 1 {
            continue;
        }
        let gold = free[rng.gen_range(0..free.len())];
        let candidates: Vec<Cell> = free.into_iter().filter(|&c| c != gold).collect();
        let pick = |rng: &mut SimRng| {
            let mut cells: Vec<Cell> = sample(rng, candidates.len(), support).into_iter().map(|k| candidates[k]).collect();
            cells.sort();
            cells
        };
        task.gold = gold;
        task.init_i = pick(rng);
        task.init_j = pick(rng);
        let reach = task.reachable_from(gold);
        let connected = task.init_i.iter().chain(&task.init_j).all(|c| reach[c.row * n + c.col]);
        if connected {
            return Ok(task);
        }
    }
    Err(Error::GenerationExhausted { attempts: MAX_REJECTIONS })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeState {
    /// True joint state index.
    pub state: usize,
    pub t: usize,
    /// Discounted returns of agents i and j.
    pub returns: [f64; 2],
    pub done: bool,
    pub success: bool,
}

impl EpisodeState {
    pub fn start(state: usize) -> Self {
        EpisodeState { state, t: 0, returns: [0.0; 2], done: false, success: false }
    }
}

pub fn default_max_steps(n: usize) -> usize {
    4 * n
}

/// Samples dynamics from the composed model under the task's indicator.
#[derive(Clone, Copy, Debug)]
pub struct Simulator<'a> {
    pub model: &'a FactoredModel,
    pub indicator: InteractionIndicator,
    pub max_steps: usize,
}

impl<'a> Simulator<'a> {
    pub fn new(model: &'a FactoredModel, max_steps: usize) -> Self {
        Simulator { model, indicator: model.indicator(), max_steps }
    }

    /// Draws the true start state from the product of the two initial supports.
    pub fn initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> EpisodeState {
        let si = self.model.init_support(Agent::I);
        let sj = self.model.init_support(Agent::J);
        let ci = si[rng.gen_range(0..si.len())];
        let cj = sj[rng.gen_range(0..sj.len())];
        EpisodeState::start(self.model.space().join(ci, cj))
    }

    pub fn step<R: Rng + ?Sized>(&self, es: &EpisodeState, a: JointAction, rng: &mut R) -> Result<EpisodeState> {
        if es.done {
            return Err(Error::StepAfterDone);
        }
        let model = self.model;
        let s = es.state;
        let row = model.transition_row(&self.indicator, s, a);
        let probs: Vec<f64> = row.entries().iter().map(|e| e.1).collect();
        let next = row.entries()[sample_index(&probs, rng)].0;

        let discount = model.gamma().powi(es.t as i32);
        let mut returns = es.returns;
        returns[0] += discount * model.reward_value(&self.indicator, s, a, Agent::I);
        returns[1] += discount * model.reward_value(&self.indicator, s, a, Agent::J);

        let opened = a.a_i == Action::Open;
        let at_gold = model.space().own_cell(s, Agent::I) == model.gold_cell();
        let t = es.t + 1;
        Ok(EpisodeState {
            state: next,
            t,
            returns,
            done: opened || t >= self.max_steps,
            success: opened && at_gold,
        })
    }
}

/// Samples agent i's observation after landing in `next` having played `a_i`.
pub fn observe<R: Rng + ?Sized>(model: &FactoredModel, next: usize, a_i: Action, rng: &mut R) -> Observation {
    let cell = model.space().own_cell(next, Agent::I);
    let truth = model.true_observation(cell).bits();
    let noise = model.observation_noise(a_i);
    let bits = truth.map(|b| if rng.gen::<f64>() < noise { !b } else { b });
    Observation::from_bits(bits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, JointState};
    use crate::rng::stream;

    #[test]
    fn generation_is_deterministic() {
        let a = generate(7, 6, 10, 0.25, 3).unwrap();
        let b = generate(7, 6, 10, 0.25, 3).unwrap();
        assert_eq!(a, b);
        let c = generate(8, 6, 10, 0.25, 3).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_density_has_no_obstacles() {
        for spec in generate(3, 5, 20, 0.0, 2).unwrap() {
            assert!(spec.task.obstacles.iter().all(|o| !o));
        }
    }

    #[test]
    fn generated_tasks_are_connected_and_valid() {
        let specs = generate(11, 6, 100, 0.25, 3).unwrap();
        assert_eq!(specs.len(), 100);
        for spec in &specs {
            let t = &spec.task;
            t.validate().unwrap();
            assert_eq!(t.obstacles.iter().filter(|o| **o).count(), 9);
            let reach = t.reachable_from(t.gold);
            for c in t.init_i.iter().chain(&t.init_j) {
                assert!(reach[c.row * t.n + c.col]);
            }
            build_model(t).unwrap();
        }
    }

    #[test]
    fn argument_checks() {
        assert!(generate(1, 2, 1, 0.0, 1).is_err());
        assert!(generate(1, 5, 1, 0.5, 1).is_err());
        assert!(generate(1, 5, 1, 0.1, 0).is_err());
        // 3x3 at max density leaves 6 free cells: too few for two supports of 6 plus gold
        assert!(matches!(generate(1, 3, 1, 0.35, 6), Err(Error::GenerationExhausted { .. })));
    }

    fn deterministic_task() -> TaskParameter {
        let mut t = TaskParameter::new(4, Cell::new(3, 3), vec![Cell::new(0, 0)], vec![Cell::new(3, 0)]);
        t.move_success_prob = 1.0;
        t.obs_noise_move = 0.0;
        t.obs_noise_listen = 0.0;
        t
    }

    #[test]
    fn east_shifts_one_column() {
        let task = deterministic_task();
        let m = build_model(&task).unwrap();
        let sim = Simulator::new(&m, 16);
        let sp = m.space();
        let s = sp.joint_index(&JointState::new(Cell::new(0, 0), Cell::new(3, 0))).unwrap();
        let mut rng = stream(1, &[]);
        let next = sim.step(&EpisodeState::start(s), JointAction::new(Action::East, Action::Listen), &mut rng).unwrap();
        assert_eq!(sp.joint_state(next.state), JointState::new(Cell::new(0, 1), Cell::new(3, 0)));
        assert!(!next.done);
        assert_eq!(next.t, 1);
    }

    #[test]
    fn open_at_gold_terminates_with_discounted_reward() {
        let task = deterministic_task();
        let m = build_model(&task).unwrap();
        let sim = Simulator::new(&m, 16);
        let s = m.space().joint_index(&JointState::new(Cell::new(3, 3), Cell::new(0, 0))).unwrap();
        let mut es = EpisodeState::start(s);
        es.t = 3;
        let mut rng = stream(1, &[]);
        let next = sim.step(&es, JointAction::new(Action::Open, Action::Listen), &mut rng).unwrap();
        assert!(next.done && next.success);
        assert!((next.returns[0] - 0.95f64.powi(3) * 10.0).abs() < 1e-12);
        assert!(matches!(
            sim.step(&next, JointAction::new(Action::Listen, Action::Listen), &mut rng),
            Err(Error::StepAfterDone)
        ));
    }

    #[test]
    fn episodes_end_by_max_steps() {
        let task = deterministic_task();
        let m = build_model(&task).unwrap();
        let sim = Simulator::new(&m, 5);
        let mut rng = stream(2, &[]);
        let mut es = sim.initial_state(&mut rng);
        let mut steps = 0;
        while !es.done {
            es = sim.step(&es, JointAction::new(Action::Listen, Action::North), &mut rng).unwrap();
            steps += 1;
        }
        assert_eq!(steps, 5);
    }

    #[test]
    fn noiseless_observation_bits() {
        let task = deterministic_task();
        let m = build_model(&task).unwrap();
        let mut rng = stream(3, &[]);
        let s = m.space().joint_index(&JointState::new(Cell::new(0, 0), Cell::new(3, 0))).unwrap();
        let o = observe(&m, s, Action::North, &mut rng);
        assert_eq!(o.bits(), [true, false, false, true, false]);
        let g = m.space().joint_index(&JointState::new(Cell::new(3, 3), Cell::new(3, 0))).unwrap();
        assert!(observe(&m, g, Action::Listen, &mut rng).bits()[4]);
    }

    #[test]
    fn same_seed_same_trajectory() {
        let task = TaskParameter::new(4, Cell::new(3, 3), vec![Cell::new(0, 0), Cell::new(1, 1)], vec![Cell::new(3, 0)]);
        let m = build_model(&task).unwrap();
        let sim = Simulator::new(&m, 16);
        let actions: Vec<JointAction> =
            (0..16).map(|k| JointAction::from_index((k * 7) % 36).unwrap()).collect();
        let run = |seed| {
            let mut rng = stream(seed, &[]);
            let mut es = sim.initial_state(&mut rng);
            let mut trace = vec![];
            for &a in &actions {
                if es.done {
                    break;
                }
                es = sim.step(&es, a, &mut rng).unwrap();
                trace.push((es.state, observe(&m, es.state, a.a_i, &mut rng)));
            }
            (trace, es.returns)
        };
        assert_eq!(run(5), run(5));
    }
}
