//! Bayesian filtering of agent i's belief over joint states.
//!
//! Propagation splits each prior state's mass by the transition indicator:
//! the non-interactive part flows through agent j's motion factor and then
//! agent i's, the interactive part through the coupled kernel. Correction
//! multiplies by agent i's observation likelihood and normalizes once.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FactoredModel, InteractionIndicator, Observation};
use crate::nested::MixedStrategy;
use crate::task::{Action, Agent, JointAction};

#[derive(Clone, Debug, PartialEq)]
pub struct Belief {
    probs: Vec<f64>,
}

const NORMALIZATION_TOLERANCE: f64 = 1e-12;

impl Belief {
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        if probs.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::InvalidArgument("belief entries must be nonnegative".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::InvalidArgument(format!("belief sums to {sum}")));
        }
        Ok(Belief { probs })
    }

    pub fn delta(num_states: usize, s: usize) -> Self {
        let mut probs = vec![0.0; num_states];
        probs[s] = 1.0;
        Belief { probs }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn support_size(&self) -> usize {
        self.probs.iter().filter(|p| **p > 0.0).count()
    }

    /// Marginal over one agent's cells.
    pub fn marginal(&self, model: &FactoredModel, agent: Agent) -> Vec<f64> {
        let space = model.space();
        let mut out = vec![0.0; space.num_cells()];
        for (s, p) in self.probs.iter().enumerate() {
            out[space.own_cell(s, agent)] += p;
        }
        out
    }
}

/// Uniform product distribution over the two initial supports.
pub fn initial_belief(model: &FactoredModel) -> Belief {
    let space = model.space();
    let (si, sj) = (model.init_support(Agent::I), model.init_support(Agent::J));
    let w = 1.0 / (si.len() * sj.len()) as f64;
    let mut probs = vec![0.0; space.num_states()];
    for &ci in si {
        for &cj in sj {
            probs[space.join(ci, cj)] = w;
        }
    }
    Belief { probs }
}

/// How `Pr(a_j | s)` enters the propagation.
#[derive(Clone, Copy, Debug)]
pub enum StrategyMode<'a> {
    /// Delta on the `a_j` of the supplied joint action.
    GivenAction,
    /// Sum over `a_j` weighted by the predicted strategy.
    Strategy(&'a MixedStrategy),
}

/// Which of the two modes a filter uses, without borrowing a strategy.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMode {
    #[default]
    GivenAction,
    Strategy,
}

/// What to do when the observation has zero likelihood.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroLikelihoodPolicy {
    #[default]
    Error,
    /// Ignore the observation and keep the normalized predicted mass.
    KeepPredicted,
}

/// Unnormalized predicted mass over successor joint states.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictedMass(pub Vec<f64>);

impl PredictedMass {
    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }
}

pub fn propagate(
    belief: &Belief,
    model: &FactoredModel,
    x: &InteractionIndicator,
    a: JointAction,
    mode: StrategyMode<'_>,
) -> Result<PredictedMass> {
    let space = model.space();
    let ns = space.num_states();
    if belief.len() != ns {
        return Err(Error::ShapeMismatch(format!("belief has {} entries, model has {ns} states", belief.len())));
    }
    if let StrategyMode::Strategy(pi) = mode {
        if pi.num_states() != ns || pi.agent() != Agent::J {
            return Err(Error::ShapeMismatch("strategy does not match the model's agent j".into()));
        }
    }
    let f = space.num_cells();
    // mass after agent j's factor, indexed (ci, cj')
    let mut after_j = vec![0.0; f * f];
    let mut out = vec![0.0; ns];

    for (s, &b) in belief.as_slice().iter().enumerate() {
        if b == 0.0 {
            continue;
        }
        let js = space.joint_state(s);
        let (ci, cj) = space.split(s);
        let mut spread = |a_j: Action, w: f64| {
            let joint = JointAction::new(a.a_i, a_j);
            let mass = b * w;
            if x.transition(&js, joint) {
                for &(next, p) in model.interactive_transition(s, joint).entries() {
                    out[next] += p * mass;
                }
            } else {
                for &(cj_next, p) in model.motion(Agent::J, cj, a_j) {
                    after_j[ci * f + cj_next] += p * mass;
                }
            }
        };
        match mode {
            StrategyMode::GivenAction => spread(a.a_j, 1.0),
            StrategyMode::Strategy(pi) => {
                for a_j in Action::ALL {
                    let w = pi.prob(s, a_j);
                    if w > 0.0 {
                        spread(a_j, w);
                    }
                }
            }
        }
    }

    for ci in 0..f {
        let row = model.motion(Agent::I, ci, a.a_i);
        for cj_next in 0..f {
            let m = after_j[ci * f + cj_next];
            if m == 0.0 {
                continue;
            }
            for &(ci_next, p) in row {
                out[space.join(ci_next, cj_next)] += p * m;
            }
        }
    }
    Ok(PredictedMass(out))
}

pub fn correct(predicted: &PredictedMass, model: &FactoredModel, a_i: Action, o: Observation) -> Result<Belief> {
    let space = model.space();
    if predicted.0.len() != space.num_states() {
        return Err(Error::ShapeMismatch("predicted mass does not match the model".into()));
    }
    if predicted.0.iter().any(|p| !(*p >= 0.0)) {
        return Err(Error::InvalidArgument("predicted mass must be nonnegative".into()));
    }
    let mut probs: Vec<f64> = predicted
        .0
        .iter()
        .enumerate()
        .map(|(s, &m)| m * model.observation_prob(space.own_cell(s, Agent::I), a_i, o))
        .collect();
    let z: f64 = probs.iter().sum();
    if !(z > 0.0) {
        return Err(Error::ZeroLikelihood);
    }
    probs.iter_mut().for_each(|p| *p /= z);
    Ok(Belief { probs })
}

fn normalize_predicted(predicted: PredictedMass) -> Result<Belief> {
    let z = predicted.total();
    if !(z > 0.0) {
        return Err(Error::ZeroLikelihood);
    }
    Ok(Belief { probs: predicted.0.into_iter().map(|p| p / z).collect() })
}

pub fn update(
    belief: &Belief,
    model: &FactoredModel,
    x: &InteractionIndicator,
    a: JointAction,
    o: Observation,
    mode: StrategyMode<'_>,
) -> Result<Belief> {
    let predicted = propagate(belief, model, x, a, mode)?;
    correct(&predicted, model, a.a_i, o)
}

/// [`update`] with an explicit zero-likelihood fallback.
pub fn update_with_policy(
    belief: &Belief,
    model: &FactoredModel,
    x: &InteractionIndicator,
    a: JointAction,
    o: Observation,
    mode: StrategyMode<'_>,
    on_zero: ZeroLikelihoodPolicy,
) -> Result<Belief> {
    let predicted = propagate(belief, model, x, a, mode)?;
    match correct(&predicted, model, a.a_i, o) {
        Err(Error::ZeroLikelihood) if on_zero == ZeroLikelihoodPolicy::KeepPredicted => {
            normalize_predicted(predicted)
        }
        other => other,
    }
}
