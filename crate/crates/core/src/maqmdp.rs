//! Agent i's top-level planner. The Q table is solved once per task against
//! the nested strategy of agent j; each step only reweights it by the
//! current belief.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::belief::Belief;
use crate::error::{Error, Result};
use crate::model::{FactoredModel, InteractionIndicator};
use crate::nested::{softmax, value_iteration, MixedStrategy, QFunction};
use crate::task::{Action, Agent, NUM_ACTIONS};

/// `q_i(a_i)` for each of agent i's actions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActionValues(pub [f64; NUM_ACTIONS]);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SelectionMode {
    Argmax,
    Softmax { temperature: f64 },
}

/// `Q_i^K` against `pi_hat_j`.
pub fn plan(
    model: &FactoredModel,
    x: &InteractionIndicator,
    pi_hat_j: &MixedStrategy,
    horizon: usize,
) -> Result<QFunction> {
    Ok(value_iteration(model, x, Agent::I, pi_hat_j, horizon)?.0)
}

/// `q_i(a_i) = sum_{s, a_j} Q(s, a) pi_hat_j(s, a_j) b(s)`, no renormalization.
pub fn action_values(q: &QFunction, belief: &Belief, pi_hat_j: &MixedStrategy) -> Result<ActionValues> {
    if q.agent() != Agent::I || pi_hat_j.agent() != Agent::J {
        return Err(Error::ShapeMismatch("expected agent i's Q and agent j's strategy".into()));
    }
    if belief.len() != q.num_states() || pi_hat_j.num_states() != q.num_states() {
        return Err(Error::ShapeMismatch(format!(
            "belief ({}), Q ({}) and strategy ({}) disagree on the state count",
            belief.len(),
            q.num_states(),
            pi_hat_j.num_states()
        )));
    }
    let mut out = [0.0; NUM_ACTIONS];
    for (s, &b) in belief.as_slice().iter().enumerate() {
        if b == 0.0 {
            continue;
        }
        let m = q.marginal(s, pi_hat_j);
        for (acc, v) in out.iter_mut().zip(m) {
            *acc += b * v;
        }
    }
    Ok(ActionValues(out))
}

/// Lowest index among the maxima.
pub fn argmax(values: &[f64; NUM_ACTIONS]) -> usize {
    let mut best = 0;
    for k in 1..NUM_ACTIONS {
        if values[k] > values[best] {
            best = k;
        }
    }
    best
}

pub fn select_action_with<R: Rng + ?Sized>(av: &ActionValues, mode: SelectionMode, rng: &mut R) -> Action {
    let idx = match mode {
        SelectionMode::Argmax => argmax(&av.0),
        SelectionMode::Softmax { temperature } => sample_index(&softmax(&av.0, temperature), rng),
    };
    Action::from_index(idx).expect("index in range")
}

/// Seeded action selection; argmax ignores the seed.
pub fn select_action(av: &ActionValues, mode: SelectionMode, seed: u64) -> Action {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    select_action_with(av, mode, &mut rng)
}

pub(crate) fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    // rounding left a sliver above the last cumulative value
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(probs.len() - 1)
}
