//! Planning under partial observability for two agents whose interactions are
//! sparse: a factored transition and reward model, nested-MDP reasoning about
//! the other agent, a QMDP-style expert on top of a Bayes filter, and a
//! Tiger-grid simulator that turns expert runs into training datasets.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod belief;
pub mod cli;
pub mod container;
pub mod dataset;
pub mod env;
pub mod error;
pub mod maqmdp;
pub mod model;
pub mod nested;
pub mod rng;
pub mod task;
pub mod trajectory;

pub use belief::{initial_belief, update, Belief, FilterMode, StrategyMode, ZeroLikelihoodPolicy};
pub use dataset::{build_dataset, read_dataset, DatasetManifest, DatasetOptions, PolicyDump};
pub use env::{generate, GridSpec, Simulator};
pub use error::{Error, Result};
pub use maqmdp::{action_values, plan, select_action, ActionValues, SelectionMode};
pub use model::{build_model, FactoredModel, InteractionIndicator, JointState, Observation, StateSpace};
pub use nested::{nested_strategy, solve_nested, value_iteration, MixedStrategy, NestedSpec, QFunction};
pub use task::{Action, Agent, Cell, JointAction, RewardParams, TaskParameter};
pub use trajectory::{evaluate_policy, simulate_episode, Expert, Metrics, PolicyKind, TrajectoryRecord};
