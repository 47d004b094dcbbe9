//! A laboratory for studying language reward shaping in sparse-reward RL.
//!
//! The crate is organised bottom-up:
//!
//! - [`mdp`]: deterministic grid rooms with ladders, ropes, conveyors, keys and doors.
//! - [`ltl`]: parser and finite-trace evaluator for linear temporal logic constraints.
//! - [`instruction`]: instructions as action/state/temporal constraint sets, trajectory
//!   labelling, match classification and granularity degradation.
//! - [`shaping`]: simulated language reward rules, subgoal potentials and reward-stream mixing.
//! - [`agent`]: tabular PPO with GAE, a Monte Carlo actor-critic and a pseudo-count novelty bonus.
//! - [`theory`]: exhaustive checks of potential-based policy invariance and of the gradient
//!   decomposition behind the convergence-rate argument.
//! - [`eval`]: AUC, success rate, Mann-Whitney significance and movement heatmaps.
//! - [`harness`]: experiment configuration, multi-seed orchestration, persistence and the CLI.

pub mod agent;
pub mod eval;
pub mod harness;
pub mod instruction;
pub mod ltl;
pub mod mdp;
pub mod shaping;
pub mod theory;

pub use instruction::{AtomicSentence, Completion, Instruction, MatchLevel, MatchReport, StatePredicate};
pub use ltl::{EventTrace, LtlFormula};
pub use mdp::{Action, Environment, Room, RoomSpec, State, Trajectory, Transition};
pub use shaping::{ProgressState, RewardRule, RuleKind};
