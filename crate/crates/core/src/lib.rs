//! Continual Q-learning on interfering tasks.
//!
//! A multi-head Q-network shares one feature trunk across tasks and keeps a
//! separate output head per task. Tasks are trained one after another; the
//! replay buffer is emptied at every task switch and the trunk is anchored to
//! previous solutions with an elastic-weight (diagonal Fisher) penalty. At test
//! time the task is unknown and an exponential-weights bandit picks the head to
//! act with from per-step TD-error feedback.
//!
//! Module map:
//!
//! - [`nn`]: dense multi-head network, analytic gradients, Adam.
//! - [`envs`]: four-rooms with conflicting goals, procedural crossing mazes,
//!   and a synthetic regression pair with sign-flipped targets.
//! - [`replay`]: ring-buffer replay, flushing, warm-start reservoirs.
//! - [`dqn`]: double dueling DQN with per-task exploration schedules.
//! - [`continual`]: EWC and functional regularizers.
//! - [`bandit`]: exponential-weights head selector.
//! - [`harness`]: training/evaluation orchestration, config, metrics, checkpoints.

pub mod bandit;
pub mod continual;
pub mod dqn;
pub mod envs;
mod error;
pub mod harness;
pub mod nn;
pub mod replay;
pub mod rng;

pub use error::{Error, Result};
