//! Seeded task generators.
//!
//! Two gridworld families and one supervised pair:
//!
//! - `four_rooms_conflict`: a fixed 11x11 four-rooms layout. The goal sits in
//!   the corner of one room (`goal_id` 0..=3) and is **not** part of the
//!   observation, so tasks with different goals are indistinguishable by
//!   observation alone.
//! - `proc_crossing`: 9x9 grid split by one full wall with a single gap; the
//!   seed picks orientation, wall index and gap. The agent sees a 5x5
//!   egocentric window and turns/moves forward.
//! - `synthetic_regression`: `y = sign * alpha * x + noise`, the two signs
//!   being the interfering pair.

mod grid;
mod synthetic;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use grid::{Dir, GridEnv, GridState, StepInfo, StepResult, CROSSING_SIZE, FOUR_ROOMS_SIZE, VIEW_SIZE};
pub use synthetic::{sample_synthetic, SyntheticBatch, SyntheticSpec};

use crate::{Error, Result};

pub type Observation = Vec<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    FourRoomsConflict,
    ProcCrossing,
    SyntheticRegression,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::FourRoomsConflict => "four_rooms_conflict",
            Family::ProcCrossing => "proc_crossing",
            Family::SyntheticRegression => "synthetic_regression",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "four_rooms_conflict" => Ok(Family::FourRoomsConflict),
            "proc_crossing" => Ok(Family::ProcCrossing),
            "synthetic_regression" => Ok(Family::SyntheticRegression),
            other => Err(format!("unknown task family `{other}`")),
        }
    }
}

/// One task of a continual sequence. Equal specs build behaviourally identical MDPs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskSpec {
    pub family: Family,
    pub seed: u64,
    pub goal_id: u32,
    pub horizon: usize,
}

impl TaskSpec {
    pub const DEFAULT_HORIZON: usize = 100;

    pub fn four_rooms(goal_id: u32) -> Self {
        Self {
            family: Family::FourRoomsConflict,
            seed: 0,
            goal_id,
            horizon: Self::DEFAULT_HORIZON,
        }
    }

    pub fn crossing(seed: u64) -> Self {
        Self {
            family: Family::ProcCrossing,
            seed,
            goal_id: 0,
            horizon: Self::DEFAULT_HORIZON,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let max_goal = match self.family {
            Family::FourRoomsConflict => 3,
            Family::ProcCrossing => 0,
            Family::SyntheticRegression => 1,
        };
        if self.goal_id > max_goal {
            return Err(Error::GoalOutOfRange {
                family: self.family.name(),
                goal_id: self.goal_id,
            });
        }
        if self.horizon == 0 {
            return Err(Error::InvalidSpec("horizon must be >= 1".into()));
        }
        Ok(())
    }
}

impl fmt::Display for TaskSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.family, self.seed, self.goal_id)
    }
}

/// Parses `family/seed/goal_id` (horizon takes the default).
impl FromStr for TaskSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let parts: Vec<&str> = s.trim().split('/').collect();
        if parts.len() != 3 {
            return Err(format!("expected family/seed/goal_id, got `{s}`"));
        }
        let family = parts[0].trim().parse()?;
        let seed = parts[1]
            .trim()
            .parse()
            .map_err(|_| format!("bad seed `{}`", parts[1]))?;
        let goal_id = parts[2]
            .trim()
            .parse()
            .map_err(|_| format!("bad goal id `{}`", parts[2]))?;
        Ok(Self {
            family,
            seed,
            goal_id,
            horizon: Self::DEFAULT_HORIZON,
        })
    }
}

/// Builds the gridworld for `spec`.
pub fn make_task(spec: &TaskSpec) -> Result<GridEnv> {
    spec.validate()?;
    match spec.family {
        Family::FourRoomsConflict => Ok(GridEnv::four_rooms(spec.goal_id, spec.horizon)),
        Family::ProcCrossing => GridEnv::crossing(spec.seed, spec.horizon),
        Family::SyntheticRegression => Err(Error::InvalidSpec(
            "synthetic_regression is a supervised task; use sample_synthetic".into(),
        )),
    }
}

/// Per-task cell visit counts for the exploration bonus.
#[derive(Debug, Clone, Default)]
pub struct VisitCounts {
    counts: std::collections::HashMap<(usize, usize), u64>,
}

impl VisitCounts {
    /// Records a visit and returns the updated count.
    pub fn visit(&mut self, pos: (usize, usize)) -> u64 {
        let c = self.counts.entry(pos).or_insert(0);
        *c += 1;
        *c
    }

    pub fn get(&self, pos: (usize, usize)) -> u64 {
        self.counts.get(&pos).copied().unwrap_or(0)
    }
}

/// Reward transform applied only while training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardShaping {
    /// Multiplier on the environment reward.
    pub scale: f64,
    /// Count bonus numerator, `bonus / sqrt(N(pos))`.
    pub bonus: f64,
}

impl Default for RewardShaping {
    fn default() -> Self {
        Self {
            scale: 100.0,
            bonus: 0.005,
        }
    }
}

/// `scale * r + bonus / sqrt(N)` where `N` counts the visit made by this step.
pub fn training_reward(raw: &StepResult, counts: &mut VisitCounts, shaping: RewardShaping) -> f64 {
    let n = counts.visit(raw.info.agent_pos);
    shaping.scale * raw.reward + shaping.bonus / (n as f64).sqrt()
}
