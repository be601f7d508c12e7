//! Success rates on crossing layouts the agent never trained on.

use serde::{Deserialize, Serialize};

use super::config::Selection;
use super::eval::{evaluate_task, EvalSettings};
use crate::bandit::BanditConfig;
use crate::dqn::DqnAgent;
use crate::envs::{make_task, Family, TaskSpec};
use crate::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationRow {
    pub selection: Selection,
    pub tasks: usize,
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
}

/// `n` crossing seeds from `start` upwards that are not training seeds and whose
/// wall layout differs from every training layout.
pub fn unseen_crossing_seeds(training: &[TaskSpec], n: usize, start: u64) -> Result<Vec<u64>> {
    let train_layouts = training
        .iter()
        .filter(|t| t.family == Family::ProcCrossing)
        .map(|t| make_task(t).map(|e| e.walls().to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(n);
    let mut seed = start;
    while out.len() < n {
        let spec = TaskSpec::crossing(seed);
        let fresh_seed = !training.iter().any(|t| t.family == Family::ProcCrossing && t.seed == seed);
        if fresh_seed && !train_layouts.contains(&make_task(&spec)?.walls().to_vec()) {
            out.push(seed);
        }
        seed = seed
            .checked_add(1)
            .ok_or_else(|| Error::InvalidSpec("ran out of unseen seeds".into()))?;
    }
    Ok(out)
}

/// Evaluates every strategy on every unseen seed. The oracle strategy has no
/// meaning on unseen tasks and is skipped.
#[allow(clippy::too_many_arguments)]
pub fn generalization_eval(
    agent: &DqnAgent,
    training: &[TaskSpec],
    unseen_seeds: &[u64],
    strategies: &[Selection],
    episodes_per_task: usize,
    bandit: BanditConfig,
    reward_scale: f64,
    seed: u64,
) -> Result<Vec<GeneralizationRow>> {
    for &s in unseen_seeds {
        if training.iter().any(|t| t.family == Family::ProcCrossing && t.seed == s) {
            return Err(Error::SeedOverlap(s));
        }
    }
    if unseen_seeds.is_empty() {
        return Ok(Vec::new());
    }
    let horizon = training.first().map(|t| t.horizon).unwrap_or(TaskSpec::DEFAULT_HORIZON);
    let mut rows = Vec::new();
    for &selection in strategies.iter().filter(|&&s| s != Selection::Oracle) {
        let mut rng = rng::seeded(rng::derive(seed, rng::stream::EVAL), 100 + selection as u64);
        let settings = EvalSettings {
            selection,
            bandit,
            reward_scale,
        };
        let mut successes = 0;
        for &s in unseen_seeds {
            let task = TaskSpec {
                horizon,
                ..TaskSpec::crossing(s)
            };
            successes += evaluate_task(agent, &task, None, &settings, episodes_per_task, &mut rng)?.successes;
        }
        let episodes = unseen_seeds.len() * episodes_per_task;
        rows.push(GeneralizationRow {
            selection,
            tasks: unseen_seeds.len(),
            episodes,
            successes,
            success_rate: successes as f64 / episodes as f64,
        });
    }
    Ok(rows)
}

/// Success rate of a uniformly random policy on the same unseen tasks.
pub fn random_policy_success(unseen_seeds: &[u64], horizon: usize, episodes_per_task: usize, seed: u64) -> Result<f64> {
    use rand::Rng as _;
    let mut rng = rng::seeded(seed, rng::stream::EVAL);
    let mut successes = 0;
    for &s in unseen_seeds {
        let mut env = make_task(&TaskSpec {
            horizon,
            ..TaskSpec::crossing(s)
        })?;
        for _ in 0..episodes_per_task {
            env.reset();
            loop {
                let res = env.step(rng.gen_range(0..env.num_actions()))?;
                if res.done {
                    successes += res.info.reached_goal as usize;
                    break;
                }
            }
        }
    }
    Ok(successes as f64 / (unseen_seeds.len() * episodes_per_task).max(1) as f64)
}
