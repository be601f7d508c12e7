//! Greedy evaluation with a head-selection strategy.

use rand::Rng as _;

use super::config::Selection;
use crate::bandit::{BanditConfig, BanditState, FeedbackSignal, TraceRow};
use crate::dqn::DqnAgent;
use crate::envs::{make_task, GridEnv, TaskSpec};
use crate::nn::argmax;
use crate::replay::Transition;
use crate::rng::Rng;
use crate::{Error, Result};

/// Everything a strategy needs besides the agent.
#[derive(Debug, Clone, Copy)]
pub struct EvalSettings {
    pub selection: Selection,
    pub bandit: BanditConfig,
    /// Multiplies the environment reward inside the bandit's TD feedback so it
    /// lives on the same scale the Q-values were trained on.
    pub reward_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeOutcome {
    pub reached_goal: bool,
    pub env_return: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOutcome {
    pub successes: usize,
    pub episodes: usize,
    pub success_rate: f64,
    pub mean_return: f64,
}

fn max_q_head(agent: &DqnAgent, obs: &[f64]) -> Result<usize> {
    let all = agent.online().forward_all(obs)?;
    let best: Vec<f64> = all
        .iter()
        .map(|q| q.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    Ok(argmax(&best))
}

/// One greedy episode. `true_head` is required by the oracle strategy only.
pub fn run_episode(
    agent: &DqnAgent,
    env: &mut GridEnv,
    true_head: Option<usize>,
    settings: &EvalSettings,
    rng: &mut Rng,
    mut trace: Option<&mut Vec<TraceRow>>,
) -> Result<EpisodeOutcome> {
    let arms = agent.num_heads();
    if arms == 0 {
        return Err(Error::InvalidSpec("agent has no heads".into()));
    }
    let mut obs = env.reset();
    let mut bandit = match settings.selection {
        Selection::Bandit => Some(BanditState::new(arms, settings.bandit, rng.gen())?),
        _ => None,
    };
    let oracle_head = match settings.selection {
        Selection::Oracle => Some(true_head.ok_or_else(|| {
            Error::InvalidSpec("oracle selection needs the true task head".into())
        })?),
        _ => None,
    };
    let mut fixed_head = None;
    let mut env_return = 0.0;
    let mut steps = 0;
    loop {
        let head = match settings.selection {
            Selection::Oracle => oracle_head.expect("set above"),
            Selection::Bandit => bandit.as_mut().expect("set above").select(),
            Selection::RandomPerStep => rng.gen_range(0..arms),
            Selection::MaxQOnce => match fixed_head {
                Some(h) => h,
                None => {
                    let h = max_q_head(agent, &obs)?;
                    fixed_head = Some(h);
                    h
                }
            },
            Selection::MaxQPerStep => max_q_head(agent, &obs)?,
        };
        let action = argmax(&agent.q_values(&obs, head)?);
        let res = env.step(action)?;
        env_return += res.reward;
        steps += 1;
        if let Some(b) = bandit.as_mut() {
            let probs = b.distribution();
            let t = Transition {
                obs: std::mem::take(&mut obs),
                action,
                reward: settings.reward_scale * res.reward,
                next_obs: res.obs.clone(),
                done: res.info.reached_goal,
            };
            let td = agent.td_error(&t, head)?;
            b.update(head, FeedbackSignal::TdError(td))?;
            if let Some(rows) = trace.as_deref_mut() {
                rows.push(TraceRow {
                    step: steps - 1,
                    chosen: head,
                    td_error: td,
                    probs,
                });
            }
        }
        obs = res.obs;
        if res.done {
            return Ok(EpisodeOutcome {
                reached_goal: res.info.reached_goal,
                env_return,
                steps,
            });
        }
    }
}

/// Runs `episodes` episodes on `task`.
pub fn evaluate_task(
    agent: &DqnAgent,
    task: &TaskSpec,
    true_head: Option<usize>,
    settings: &EvalSettings,
    episodes: usize,
    rng: &mut Rng,
) -> Result<EvalOutcome> {
    if episodes == 0 {
        return Err(Error::InvalidSpec("eval_episodes must be >= 1".into()));
    }
    let mut env = make_task(task)?;
    let mut successes = 0;
    let mut total_return = 0.0;
    // Greedy rollouts of rng-free strategies from a fixed start repeat exactly.
    let deterministic = matches!(
        settings.selection,
        Selection::Oracle | Selection::MaxQOnce | Selection::MaxQPerStep
    );
    let rollouts = if deterministic { 1 } else { episodes };
    for _ in 0..rollouts {
        let o = run_episode(agent, &mut env, true_head, settings, rng, None)?;
        successes += o.reached_goal as usize;
        total_return += o.env_return;
    }
    if deterministic {
        successes *= episodes;
        total_return *= episodes as f64;
    }
    Ok(EvalOutcome {
        successes,
        episodes,
        success_rate: successes as f64 / episodes as f64,
        mean_return: total_return / episodes as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dqn::DqnConfig;
    use crate::rng;

    #[test]
    fn deterministic_strategies_repeat_identically() {
        let cfg = DqnConfig {
            hidden_dims: vec![8],
            ..DqnConfig::default()
        };
        let task = TaskSpec::crossing(4);
        let mut env = make_task(&task).unwrap();
        let agent = DqnAgent::new(env.obs_dim(), env.num_actions(), 2, cfg, 1).unwrap();
        for sel in [Selection::Oracle, Selection::MaxQOnce, Selection::MaxQPerStep] {
            let settings = EvalSettings {
                selection: sel,
                bandit: BanditConfig::default(),
                reward_scale: 100.0,
            };
            let mut r = rng::seeded(0, 0);
            let first = run_episode(&agent, &mut env, Some(1), &settings, &mut r, None).unwrap();
            for _ in 0..3 {
                assert_eq!(run_episode(&agent, &mut env, Some(1), &settings, &mut r, None).unwrap(), first);
            }
        }
    }

    #[test]
    fn single_head_strategies_act_identically() {
        let cfg = DqnConfig {
            hidden_dims: vec![16],
            ..DqnConfig::default()
        };
        let task = TaskSpec::four_rooms(0);
        let env = make_task(&task).unwrap();
        let agent = DqnAgent::new(env.obs_dim(), env.num_actions(), 1, cfg, 3).unwrap();
        let mut outcomes = Vec::new();
        for sel in Selection::ALL {
            let settings = EvalSettings {
                selection: sel,
                bandit: BanditConfig::default(),
                reward_scale: 100.0,
            };
            let mut e = env.clone();
            let mut r = rng::seeded(0, rng::stream::EVAL);
            outcomes.push(run_episode(&agent, &mut e, Some(0), &settings, &mut r, None).unwrap());
        }
        assert!(outcomes.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn oracle_without_head_is_an_error() {
        let env = make_task(&TaskSpec::four_rooms(0)).unwrap();
        let agent = DqnAgent::new(env.obs_dim(), 4, 2, DqnConfig::default(), 0).unwrap();
        let settings = EvalSettings {
            selection: Selection::Oracle,
            bandit: BanditConfig::default(),
            reward_scale: 100.0,
        };
        let mut r = rng::seeded(0, 0);
        assert!(run_episode(&agent, &mut env.clone(), None, &settings, &mut r, None).is_err());
    }
}
