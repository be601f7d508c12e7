//! Continual training runs.

use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use rand::Rng as _;

use super::config::{ExperimentConfig, Method, Selection};
use super::eval::{evaluate_task, EvalSettings};
use super::metrics::{EvalRecord, RunManifest};
use crate::continual::RegularizerSet;
use crate::dqn::{DqnAgent, LossReport, Mode, NoPenalty};
use crate::envs::{make_task, training_reward, TaskSpec, VisitCounts};
use crate::replay::{ReplayBuffer, Transition, WarmStartBank};
use crate::rng::{self, Rng};
use crate::Result;

/// Bookkeeping for one training phase (one pass over one task).
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseInfo {
    pub task: usize,
    pub head: usize,
    /// Replay length when the phase's first environment step is taken.
    pub buffer_len_at_start: usize,
    pub learn_steps: u64,
    /// Learning steps per task id (full rehearsal trains several).
    pub learn_steps_by_task: BTreeMap<usize, u64>,
    /// Training episodes finished in the phase (goal or horizon).
    pub episodes: u64,
    /// Training episodes that reached the goal.
    pub goals: u64,
}

pub struct RunOutput {
    pub manifest: RunManifest,
    pub records: Vec<EvalRecord>,
    pub agent: DqnAgent,
    pub regularizer: RegularizerSet,
    /// Distinct tasks; the index is the task id.
    pub tasks: Vec<TaskSpec>,
    pub phases: Vec<PhaseInfo>,
}

/// Head trained and used by the oracle for `task` under `method`.
pub fn head_for(method: Method, task: usize) -> usize {
    match method {
        Method::ExpReplay => 0,
        Method::Owl | Method::FullRehearsal => task,
    }
}

/// Picks the task a full-rehearsal learning step trains on: the current one
/// with probability `current_prob`, otherwise a uniformly drawn past task.
/// With no past task the current one is used.
pub fn choose_rehearsal_task(current: usize, visited: &[usize], current_prob: f64, rng: &mut Rng) -> usize {
    let r: f64 = rng.gen();
    let past: Vec<usize> = visited.iter().copied().filter(|&t| t != current).collect();
    if r < current_prob || past.is_empty() {
        current
    } else {
        past[rng.gen_range(0..past.len())]
    }
}

/// One full-rehearsal learning step. Returns the task trained, or `None` if its
/// buffer is not yet large enough.
pub fn full_rehearsal_step(
    agent: &mut DqnAgent,
    buffers: &mut BTreeMap<usize, ReplayBuffer>,
    current: usize,
    current_prob: f64,
    rng: &mut Rng,
) -> Result<Option<(usize, LossReport)>> {
    let visited: Vec<usize> = buffers.keys().copied().collect();
    let task = choose_rehearsal_task(current, &visited, current_prob, rng);
    let min = agent
        .config()
        .min_buffer_before_learning
        .max(agent.config().batch_size);
    let buf = buffers.get_mut(&task).expect("chosen task has a buffer");
    if buf.len() < min {
        return Ok(None);
    }
    let report = agent.learn_step(buf, head_for(Method::FullRehearsal, task), &NoPenalty)?;
    Ok(Some((task, report)))
}

fn eval_rng(seed: u64, selection: Selection) -> Rng {
    rng::seeded(rng::derive(seed, rng::stream::EVAL), selection as u64)
}

struct Evaluator {
    rngs: Vec<(Selection, Rng)>,
}

impl Evaluator {
    fn new(config: &ExperimentConfig, seed: u64) -> Self {
        Self {
            rngs: config.selections.iter().map(|&s| (s, eval_rng(seed, s))).collect(),
        }
    }

    fn run(
        &mut self,
        config: &ExperimentConfig,
        seed: u64,
        agent: &DqnAgent,
        tasks: &[TaskSpec],
        seen: &[usize],
        phase_task: usize,
        global_step: u64,
        out: &mut Vec<EvalRecord>,
    ) -> Result<()> {
        for &task in seen {
            for (selection, rng) in &mut self.rngs {
                let settings = EvalSettings {
                    selection: *selection,
                    bandit: config.bandit(),
                    reward_scale: config.reward.scale,
                };
                let o = evaluate_task(
                    agent,
                    &tasks[task],
                    Some(head_for(config.method, task)),
                    &settings,
                    config.eval_episodes,
                    rng,
                )?;
                out.push(EvalRecord {
                    global_step,
                    phase_task,
                    eval_task: task,
                    successes: o.successes,
                    episodes: o.episodes,
                    success_rate: o.success_rate,
                    mean_return: o.mean_return,
                    method: config.method,
                    selection: *selection,
                    seed,
                });
            }
        }
        Ok(())
    }
}

/// Trains one seed of `config`. `log` receives one line per evaluation point.
pub fn train_continual(config: &ExperimentConfig, seed: u64, log: &mut dyn FnMut(String)) -> Result<RunOutput> {
    config.validate()?;
    let start = Instant::now();
    let tasks = config.distinct_tasks();
    let probe = make_task(&tasks[0])?;
    let num_actions = tasks
        .iter()
        .map(|t| make_task(t).map(|e| e.num_actions()))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .max()
        .unwrap_or(1);
    let mut agent = DqnAgent::new(probe.obs_dim(), num_actions, 1, config.dqn.clone(), seed)?;
    let mut reg = match config.method {
        Method::Owl => RegularizerSet::new(config.regularizer.mode, config.regularizer.lambda, config.regularizer.mu),
        _ => RegularizerSet::new(crate::continual::RegMode::None, 0.0, 0.0),
    };
    let replay_seed = rng::derive(seed, rng::stream::REPLAY);
    let mut shared = ReplayBuffer::new(config.replay.capacity, replay_seed)?;
    let mut per_task: BTreeMap<usize, ReplayBuffer> = BTreeMap::new();
    let mut bank = WarmStartBank::new(config.replay.warm_start_size, seed);
    let mut fisher_rng = rng::seeded(seed, rng::stream::FISHER);
    let mut rehearsal_rng = rng::seeded(seed, rng::stream::REHEARSAL);
    let mut evaluator = Evaluator::new(config, seed);
    let mut counts: HashMap<usize, VisitCounts> = HashMap::new();
    let mut records = Vec::new();
    let mut phases = Vec::new();
    let mut seen: Vec<usize> = Vec::new();
    let mut global_step: u64 = 0;
    let learn_min = config.dqn.min_buffer_before_learning.max(config.dqn.batch_size);

    for _ in 0..config.repeats {
        for spec in &config.task_sequence {
            let task = tasks.iter().position(|t| t == spec).expect("task listed");
            let head = head_for(config.method, task);
            if !seen.contains(&task) {
                seen.push(task);
            }
            agent.ensure_head(head);
            agent.enter_task(task);
            let mut env = make_task(spec)?;
            let task_counts = counts.entry(task).or_default();

            let buffer_len_at_start = match config.method {
                Method::Owl => {
                    shared.flush();
                    if config.replay.warm_start {
                        bank.restore(task, &mut shared);
                    }
                    shared.len()
                }
                Method::ExpReplay => shared.len(),
                Method::FullRehearsal => {
                    let seed_i = rng::derive(replay_seed, task as u64);
                    let cap = config.replay.capacity;
                    per_task
                        .entry(task)
                        .or_insert_with(|| ReplayBuffer::new(cap, seed_i).expect("validated capacity"))
                        .len()
                }
            };
            let mut info = PhaseInfo {
                task,
                head,
                buffer_len_at_start,
                learn_steps: 0,
                learn_steps_by_task: BTreeMap::new(),
                episodes: 0,
                goals: 0,
            };

            let mut obs = env.reset();
            for _ in 0..config.steps_per_task {
                let action = agent.act(&obs, head, Mode::Train { task })?;
                let res = env.step(action)?;
                let reward = training_reward(&res, task_counts, config.reward);
                let t = Transition {
                    obs: std::mem::take(&mut obs),
                    action,
                    reward,
                    next_obs: res.obs.clone(),
                    done: res.info.reached_goal,
                };
                match config.method {
                    Method::FullRehearsal => per_task.get_mut(&task).expect("created above").push(t),
                    _ => shared.push(t),
                }
                if res.done {
                    info.episodes += 1;
                    info.goals += res.info.reached_goal as u64;
                }
                obs = if res.done { env.reset() } else { res.obs };
                global_step += 1;

                if global_step % config.dqn.learn_every == 0 {
                    let trained = match config.method {
                        Method::Owl if shared.len() >= learn_min => {
                            agent.learn_step(&mut shared, head, &reg)?;
                            Some(task)
                        }
                        Method::ExpReplay if shared.len() >= learn_min => {
                            agent.learn_step(&mut shared, head, &NoPenalty)?;
                            Some(task)
                        }
                        Method::FullRehearsal => full_rehearsal_step(
                            &mut agent,
                            &mut per_task,
                            task,
                            config.rehearsal_current_prob,
                            &mut rehearsal_rng,
                        )?
                        .map(|(t, _)| t),
                        _ => None,
                    };
                    if let Some(t) = trained {
                        info.learn_steps += 1;
                        *info.learn_steps_by_task.entry(t).or_insert(0) += 1;
                    }
                }
                if global_step % config.eval_every == 0 {
                    let before = records.len();
                    evaluator.run(config, seed, &agent, &tasks, &seen, task, global_step, &mut records)?;
                    log(eval_line(global_step, &records[before..]));
                }
            }

            if config.method == Method::Owl {
                if !shared.is_empty() {
                    reg.capture_task(
                        &agent,
                        task,
                        head,
                        &shared,
                        config.regularizer.fisher_samples,
                        &mut fisher_rng,
                    )?;
                }
                if config.replay.warm_start {
                    bank.deposit(task, shared.iter_fifo());
                }
                shared.flush();
            }
            log(format!(
                "phase task {task}: {} episodes, {} reached the goal",
                info.episodes, info.goals
            ));
            phases.push(info);
        }
    }
    if global_step % config.eval_every != 0 {
        let before = records.len();
        let last = phases.last().map(|p| p.task).unwrap_or(0);
        evaluator.run(config, seed, &agent, &tasks, &seen, last, global_step, &mut records)?;
        log(eval_line(global_step, &records[before..]));
    }
    let manifest = RunManifest::new(config, seed, &records, start.elapsed().as_secs_f64());
    Ok(RunOutput {
        manifest,
        records,
        agent,
        regularizer: reg,
        tasks,
        phases,
    })
}

fn eval_line(step: u64, recs: &[EvalRecord]) -> String {
    let parts: Vec<String> = recs
        .iter()
        .map(|r| format!("{}[{}]={:.2}", r.selection, r.eval_task, r.success_rate))
        .collect();
    format!("step {step}: {}", parts.join(" "))
}
