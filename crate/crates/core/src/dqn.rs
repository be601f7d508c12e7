//! Double dueling DQN with per-task exploration schedules.
//!
//! The agent owns an online and a target [`MultiHeadNet`]. A learning step
//! samples the replay buffer, builds double-Q targets, and takes one Adam
//! step on the Huber TD loss plus whatever penalty the caller's
//! [`Regularizer`] adds. Adam keeps separate moments for the trunk and for
//! each head, and only the trunk and the active head are stepped, so idle
//! heads stay bit-identical.

use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::nn::{
    adam_step, argmax, AdamConfig, AdamState, HeadInit, HeadKind, Loss, MlpSpec, MultiHeadNet,
    NetGradients, Targets,
};
use crate::replay::{ReplayBuffer, Transition};
use crate::rng::{self, Rng};
use crate::{Error, Result};

/// What happens to a task's ε schedule when the task is revisited.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsMode {
    /// Continue where the schedule stopped.
    Resume,
    /// Restart from `eps_start` with the original decay length.
    Restart1x,
    /// Restart from `eps_start`, decaying twice as fast.
    Restart2x,
}

impl std::str::FromStr for EpsMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "resume" => Ok(EpsMode::Resume),
            "restart_1x" => Ok(EpsMode::Restart1x),
            "restart_2x" => Ok(EpsMode::Restart2x),
            other => Err(format!("unknown eps mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsSchedule {
    pub eps_start: f64,
    pub eps_min: f64,
    pub decay_steps: u64,
    pub steps_consumed: u64,
}

impl EpsSchedule {
    pub fn new(eps_start: f64, eps_min: f64, decay_steps: u64) -> Self {
        Self {
            eps_start,
            eps_min,
            decay_steps: decay_steps.max(1),
            steps_consumed: 0,
        }
    }

    pub fn current(&self) -> f64 {
        let frac = self.steps_consumed as f64 / self.decay_steps as f64;
        (self.eps_start - (self.eps_start - self.eps_min) * frac).max(self.eps_min)
    }

    pub fn advance(&mut self) {
        self.steps_consumed += 1;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DqnConfig {
    pub hidden_dims: Vec<usize>,
    pub gamma: f64,
    pub batch_size: usize,
    /// Optimizer steps between hard target syncs.
    pub target_sync_every: u64,
    /// Environment steps between optimizer steps.
    pub learn_every: u64,
    pub min_buffer_before_learning: usize,
    pub huber_delta: f64,
    pub adam: AdamConfig,
    pub eps_start: f64,
    pub eps_min: f64,
    pub eps_decay_steps: u64,
    pub eps_mode: EpsMode,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            hidden_dims: vec![128, 128],
            gamma: 0.99,
            batch_size: 32,
            target_sync_every: 80,
            learn_every: 4,
            min_buffer_before_learning: 500,
            huber_delta: 1.0,
            adam: AdamConfig::default(),
            eps_start: 0.9,
            eps_min: 0.01,
            eps_decay_steps: 5_000,
            eps_mode: EpsMode::Resume,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, message: &str| {
            Err(Error::ConfigField {
                field: field.into(),
                message: message.into(),
            })
        };
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma", "must lie in (0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be >= 1");
        }
        if self.target_sync_every == 0 {
            return bad("target_sync_every", "must be >= 1");
        }
        if self.learn_every == 0 {
            return bad("learn_every", "must be >= 1");
        }
        if !(self.huber_delta > 0.0) {
            return bad("huber_delta", "must be > 0");
        }
        if !(self.adam.lr > 0.0) {
            return bad("lr", "must be > 0");
        }
        for (name, v) in [("eps_start", self.eps_start), ("eps_min", self.eps_min)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(name, "must lie in [0, 1]");
            }
        }
        if self.eps_decay_steps == 0 {
            return bad("eps_decay_steps", "must be >= 1");
        }
        if self.hidden_dims.contains(&0) {
            return bad("hidden_dims", "every width must be >= 1");
        }
        Ok(())
    }

    fn fresh_schedule(&self) -> EpsSchedule {
        EpsSchedule::new(self.eps_start, self.eps_min, self.eps_decay_steps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// ε-greedy under the schedule of `task`, which advances one step.
    Train { task: usize },
    Greedy,
}

/// Extra loss on the network parameters, added to the TD loss of a learning step.
pub trait Regularizer {
    /// Adds the penalty gradient into `grads` and returns the penalty value.
    /// `head` is the head being trained, `obs` the observations of the batch.
    fn add_penalty(
        &self,
        net: &MultiHeadNet,
        head: usize,
        obs: &[&[f64]],
        grads: &mut NetGradients,
    ) -> Result<f64>;
}

/// The zero regularizer.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoPenalty;

impl Regularizer for NoPenalty {
    fn add_penalty(&self, _: &MultiHeadNet, _: usize, _: &[&[f64]], _: &mut NetGradients) -> Result<f64> {
        Ok(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossReport {
    pub td_loss: f64,
    pub reg_loss: f64,
}

#[derive(Debug, Clone)]
pub struct DqnAgent {
    online: MultiHeadNet,
    target: MultiHeadNet,
    trunk_opt: AdamState,
    head_opts: Vec<AdamState>,
    schedules: BTreeMap<usize, EpsSchedule>,
    opt_steps: u64,
    net_seed: u64,
    config: DqnConfig,
    rng: Rng,
}

impl DqnAgent {
    pub fn new(obs_dim: usize, num_actions: usize, num_heads: usize, config: DqnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let spec = MlpSpec::new(obs_dim, config.hidden_dims.clone(), num_actions);
        let net_seed = rng::derive(seed, rng::stream::NET_INIT);
        let online = MultiHeadNet::new(spec, HeadKind::DuelingQ, num_heads, net_seed)?;
        Ok(Self::from_nets(online.clone(), online, config, seed, net_seed))
    }

    fn from_nets(online: MultiHeadNet, target: MultiHeadNet, config: DqnConfig, seed: u64, net_seed: u64) -> Self {
        let trunk_opt = AdamState::new(online.trunk(), config.adam);
        let head_opts = online
            .heads()
            .iter()
            .map(|h| AdamState::new(h, config.adam))
            .collect();
        Self {
            online,
            target,
            trunk_opt,
            head_opts,
            schedules: BTreeMap::new(),
            opt_steps: 0,
            net_seed,
            config,
            rng: rng::seeded(seed, rng::stream::ACT),
        }
    }

    /// Rebuilds an agent from checkpointed parts. Optimizer moments start fresh.
    pub fn from_parts(
        online: MultiHeadNet,
        target: MultiHeadNet,
        schedules: BTreeMap<usize, EpsSchedule>,
        opt_steps: u64,
        config: DqnConfig,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        online.check_compatible(&target)?;
        let net_seed = rng::derive(seed, rng::stream::NET_INIT);
        let mut agent = Self::from_nets(online, target, config, seed, net_seed);
        agent.schedules = schedules;
        agent.opt_steps = opt_steps;
        Ok(agent)
    }

    pub fn config(&self) -> &DqnConfig {
        &self.config
    }

    pub fn online(&self) -> &MultiHeadNet {
        &self.online
    }

    pub fn online_mut(&mut self) -> &mut MultiHeadNet {
        &mut self.online
    }

    pub fn target(&self) -> &MultiHeadNet {
        &self.target
    }

    pub fn num_heads(&self) -> usize {
        self.online.num_heads()
    }

    pub fn num_actions(&self) -> usize {
        self.online.output_dim()
    }

    pub fn opt_steps(&self) -> u64 {
        self.opt_steps
    }

    pub fn schedules(&self) -> &BTreeMap<usize, EpsSchedule> {
        &self.schedules
    }

    pub fn schedule(&self, task: usize) -> Option<&EpsSchedule> {
        self.schedules.get(&task)
    }

    /// Adds seeded heads until `head` exists; returns the new head count.
    pub fn ensure_head(&mut self, head: usize) -> usize {
        while self.online.num_heads() <= head {
            let i = self.online.add_head(HeadInit::Seeded(self.net_seed));
            self.target.add_head(HeadInit::Zeros);
            self.target
                .head_mut(i)
                .values_mut()
                .copy_from_slice(self.online.head(i).values());
            self.head_opts.push(AdamState::new(self.online.head(i), self.config.adam));
        }
        self.online.num_heads()
    }

    /// Called when training on `task` (re)starts; applies the revisit ε policy.
    pub fn enter_task(&mut self, task: usize) {
        let fresh = self.config.fresh_schedule();
        match (self.schedules.get_mut(&task), self.config.eps_mode) {
            (None, _) => {
                self.schedules.insert(task, fresh);
            }
            (Some(_), EpsMode::Resume) => {}
            (Some(s), EpsMode::Restart1x) => *s = fresh,
            (Some(s), EpsMode::Restart2x) => {
                *s = EpsSchedule {
                    decay_steps: (fresh.decay_steps / 2).max(1),
                    ..fresh
                }
            }
        }
    }

    pub fn q_values(&self, obs: &[f64], head: usize) -> Result<Vec<f64>> {
        self.online.forward(obs, head)
    }

    pub fn act(&mut self, obs: &[f64], head: usize, mode: Mode) -> Result<usize> {
        match mode {
            Mode::Greedy => Ok(argmax(&self.q_values(obs, head)?)),
            Mode::Train { task } => {
                let fresh = self.config.fresh_schedule();
                let sched = self.schedules.entry(task).or_insert(fresh);
                let eps = sched.current();
                sched.advance();
                if self.rng.gen::<f64>() < eps {
                    Ok(self.rng.gen_range(0..self.online.output_dim()))
                } else {
                    Ok(argmax(&self.q_values(obs, head)?))
                }
            }
        }
    }

    /// Double-Q target `r + (1 - done) * gamma * Q_target(s', argmax_a Q_online(s', a))`.
    pub fn td_target(&self, t: &Transition, head: usize) -> Result<f64> {
        if t.done {
            return Ok(t.reward);
        }
        let a = argmax(&self.online.forward(&t.next_obs, head)?);
        let q = self.target.forward(&t.next_obs, head)?;
        Ok(t.reward + self.config.gamma * q[a])
    }

    pub fn td_targets(&self, batch: &[&Transition], head: usize) -> Result<Vec<f64>> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        batch.iter().map(|t| self.td_target(t, head)).collect()
    }

    /// Squared TD error of one observed transition under `head`.
    pub fn td_error(&self, t: &Transition, head: usize) -> Result<f64> {
        let q = self.online.forward(&t.obs, head)?;
        let y = self.td_target(t, head)?;
        Ok((q[t.action] - y).powi(2))
    }

    /// One optimizer step on a batch sampled from `buffer`.
    pub fn learn_step(&mut self, buffer: &mut ReplayBuffer, head: usize, reg: &dyn Regularizer) -> Result<LossReport> {
        let batch = buffer.sample(self.config.batch_size)?;
        self.learn_on_batch(&batch, head, reg)
    }

    pub fn learn_on_batch(&mut self, batch: &[&Transition], head: usize, reg: &dyn Regularizer) -> Result<LossReport> {
        if head >= self.online.num_heads() {
            return Err(Error::HeadOutOfRange {
                head,
                num_heads: self.online.num_heads(),
            });
        }
        let targets = self.td_targets(batch, head)?;
        let actions: Vec<usize> = batch.iter().map(|t| t.action).collect();
        let obs: Vec<&[f64]> = batch.iter().map(|t| t.obs.as_slice()).collect();
        let mut grads = self.online.zero_grads();
        let td_loss = self.online.accumulate_backward(
            &obs,
            head,
            Loss::Huber {
                delta: self.config.huber_delta,
            },
            Targets::Action {
                actions: &actions,
                values: &targets,
            },
            &mut grads,
        )?;
        let reg_loss = reg.add_penalty(&self.online, head, &obs, &mut grads)?;
        adam_step(self.online.trunk_mut(), &grads.trunk, &mut self.trunk_opt)?;
        adam_step(self.online.head_mut(head), &grads.heads[head], &mut self.head_opts[head])?;
        self.opt_steps += 1;
        if self.opt_steps % self.config.target_sync_every == 0 {
            self.sync_target();
        }
        Ok(LossReport { td_loss, reg_loss })
    }

    pub fn sync_target(&mut self) {
        self.target
            .restore(&self.online)
            .expect("target mirrors the online layout");
    }
}
