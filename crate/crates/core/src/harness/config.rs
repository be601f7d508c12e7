//! Experiment configuration and its text format.
//!
//! Grammar, one item per line:
//!
//! ```text
//! line    := blank | comment | section | pair
//! comment := ('#' | ';') any*
//! section := '[' name ']'
//! pair    := key '=' value
//! ```
//!
//! Keys before the first section belong to `[experiment]`. Lists are
//! comma-separated. Unknown sections or keys are errors, reported with the
//! line number. Recognised keys:
//!
//! | section        | keys |
//! |----------------|------|
//! | `experiment`   | `tasks` (list of `family/seed/goal`), `horizon`, `repeats`, `steps_per_task`, `method` (`owl`, `exp_replay`, `full_rehearsal`), `selection` (list of `oracle`, `bandit`, `random_per_step`, `max_q_once`, `max_q_per_step`), `seeds`, `eval_every`, `eval_episodes` |
//! | `regularizer`  | `mode` (`ewc`, `functional`, `none`), `lambda`, `mu`, `fisher_samples` |
//! | `replay`       | `capacity`, `warm_start`, `warm_start_size` |
//! | `dqn`          | `hidden`, `lr`, `gamma`, `batch_size`, `target_sync_every`, `learn_every`, `min_buffer`, `huber_delta`, `eps_start`, `eps_min`, `eps_decay_steps`, `eps_mode` |
//! | `reward`       | `scale`, `bonus` |
//! | `bandit`       | `eta`, `cap` |
//! | `rehearsal`    | `current_prob` |
//! | `generalize`   | `n_unseen`, `unseen_seed_start`, `episodes_per_task` |
//! | `interference` | `alpha`, `beta`, `hidden`, `samples_per_task`, `steps_per_task`, `batch_size`, `lr`, `lambda` |

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bandit::BanditConfig;
use crate::continual::RegMode;
use crate::dqn::DqnConfig;
use crate::envs::{RewardShaping, TaskSpec};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Owl,
    ExpReplay,
    FullRehearsal,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Owl => "owl",
            Method::ExpReplay => "exp_replay",
            Method::FullRehearsal => "full_rehearsal",
        }
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "owl" => Ok(Method::Owl),
            "exp_replay" => Ok(Method::ExpReplay),
            "full_rehearsal" => Ok(Method::FullRehearsal),
            other => Err(format!("unknown method `{other}`")),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    Oracle,
    Bandit,
    RandomPerStep,
    MaxQOnce,
    MaxQPerStep,
}

impl Selection {
    pub const ALL: [Selection; 5] = [
        Selection::Oracle,
        Selection::Bandit,
        Selection::RandomPerStep,
        Selection::MaxQOnce,
        Selection::MaxQPerStep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Selection::Oracle => "oracle",
            Selection::Bandit => "bandit",
            Selection::RandomPerStep => "random_per_step",
            Selection::MaxQOnce => "max_q_once",
            Selection::MaxQPerStep => "max_q_per_step",
        }
    }
}

impl FromStr for Selection {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Selection::ALL
            .into_iter()
            .find(|sel| sel.name() == s)
            .ok_or_else(|| format!("unknown selection `{s}`"))
    }
}

impl fmt::Display for Selection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularizerConfig {
    pub mode: RegMode,
    pub lambda: f64,
    pub mu: f64,
    pub fisher_samples: usize,
}

impl Default for RegularizerConfig {
    fn default() -> Self {
        Self {
            mode: RegMode::Ewc,
            lambda: 500.0,
            mu: 1.0,
            fisher_samples: 4_096,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayConfig {
    pub capacity: usize,
    pub warm_start: bool,
    pub warm_start_size: usize,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            capacity: 50_000,
            warm_start: false,
            warm_start_size: 2_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizeConfig {
    pub n_unseen: usize,
    pub unseen_seed_start: u64,
    /// Episodes per unseen layout; only the stochastic strategies differ between them.
    pub episodes_per_task: usize,
}

impl Default for GeneralizeConfig {
    fn default() -> Self {
        Self {
            n_unseen: 50,
            unseen_seed_start: 10_000,
            episodes_per_task: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterferenceConfig {
    pub alpha: f64,
    pub beta: f64,
    pub hidden: Vec<usize>,
    pub samples_per_task: usize,
    pub steps_per_task: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lambda: f64,
}

impl Default for InterferenceConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 100.0,
            hidden: vec![32, 32],
            samples_per_task: 1_000,
            steps_per_task: 3_000,
            batch_size: 32,
            lr: 1e-3,
            lambda: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub task_sequence: Vec<TaskSpec>,
    pub repeats: usize,
    pub steps_per_task: u64,
    pub method: Method,
    /// Strategies evaluated at every evaluation point.
    pub selections: Vec<Selection>,
    pub regularizer: RegularizerConfig,
    pub replay: ReplayConfig,
    pub dqn: DqnConfig,
    pub reward: RewardShaping,
    pub bandit_eta: f64,
    pub bandit_cap: f64,
    /// Probability that a full-rehearsal learning step uses the current task.
    pub rehearsal_current_prob: f64,
    pub seeds: Vec<u64>,
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub generalize: GeneralizeConfig,
    pub interference: InterferenceConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task_sequence: vec![TaskSpec::four_rooms(0), TaskSpec::four_rooms(2)],
            repeats: 3,
            steps_per_task: 20_000,
            method: Method::Owl,
            selections: vec![Selection::Oracle],
            regularizer: RegularizerConfig::default(),
            replay: ReplayConfig::default(),
            dqn: DqnConfig::default(),
            reward: RewardShaping::default(),
            bandit_eta: crate::bandit::ETA_TD,
            bandit_cap: crate::bandit::DEFAULT_CAP,
            rehearsal_current_prob: 0.75,
            seeds: vec![0],
            eval_every: 2_000,
            eval_episodes: 16,
            generalize: GeneralizeConfig::default(),
            interference: InterferenceConfig::default(),
        }
    }
}

fn field_err(field: &str, message: impl Into<String>) -> Error {
    Error::ConfigField {
        field: field.into(),
        message: message.into(),
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.task_sequence.is_empty() {
            return Err(field_err("tasks", "at least one task is required"));
        }
        for t in &self.task_sequence {
            t.validate()?;
            if t.family == crate::envs::Family::SyntheticRegression {
                return Err(field_err("tasks", "synthetic_regression is only used by interference-demo"));
            }
        }
        if self.repeats == 0 {
            return Err(field_err("repeats", "must be >= 1"));
        }
        if self.steps_per_task == 0 {
            return Err(field_err("steps_per_task", "must be >= 1"));
        }
        if self.eval_every == 0 {
            return Err(field_err("eval_every", "must be >= 1"));
        }
        if self.eval_episodes == 0 {
            return Err(field_err("eval_episodes", "must be >= 1"));
        }
        if self.selections.is_empty() {
            return Err(field_err("selection", "at least one strategy is required"));
        }
        if self.seeds.is_empty() {
            return Err(field_err("seeds", "at least one seed is required"));
        }
        if self.replay.capacity == 0 {
            return Err(field_err("replay.capacity", "must be >= 1"));
        }
        if self.replay.capacity < self.dqn.batch_size {
            return Err(field_err("replay.capacity", "must be >= dqn.batch_size"));
        }
        if self.regularizer.lambda < 0.0 || !self.regularizer.lambda.is_finite() {
            return Err(field_err("regularizer.lambda", "must be finite and >= 0"));
        }
        if self.regularizer.mu < 0.0 || !self.regularizer.mu.is_finite() {
            return Err(field_err("regularizer.mu", "must be finite and >= 0"));
        }
        if self.regularizer.fisher_samples == 0 {
            return Err(field_err("regularizer.fisher_samples", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.rehearsal_current_prob) {
            return Err(field_err("rehearsal.current_prob", "must lie in [0, 1]"));
        }
        if !(self.bandit_eta > 0.0) || !(self.bandit_cap > 0.0) {
            return Err(field_err("bandit", "eta and cap must be > 0"));
        }
        if self.generalize.episodes_per_task == 0 {
            return Err(field_err("generalize.episodes_per_task", "must be >= 1"));
        }
        let obs_dims: std::collections::BTreeSet<usize> = self
            .task_sequence
            .iter()
            .map(|t| crate::envs::make_task(t).map(|e| e.obs_dim()))
            .collect::<Result<_>>()?;
        if obs_dims.len() > 1 {
            return Err(field_err("tasks", "all tasks must share one observation size"));
        }
        self.dqn.validate()
    }

    pub fn bandit(&self) -> BanditConfig {
        BanditConfig {
            eta: self.bandit_eta,
            cap: self.bandit_cap,
        }
    }

    /// Distinct tasks in order of first appearance; the index is the task id.
    pub fn distinct_tasks(&self) -> Vec<TaskSpec> {
        let mut out: Vec<TaskSpec> = Vec::new();
        for t in &self.task_sequence {
            if !out.contains(t) {
                out.push(*t);
            }
        }
        out
    }

    pub fn total_steps(&self) -> u64 {
        self.steps_per_task * (self.task_sequence.len() * self.repeats) as u64
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut section = String::from("experiment");
        let mut horizon: Option<usize> = None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| Error::ConfigLine {
                    line: line_no,
                    message: "unterminated section header".into(),
                })?;
                section = name.trim().to_string();
                if !SECTIONS.contains(&section.as_str()) {
                    return Err(Error::ConfigLine {
                        line: line_no,
                        message: format!("unknown section `{section}`"),
                    });
                }
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::ConfigLine {
                line: line_no,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            let key = key.trim();
            let value = value.trim();
            let line_err = |message: String| Error::ConfigLine {
                line: line_no,
                message: format!("{section}.{key}: {message}"),
            };
            if section == "experiment" && key == "horizon" {
                horizon = Some(parse_one(value).map_err(line_err)?);
                continue;
            }
            cfg.set(&section, key, value).map_err(line_err)?;
        }
        if let Some(h) = horizon {
            for t in &mut cfg.task_sequence {
                t.horizon = h;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, section: &str, key: &str, v: &str) -> std::result::Result<(), String> {
        match (section, key) {
            ("experiment", "tasks") => self.task_sequence = parse_list(v)?,
            ("experiment", "repeats") => self.repeats = parse_one(v)?,
            ("experiment", "steps_per_task") => self.steps_per_task = parse_one(v)?,
            ("experiment", "method") => self.method = parse_one(v)?,
            ("experiment", "selection") => self.selections = parse_list(v)?,
            ("experiment", "seeds") => self.seeds = parse_list(v)?,
            ("experiment", "eval_every") => self.eval_every = parse_one(v)?,
            ("experiment", "eval_episodes") => self.eval_episodes = parse_one(v)?,
            ("regularizer", "mode") => self.regularizer.mode = parse_one(v)?,
            ("regularizer", "lambda") => self.regularizer.lambda = parse_one(v)?,
            ("regularizer", "mu") => self.regularizer.mu = parse_one(v)?,
            ("regularizer", "fisher_samples") => self.regularizer.fisher_samples = parse_one(v)?,
            ("replay", "capacity") => self.replay.capacity = parse_one(v)?,
            ("replay", "warm_start") => self.replay.warm_start = parse_one(v)?,
            ("replay", "warm_start_size") => self.replay.warm_start_size = parse_one(v)?,
            ("dqn", "hidden") => self.dqn.hidden_dims = parse_list(v)?,
            ("dqn", "lr") => self.dqn.adam.lr = parse_one(v)?,
            ("dqn", "gamma") => self.dqn.gamma = parse_one(v)?,
            ("dqn", "batch_size") => self.dqn.batch_size = parse_one(v)?,
            ("dqn", "target_sync_every") => self.dqn.target_sync_every = parse_one(v)?,
            ("dqn", "learn_every") => self.dqn.learn_every = parse_one(v)?,
            ("dqn", "min_buffer") => self.dqn.min_buffer_before_learning = parse_one(v)?,
            ("dqn", "huber_delta") => self.dqn.huber_delta = parse_one(v)?,
            ("dqn", "eps_start") => self.dqn.eps_start = parse_one(v)?,
            ("dqn", "eps_min") => self.dqn.eps_min = parse_one(v)?,
            ("dqn", "eps_decay_steps") => self.dqn.eps_decay_steps = parse_one(v)?,
            ("dqn", "eps_mode") => self.dqn.eps_mode = parse_one(v)?,
            ("reward", "scale") => self.reward.scale = parse_one(v)?,
            ("reward", "bonus") => self.reward.bonus = parse_one(v)?,
            ("bandit", "eta") => self.bandit_eta = parse_one(v)?,
            ("bandit", "cap") => self.bandit_cap = parse_one(v)?,
            ("rehearsal", "current_prob") => self.rehearsal_current_prob = parse_one(v)?,
            ("generalize", "n_unseen") => self.generalize.n_unseen = parse_one(v)?,
            ("generalize", "unseen_seed_start") => self.generalize.unseen_seed_start = parse_one(v)?,
            ("generalize", "episodes_per_task") => self.generalize.episodes_per_task = parse_one(v)?,
            ("interference", "alpha") => self.interference.alpha = parse_one(v)?,
            ("interference", "beta") => self.interference.beta = parse_one(v)?,
            ("interference", "hidden") => self.interference.hidden = parse_list(v)?,
            ("interference", "samples_per_task") => self.interference.samples_per_task = parse_one(v)?,
            ("interference", "steps_per_task") => self.interference.steps_per_task = parse_one(v)?,
            ("interference", "batch_size") => self.interference.batch_size = parse_one(v)?,
            ("interference", "lr") => self.interference.lr = parse_one(v)?,
            ("interference", "lambda") => self.interference.lambda = parse_one(v)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }
}

const SECTIONS: &[&str] = &[
    "experiment",
    "regularizer",
    "replay",
    "dqn",
    "reward",
    "bandit",
    "rehearsal",
    "generalize",
    "interference",
];

fn parse_one<T: FromStr>(v: &str) -> std::result::Result<T, String>
where
    T::Err: fmt::Display,
{
    v.parse::<T>().map_err(|e| format!("cannot parse `{v}`: {e}"))
}

fn parse_list<T: FromStr>(v: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: fmt::Display,
{
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(parse_one)
        .collect()
}
