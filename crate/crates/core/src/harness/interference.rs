//! Supervised interference demo on the sign-flipped regression pair.
//!
//! Three regressors see task `+` then task `-`:
//!
//! - `single_head_shared`: one head, samples drawn from every task seen so far.
//! - `single_head_ewc`: one head, only the current task's data, EWC on all parameters.
//! - `two_head_ewc`: one head per task, only the current task's data, EWC on the trunk.
//!
//! The final MSE of each task is measured on fresh noisy samples, so the best
//! reachable value is the noise variance `1/beta`.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::config::InterferenceConfig;
use crate::continual::{EwcTerm, RegMode, RegularizerSet};
use crate::envs::{sample_synthetic, SyntheticBatch, SyntheticSpec};
use crate::nn::{adam_step, AdamConfig, AdamState, HeadKind, Loss, MlpSpec, MultiHeadNet, Targets};
use crate::rng::{self, Rng};
use crate::{Error, Result};

const SIGNS: [f64; 2] = [1.0, -1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    SingleHeadShared,
    SingleHeadEwc,
    TwoHeadEwc,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::SingleHeadShared, Variant::SingleHeadEwc, Variant::TwoHeadEwc];

    pub fn name(self) -> &'static str {
        match self {
            Variant::SingleHeadShared => "single_head_shared",
            Variant::SingleHeadEwc => "single_head_ewc",
            Variant::TwoHeadEwc => "two_head_ewc",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub variant: Variant,
    /// Final MSE per task, index 0 is the `+` task.
    pub final_mse: [f64; 2],
    /// MSE of both tasks after each training phase.
    pub mse_after_phase: Vec<[f64; 2]>,
}

impl VariantReport {
    pub fn worst(&self) -> f64 {
        self.final_mse[0].max(self.final_mse[1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterferenceReport {
    pub noise_floor: f64,
    pub variants: Vec<VariantReport>,
}

impl InterferenceReport {
    pub fn variant(&self, v: Variant) -> &VariantReport {
        self.variants.iter().find(|r| r.variant == v).expect("every variant is run")
    }
}

struct Trainer {
    net: MultiHeadNet,
    trunk_opt: AdamState,
    head_opts: Vec<AdamState>,
}

impl Trainer {
    fn new(cfg: &InterferenceConfig, heads: usize, seed: u64) -> Result<Self> {
        let spec = MlpSpec::new(1, cfg.hidden.clone(), 1);
        let net = MultiHeadNet::new(spec, HeadKind::LinearRegression, heads, seed)?;
        let adam = AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        };
        Ok(Self {
            trunk_opt: AdamState::new(net.trunk(), adam),
            head_opts: net.heads().iter().map(|h| AdamState::new(h, adam)).collect(),
            net,
        })
    }

    fn step(&mut self, xs: &[[f64; 1]], ys: &[Vec<f64>], head: usize, reg: &RegularizerSet) -> Result<()> {
        let obs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
        let (_, mut g) = self.net.backward(&obs, head, Loss::GaussianNll, Targets::Dense(ys))?;
        reg.add_ewc_grad(&self.net, Some(head), &mut g)?;
        adam_step(self.net.trunk_mut(), &g.trunk, &mut self.trunk_opt)?;
        adam_step(self.net.head_mut(head), &g.heads[head], &mut self.head_opts[head])?;
        Ok(())
    }

    fn mse(&self, data: &SyntheticBatch, head: usize) -> Result<f64> {
        let mut total = 0.0;
        for (x, y) in data.x.iter().zip(&data.y) {
            let out = self.net.forward(&[*x], head)?[0];
            total += (out - y).powi(2);
        }
        Ok(total / data.x.len() as f64)
    }

    /// Diagonal Fisher of the precision-`beta` Gaussian likelihood at the current parameters.
    fn capture(&self, data: &SyntheticBatch, head: usize, beta: f64) -> Result<EwcTerm> {
        let mut fisher_trunk = self.net.trunk().zeros_like();
        let mut fisher_head = self.net.head(head).zeros_like();
        for (x, y) in data.x.iter().zip(&data.y) {
            let target = [vec![*y]];
            let sq = self
                .net
                .per_sample_grad_sq(&[*x], head, Loss::GaussianNll, Targets::Dense(&target))?;
            fisher_trunk.add_scaled(&sq.trunk, 1.0)?;
            fisher_head.add_scaled(&sq.heads[head], 1.0)?;
        }
        let scale = beta * beta / data.x.len() as f64;
        fisher_trunk.values_mut().iter_mut().for_each(|v| *v *= scale);
        fisher_head.values_mut().iter_mut().for_each(|v| *v *= scale);
        Ok(EwcTerm {
            task_id: head,
            head,
            anchor_trunk: self.net.trunk().clone(),
            anchor_head: self.net.head(head).clone(),
            fisher_trunk,
            fisher_head,
        })
    }
}

fn run_variant(
    cfg: &InterferenceConfig,
    variant: Variant,
    train: &[SyntheticBatch; 2],
    test: &[SyntheticBatch; 2],
    seed: u64,
) -> Result<VariantReport> {
    let heads = if variant == Variant::TwoHeadEwc { 2 } else { 1 };
    let head_of = |task: usize| if heads == 2 { task } else { 0 };
    let mut trainer = Trainer::new(cfg, heads, rng::derive(seed, rng::stream::NET_INIT))?;
    let mut reg = RegularizerSet::new(RegMode::Ewc, cfg.lambda, 0.0);
    let mut rng: Rng = rng::seeded(seed, rng::stream::REPLAY);
    let mut mse_after_phase = Vec::new();
    for task in 0..2 {
        // Pool of (task, index) pairs the minibatches are drawn from.
        let pool: Vec<(usize, usize)> = match variant {
            Variant::SingleHeadShared => (0..=task)
                .flat_map(|k| (0..train[k].x.len()).map(move |i| (k, i)))
                .collect(),
            _ => (0..train[task].x.len()).map(|i| (task, i)).collect(),
        };
        for _ in 0..cfg.steps_per_task {
            let mut xs = Vec::with_capacity(cfg.batch_size);
            let mut ys = Vec::with_capacity(cfg.batch_size);
            for _ in 0..cfg.batch_size {
                let (k, i) = pool[rng.gen_range(0..pool.len())];
                xs.push([train[k].x[i]]);
                ys.push(vec![train[k].y[i]]);
            }
            let active = if variant == Variant::SingleHeadShared { &RegularizerSet::new(RegMode::None, 0.0, 0.0) } else { &reg };
            trainer.step(&xs, &ys, head_of(task), active)?;
        }
        if variant != Variant::SingleHeadShared {
            reg.ewc_terms.push(trainer.capture(&train[task], head_of(task), cfg.beta)?);
        }
        mse_after_phase.push([trainer.mse(&test[0], head_of(0))?, trainer.mse(&test[1], head_of(1))?]);
    }
    Ok(VariantReport {
        variant,
        final_mse: *mse_after_phase.last().expect("two phases"),
        mse_after_phase,
    })
}

pub fn interference_demo(cfg: &InterferenceConfig, seed: u64) -> Result<InterferenceReport> {
    if !(cfg.beta > 0.0) || cfg.samples_per_task == 0 || cfg.batch_size == 0 || cfg.steps_per_task == 0 {
        return Err(Error::InvalidSpec(format!("bad interference config {cfg:?}")));
    }
    let mut data_rng = rng::seeded(seed, rng::stream::DATA);
    let mut draw = |sign: f64, n: usize| {
        sample_synthetic(
            SyntheticSpec {
                alpha: cfg.alpha,
                beta: cfg.beta,
                sign,
            },
            n,
            &mut data_rng,
        )
    };
    let train = [draw(SIGNS[0], cfg.samples_per_task)?, draw(SIGNS[1], cfg.samples_per_task)?];
    let test = [draw(SIGNS[0], 2_000)?, draw(SIGNS[1], 2_000)?];
    let variants = Variant::ALL
        .iter()
        .map(|&v| run_variant(cfg, v, &train, &test, seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(InterferenceReport {
        noise_floor: 1.0 / cfg.beta,
        variants,
    })
}
