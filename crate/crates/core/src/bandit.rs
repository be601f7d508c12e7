//! Exponential-weights head selector.
//!
//! Arm `i` is drawn with probability `p(i) ∝ exp(ℓ(i))`. After acting, only
//! the chosen arm's weight moves: `ℓ(i) += η g / p(i)` with the gain
//! `g = min(cap, 1 / (td + 1e-6))`, so heads that explain the observed
//! transitions well gain probability.

use std::io::Write;

use rand::Rng as _;

use crate::rng::{self, Rng};
use crate::{Error, Result};

/// Added to the TD error before inversion.
pub const TD_EPS: f64 = 1e-6;
pub const DEFAULT_CAP: f64 = 50.0;
/// Step size for TD-error feedback.
pub const ETA_TD: f64 = 0.88;
/// Step size for dense-reward feedback.
pub const ETA_DENSE: f64 = 0.98;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FeedbackSignal {
    /// Squared TD error; converted to a gain by inversion and capping.
    TdError(f64),
    /// Used as the gain directly (capped).
    Reward(f64),
}

impl FeedbackSignal {
    pub fn gain(self, cap: f64) -> f64 {
        match self {
            FeedbackSignal::TdError(td) => cap.min(1.0 / (td.max(0.0) + TD_EPS)),
            FeedbackSignal::Reward(r) => cap.min(r),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BanditConfig {
    pub eta: f64,
    pub cap: f64,
}

impl Default for BanditConfig {
    fn default() -> Self {
        Self {
            eta: ETA_TD,
            cap: DEFAULT_CAP,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BanditState {
    weights: Vec<f64>,
    config: BanditConfig,
    rng: Rng,
}

impl BanditState {
    pub fn new(arms: usize, config: BanditConfig, seed: u64) -> Result<Self> {
        if arms == 0 {
            return Err(Error::InvalidSpec("bandit needs at least one arm".into()));
        }
        if !(config.eta > 0.0) || !(config.cap > 0.0) {
            return Err(Error::InvalidSpec(format!("bad bandit config {config:?}")));
        }
        Ok(Self {
            weights: vec![0.0; arms],
            config,
            rng: rng::seeded(seed, rng::stream::EVAL),
        })
    }

    pub fn arms(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn config(&self) -> BanditConfig {
        self.config
    }

    /// Max-shifted softmax of the weights.
    pub fn distribution(&self) -> Vec<f64> {
        let max = self.weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = self.weights.iter().map(|w| (w - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / z).collect()
    }

    pub fn select(&mut self) -> usize {
        let p = self.distribution();
        let u: f64 = self.rng.gen();
        let mut acc = 0.0;
        for (i, pi) in p.iter().enumerate() {
            acc += pi;
            if u < acc {
                return i;
            }
        }
        // Rounding left `u` above the running sum: take the last arm with mass.
        p.iter().rposition(|&pi| pi > 0.0).unwrap_or(0)
    }

    /// Importance-weighted update of the chosen arm only.
    pub fn update(&mut self, chosen: usize, signal: FeedbackSignal) -> Result<()> {
        if chosen >= self.weights.len() {
            return Err(Error::HeadOutOfRange {
                head: chosen,
                num_heads: self.weights.len(),
            });
        }
        let g = signal.gain(self.config.cap);
        if !g.is_finite() {
            return Err(Error::InvalidSpec(format!("non-finite bandit feedback {signal:?}")));
        }
        let p = self.distribution()[chosen];
        if p == 0.0 {
            // Only reachable when a caller updates an arm `select` could not return.
            return Err(Error::InvalidSpec(format!("arm {chosen} has underflowed to zero probability")));
        }
        self.weights[chosen] += self.config.eta * g / p;
        Ok(())
    }

    pub fn reset(&mut self) {
        self.weights.iter_mut().for_each(|w| *w = 0.0);
    }
}

/// One row of a selection trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub chosen: usize,
    pub td_error: f64,
    pub probs: Vec<f64>,
}

/// Writes `t,chosen,td,p0,...,p{M-1}` rows.
pub fn write_trace_csv(mut w: impl Write, rows: &[TraceRow]) -> std::io::Result<()> {
    let arms = rows.first().map(|r| r.probs.len()).unwrap_or(0);
    write!(w, "t,chosen,td")?;
    for i in 0..arms {
        write!(w, ",p{i}")?;
    }
    writeln!(w)?;
    for r in rows {
        write!(w, "{},{},{}", r.step, r.chosen, r.td_error)?;
        for p in &r.probs {
            write!(w, ",{p}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Exp3 step size `sqrt(2 ln K / (K T))` for gains in `[0, 1]` over `T` rounds.
pub fn exp3_eta(arms: usize, rounds: usize) -> f64 {
    (2.0 * (arms as f64).ln() / (arms * rounds) as f64).sqrt()
}

/// Synthetic stationary problem: arm `i` returns gain `gains[i]` every pull.
/// Returns `p(best)` after `updates` select/update rounds.
pub fn concentration_run(gains: &[f64], updates: usize, config: BanditConfig, seed: u64) -> Result<f64> {
    let best = gains
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .ok_or_else(|| Error::InvalidSpec("no arms".into()))?;
    let mut b = BanditState::new(gains.len(), config, seed)?;
    for _ in 0..updates {
        let i = b.select();
        b.update(i, FeedbackSignal::Reward(gains[i]))?;
    }
    Ok(b.distribution()[best])
}
