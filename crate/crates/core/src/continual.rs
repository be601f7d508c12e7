//! Regularizers against forgetting.
//!
//! After each training phase [`RegularizerSet::capture_task`] stores one term:
//!
//! - EWC: an anchor copy of the trunk and the phase's head plus a diagonal
//!   empirical Fisher. The Fisher treats the TD residual as a unit-variance
//!   Gaussian, so each sample contributes `((y - Q) * dQ/dθ)^2`.
//! - Functional: a frozen copy of the whole network. The penalty compares the
//!   frozen head on top of the current trunk with the frozen head on top of the
//!   frozen trunk.
//!
//! An EWC term always constrains the trunk. Its head part only applies while
//! that same head is being trained again.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::dqn::{DqnAgent, Regularizer};
use crate::nn::{Loss, MultiHeadNet, NetGradients, ParamVector, Targets};
use crate::replay::ReplayBuffer;
use crate::rng::Rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegMode {
    Ewc,
    Functional,
    None,
}

impl std::str::FromStr for RegMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "ewc" => Ok(RegMode::Ewc),
            "functional" => Ok(RegMode::Functional),
            "none" => Ok(RegMode::None),
            other => Err(format!("unknown regularizer `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EwcTerm {
    pub task_id: usize,
    pub head: usize,
    pub anchor_trunk: ParamVector,
    pub anchor_head: ParamVector,
    pub fisher_trunk: ParamVector,
    pub fisher_head: ParamVector,
}

impl EwcTerm {
    /// `sum_j F_j (θ_j - θ*_j)^2` over the trunk, plus the head when `head_active`.
    fn weighted_sq_dist(&self, net: &MultiHeadNet, head_active: bool) -> Result<f64> {
        let mut total = weighted_sq(net.trunk(), &self.anchor_trunk, &self.fisher_trunk)?;
        if head_active {
            total += weighted_sq(net.head(self.head), &self.anchor_head, &self.fisher_head)?;
        }
        Ok(total)
    }
}

fn weighted_sq(theta: &ParamVector, anchor: &ParamVector, fisher: &ParamVector) -> Result<f64> {
    theta.check_layout(anchor)?;
    Ok(theta
        .values()
        .iter()
        .zip(anchor.values())
        .zip(fisher.values())
        .map(|((t, a), f)| f * (t - a) * (t - a))
        .sum())
}

fn add_weighted_diff(grad: &mut ParamVector, theta: &ParamVector, anchor: &ParamVector, fisher: &ParamVector, scale: f64) {
    for (((g, t), a), f) in grad
        .values_mut()
        .iter_mut()
        .zip(theta.values())
        .zip(anchor.values())
        .zip(fisher.values())
    {
        *g += scale * f * (t - a);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FuncRegTerm {
    pub task_id: usize,
    pub head: usize,
    pub frozen_net: MultiHeadNet,
    pub mu: f64,
}

impl FuncRegTerm {
    /// `mu * mean((g(f_cur(x)) - g(f_frozen(x)))^2)` over batch and outputs, `g` the frozen head.
    pub fn penalty(&self, net: &MultiHeadNet, obs: &[&[f64]]) -> Result<f64> {
        let mut scratch = net.trunk().zeros_like();
        self.penalty_and_grad(net, obs, &mut scratch)
    }

    /// Penalty value; its trunk gradient is added into `trunk_grads`.
    pub fn penalty_and_grad(&self, net: &MultiHeadNet, obs: &[&[f64]], trunk_grads: &mut ParamVector) -> Result<f64> {
        if obs.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if self.mu == 0.0 {
            return Ok(0.0);
        }
        let head = self.frozen_net.head(self.head);
        let frozen_out = obs
            .iter()
            .map(|o| self.frozen_net.forward(o, self.head))
            .collect::<Result<Vec<_>>>()?;
        let mut g = net.trunk().zeros_like();
        let sum_sq = net.backward_with_head(obs, head, Loss::SquaredError, Targets::Dense(&frozen_out), &mut g, None)?;
        let outputs = net.output_dim() as f64;
        trunk_grads.add_scaled(&g, self.mu / outputs)?;
        Ok(self.mu * sum_sq / outputs)
    }
}

/// The set Ω of accumulated terms, one per completed training phase.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularizerSet {
    pub mode: RegMode,
    pub lambda: f64,
    pub mu: f64,
    pub ewc_terms: Vec<EwcTerm>,
    pub func_terms: Vec<FuncRegTerm>,
}

impl RegularizerSet {
    pub fn new(mode: RegMode, lambda: f64, mu: f64) -> Self {
        Self {
            mode,
            lambda,
            mu,
            ewc_terms: Vec::new(),
            func_terms: Vec::new(),
        }
    }

    pub fn num_terms(&self) -> usize {
        self.ewc_terms.len() + self.func_terms.len()
    }

    /// `sum_k (λ/2) sum_j F_k[j] (θ[j] - θ*_k[j])^2`; term k's head counts only if it is `active_head`.
    pub fn ewc_penalty(&self, net: &MultiHeadNet, active_head: Option<usize>) -> Result<f64> {
        let mut total = 0.0;
        for term in &self.ewc_terms {
            let active = active_head == Some(term.head) && term.head < net.num_heads();
            total += 0.5 * self.lambda * term.weighted_sq_dist(net, active)?;
        }
        Ok(total)
    }

    /// Adds `λ F_k (θ - θ*_k)` for every term into `grads` and returns the penalty.
    pub fn add_ewc_grad(&self, net: &MultiHeadNet, active_head: Option<usize>, grads: &mut NetGradients) -> Result<f64> {
        if self.lambda == 0.0 {
            return Ok(0.0);
        }
        for term in &self.ewc_terms {
            net.trunk().check_layout(&term.anchor_trunk)?;
            add_weighted_diff(&mut grads.trunk, net.trunk(), &term.anchor_trunk, &term.fisher_trunk, self.lambda);
            if active_head == Some(term.head) && term.head < net.num_heads() {
                net.head(term.head).check_layout(&term.anchor_head)?;
                add_weighted_diff(
                    &mut grads.heads[term.head],
                    net.head(term.head),
                    &term.anchor_head,
                    &term.fisher_head,
                    self.lambda,
                );
            }
        }
        self.ewc_penalty(net, active_head)
    }

    /// Appends the mode's term for the phase that just trained `head` on `task_id`.
    pub fn capture_task(
        &mut self,
        agent: &DqnAgent,
        task_id: usize,
        head: usize,
        buffer: &ReplayBuffer,
        max_samples: usize,
        rng: &mut Rng,
    ) -> Result<()> {
        match self.mode {
            RegMode::None => {}
            RegMode::Ewc => {
                let term = estimate_fisher(agent, task_id, head, buffer, max_samples, rng)?;
                self.ewc_terms.push(term);
            }
            RegMode::Functional => self.func_terms.push(FuncRegTerm {
                task_id,
                head,
                frozen_net: agent.online().clone(),
                mu: self.mu,
            }),
        }
        Ok(())
    }
}

impl Regularizer for RegularizerSet {
    fn add_penalty(&self, net: &MultiHeadNet, head: usize, obs: &[&[f64]], grads: &mut NetGradients) -> Result<f64> {
        match self.mode {
            RegMode::None => Ok(0.0),
            RegMode::Ewc => self.add_ewc_grad(net, Some(head), grads),
            RegMode::Functional => {
                let mut total = 0.0;
                for term in &self.func_terms {
                    total += term.penalty_and_grad(net, obs, &mut grads.trunk)?;
                }
                Ok(total)
            }
        }
    }
}

/// Diagonal empirical Fisher of the Gaussian TD likelihood at the agent's current parameters.
///
/// Uses every transition when the buffer holds at most `max_samples`, otherwise a
/// uniform subset of that size drawn without replacement.
pub fn estimate_fisher(
    agent: &DqnAgent,
    task_id: usize,
    head: usize,
    buffer: &ReplayBuffer,
    max_samples: usize,
    rng: &mut Rng,
) -> Result<EwcTerm> {
    if buffer.is_empty() || max_samples == 0 {
        return Err(Error::Underfull {
            len: buffer.len(),
            requested: max_samples.max(1),
        });
    }
    let net = agent.online();
    if head >= net.num_heads() {
        return Err(Error::HeadOutOfRange {
            head,
            num_heads: net.num_heads(),
        });
    }
    let indices: Vec<usize> = if buffer.len() <= max_samples {
        (0..buffer.len()).collect()
    } else {
        let mut v = index::sample(rng, buffer.len(), max_samples).into_vec();
        v.sort_unstable();
        v
    };
    let mut fisher_trunk = net.trunk().zeros_like();
    let mut fisher_head = net.head(head).zeros_like();
    for &i in &indices {
        let t = buffer.get(i).expect("index within buffer");
        let y = agent.td_target(t, head)?;
        let sq = net.per_sample_grad_sq(
            &t.obs,
            head,
            Loss::GaussianNll,
            Targets::Action {
                actions: &[t.action],
                values: &[y],
            },
        )?;
        fisher_trunk.add_scaled(&sq.trunk, 1.0)?;
        fisher_head.add_scaled(&sq.heads[head], 1.0)?;
    }
    let inv = 1.0 / indices.len() as f64;
    fisher_trunk.values_mut().iter_mut().for_each(|v| *v *= inv);
    fisher_head.values_mut().iter_mut().for_each(|v| *v *= inv);
    Ok(EwcTerm {
        task_id,
        head,
        anchor_trunk: net.trunk().clone(),
        anchor_head: net.head(head).clone(),
        fisher_trunk,
        fisher_head,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dqn::DqnConfig;
    use crate::nn::{HeadKind, MlpSpec};
    use crate::replay::Transition;
    use crate::rng;

    fn small_net(seed: u64) -> MultiHeadNet {
        MultiHeadNet::new(MlpSpec::new(3, vec![4], 2), HeadKind::DuelingQ, 2, seed).unwrap()
    }

    fn unit_term(net: &MultiHeadNet, head: usize) -> EwcTerm {
        let mut f_trunk = net.trunk().zeros_like();
        f_trunk.fill(1.0);
        let mut f_head = net.head(head).zeros_like();
        f_head.fill(1.0);
        EwcTerm {
            task_id: head,
            head,
            anchor_trunk: net.trunk().clone(),
            anchor_head: net.head(head).clone(),
            fisher_trunk: f_trunk,
            fisher_head: f_head,
        }
    }

    #[test]
    fn penalty_zero_at_anchor_and_direct_formula() {
        let net = small_net(0);
        let mut reg = RegularizerSet::new(RegMode::Ewc, 2.0, 0.0);
        reg.ewc_terms.push(unit_term(&net, 0));
        assert_eq!(reg.ewc_penalty(&net, Some(0)).unwrap(), 0.0);

        // ‖θ − θ*‖² = 3 spread over three trunk coordinates.
        let mut moved = net.clone();
        for v in &mut moved.trunk_mut().values_mut()[..3] {
            *v += 1.0;
        }
        assert!((reg.ewc_penalty(&moved, Some(0)).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn head_part_only_when_revisited() {
        let net = small_net(0);
        let mut reg = RegularizerSet::new(RegMode::Ewc, 1.0, 0.0);
        reg.ewc_terms.push(unit_term(&net, 0));
        let mut moved = net.clone();
        moved.head_mut(0).values_mut()[0] += 1.0;
        assert_eq!(reg.ewc_penalty(&moved, Some(1)).unwrap(), 0.0);
        assert!((reg.ewc_penalty(&moved, Some(0)).unwrap() - 0.5).abs() < 1e-12);

        let mut g = moved.zero_grads();
        reg.add_ewc_grad(&moved, Some(1), &mut g).unwrap();
        assert!(g.heads[0].values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn none_mode_captures_nothing() {
        let agent = DqnAgent::new(2, 2, 1, DqnConfig::default(), 0).unwrap();
        let mut buf = ReplayBuffer::new(4, 0).unwrap();
        buf.push(Transition {
            obs: vec![1.0, 0.0],
            action: 0,
            reward: 1.0,
            next_obs: vec![0.0, 1.0],
            done: true,
        });
        let mut r = rng::seeded(0, rng::stream::FISHER);
        let mut reg = RegularizerSet::new(RegMode::None, 500.0, 0.0);
        reg.capture_task(&agent, 0, 0, &buf, 10, &mut r).unwrap();
        assert_eq!(reg.num_terms(), 0);
        let mut ewc = RegularizerSet::new(RegMode::Ewc, 500.0, 0.0);
        ewc.capture_task(&agent, 0, 0, &buf, 10, &mut r).unwrap();
        assert_eq!(ewc.num_terms(), 1);
        assert!(ewc.ewc_terms[0].fisher_trunk.values().iter().all(|&f| f >= 0.0));
    }

    #[test]
    fn functional_penalty_zero_for_identical_trunk_and_mu() {
        let net = small_net(1);
        let term = FuncRegTerm {
            task_id: 0,
            head: 0,
            frozen_net: net.clone(),
            mu: 3.0,
        };
        let x = [0.2, -0.4, 1.0];
        assert_eq!(term.penalty(&net, &[&x]).unwrap(), 0.0);
        let mut other = small_net(2);
        let zero = FuncRegTerm { mu: 0.0, ..term.clone() };
        assert_eq!(zero.penalty(&other, &[&x]).unwrap(), 0.0);
        // Heads of the current net do not matter.
        let p = term.penalty(&other, &[&x]).unwrap();
        other.head_mut(0).values_mut()[0] += 5.0;
        assert_eq!(term.penalty(&other, &[&x]).unwrap(), p);
    }
}
