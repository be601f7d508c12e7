//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use continual_rl::nn::{HeadKind, Loss, MlpSpec, MultiHeadNet, Targets};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One randomly shaped gradient-check case.
pub struct FdCase {
    pub net: MultiHeadNet,
    pub head: usize,
    pub loss: Loss,
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub values: Vec<f64>,
    pub dense: Vec<Vec<f64>>,
    pub use_dense: bool,
}

impl FdCase {
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = rng.gen_range(1..=6);
        let depth = (seed % 3) as usize;
        let hidden: Vec<usize> = (0..depth).map(|_| rng.gen_range(1..=8)).collect();
        let out = rng.gen_range(1..=5);
        let kind = if seed % 2 == 0 { HeadKind::DuelingQ } else { HeadKind::LinearRegression };
        let heads = rng.gen_range(1..=3);
        let mut net = MultiHeadNet::new(MlpSpec::new(input, hidden, out), kind, heads, seed).unwrap();
        // Nonzero biases so units are not all sitting on the same side of the kink.
        for v in net.trunk_mut().values_mut() {
            *v += rng.gen_range(-0.3..0.3);
        }
        for h in 0..heads {
            for v in net.head_mut(h).values_mut() {
                *v += rng.gen_range(-0.3..0.3);
            }
        }
        let batch = rng.gen_range(1..=5);
        let obs = (0..batch)
            .map(|_| (0..input).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let loss = match (seed / 2) % 3 {
            0 => Loss::Huber { delta: 1.0 },
            1 => Loss::SquaredError,
            _ => Loss::Huber { delta: 0.5 },
        };
        Self {
            head: rng.gen_range(0..heads),
            loss,
            actions: (0..batch).map(|_| rng.gen_range(0..out)).collect(),
            values: (0..batch).map(|_| rng.gen_range(-3.0..3.0)).collect(),
            dense: (0..batch)
                .map(|_| (0..out).map(|_| rng.gen_range(-3.0..3.0)).collect())
                .collect(),
            use_dense: seed % 5 == 1 || seed % 5 == 3,
            obs,
            net,
        }
    }

    fn targets(&self) -> Targets<'_> {
        if self.use_dense {
            Targets::Dense(&self.dense)
        } else {
            Targets::Action {
                actions: &self.actions,
                values: &self.values,
            }
        }
    }

    fn loss_of(&self, net: &MultiHeadNet) -> f64 {
        let obs: Vec<&[f64]> = self.obs.iter().map(|o| o.as_slice()).collect();
        net.backward(&obs, self.head, self.loss, self.targets()).unwrap().0
    }

    /// Relative error `|g - g_fd| / max(|g|, |g_fd|, 1e-8)` worst over all
    /// parameters of the trunk and the active head, plus the parameter count.
    pub fn max_rel_error(&self) -> (f64, usize) {
        let obs: Vec<&[f64]> = self.obs.iter().map(|o| o.as_slice()).collect();
        let (_, grads) = self.net.backward(&obs, self.head, self.loss, self.targets()).unwrap();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        let mut count = 0;
        let mut probe = |analytic: f64, plus: f64, minus: f64| {
            let numeric = (plus - minus) / (2.0 * h);
            let scale = analytic.abs().max(numeric.abs()).max(1e-8);
            // Absolute slack at the level of the FD truncation error for tiny gradients.
            let err = if (analytic - numeric).abs() < 1e-9 { 0.0 } else { (analytic - numeric).abs() / scale };
            worst = worst.max(err);
            count += 1;
        };
        for i in 0..self.net.trunk().len() {
            let mut p = self.net.clone();
            p.trunk_mut().values_mut()[i] += h;
            let mut m = self.net.clone();
            m.trunk_mut().values_mut()[i] -= h;
            probe(grads.trunk.values()[i], self.loss_of(&p), self.loss_of(&m));
        }
        for i in 0..self.net.head(self.head).len() {
            let mut p = self.net.clone();
            p.head_mut(self.head).values_mut()[i] += h;
            let mut m = self.net.clone();
            m.head_mut(self.head).values_mut()[i] -= h;
            probe(grads.heads[self.head].values()[i], self.loss_of(&p), self.loss_of(&m));
        }
        (worst, count)
    }
}
