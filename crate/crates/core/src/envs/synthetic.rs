use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::rng::Rng;
use crate::{Error, Result};

/// `y = sign * alpha * x + N(0, 1/beta)` with `x ~ U[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub alpha: f64,
    /// Noise precision.
    pub beta: f64,
    pub sign: f64,
}

impl SyntheticSpec {
    pub fn noise_variance(&self) -> f64 {
        1.0 / self.beta
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBatch {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub task_sign: f64,
}

pub fn sample_synthetic(spec: SyntheticSpec, n: usize, rng: &mut Rng) -> Result<SyntheticBatch> {
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    if !(spec.beta > 0.0) || !spec.alpha.is_finite() {
        return Err(Error::InvalidSpec(format!("bad synthetic spec {spec:?}")));
    }
    let noise = Normal::new(0.0, spec.noise_variance().sqrt())
        .map_err(|e| Error::InvalidSpec(e.to_string()))?;
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let xi: f64 = rng.gen_range(-1.0..=1.0);
        x.push(xi);
        y.push(spec.sign * spec.alpha * xi + noise.sample(rng));
    }
    Ok(SyntheticBatch {
        x,
        y,
        task_sign: spec.sign,
    })
}
