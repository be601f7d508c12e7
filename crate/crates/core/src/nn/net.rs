//! Shared-trunk, multi-head dense network with analytic gradients.
//!
//! Weights are stored `(in_dim, out_dim)` row-major so both the forward pass
//! and the weight-gradient update are contiguous `axpy` sweeps over output
//! units; zero inputs (one-hot observations, dead ReLUs) are skipped.

use rand::distributions::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParamVector};
use crate::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
}

/// Trunk architecture plus the output width of every head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
    pub output_dim: usize,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dims,
            activation: Activation::Relu,
            output_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::InvalidSpec(format!("all dims must be >= 1: {self:?}")));
        }
        Ok(())
    }

    /// Width of the trunk output fed to every head.
    pub fn feature_dim(&self) -> usize {
        self.hidden_dims.last().copied().unwrap_or(self.input_dim)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadKind {
    /// `Q = V + A - mean(A)` with a 1-unit value stream and an `|A|`-unit advantage stream.
    DuelingQ,
    /// Single affine map from features to outputs.
    LinearRegression,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HeadInit {
    Zeros,
    Seeded(u64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Loss {
    /// Huber on the residual, quadratic inside `delta`.
    Huber { delta: f64 },
    /// `(y - t)^2`.
    SquaredError,
    /// Negative log-likelihood of a unit-variance Gaussian, `(y - t)^2 / 2`.
    GaussianNll,
}

impl Loss {
    #[inline]
    fn value_and_slope(self, residual: f64) -> (f64, f64) {
        match self {
            Loss::Huber { delta } => {
                if residual.abs() <= delta {
                    (0.5 * residual * residual, residual)
                } else {
                    (
                        delta * (residual.abs() - 0.5 * delta),
                        delta * residual.signum(),
                    )
                }
            }
            Loss::SquaredError => (residual * residual, 2.0 * residual),
            Loss::GaussianNll => (0.5 * residual * residual, residual),
        }
    }
}

/// Regression targets for a batch.
#[derive(Debug, Clone, Copy)]
pub enum Targets<'a> {
    /// One scalar target per sample on the output selected by `actions`.
    Action {
        actions: &'a [usize],
        values: &'a [f64],
    },
    /// A full output vector per sample; the loss is summed over outputs.
    Dense(&'a [Vec<f64>]),
}

impl Targets<'_> {
    fn len(&self) -> usize {
        match self {
            Targets::Action { actions, values } => actions.len().min(values.len()),
            Targets::Dense(rows) => rows.len(),
        }
    }

    fn check(&self, batch: usize, output_dim: usize) -> Result<()> {
        match self {
            Targets::Action { actions, values } => {
                if actions.len() != batch {
                    return Err(Error::DimensionMismatch {
                        context: "actions",
                        expected: batch,
                        actual: actions.len(),
                    });
                }
                if values.len() != batch {
                    return Err(Error::DimensionMismatch {
                        context: "target values",
                        expected: batch,
                        actual: values.len(),
                    });
                }
                if let Some(&a) = actions.iter().find(|&&a| a >= output_dim) {
                    return Err(Error::ActionOutOfRange {
                        action: a,
                        num_actions: output_dim,
                    });
                }
            }
            Targets::Dense(rows) => {
                if rows.len() != batch {
                    return Err(Error::DimensionMismatch {
                        context: "target rows",
                        expected: batch,
                        actual: rows.len(),
                    });
                }
                if let Some(r) = rows.iter().find(|r| r.len() != output_dim) {
                    return Err(Error::DimensionMismatch {
                        context: "target width",
                        expected: output_dim,
                        actual: r.len(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Gradients for a whole [`MultiHeadNet`].
#[derive(Debug, Clone, PartialEq)]
pub struct NetGradients {
    pub trunk: Gradients,
    pub heads: Vec<Gradients>,
}

impl NetGradients {
    pub fn map_inplace(&mut self, mut f: impl FnMut(f64) -> f64) {
        for v in self.trunk.values_mut() {
            *v = f(*v);
        }
        for h in &mut self.heads {
            for v in h.values_mut() {
                *v = f(*v);
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.map_inplace(|v| v * s);
    }
}

/// Factorized function approximator: one trunk, `M` heads of identical layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiHeadNet {
    spec: MlpSpec,
    head_kind: HeadKind,
    trunk: ParamVector,
    heads: Vec<ParamVector>,
}

fn trunk_layout(spec: &MlpSpec) -> Vec<(String, Vec<usize>)> {
    let mut layout = Vec::new();
    let mut fan_in = spec.input_dim;
    for (i, &h) in spec.hidden_dims.iter().enumerate() {
        layout.push((format!("layer{i}.weight"), vec![fan_in, h]));
        layout.push((format!("layer{i}.bias"), vec![h]));
        fan_in = h;
    }
    layout
}

fn head_layout(spec: &MlpSpec, kind: HeadKind) -> Vec<(String, Vec<usize>)> {
    let f = spec.feature_dim();
    match kind {
        HeadKind::DuelingQ => vec![
            ("value.weight".into(), vec![f, 1]),
            ("value.bias".into(), vec![1]),
            ("advantage.weight".into(), vec![f, spec.output_dim]),
            ("advantage.bias".into(), vec![spec.output_dim]),
        ],
        HeadKind::LinearRegression => vec![
            ("out.weight".into(), vec![f, spec.output_dim]),
            ("out.bias".into(), vec![spec.output_dim]),
        ],
    }
}

/// He-uniform on every `*.weight` block, zero biases.
fn he_init(pv: &mut ParamVector, rng: &mut rng::Rng) {
    for i in 0..pv.blocks().len() {
        let block = &pv.blocks()[i];
        if !block.name.ends_with(".weight") {
            continue;
        }
        let fan_in = block.shape[0] as f64;
        let limit = (6.0 / fan_in).sqrt();
        let dist = Uniform::new(-limit, limit);
        for w in pv.block_at_mut(i) {
            *w = dist.sample(rng);
        }
    }
}

// Seed streams: trunk uses stream 0, head i uses stream i + 1, so a head added
// later with the same seed equals the head a fresh net would have built.
fn head_stream(index: usize) -> u64 {
    index as u64 + 1
}

#[inline]
fn affine_forward(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let n = out.len();
    out.copy_from_slice(b);
    for (k, &xk) in x.iter().enumerate() {
        if xk != 0.0 {
            let row = &w[k * n..(k + 1) * n];
            for (o, &wv) in out.iter_mut().zip(row) {
                *o += xk * wv;
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Accumulates `dw += x dy^T`, `db += dy` and optionally writes `dx = W dy`.
#[inline]
fn affine_backward(
    w: &[f64],
    x: &[f64],
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    dx: Option<&mut [f64]>,
) {
    let n = dy.len();
    for (g, &d) in db.iter_mut().zip(dy) {
        *g += d;
    }
    for (k, &xk) in x.iter().enumerate() {
        if xk != 0.0 {
            let row = &mut dw[k * n..(k + 1) * n];
            for (g, &d) in row.iter_mut().zip(dy) {
                *g += xk * d;
            }
        }
    }
    if let Some(dx) = dx {
        for (k, dxk) in dx.iter_mut().enumerate() {
            *dxk = dot(&w[k * n..(k + 1) * n], dy);
        }
    }
}

/// Reusable per-call buffers.
struct Scratch {
    acts: Vec<Vec<f64>>,
    out: Vec<f64>,
    adv: Vec<f64>,
    dout: Vec<f64>,
    dfeat: Vec<Vec<f64>>,
}

impl Scratch {
    fn new(spec: &MlpSpec) -> Self {
        Self {
            acts: spec.hidden_dims.iter().map(|&h| vec![0.0; h]).collect(),
            out: vec![0.0; spec.output_dim],
            adv: vec![0.0; spec.output_dim],
            dout: vec![0.0; spec.output_dim],
            dfeat: spec.hidden_dims.iter().map(|&h| vec![0.0; h]).collect(),
        }
    }
}

impl MultiHeadNet {
    /// He-initialized network whose trunk and heads draw from independent seed streams.
    pub fn new(spec: MlpSpec, head_kind: HeadKind, num_heads: usize, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(spec, head_kind, 0)?;
        let mut rng = rng::seeded(seed, 0);
        he_init(&mut net.trunk, &mut rng);
        for _ in 0..num_heads {
            net.add_head(HeadInit::Seeded(seed));
        }
        Ok(net)
    }

    pub fn zeros(spec: MlpSpec, head_kind: HeadKind, num_heads: usize) -> Result<Self> {
        spec.validate()?;
        // With no hidden layers the trunk is the identity and holds no blocks.
        let trunk = ParamVector::zeros(trunk_layout(&spec))?;
        let mut net = Self {
            spec,
            head_kind,
            trunk,
            heads: Vec::new(),
        };
        for _ in 0..num_heads {
            net.add_head(HeadInit::Zeros);
        }
        Ok(net)
    }

    /// Appends a head and returns its index. Trunk and existing heads are untouched.
    pub fn add_head(&mut self, init: HeadInit) -> usize {
        let mut head = ParamVector::zeros(head_layout(&self.spec, self.head_kind))
            .expect("head layout derived from a validated spec");
        let index = self.heads.len();
        if let HeadInit::Seeded(seed) = init {
            let mut rng = rng::seeded(seed, head_stream(index));
            he_init(&mut head, &mut rng);
        }
        self.heads.push(head);
        index
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn head_kind(&self) -> HeadKind {
        self.head_kind
    }

    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim
    }

    pub fn trunk(&self) -> &ParamVector {
        &self.trunk
    }

    pub fn trunk_mut(&mut self) -> &mut ParamVector {
        &mut self.trunk
    }

    pub fn head(&self, index: usize) -> &ParamVector {
        &self.heads[index]
    }

    pub fn head_mut(&mut self, index: usize) -> &mut ParamVector {
        &mut self.heads[index]
    }

    pub fn heads(&self) -> &[ParamVector] {
        &self.heads
    }

    /// Rebuilds a network from stored parts (checkpoint loading).
    pub fn from_parts(
        spec: MlpSpec,
        head_kind: HeadKind,
        trunk: ParamVector,
        heads: Vec<ParamVector>,
    ) -> Result<Self> {
        let reference = Self::zeros(spec.clone(), head_kind, 1)?;
        reference.trunk.check_layout(&trunk)?;
        for h in &heads {
            reference.heads[0].check_layout(h)?;
        }
        Ok(Self {
            spec,
            head_kind,
            trunk,
            heads,
        })
    }

    /// Copies all parameters from `other`, which must have the same layout and head count.
    pub fn restore(&mut self, other: &MultiHeadNet) -> Result<()> {
        self.check_compatible(other)?;
        self.trunk.values_mut().copy_from_slice(other.trunk.values());
        for (dst, src) in self.heads.iter_mut().zip(&other.heads) {
            dst.values_mut().copy_from_slice(src.values());
        }
        Ok(())
    }

    pub fn check_compatible(&self, other: &MultiHeadNet) -> Result<()> {
        if self.spec != other.spec || self.head_kind != other.head_kind {
            return Err(Error::LayoutMismatch("network specs differ".into()));
        }
        if self.heads.len() != other.heads.len() {
            return Err(Error::LayoutMismatch(format!(
                "{} heads vs {} heads",
                self.heads.len(),
                other.heads.len()
            )));
        }
        Ok(())
    }

    pub fn zero_grads(&self) -> NetGradients {
        NetGradients {
            trunk: self.trunk.zeros_like(),
            heads: self.heads.iter().map(|h| h.zeros_like()).collect(),
        }
    }

    fn check_head(&self, head: usize) -> Result<()> {
        if head >= self.heads.len() {
            return Err(Error::HeadOutOfRange {
                head,
                num_heads: self.heads.len(),
            });
        }
        Ok(())
    }

    fn check_obs(&self, obs: &[f64]) -> Result<()> {
        if obs.len() != self.spec.input_dim {
            return Err(Error::DimensionMismatch {
                context: "observation",
                expected: self.spec.input_dim,
                actual: obs.len(),
            });
        }
        Ok(())
    }

    fn trunk_forward(&self, obs: &[f64], acts: &mut [Vec<f64>]) {
        for i in 0..self.spec.hidden_dims.len() {
            let (before, rest) = acts.split_at_mut(i);
            let input: &[f64] = if i == 0 { obs } else { &before[i - 1] };
            let out = &mut rest[0];
            affine_forward(self.trunk.block_at(2 * i), self.trunk.block_at(2 * i + 1), input, out);
            for v in out.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
    }

    fn head_forward(&self, head: &ParamVector, feat: &[f64], out: &mut [f64], adv: &mut [f64]) {
        match self.head_kind {
            HeadKind::LinearRegression => {
                affine_forward(head.block_at(0), head.block_at(1), feat, out);
            }
            HeadKind::DuelingQ => {
                let mut value = [0.0];
                affine_forward(head.block_at(0), head.block_at(1), feat, &mut value);
                affine_forward(head.block_at(2), head.block_at(3), feat, adv);
                let mean = adv.iter().sum::<f64>() / adv.len() as f64;
                for (o, &a) in out.iter_mut().zip(adv.iter()) {
                    *o = value[0] + a - mean;
                }
            }
        }
    }

    /// Accumulates head-parameter gradients (if requested) and writes `dfeat`.
    fn head_backward(
        &self,
        head: &ParamVector,
        feat: &[f64],
        dout: &[f64],
        dhead: Option<&mut Gradients>,
        dfeat: &mut [f64],
    ) {
        let mut scratch_head;
        let dhead = match dhead {
            Some(g) => g,
            None => {
                scratch_head = head.zeros_like();
                &mut scratch_head
            }
        };
        match self.head_kind {
            HeadKind::LinearRegression => {
                let (dw, db) = dhead.pair_mut(0);
                affine_backward(head.block_at(0), feat, dout, dw, db, Some(dfeat));
            }
            HeadKind::DuelingQ => {
                let dvalue = [dout.iter().sum::<f64>()];
                let mean = dout.iter().sum::<f64>() / dout.len() as f64;
                let dadv: Vec<f64> = dout.iter().map(|d| d - mean).collect();
                let mut dfeat_adv = vec![0.0; feat.len()];
                {
                    let (dw, db) = dhead.pair_mut(0);
                    affine_backward(head.block_at(0), feat, &dvalue, dw, db, Some(dfeat));
                }
                {
                    let (dw, db) = dhead.pair_mut(2);
                    affine_backward(head.block_at(2), feat, &dadv, dw, db, Some(&mut dfeat_adv));
                }
                for (d, a) in dfeat.iter_mut().zip(&dfeat_adv) {
                    *d += a;
                }
            }
        }
    }

    fn trunk_backward(
        &self,
        obs: &[f64],
        acts: &[Vec<f64>],
        dfeat: &mut [Vec<f64>],
        dtrunk: &mut Gradients,
    ) {
        let layers = self.spec.hidden_dims.len();
        for i in (0..layers).rev() {
            // ReLU gate on this layer's output gradient.
            for (d, &a) in dfeat[i].iter_mut().zip(&acts[i]) {
                if a <= 0.0 {
                    *d = 0.0;
                }
            }
            let input: &[f64] = if i == 0 { obs } else { &acts[i - 1] };
            let (lower, upper) = dfeat.split_at_mut(i);
            let dy = &upper[0];
            let dx = if i == 0 { None } else { Some(&mut lower[i - 1][..]) };
            let (dw, db) = dtrunk.pair_mut(2 * i);
            affine_backward(self.trunk.block_at(2 * i), input, dy, dw, db, dx);
        }
    }

    /// Output of head `head` on `obs`.
    pub fn forward(&self, obs: &[f64], head: usize) -> Result<Vec<f64>> {
        self.check_head(head)?;
        self.forward_with_head(obs, &self.heads[head])
    }

    /// Output of an arbitrary head parameter block (same layout) on top of this trunk.
    pub fn forward_with_head(&self, obs: &[f64], head: &ParamVector) -> Result<Vec<f64>> {
        self.check_obs(obs)?;
        let mut s = Scratch::new(&self.spec);
        self.trunk_forward(obs, &mut s.acts);
        let feat = s.acts.last().map(|v| v.as_slice()).unwrap_or(obs);
        let mut out = vec![0.0; self.spec.output_dim];
        self.head_forward(head, feat, &mut out, &mut s.adv);
        Ok(out)
    }

    /// Outputs of every head, sharing one trunk evaluation.
    pub fn forward_all(&self, obs: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_obs(obs)?;
        let mut s = Scratch::new(&self.spec);
        self.trunk_forward(obs, &mut s.acts);
        let feat = s.acts.last().map(|v| v.as_slice()).unwrap_or(obs);
        Ok(self
            .heads
            .iter()
            .map(|h| {
                let mut out = vec![0.0; self.spec.output_dim];
                self.head_forward(h, feat, &mut out, &mut s.adv);
                out
            })
            .collect())
    }

    /// Trunk output (the shared features).
    pub fn features(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.check_obs(obs)?;
        let mut s = Scratch::new(&self.spec);
        self.trunk_forward(obs, &mut s.acts);
        Ok(s.acts.last().cloned().unwrap_or_else(|| obs.to_vec()))
    }

    /// Mean batch loss and its exact gradient. Blocks of heads other than `head` are zero.
    pub fn backward(
        &self,
        obs: &[&[f64]],
        head: usize,
        loss: Loss,
        targets: Targets<'_>,
    ) -> Result<(f64, NetGradients)> {
        let mut grads = self.zero_grads();
        let value = self.accumulate_backward(obs, head, loss, targets, &mut grads)?;
        Ok((value, grads))
    }

    /// Like [`backward`](Self::backward) but adds into existing gradients.
    pub fn accumulate_backward(
        &self,
        obs: &[&[f64]],
        head: usize,
        loss: Loss,
        targets: Targets<'_>,
        grads: &mut NetGradients,
    ) -> Result<f64> {
        self.check_head(head)?;
        let NetGradients { trunk, heads } = grads;
        self.backward_with_head(obs, &self.heads[head], loss, targets, trunk, Some(&mut heads[head]))
    }

    /// Mean batch loss through an arbitrary head block; the head's own gradient is
    /// only accumulated when `head_grads` is given. Trunk gradients always are.
    pub fn backward_with_head(
        &self,
        obs: &[&[f64]],
        head: &ParamVector,
        loss: Loss,
        targets: Targets<'_>,
        trunk_grads: &mut Gradients,
        mut head_grads: Option<&mut Gradients>,
    ) -> Result<f64> {
        if obs.is_empty() {
            return Err(Error::EmptyBatch);
        }
        targets.check(obs.len(), self.spec.output_dim)?;
        debug_assert_eq!(targets.len(), obs.len());
        for o in obs {
            self.check_obs(o)?;
        }
        let n = obs.len() as f64;
        let mut s = Scratch::new(&self.spec);
        let mut total = 0.0;
        let feat_dim = self.spec.feature_dim();
        let mut dfeat_input = vec![0.0; feat_dim];
        for (i, x) in obs.iter().enumerate() {
            self.trunk_forward(x, &mut s.acts);
            let feat: &[f64] = s.acts.last().map(|v| v.as_slice()).unwrap_or(x);
            self.head_forward(head, feat, &mut s.out, &mut s.adv);
            s.dout.iter_mut().for_each(|d| *d = 0.0);
            match targets {
                Targets::Action { actions, values } => {
                    let a = actions[i];
                    let (l, slope) = loss.value_and_slope(s.out[a] - values[i]);
                    total += l;
                    s.dout[a] = slope / n;
                }
                Targets::Dense(rows) => {
                    for (j, &t) in rows[i].iter().enumerate() {
                        let (l, slope) = loss.value_and_slope(s.out[j] - t);
                        total += l;
                        s.dout[j] = slope / n;
                    }
                }
            }
            if self.spec.hidden_dims.is_empty() {
                self.head_backward(head, feat, &s.dout, head_grads.as_deref_mut(), &mut dfeat_input);
            } else {
                let last = s.dfeat.len() - 1;
                let mut dfeat = std::mem::take(&mut s.dfeat[last]);
                self.head_backward(head, feat, &s.dout, head_grads.as_deref_mut(), &mut dfeat);
                s.dfeat[last] = dfeat;
                self.trunk_backward(x, &s.acts, &mut s.dfeat, trunk_grads);
            }
        }
        Ok(total / n)
    }

    /// Elementwise square of a single sample's loss gradient (empirical Fisher diagonal term).
    pub fn per_sample_grad_sq(
        &self,
        obs: &[f64],
        head: usize,
        loss: Loss,
        targets: Targets<'_>,
    ) -> Result<NetGradients> {
        if targets.len() != 1 {
            return Err(Error::DimensionMismatch {
                context: "per-sample targets",
                expected: 1,
                actual: targets.len(),
            });
        }
        let (_, mut grads) = self.backward(&[obs], head, loss, targets)?;
        grads.map_inplace(|g| g * g);
        Ok(grads)
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
