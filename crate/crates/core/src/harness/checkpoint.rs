//! Binary checkpoints.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic   "CRLCKPT\0"
//! version u32
//! header  u64 length + JSON (config, layouts, schedules, counters, term metadata)
//! arrays  u64 length + f64 values, in the order listed by the header
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::Method;
use crate::continual::{EwcTerm, FuncRegTerm, RegMode, RegularizerSet};
use crate::dqn::{DqnAgent, DqnConfig, EpsSchedule};
use crate::envs::TaskSpec;
use crate::nn::{HeadKind, MlpSpec, MultiHeadNet, ParamVector};
use crate::replay::ByteReader;
use crate::{Error, Result};

const MAGIC: &[u8] = b"CRLCKPT\0";
const VERSION: u32 = 1;

type Layout = Vec<(String, Vec<usize>)>;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    method: Method,
    seed: u64,
    tasks: Vec<TaskSpec>,
    dqn: DqnConfig,
    spec: MlpSpec,
    head_kind: HeadKind,
    num_heads: usize,
    trunk_layout: Layout,
    head_layout: Layout,
    schedules: BTreeMap<usize, EpsSchedule>,
    opt_steps: u64,
    reg_mode: RegMode,
    lambda: f64,
    mu: f64,
    /// `(task_id, head)` per EWC term.
    ewc_terms: Vec<(usize, usize)>,
    /// `(task_id, head, mu)` per functional term.
    func_terms: Vec<(usize, usize, f64)>,
}

/// A trained agent plus what is needed to evaluate or resume it.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub method: Method,
    pub seed: u64,
    pub tasks: Vec<TaskSpec>,
    pub agent: DqnAgent,
    pub regularizer: RegularizerSet,
}

fn push_array(out: &mut Vec<u8>, xs: &[f64]) {
    out.extend_from_slice(&(xs.len() as u64).to_le_bytes());
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn push_net(out: &mut Vec<u8>, net: &MultiHeadNet) {
    push_array(out, net.trunk().values());
    for h in net.heads() {
        push_array(out, h.values());
    }
}

fn read_pv(r: &mut ByteReader<'_>, layout: &Layout) -> Result<ParamVector> {
    ParamVector::from_parts(layout.clone(), r.f64s()?)
}

fn read_net(r: &mut ByteReader<'_>, h: &Header) -> Result<MultiHeadNet> {
    let trunk = read_pv(r, &h.trunk_layout)?;
    let heads = (0..h.num_heads)
        .map(|_| read_pv(r, &h.head_layout))
        .collect::<Result<Vec<_>>>()?;
    MultiHeadNet::from_parts(h.spec.clone(), h.head_kind, trunk, heads)
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let online = self.agent.online();
        let header = Header {
            method: self.method,
            seed: self.seed,
            tasks: self.tasks.clone(),
            dqn: self.agent.config().clone(),
            spec: online.spec().clone(),
            head_kind: online.head_kind(),
            num_heads: online.num_heads(),
            trunk_layout: online.trunk().layout(),
            head_layout: online.head(0).layout(),
            schedules: self.agent.schedules().clone(),
            opt_steps: self.agent.opt_steps(),
            reg_mode: self.regularizer.mode,
            lambda: self.regularizer.lambda,
            mu: self.regularizer.mu,
            ewc_terms: self.regularizer.ewc_terms.iter().map(|t| (t.task_id, t.head)).collect(),
            func_terms: self
                .regularizer
                .func_terms
                .iter()
                .map(|t| (t.task_id, t.head, t.mu))
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        push_net(&mut out, online);
        push_net(&mut out, self.agent.target());
        for t in &self.regularizer.ewc_terms {
            push_array(&mut out, t.anchor_trunk.values());
            push_array(&mut out, t.anchor_head.values());
            push_array(&mut out, t.fisher_trunk.values());
            push_array(&mut out, t.fisher_head.values());
        }
        for t in &self.regularizer.func_terms {
            push_net(&mut out, &t.frozen_net);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(MAGIC.len()).ok() != Some(MAGIC) {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let len = r.u64()? as usize;
        let header: Header = serde_json::from_slice(r.take(len)?).map_err(|e| Error::Format(e.to_string()))?;
        if header.num_heads == 0 {
            return Err(Error::Format("checkpoint without heads".into()));
        }
        let online = read_net(&mut r, &header)?;
        let target = read_net(&mut r, &header)?;
        let mut regularizer = RegularizerSet::new(header.reg_mode, header.lambda, header.mu);
        for &(task_id, head) in &header.ewc_terms {
            regularizer.ewc_terms.push(EwcTerm {
                task_id,
                head,
                anchor_trunk: read_pv(&mut r, &header.trunk_layout)?,
                anchor_head: read_pv(&mut r, &header.head_layout)?,
                fisher_trunk: read_pv(&mut r, &header.trunk_layout)?,
                fisher_head: read_pv(&mut r, &header.head_layout)?,
            });
        }
        for &(task_id, head, mu) in &header.func_terms {
            regularizer.func_terms.push(FuncRegTerm {
                task_id,
                head,
                frozen_net: read_net(&mut r, &header)?,
                mu,
            });
        }
        if !r.is_done() {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        let agent = DqnAgent::from_parts(online, target, header.schedules, header.opt_steps, header.dqn, header.seed)?;
        Ok(Self {
            method: header.method,
            seed: header.seed,
            tasks: header.tasks,
            agent,
            regularizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
