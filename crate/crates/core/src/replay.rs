//! Experience replay.
//!
//! [`ReplayBuffer`] is a fixed-capacity FIFO ring with seeded uniform
//! sampling (with replacement). [`WarmStartBank`] keeps a per-task reservoir
//! sample of a task's last buffer so a later visit can start from it instead
//! of an empty buffer.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::envs::Observation;
use crate::rng::{self, Rng};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Observation,
    pub action: usize,
    pub reward: f64,
    pub next_obs: Observation,
    /// Terminal for bootstrapping: the goal was reached. Horizon truncation is not terminal.
    pub done: bool,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    storage: Vec<Transition>,
    write_cursor: usize,
    rng: Rng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, seed: u64) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidSpec("replay capacity must be >= 1".into()));
        }
        Ok(Self {
            capacity,
            storage: Vec::new(),
            write_cursor: 0,
            rng: rng::seeded(seed, rng::stream::REPLAY),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.storage.len() < self.capacity {
            self.storage.push(t);
        } else {
            self.storage[self.write_cursor] = t;
        }
        self.write_cursor = (self.write_cursor + 1) % self.capacity;
    }

    /// Uniform with replacement.
    pub fn sample(&mut self, batch_size: usize) -> Result<Vec<&Transition>> {
        let idx = self.sample_indices(batch_size)?;
        Ok(idx.into_iter().map(|i| &self.storage[i]).collect())
    }

    pub fn sample_indices(&mut self, batch_size: usize) -> Result<Vec<usize>> {
        if batch_size == 0 {
            return Err(Error::EmptyBatch);
        }
        if self.storage.len() < batch_size {
            return Err(Error::Underfull {
                len: self.storage.len(),
                requested: batch_size,
            });
        }
        let n = self.storage.len();
        Ok((0..batch_size).map(|_| self.rng.gen_range(0..n)).collect())
    }

    pub fn get(&self, index: usize) -> Option<&Transition> {
        self.storage.get(index)
    }

    /// Contents from oldest to newest.
    pub fn iter_fifo(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.storage.len() < self.capacity {
            0
        } else {
            self.write_cursor
        };
        self.storage[split..].iter().chain(self.storage[..split].iter())
    }

    /// Drops all contents; capacity and sampling stream are kept.
    pub fn flush(&mut self) {
        self.storage.clear();
        self.write_cursor = 0;
    }

    /// Length-prefixed little-endian dump of the contents in FIFO order.
    pub fn dump(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        out.extend_from_slice(DUMP_MAGIC);
        out.extend_from_slice(&DUMP_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.storage.len() as u64).to_le_bytes());
        for t in self.iter_fifo() {
            let mut rec = Vec::new();
            write_f64s(&mut rec, &t.obs);
            rec.extend_from_slice(&(t.action as u64).to_le_bytes());
            rec.extend_from_slice(&t.reward.to_le_bytes());
            write_f64s(&mut rec, &t.next_obs);
            rec.push(t.done as u8);
            out.extend_from_slice(&(rec.len() as u64).to_le_bytes());
            out.extend_from_slice(&rec);
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&out).map_err(|e| Error::io(path, e))
    }

    /// Pushes every record of a dump into this buffer (oldest first).
    pub fn load_into(&mut self, path: &Path) -> Result<()> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let mut r = ByteReader::new(&bytes);
        if r.take(DUMP_MAGIC.len())? != DUMP_MAGIC {
            return Err(Error::Format("not a replay dump".into()));
        }
        let version = r.u32()?;
        if version != DUMP_VERSION {
            return Err(Error::Format(format!("unsupported replay dump version {version}")));
        }
        let count = r.u64()?;
        for _ in 0..count {
            let len = r.u64()? as usize;
            let mut rec = ByteReader::new(r.take(len)?);
            let obs = rec.f64s()?;
            let action = rec.u64()? as usize;
            let reward = rec.f64()?;
            let next_obs = rec.f64s()?;
            let done = rec.take(1)?[0] != 0;
            self.push(Transition {
                obs,
                action,
                reward,
                next_obs,
                done,
            });
        }
        Ok(())
    }
}

const DUMP_MAGIC: &[u8] = b"CRLRPLY\0";
const DUMP_VERSION: u32 = 1;

fn write_f64s(out: &mut Vec<u8>, xs: &[f64]) {
    out.extend_from_slice(&(xs.len() as u64).to_le_bytes());
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format("unexpected end of data".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        if n > (self.bytes.len() - self.pos) / 8 {
            return Err(Error::Format("array length exceeds data".into()));
        }
        (0..n).map(|_| self.f64()).collect()
    }

    pub(crate) fn is_done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

/// Per-task reservoir samples of at most `capacity` transitions.
#[derive(Debug, Clone)]
pub struct WarmStartBank {
    capacity: usize,
    reservoirs: BTreeMap<usize, Vec<Transition>>,
    rng: Rng,
}

impl WarmStartBank {
    pub fn new(capacity: usize, seed: u64) -> Self {
        Self {
            capacity,
            reservoirs: BTreeMap::new(),
            rng: rng::seeded(seed, rng::stream::WARM_START),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Replaces `task`'s reservoir with a uniform sample (Algorithm R) of `transitions`.
    pub fn deposit<'a>(&mut self, task: usize, transitions: impl IntoIterator<Item = &'a Transition>) {
        let mut reservoir: Vec<Transition> = Vec::with_capacity(self.capacity);
        for (seen, t) in transitions.into_iter().enumerate() {
            if reservoir.len() < self.capacity {
                reservoir.push(t.clone());
            } else {
                let j = self.rng.gen_range(0..=seen);
                if j < self.capacity {
                    reservoir[j] = t.clone();
                }
            }
        }
        self.reservoirs.insert(task, reservoir);
    }

    /// Pushes `task`'s reservoir into `buf`; a task never deposited is a no-op.
    pub fn restore(&self, task: usize, buf: &mut ReplayBuffer) {
        if let Some(r) = self.reservoirs.get(&task) {
            for t in r {
                buf.push(t.clone());
            }
        }
    }

    pub fn reservoir(&self, task: usize) -> Option<&[Transition]> {
        self.reservoirs.get(&task).map(|v| v.as_slice())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tr(i: usize) -> Transition {
        Transition {
            obs: vec![i as f64],
            action: 0,
            reward: i as f64,
            next_obs: vec![i as f64 + 1.0],
            done: false,
        }
    }

    #[test]
    fn fifo_eviction() {
        let mut b = ReplayBuffer::new(3, 0).unwrap();
        for i in 1..=4 {
            b.push(tr(i));
        }
        let ids: Vec<f64> = b.iter_fifo().map(|t| t.reward).collect();
        assert_eq!(ids, vec![2.0, 3.0, 4.0]);
        assert_eq!(b.len(), 3);
    }

    #[test]
    fn empty_and_flushed_sampling_errors() {
        let mut b = ReplayBuffer::new(4, 0).unwrap();
        assert!(matches!(b.sample(1), Err(Error::Underfull { .. })));
        b.push(tr(1));
        b.push(tr(2));
        b.flush();
        assert_eq!(b.len(), 0);
        assert_eq!(b.capacity(), 4);
        assert!(b.sample(1).is_err());
        for i in 0..3 {
            b.push(tr(i));
        }
        assert_eq!(b.len(), 3);
    }

    #[test]
    fn uniform_sampling_frequencies() {
        let mut b = ReplayBuffer::new(4, 11).unwrap();
        for i in 0..4 {
            b.push(tr(i));
        }
        let n = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..n / 4 {
            for i in b.sample_indices(4).unwrap() {
                counts[i] += 1;
            }
        }
        let p: f64 = 0.25;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * p).abs() < 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn seeded_sampling_reproducible() {
        let mut a = ReplayBuffer::new(10, 5).unwrap();
        let mut b = ReplayBuffer::new(10, 5).unwrap();
        for i in 0..10 {
            a.push(tr(i));
            b.push(tr(i));
        }
        assert_eq!(a.sample_indices(10).unwrap(), b.sample_indices(10).unwrap());
    }

    #[test]
    fn bank_caps_and_restores() {
        let mut bank = WarmStartBank::new(2, 0);
        let items: Vec<Transition> = (0..5).map(tr).collect();
        bank.deposit(0, &items);
        assert_eq!(bank.reservoir(0).unwrap().len(), 2);
        let mut buf = ReplayBuffer::new(10, 0).unwrap();
        bank.restore(1, &mut buf);
        assert_eq!(buf.len(), 0);
        bank.restore(0, &mut buf);
        assert_eq!(buf.len(), 2);
    }

    #[test]
    fn reservoir_inclusion_probability() {
        let items: Vec<Transition> = (0..100).map(tr).collect();
        let b = 10;
        let trials = 10_000;
        let mut bank = WarmStartBank::new(b, 3);
        let mut hits = [0usize; 100];
        for _ in 0..trials {
            bank.deposit(0, &items);
            for t in bank.reservoir(0).unwrap() {
                hits[t.reward as usize] += 1;
            }
        }
        let p = b as f64 / 100.0;
        let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
        // 100 items, so allow the family-wise 4 sigma band.
        for h in hits {
            assert!((h as f64 - trials as f64 * p).abs() < 4.0 * sigma, "{h}");
        }
    }

    #[test]
    fn dump_roundtrip_keeps_fifo_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("buf.bin");
        let mut b = ReplayBuffer::new(3, 0).unwrap();
        for i in 0..5 {
            b.push(tr(i));
        }
        b.dump(&path).unwrap();
        let mut c = ReplayBuffer::new(3, 0).unwrap();
        c.load_into(&path).unwrap();
        let x: Vec<_> = b.iter_fifo().cloned().collect();
        let y: Vec<_> = c.iter_fifo().cloned().collect();
        assert_eq!(x, y);
    }
}
