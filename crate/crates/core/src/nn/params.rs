//! Flat parameter storage with a named block layout.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One named, contiguous block inside a [`ParamVector`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub shape: Vec<usize>,
    offset: usize,
    len: usize,
}

impl Block {
    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// A flat array of scalars partitioned into named blocks.
///
/// The total length always equals the sum of the block sizes, and block names
/// are unique.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    values: Vec<f64>,
    blocks: Vec<Block>,
}

/// Gradients share the layout of the parameters they differentiate.
pub type Gradients = ParamVector;

impl ParamVector {
    /// Builds a zero-filled vector from `(name, shape)` pairs.
    pub fn zeros<S: Into<String>>(layout: impl IntoIterator<Item = (S, Vec<usize>)>) -> Result<Self> {
        let mut blocks: Vec<Block> = Vec::new();
        let mut offset = 0;
        for (name, shape) in layout {
            let name = name.into();
            if shape.is_empty() || shape.iter().any(|&d| d == 0) {
                return Err(Error::InvalidSpec(format!("block `{name}` has empty shape {shape:?}")));
            }
            if blocks.iter().any(|b| b.name == name) {
                return Err(Error::InvalidSpec(format!("duplicate block name `{name}`")));
            }
            let len = shape.iter().product();
            blocks.push(Block {
                name,
                shape,
                offset,
                len,
            });
            offset += len;
        }
        Ok(Self {
            values: vec![0.0; offset],
            blocks,
        })
    }

    /// Rebuilds a vector from a layout and values (used by checkpoint loading).
    pub fn from_parts(layout: Vec<(String, Vec<usize>)>, values: Vec<f64>) -> Result<Self> {
        let mut pv = Self::zeros(layout)?;
        if pv.values.len() != values.len() {
            return Err(Error::DimensionMismatch {
                context: "parameter values",
                expected: pv.values.len(),
                actual: values.len(),
            });
        }
        pv.values = values;
        Ok(pv)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            values: vec![0.0; self.values.len()],
            blocks: self.blocks.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        self.blocks
            .iter()
            .map(|b| (b.name.clone(), b.shape.clone()))
            .collect()
    }

    pub fn block(&self, name: &str) -> Option<&[f64]> {
        let b = self.blocks.iter().find(|b| b.name == name)?;
        Some(&self.values[b.offset..b.offset + b.len])
    }

    pub fn block_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let b = self.blocks.iter().find(|b| b.name == name)?;
        Some(&mut self.values[b.offset..b.offset + b.len])
    }

    /// Block by position in the layout.
    #[inline]
    pub fn block_at(&self, index: usize) -> &[f64] {
        let b = &self.blocks[index];
        &self.values[b.offset..b.offset + b.len]
    }

    #[inline]
    pub fn block_at_mut(&mut self, index: usize) -> &mut [f64] {
        let b = &self.blocks[index];
        &mut self.values[b.offset..b.offset + b.len]
    }

    /// Two adjacent-in-layout blocks borrowed mutably at once (weight, bias).
    #[inline]
    pub(crate) fn pair_mut(&mut self, first: usize) -> (&mut [f64], &mut [f64]) {
        let a = &self.blocks[first];
        let b = &self.blocks[first + 1];
        debug_assert_eq!(a.offset + a.len, b.offset);
        let (head, tail) = self.values[a.offset..b.offset + b.len].split_at_mut(a.len);
        (head, tail)
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self.blocks == other.blocks
    }

    pub fn check_layout(&self, other: &Self) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::LayoutMismatch(format!(
                "{:?} vs {:?}",
                self.layout(),
                other.layout()
            )))
        }
    }

    pub fn fill(&mut self, value: f64) {
        self.values.iter_mut().for_each(|v| *v = value);
    }

    /// `self += scale * other`, layouts must match.
    pub fn add_scaled(&mut self, other: &Self, scale: f64) -> Result<()> {
        self.check_layout(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn squared_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn length_is_sum_of_block_sizes() {
        let pv = ParamVector::zeros([("w", vec![3, 4]), ("b", vec![4])]).unwrap();
        assert_eq!(pv.len(), 16);
        assert_eq!(pv.block("w").unwrap().len(), 12);
        assert_eq!(pv.block("b").unwrap().len(), 4);
        assert!(pv.block("missing").is_none());
    }

    #[test]
    fn rejects_duplicate_names_and_empty_dims() {
        assert!(ParamVector::zeros([("w", vec![2]), ("w", vec![2])]).is_err());
        assert!(ParamVector::zeros([("w", vec![0, 2])]).is_err());
    }

    #[test]
    fn block_mut_writes_through() {
        let mut pv = ParamVector::zeros([("a", vec![2]), ("b", vec![3])]).unwrap();
        pv.block_mut("b").unwrap()[1] = 5.0;
        assert_eq!(pv.values(), &[0.0, 0.0, 0.0, 5.0, 0.0]);
        let (a, b) = pv.pair_mut(0);
        assert_eq!((a.len(), b.len()), (2, 3));
    }

    #[test]
    fn layout_check() {
        let a = ParamVector::zeros([("a", vec![2])]).unwrap();
        let b = ParamVector::zeros([("a", vec![3])]).unwrap();
        assert!(a.check_layout(&a.zeros_like()).is_ok());
        assert!(matches!(a.check_layout(&b), Err(Error::LayoutMismatch(_))));
    }
}
