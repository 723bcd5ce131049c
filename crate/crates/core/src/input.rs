//! Fixed-dimension encoding of variable-length names.
//!
//! A name of `n` bytes becomes an `N`-byte vector: short names are copied and
//! zero-padded, longer names are cut into `N`-byte chunks (the last one
//! zero-padded) that are XOR-ed together position by position.

use std::cmp::Ordering;
use std::collections::HashMap;

use crate::corpus::Dataset;
use crate::error::{Error, Result};

pub const DEFAULT_INPUT_DIM: usize = 5;

/// The byte vector fed to the networks. Compared lexicographically, index 0
/// most significant.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct InputVector(Box<[u8]>);

impl InputVector {
    pub fn new(values: impl Into<Box<[u8]>>) -> Self {
        InputVector(values.into())
    }

    pub fn values(&self) -> &[u8] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Maps each byte to `[0, 1]` by dividing by 255.
    pub fn scaled<T: crate::Scalar>(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.0.len()];
        scale_into(&self.0, &mut out);
        out
    }
}

impl From<Vec<u8>> for InputVector {
    fn from(v: Vec<u8>) -> Self {
        InputVector(v.into_boxed_slice())
    }
}

#[inline]
pub(crate) fn scale_into<T: crate::Scalar>(bytes: &[u8], out: &mut [T]) {
    let inv = T::of(1.0 / 255.0);
    for (o, &b) in out.iter_mut().zip(bytes) {
        *o = T::of(b as f64) * inv;
    }
}

/// XOR-folds `name` into `out` (whose length is the dimension).
#[inline]
pub fn fold_into(name: &[u8], out: &mut [u8]) {
    assert!(!out.is_empty(), "input dimension must be at least 1");
    let n = out.len();
    let chunks = name.chunks_exact(n);
    let tail = chunks.remainder();
    out.fill(0);
    for chunk in chunks {
        for k in 0..n {
            out[k] ^= chunk[k];
        }
    }
    for (o, &b) in out.iter_mut().zip(tail) {
        *o ^= b;
    }
}

/// Encodes `name` as an `dim`-dimensional input vector.
///
/// Panics if `dim == 0`.
pub fn process(name: &[u8], dim: usize) -> InputVector {
    let mut out = vec![0u8; dim];
    fold_into(name, &mut out);
    InputVector::from(out)
}

/// Lexicographic order, index 0 most significant.
pub fn vector_order(a: &InputVector, b: &InputVector) -> Result<Ordering> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(a.values().cmp(b.values()))
}

/// Fraction of names whose vector is shared with at least one other name.
pub fn collision_rate(dataset: &Dataset, dim: usize) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut counts: HashMap<InputVector, usize> = HashMap::with_capacity(dataset.len());
    for name in dataset {
        *counts.entry(process(name.as_bytes(), dim)).or_default() += 1;
    }
    let colliding: usize = counts.values().filter(|&&c| c > 1).sum();
    Ok(colliding as f64 / dataset.len() as f64)
}
