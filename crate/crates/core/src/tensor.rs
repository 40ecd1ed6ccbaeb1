//! Dense and sparse (COO) tensors, index arithmetic, sampling of observed
//! entries and seeded train/holdout splits.
//!
//! Both tensor kinds use a row-major layout: the last mode varies fastest.
//! A sparse tensor keeps its entries sorted by flat offset, which is the same
//! as lexicographic order on the index tuples.

use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeded_rng;

/// Element counts below this use an in-memory Fisher-Yates shuffle when sampling.
const SHUFFLE_LIMIT: usize = 10_000_000;

/// Mode sizes of a tensor.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Shape {
    dims: Vec<usize>,
    strides: Vec<usize>,
    numel: usize,
}

impl Shape {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidShape("order must be at least 1".into()));
        }
        if let Some(pos) = dims.iter().position(|&d| d == 0) {
            return Err(Error::InvalidShape(format!("mode {pos} has size 0")));
        }
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::InvalidShape(format!("element count of {dims:?} overflows")))?;
        let mut strides = vec![1usize; dims.len()];
        for n in (0..dims.len() - 1).rev() {
            strides[n] = strides[n + 1] * dims[n + 1];
        }
        Ok(Self {
            dims,
            strides,
            numel,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn numel(&self) -> usize {
        self.numel
    }

    pub fn dim(&self, mode: usize) -> usize {
        self.dims[mode]
    }

    pub fn contains(&self, index: &[usize]) -> bool {
        index.len() == self.dims.len() && index.iter().zip(&self.dims).all(|(&i, &d)| i < d)
    }

    pub fn check_index(&self, index: &[usize]) -> Result<()> {
        if self.contains(index) {
            Ok(())
        } else {
            Err(Error::IndexOutOfBounds {
                index: index.to_vec(),
                dims: self.dims.clone(),
            })
        }
    }

    /// Row-major flat offset. The index must already be in bounds.
    pub fn flat_unchecked(&self, index: &[usize]) -> usize {
        index.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn flat_index(&self, index: &[usize]) -> Result<usize> {
        self.check_index(index)?;
        Ok(self.flat_unchecked(index))
    }

    pub fn unravel_into(&self, mut flat: usize, out: &mut [usize]) {
        for (slot, &stride) in out.iter_mut().zip(&self.strides) {
            *slot = flat / stride;
            flat %= stride;
        }
    }

    pub fn unravel(&self, flat: usize) -> Vec<usize> {
        let mut out = vec![0; self.order()];
        self.unravel_into(flat, &mut out);
        out
    }

    /// Iterates every index tuple in row-major order.
    pub fn indices(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        (0..self.numel).map(move |f| self.unravel(f))
    }
}

impl TryFrom<Vec<usize>> for Shape {
    type Error = Error;

    fn try_from(dims: Vec<usize>) -> Result<Self> {
        Shape::new(dims)
    }
}

impl From<Shape> for Vec<usize> {
    fn from(shape: Shape) -> Self {
        shape.dims
    }
}

fn check_finite(shape: &Shape, flat: usize, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            index: shape.unravel(flat),
            value,
        })
    }
}

/// A fully materialised tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Shape,
    values: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Shape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.numel() {
            return Err(Error::InvalidArgument(format!(
                "{} values supplied for a tensor with {} elements",
                values.len(),
                shape.numel()
            )));
        }
        for (flat, &v) in values.iter().enumerate() {
            check_finite(&shape, flat, v)?;
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: Shape) -> Self {
        let values = vec![0.0; shape.numel()];
        Self { shape, values }
    }

    /// Builds a tensor by evaluating `f` at every index in row-major order.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let mut idx = vec![0; shape.order()];
        let mut values = Vec::with_capacity(shape.numel());
        for flat in 0..shape.numel() {
            shape.unravel_into(flat, &mut idx);
            values.push(f(&idx));
        }
        Self::new(shape, values)
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, index: &[usize]) -> Result<f64> {
        Ok(self.values[self.shape.flat_index(index)?])
    }

    pub fn get_flat(&self, flat: usize) -> f64 {
        self.values[flat]
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Every entry as an observed sparse tensor.
    pub fn to_sparse(&self) -> SparseTensor {
        SparseTensor::from_sorted_flat(
            self.shape.clone(),
            (0..self.shape.numel()).collect(),
            self.values.clone(),
        )
    }

    /// Sub-tensor at position `k` of the leading mode. Requires order ≥ 2.
    pub fn leading_slice(&self, k: usize) -> Result<DenseTensor> {
        if self.shape.order() < 2 {
            return Err(Error::InvalidArgument(
                "leading_slice needs a tensor of order at least 2".into(),
            ));
        }
        if k >= self.shape.dim(0) {
            return Err(Error::IndexOutOfBounds {
                index: vec![k],
                dims: vec![self.shape.dim(0)],
            });
        }
        let inner = Shape::new(self.shape.dims()[1..].to_vec())?;
        let len = inner.numel();
        let values = self.values[k * len..(k + 1) * len].to_vec();
        Ok(DenseTensor {
            shape: inner,
            values,
        })
    }

    /// Stacks same-shape tensors along a new leading mode.
    pub fn stack(tensors: &[DenseTensor]) -> Result<DenseTensor> {
        let first = tensors.first().ok_or(Error::Empty("tensor list"))?;
        let mut dims = vec![tensors.len()];
        dims.extend_from_slice(first.shape.dims());
        let mut values = Vec::with_capacity(first.values.len() * tensors.len());
        for t in tensors {
            if t.shape != first.shape {
                return Err(Error::ShapeMismatch {
                    expected: first.shape.dims().to_vec(),
                    found: t.shape.dims().to_vec(),
                });
            }
            values.extend_from_slice(&t.values);
        }
        Ok(DenseTensor {
            shape: Shape::new(dims)?,
            values,
        })
    }
}

/// Observed entries of a partially known tensor in coordinate format.
///
/// An index is observed exactly when it appears among the entries; there is
/// no separate mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseTensor {
    shape: Shape,
    flat: Vec<usize>,
    coords: Vec<usize>,
    values: Vec<f64>,
}

impl SparseTensor {
    pub fn empty(shape: Shape) -> Self {
        Self::from_sorted_flat(shape, Vec::new(), Vec::new())
    }

    /// Validates and canonicalises a list of `(index, value)` entries.
    pub fn from_entries(shape: Shape, entries: Vec<(Vec<usize>, f64)>) -> Result<Self> {
        let mut keyed = Vec::with_capacity(entries.len());
        for (index, value) in entries {
            let flat = shape.flat_index(&index)?;
            check_finite(&shape, flat, value)?;
            keyed.push((flat, value));
        }
        Self::from_flat_entries(shape, keyed)
    }

    /// Like [`SparseTensor::from_entries`] but keyed by row-major flat offset.
    pub fn from_flat_entries(shape: Shape, mut entries: Vec<(usize, f64)>) -> Result<Self> {
        for &(flat, value) in &entries {
            if flat >= shape.numel() {
                return Err(Error::IndexOutOfBounds {
                    index: vec![flat],
                    dims: vec![shape.numel()],
                });
            }
            check_finite(&shape, flat, value)?;
        }
        entries.sort_by_key(|e| e.0);
        if let Some(w) = entries.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::DuplicateIndex(shape.unravel(w[0].0)));
        }
        let (flat, values) = entries.into_iter().unzip();
        Ok(Self::from_sorted_flat(shape, flat, values))
    }

    pub(crate) fn from_sorted_flat(shape: Shape, flat: Vec<usize>, values: Vec<f64>) -> Self {
        debug_assert!(flat.windows(2).all(|w| w[0] < w[1]));
        let order = shape.order();
        let mut coords = vec![0; flat.len() * order];
        for (k, &f) in flat.iter().enumerate() {
            shape.unravel_into(f, &mut coords[k * order..(k + 1) * order]);
        }
        Self {
            shape,
            flat,
            coords,
            values,
        }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn index(&self, k: usize) -> &[usize] {
        let n = self.shape.order();
        &self.coords[k * n..(k + 1) * n]
    }

    pub fn value(&self, k: usize) -> f64 {
        self.values[k]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn flat_indices(&self) -> &[usize] {
        &self.flat
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[usize], f64)> + '_ {
        (0..self.len()).map(move |k| (self.index(k), self.values[k]))
    }

    pub fn observed_fraction(&self) -> f64 {
        self.len() as f64 / self.shape.numel() as f64
    }

    pub fn position_of_flat(&self, flat: usize) -> Option<usize> {
        self.flat.binary_search(&flat).ok()
    }

    pub fn contains(&self, index: &[usize]) -> bool {
        self.shape.contains(index)
            && self
                .position_of_flat(self.shape.flat_unchecked(index))
                .is_some()
    }

    pub fn get(&self, index: &[usize]) -> Option<f64> {
        if !self.shape.contains(index) {
            return None;
        }
        self.position_of_flat(self.shape.flat_unchecked(index))
            .map(|k| self.values[k])
    }

    /// Flat offsets of every index that is *not* observed.
    pub fn unobserved_flat(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.shape.numel() - self.len());
        let mut next = self.flat.iter().peekable();
        for f in 0..self.shape.numel() {
            if next.peek() == Some(&&f) {
                next.next();
            } else {
                out.push(f);
            }
        }
        out
    }

    /// Entries at the given positions (positions into this tensor's entry list).
    pub fn select(&self, positions: &[usize]) -> SparseTensor {
        let mut pos = positions.to_vec();
        pos.sort_unstable();
        pos.dedup();
        let flat = pos.iter().map(|&p| self.flat[p]).collect();
        let values = pos.iter().map(|&p| self.values[p]).collect();
        Self::from_sorted_flat(self.shape.clone(), flat, values)
    }

    /// Same index set with replacement values, in entry order.
    pub fn with_values(&self, values: Vec<f64>) -> Result<SparseTensor> {
        if values.len() != self.len() {
            return Err(Error::InvalidArgument(format!(
                "{} values for {} entries",
                values.len(),
                self.len()
            )));
        }
        for (k, &v) in values.iter().enumerate() {
            check_finite(&self.shape, self.flat[k], v)?;
        }
        Ok(Self {
            values,
            ..self.clone()
        })
    }

    /// Union of two disjoint sparse tensors of the same shape.
    pub fn merge(&self, other: &SparseTensor) -> Result<SparseTensor> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                expected: self.shape.dims().to_vec(),
                found: other.shape.dims().to_vec(),
            });
        }
        let entries = self
            .flat
            .iter()
            .zip(&self.values)
            .chain(other.flat.iter().zip(&other.values))
            .map(|(&f, &v)| (f, v))
            .collect();
        Self::from_flat_entries(self.shape.clone(), entries)
    }

    /// Embeds this tensor as slice `k` of a tensor with an extra leading mode of size `count`.
    pub fn lift_leading(&self, k: usize, count: usize) -> Result<SparseTensor> {
        if k >= count {
            return Err(Error::IndexOutOfBounds {
                index: vec![k],
                dims: vec![count],
            });
        }
        let mut dims = vec![count];
        dims.extend_from_slice(self.shape.dims());
        let shape = Shape::new(dims)?;
        let offset = k * self.shape.numel();
        let flat = self.flat.iter().map(|f| f + offset).collect();
        Ok(Self::from_sorted_flat(shape, flat, self.values.clone()))
    }
}

/// What the holdout side of a split is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HoldoutRole {
    Validation,
    BaseModelExclusion,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub train_fraction: f64,
    pub role: HoldoutRole,
}

impl SplitSpec {
    pub fn new(seed: u64, train_fraction: f64, role: HoldoutRole) -> Result<Self> {
        let spec = Self {
            seed,
            train_fraction,
            role,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "train fraction {} not in (0, 1]",
                self.train_fraction
            )));
        }
        Ok(())
    }
}

/// Draws `k` distinct values from `0..n` uniformly, in draw order.
fn sample_distinct(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = seeded_rng(seed);
    if n < SHUFFLE_LIMIT {
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = rng.random_range(i..n);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    } else {
        let mut seen = HashSet::with_capacity(k);
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            let f = rng.random_range(0..n);
            if seen.insert(f) {
                out.push(f);
            }
        }
        out
    }
}

/// Observes `round(fraction · numel)` uniformly chosen entries of `dense`.
pub fn sample_observed(dense: &DenseTensor, fraction: f64, seed: u64) -> Result<SparseTensor> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "observed fraction {fraction} not in (0, 1]"
        )));
    }
    let n = dense.shape().numel();
    let k = ((fraction * n as f64).round() as usize).min(n);
    let mut flat = sample_distinct(n, k, seed);
    flat.sort_unstable();
    let values = flat.iter().map(|&f| dense.get_flat(f)).collect();
    Ok(SparseTensor::from_sorted_flat(
        dense.shape().clone(),
        flat,
        values,
    ))
}

/// Partitions observed entries into `(train, holdout)` by a seeded uniform draw.
pub fn split_entries(
    sparse: &SparseTensor,
    spec: &SplitSpec,
) -> Result<(SparseTensor, SparseTensor)> {
    spec.validate()?;
    if sparse.is_empty() {
        return Err(Error::Empty("sparse tensor to split"));
    }
    let m = sparse.len();
    let k = ((spec.train_fraction * m as f64).round() as usize).min(m);
    let order = sample_distinct(m, m, spec.seed);
    Ok((sparse.select(&order[..k]), sparse.select(&order[k..])))
}
