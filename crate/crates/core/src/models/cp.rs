use crate::tensor::Shape;

/// CP factors `A^(n)` (each `I_n × R`, row-major), stored back to back in one
/// parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct CpModel {
    shape: Shape,
    rank: usize,
    offsets: Vec<usize>,
    params: Vec<f64>,
}

impl CpModel {
    pub(crate) fn param_count(shape: &Shape, rank: usize) -> usize {
        shape.dims().iter().map(|d| d * rank).sum()
    }

    pub(crate) fn from_params(shape: Shape, rank: usize, params: Vec<f64>) -> Self {
        debug_assert_eq!(params.len(), Self::param_count(&shape, rank));
        let mut offsets = Vec::with_capacity(shape.order());
        let mut off = 0;
        for &d in shape.dims() {
            offsets.push(off);
            off += d * rank;
        }
        Self {
            shape,
            rank,
            offsets,
            params,
        }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Offset of factor `mode` inside the parameter vector.
    pub fn factor_offset(&self, mode: usize) -> usize {
        self.offsets[mode]
    }

    /// Factor matrix of `mode`, `I_mode × R` row-major.
    pub fn factor(&self, mode: usize) -> &[f64] {
        let start = self.offsets[mode];
        &self.params[start..start + self.shape.dim(mode) * self.rank]
    }

    pub fn factor_mut(&mut self, mode: usize) -> &mut [f64] {
        let start = self.offsets[mode];
        let len = self.shape.dim(mode) * self.rank;
        &mut self.params[start..start + len]
    }

    #[inline]
    fn at(&self, mode: usize, row: usize, k: usize) -> f64 {
        self.params[self.offsets[mode] + row * self.rank + k]
    }

    pub(crate) fn predict(&self, index: &[usize]) -> f64 {
        (0..self.rank)
            .map(|k| {
                index
                    .iter()
                    .enumerate()
                    .map(|(n, &i)| self.at(n, i, k))
                    .product::<f64>()
            })
            .sum()
    }

    pub(crate) fn accumulate_gradient(&self, index: &[usize], upstream: f64, grad: &mut [f64]) {
        let order = index.len();
        let mut prefix = vec![1.0; order + 1];
        let mut suffix = vec![1.0; order + 1];
        for k in 0..self.rank {
            for n in 0..order {
                prefix[n + 1] = prefix[n] * self.at(n, index[n], k);
            }
            for n in (0..order).rev() {
                suffix[n] = suffix[n + 1] * self.at(n, index[n], k);
            }
            for n in 0..order {
                grad[self.offsets[n] + index[n] * self.rank + k] +=
                    upstream * prefix[n] * suffix[n + 1];
            }
        }
    }
}
