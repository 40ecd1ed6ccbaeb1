use crate::tensor::Shape;

/// Tucker model: a dense core of shape `R_1 × … × R_N` followed by the mode
/// factors `U^(n)` (`I_n × R_n`, row-major) in one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct TuckerModel {
    shape: Shape,
    core_shape: Shape,
    factor_offsets: Vec<usize>,
    params: Vec<f64>,
}

impl TuckerModel {
    pub(crate) fn param_count(shape: &Shape, ranks: &[usize]) -> usize {
        ranks.iter().product::<usize>()
            + shape
                .dims()
                .iter()
                .zip(ranks)
                .map(|(d, r)| d * r)
                .sum::<usize>()
    }

    pub(crate) fn from_params(shape: Shape, core_shape: Shape, params: Vec<f64>) -> Self {
        debug_assert_eq!(params.len(), Self::param_count(&shape, core_shape.dims()));
        let mut factor_offsets = Vec::with_capacity(shape.order());
        let mut off = core_shape.numel();
        for (d, r) in shape.dims().iter().zip(core_shape.dims()) {
            factor_offsets.push(off);
            off += d * r;
        }
        Self {
            shape,
            core_shape,
            factor_offsets,
            params,
        }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn ranks(&self) -> &[usize] {
        self.core_shape.dims()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn core(&self) -> &[f64] {
        &self.params[..self.core_shape.numel()]
    }

    pub fn core_mut(&mut self) -> &mut [f64] {
        let len = self.core_shape.numel();
        &mut self.params[..len]
    }

    pub fn factor_mut(&mut self, mode: usize) -> &mut [f64] {
        let start = self.factor_offsets[mode];
        let len = self.shape.dim(mode) * self.core_shape.dim(mode);
        &mut self.params[start..start + len]
    }

    fn factor_row(&self, mode: usize, row: usize) -> &[f64] {
        let r = self.core_shape.dim(mode);
        let start = self.factor_offsets[mode] + row * r;
        &self.params[start..start + r]
    }

    pub(crate) fn predict(&self, index: &[usize]) -> f64 {
        // Contract the core with one factor row per mode, last mode first.
        let mut v = self.core().to_vec();
        for n in (0..index.len()).rev() {
            let u = self.factor_row(n, index[n]);
            let r = u.len();
            v = v
                .chunks_exact(r)
                .map(|chunk| chunk.iter().zip(u).map(|(a, b)| a * b).sum())
                .collect();
        }
        v[0]
    }

    pub(crate) fn accumulate_gradient(&self, index: &[usize], upstream: f64, grad: &mut [f64]) {
        let order = index.len();
        let rows: Vec<&[f64]> = (0..order).map(|n| self.factor_row(n, index[n])).collect();
        let ranks = self.core_shape.dims();
        let mut r = vec![0usize; order];
        let mut prefix = vec![1.0; order + 1];
        let mut suffix = vec![1.0; order + 1];
        for c in 0..self.core_shape.numel() {
            self.core_shape.unravel_into(c, &mut r);
            for n in 0..order {
                prefix[n + 1] = prefix[n] * rows[n][r[n]];
            }
            for n in (0..order).rev() {
                suffix[n] = suffix[n + 1] * rows[n][r[n]];
            }
            grad[c] += upstream * prefix[order];
            let g = upstream * self.params[c];
            for n in 0..order {
                grad[self.factor_offsets[n] + index[n] * ranks[n] + r[n]] +=
                    g * prefix[n] * suffix[n + 1];
            }
        }
    }
}
