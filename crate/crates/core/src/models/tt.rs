use crate::tensor::Shape;

/// Tensor-train cores `G^(n)` of shape `r_{n-1} × I_n × r_n`, row-major,
/// with `r_0 = r_N = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorTrainModel {
    shape: Shape,
    bonds: Vec<usize>,
    offsets: Vec<usize>,
    params: Vec<f64>,
}

impl TensorTrainModel {
    pub(crate) fn param_count(shape: &Shape, bonds: &[usize]) -> usize {
        shape
            .dims()
            .iter()
            .enumerate()
            .map(|(n, d)| bonds[n] * d * bonds[n + 1])
            .sum()
    }

    pub(crate) fn from_params(shape: Shape, bonds: Vec<usize>, params: Vec<f64>) -> Self {
        debug_assert_eq!(bonds.len(), shape.order() + 1);
        debug_assert_eq!(params.len(), Self::param_count(&shape, &bonds));
        let mut offsets = Vec::with_capacity(shape.order());
        let mut off = 0;
        for (n, &d) in shape.dims().iter().enumerate() {
            offsets.push(off);
            off += bonds[n] * d * bonds[n + 1];
        }
        Self {
            shape,
            bonds,
            offsets,
            params,
        }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    /// Bond dimensions `r_0..r_N`, boundaries included.
    pub fn bonds(&self) -> &[usize] {
        &self.bonds
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    #[inline]
    fn pos(&self, n: usize, a: usize, i: usize, b: usize) -> usize {
        self.offsets[n] + (a * self.shape.dim(n) + i) * self.bonds[n + 1] + b
    }

    pub(crate) fn predict(&self, index: &[usize]) -> f64 {
        let mut v = vec![1.0];
        for (n, &i) in index.iter().enumerate() {
            v = (0..self.bonds[n + 1])
                .map(|b| {
                    v.iter()
                        .enumerate()
                        .map(|(a, &x)| x * self.params[self.pos(n, a, i, b)])
                        .sum()
                })
                .collect();
        }
        v[0]
    }

    pub(crate) fn accumulate_gradient(&self, index: &[usize], upstream: f64, grad: &mut [f64]) {
        let order = index.len();
        // right[n] = product of slices n+1..N applied to the boundary vector.
        let mut right = vec![Vec::new(); order];
        right[order - 1] = vec![1.0];
        for n in (0..order - 1).rev() {
            let next = &right[n + 1];
            right[n] = (0..self.bonds[n + 1])
                .map(|a| {
                    next.iter()
                        .enumerate()
                        .map(|(b, &x)| self.params[self.pos(n + 1, a, index[n + 1], b)] * x)
                        .sum()
                })
                .collect();
        }
        let mut left = vec![1.0];
        for n in 0..order {
            let i = index[n];
            for (a, &l) in left.iter().enumerate() {
                for (b, &r) in right[n].iter().enumerate() {
                    grad[self.pos(n, a, i, b)] += upstream * l * r;
                }
            }
            left = (0..self.bonds[n + 1])
                .map(|b| {
                    left.iter()
                        .enumerate()
                        .map(|(a, &x)| x * self.params[self.pos(n, a, i, b)])
                        .sum()
                })
                .collect();
        }
    }
}
