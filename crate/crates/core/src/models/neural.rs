//! Embedding + convolutional-head completion model.
//!
//! For an index `(i_1..i_N)` the embedding rows `E^(n)[i_n, :]` are stacked
//! into an `N × R` map. A convolution whose kernel spans the whole rank axis
//! lifts every mode row to `C` channels, a second convolution spanning the
//! mode axis mixes them into a single `C`-vector, and two fully connected
//! layers reduce that to a scalar. Every hidden layer uses a rectifier.

use crate::tensor::Shape;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Layout {
    order: usize,
    rank: usize,
    channels: usize,
    hidden: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
    w4: usize,
    b4: usize,
    total: usize,
}

impl Layout {
    fn new(shape: &Shape, rank: usize, channels: usize, hidden: usize) -> Self {
        let order = shape.order();
        let w1 = shape.dims().iter().sum::<usize>() * rank;
        let b1 = w1 + channels * rank;
        let w2 = b1 + channels;
        let b2 = w2 + channels * channels * order;
        let w3 = b2 + channels;
        let b3 = w3 + hidden * channels;
        let w4 = b3 + hidden;
        let b4 = w4 + hidden;
        Self {
            order,
            rank,
            channels,
            hidden,
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
            w4,
            b4,
            total: b4 + 1,
        }
    }
}

/// Activations of one forward pass, kept for backpropagation.
struct Forward {
    x: Vec<f64>,
    z1: Vec<f64>,
    h1: Vec<f64>,
    z2: Vec<f64>,
    h2: Vec<f64>,
    z3: Vec<f64>,
    h3: Vec<f64>,
    out: f64,
}

fn relu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeuralModel {
    shape: Shape,
    layout: Layout,
    emb_offsets: Vec<usize>,
    params: Vec<f64>,
}

impl NeuralModel {
    pub(crate) fn param_count(shape: &Shape, rank: usize, channels: usize, hidden: usize) -> usize {
        Layout::new(shape, rank, channels, hidden).total
    }

    pub(crate) fn from_params(
        shape: Shape,
        rank: usize,
        channels: usize,
        hidden: usize,
        params: Vec<f64>,
    ) -> Self {
        let layout = Layout::new(&shape, rank, channels, hidden);
        debug_assert_eq!(params.len(), layout.total);
        let mut emb_offsets = Vec::with_capacity(shape.order());
        let mut off = 0;
        for &d in shape.dims() {
            emb_offsets.push(off);
            off += d * rank;
        }
        Self {
            shape,
            layout,
            emb_offsets,
            params,
        }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.layout.rank
    }

    pub fn channels(&self) -> usize {
        self.layout.channels
    }

    pub fn hidden(&self) -> usize {
        self.layout.hidden
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn forward(&self, index: &[usize]) -> Forward {
        let Layout {
            order: n_modes,
            rank,
            channels,
            hidden,
            ..
        } = self.layout;
        let l = &self.layout;
        let p = &self.params;

        let mut x = Vec::with_capacity(n_modes * rank);
        for (n, &i) in index.iter().enumerate() {
            let start = self.emb_offsets[n] + i * rank;
            x.extend_from_slice(&p[start..start + rank]);
        }

        let mut z1 = vec![0.0; n_modes * channels];
        for n in 0..n_modes {
            let row = &x[n * rank..(n + 1) * rank];
            for c in 0..channels {
                let w = &p[l.w1 + c * rank..l.w1 + (c + 1) * rank];
                z1[n * channels + c] =
                    p[l.b1 + c] + w.iter().zip(row).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        let h1: Vec<f64> = z1.iter().map(|&z| relu(z)).collect();

        let mut z2 = vec![0.0; channels];
        for (co, z) in z2.iter_mut().enumerate() {
            let mut acc = p[l.b2 + co];
            for ci in 0..channels {
                let base = l.w2 + (co * channels + ci) * n_modes;
                for n in 0..n_modes {
                    acc += p[base + n] * h1[n * channels + ci];
                }
            }
            *z = acc;
        }
        let h2: Vec<f64> = z2.iter().map(|&z| relu(z)).collect();

        let mut z3 = vec![0.0; hidden];
        for (h, z) in z3.iter_mut().enumerate() {
            let w = &p[l.w3 + h * channels..l.w3 + (h + 1) * channels];
            *z = p[l.b3 + h] + w.iter().zip(&h2).map(|(a, b)| a * b).sum::<f64>();
        }
        let h3: Vec<f64> = z3.iter().map(|&z| relu(z)).collect();

        let out = p[l.b4]
            + p[l.w4..l.w4 + hidden]
                .iter()
                .zip(&h3)
                .map(|(a, b)| a * b)
                .sum::<f64>();

        Forward {
            x,
            z1,
            h1,
            z2,
            h2,
            z3,
            h3,
            out,
        }
    }

    pub(crate) fn predict(&self, index: &[usize]) -> f64 {
        self.forward(index).out
    }

    /// Smallest absolute pre-activation of any rectifier at this index.
    ///
    /// Finite-difference checks are only meaningful away from the kinks.
    pub fn kink_margin(&self, index: &[usize]) -> f64 {
        let f = self.forward(index);
        f.z1.iter()
            .chain(&f.z2)
            .chain(&f.z3)
            .fold(f64::INFINITY, |m, z| m.min(z.abs()))
    }

    pub(crate) fn accumulate_gradient(&self, index: &[usize], upstream: f64, grad: &mut [f64]) {
        let Layout {
            order: n_modes,
            rank,
            channels,
            hidden,
            ..
        } = self.layout;
        let l = self.layout;
        let p = &self.params;
        let f = self.forward(index);

        grad[l.b4] += upstream;
        let mut dz3 = vec![0.0; hidden];
        for h in 0..hidden {
            grad[l.w4 + h] += upstream * f.h3[h];
            if f.z3[h] > 0.0 {
                dz3[h] = upstream * p[l.w4 + h];
            }
        }

        let mut dh2 = vec![0.0; channels];
        for (h, &d) in dz3.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            grad[l.b3 + h] += d;
            for c in 0..channels {
                grad[l.w3 + h * channels + c] += d * f.h2[c];
                dh2[c] += d * p[l.w3 + h * channels + c];
            }
        }
        let dz2: Vec<f64> = dh2
            .iter()
            .zip(&f.z2)
            .map(|(&d, &z)| if z > 0.0 { d } else { 0.0 })
            .collect();

        let mut dh1 = vec![0.0; n_modes * channels];
        for (co, &d) in dz2.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            grad[l.b2 + co] += d;
            for ci in 0..channels {
                let base = l.w2 + (co * channels + ci) * n_modes;
                for n in 0..n_modes {
                    grad[base + n] += d * f.h1[n * channels + ci];
                    dh1[n * channels + ci] += d * p[base + n];
                }
            }
        }

        for n in 0..n_modes {
            let row = &f.x[n * rank..(n + 1) * rank];
            let emb = self.emb_offsets[n] + index[n] * rank;
            for c in 0..channels {
                if f.z1[n * channels + c] <= 0.0 {
                    continue;
                }
                let d = dh1[n * channels + c];
                grad[l.b1 + c] += d;
                for r in 0..rank {
                    grad[l.w1 + c * rank + r] += d * row[r];
                    grad[emb + r] += d * p[l.w1 + c * rank + r];
                }
            }
        }
    }
}
