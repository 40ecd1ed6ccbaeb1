//! Low-rank, high-rank and smooth synthetic tensors.

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeded_rng;
use crate::tensor::{DenseTensor, Shape};

/// Affine map applied to the raw values: `scaled = (raw − offset) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub offset: f64,
    pub scale: f64,
}

impl Scaling {
    pub fn apply(&self, raw: f64) -> f64 {
        (raw - self.offset) / self.scale
    }

    pub fn invert(&self, scaled: f64) -> f64 {
        scaled * self.scale + self.offset
    }
}

/// Min-max scaling onto `[0, 1]`; a constant tensor maps to 0.5.
pub fn min_max_scale(raw: &DenseTensor) -> (DenseTensor, Scaling) {
    let (lo, hi) = (raw.min(), raw.max());
    if hi > lo {
        let s = Scaling {
            offset: lo,
            scale: hi - lo,
        };
        (map(raw, |v| s.apply(v).clamp(0.0, 1.0)), s)
    } else {
        let s = Scaling {
            offset: lo - 0.5,
            scale: 1.0,
        };
        (map(raw, |_| 0.5), s)
    }
}

fn map(t: &DenseTensor, f: impl Fn(f64) -> f64) -> DenseTensor {
    DenseTensor::new(t.shape().clone(), t.values().iter().map(|&v| f(v)).collect())
        .expect("same shape, finite values")
}

/// Sum of `rank` outer products of uniform `[0, 1)` vectors plus i.i.d.
/// Gaussian noise with standard deviation `noise`, scaled into `[0, 1]`.
///
/// A non-negative result is divided by its maximum, which keeps the CP rank
/// unchanged; with negative values (noise) the tensor is min-max scaled.
pub fn generate_lowrank(shape: &Shape, rank: usize, noise: f64, seed: u64) -> Result<(DenseTensor, Scaling)> {
    if rank == 0 {
        return Err(Error::InvalidRank("true rank must be positive".into()));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise level {noise} must be >= 0")));
    }
    let mut rng = seeded_rng(seed);
    let factors: Vec<Vec<f64>> = shape
        .dims()
        .iter()
        .map(|&d| (0..d * rank).map(|_| rng.random::<f64>()).collect())
        .collect();
    let normal = Normal::new(0.0, noise.max(f64::MIN_POSITIVE)).expect("valid deviation");
    let raw = DenseTensor::from_fn(shape.clone(), |idx| {
        let clean: f64 = (0..rank)
            .map(|k| idx.iter().zip(&factors).map(|(&i, f)| f[i * rank + k]).product::<f64>())
            .sum();
        if noise > 0.0 {
            clean + normal.sample(&mut rng)
        } else {
            clean
        }
    })?;
    if raw.min() >= 0.0 && raw.max() > 0.0 {
        let s = Scaling {
            offset: 0.0,
            scale: raw.max(),
        };
        Ok((map(&raw, |v| s.apply(v)), s))
    } else {
        Ok(min_max_scale(&raw))
    }
}

/// Independent uniform `[0, 1)` entries: generically of full rank.
pub fn generate_highrank(shape: &Shape, seed: u64) -> Result<DenseTensor> {
    let mut rng = seeded_rng(seed);
    DenseTensor::from_fn(shape.clone(), |_| rng.random::<f64>())
}

/// One separable term `amplitude · Π_n cos(2π·frequency_n·i_n/I_n + phase_n)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothTerm {
    pub amplitude: f64,
    pub frequencies: Vec<f64>,
    pub phases: Vec<f64>,
}

impl SmoothTerm {
    pub fn eval(&self, idx: &[usize], dims: &[usize]) -> f64 {
        self.amplitude
            * idx
                .iter()
                .zip(dims)
                .zip(self.frequencies.iter().zip(&self.phases))
                .map(|((&i, &d), (&f, &p))| (TAU * f * i as f64 / d as f64 + p).cos())
                .product::<f64>()
    }
}

pub const SMOOTH_TERMS: usize = 3;

/// The terms summed by [`generate_smooth`]: amplitudes uniform on `[0.5, 1]`,
/// per-mode frequencies uniform on `[0, frequency]`, phases uniform on `[0, 2π)`.
pub fn smooth_terms(order: usize, frequency: f64, seed: u64) -> Result<Vec<SmoothTerm>> {
    if !(frequency >= 0.0 && frequency.is_finite()) {
        return Err(Error::InvalidArgument(format!("frequency {frequency} must be >= 0")));
    }
    let mut rng = seeded_rng(seed);
    Ok((0..SMOOTH_TERMS)
        .map(|_| SmoothTerm {
            amplitude: rng.random_range(0.5..=1.0),
            frequencies: (0..order).map(|_| frequency * rng.random::<f64>()).collect(),
            phases: (0..order).map(|_| TAU * rng.random::<f64>()).collect(),
        })
        .collect())
}

/// Sum of low-frequency separable cosine products, min-max scaled to `[0, 1]`.
/// Frequency 0 gives a constant tensor (all entries 0.5).
pub fn generate_smooth(shape: &Shape, frequency: f64, seed: u64) -> Result<(DenseTensor, Scaling)> {
    let terms = smooth_terms(shape.order(), frequency, seed)?;
    let dims = shape.dims();
    let raw = DenseTensor::from_fn(shape.clone(), |idx| terms.iter().map(|t| t.eval(idx, dims)).sum())?;
    Ok(min_max_scale(&raw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{decompose_dense, CompletionModel, DecomposeConfig, ModelKind};
    use crate::smoothness::{smoothness_penalty, SmoothnessConfig};

    fn shape(d: &[usize]) -> Shape {
        Shape::new(d.to_vec()).unwrap()
    }

    #[test]
    fn rank_one_minors_vanish() {
        let (t, _) = generate_lowrank(&shape(&[4, 5, 3]), 1, 0.0, 7).unwrap();
        // Mode-1 unfolding: rows i, columns (j, k); every 2×2 minor is zero.
        let at = |i: usize, c: usize| t.get(&[i, c / 3, c % 3]).unwrap();
        for i in 0..4 {
            for i2 in i + 1..4 {
                for c in 0..15 {
                    for c2 in c + 1..15 {
                        let det = at(i, c) * at(i2, c2) - at(i, c2) * at(i2, c);
                        assert!(det.abs() < 1e-12, "{det}");
                    }
                }
            }
        }
        assert!(t.max() <= 1.0 && t.min() >= 0.0);
    }

    #[test]
    fn lowrank_fits_at_true_rank() {
        for rank in [2, 3] {
            let (t, _) = generate_lowrank(&shape(&[6, 6, 6]), rank, 0.0, rank as u64).unwrap();
            let fit = decompose_dense(&t, rank, &DecomposeConfig::default()).unwrap();
            assert!(fit.normalized_error < 1e-2, "rank {rank}: {}", fit.normalized_error);
        }
    }

    #[test]
    fn noisy_lowrank_is_min_max_scaled() {
        let (t, s) = generate_lowrank(&shape(&[5, 5, 5]), 2, 0.3, 1).unwrap();
        assert!((t.min() - 0.0).abs() < 1e-12 && (t.max() - 1.0).abs() < 1e-12);
        assert!(s.scale > 0.0);
        assert_eq!(generate_lowrank(&shape(&[5, 5, 5]), 2, 0.3, 1).unwrap().0, t);
        assert!(generate_lowrank(&shape(&[5]), 0, 0.0, 1).is_err());
        assert!(generate_lowrank(&shape(&[5]), 1, -1.0, 1).is_err());
    }

    #[test]
    fn constant_smooth_tensor_has_zero_penalty() {
        let s = shape(&[4, 5, 3]);
        let (t, _) = generate_smooth(&s, 0.0, 3).unwrap();
        assert!(t.values().iter().all(|&v| v == 0.5));
        // Exact rank-1 factorisation with constant factors.
        let c = 0.5f64.powf(1.0 / 3.0);
        let cp = CompletionModel::from_params(&ModelKind::cp(1), &s, vec![c; 12]).unwrap();
        let recon = cp.reconstruct(&s).unwrap();
        assert!(recon.values().iter().all(|v| (v - 0.5).abs() < 1e-12));
        assert_eq!(smoothness_penalty(cp.as_cp().unwrap(), &SmoothnessConfig::default()).unwrap(), 0.0);
    }

    #[test]
    fn smooth_differences_respect_lipschitz_bound() {
        let s = shape(&[10, 8, 6]);
        for seed in 0..5 {
            let freq = 1.5;
            let (t, scaling) = generate_smooth(&s, freq, seed).unwrap();
            let terms = smooth_terms(3, freq, seed).unwrap();
            for mode in 0..3 {
                // |d/di cos(2π f i / I + φ)| ≤ 2π f / I, other factors bounded by 1.
                let bound: f64 = terms
                    .iter()
                    .map(|t| t.amplitude * TAU * t.frequencies[mode] / s.dim(mode) as f64)
                    .sum::<f64>()
                    / scaling.scale;
                let mut worst: f64 = 0.0;
                for idx in s.indices() {
                    if idx[mode] + 1 < s.dim(mode) {
                        let mut next = idx.clone();
                        next[mode] += 1;
                        worst = worst.max((t.get(&idx).unwrap() - t.get(&next).unwrap()).abs());
                    }
                }
                assert!(worst <= bound + 1e-12, "mode {mode}: {worst} > {bound}");
            }
            assert_eq!(generate_smooth(&s, freq, seed).unwrap().0, t);
        }
    }

    #[test]
    fn scaling_inverts() {
        let (t, s) = generate_smooth(&shape(&[4, 4]), 1.0, 2).unwrap();
        let raw: Vec<f64> = t.values().iter().map(|&v| s.invert(v)).collect();
        for (r, v) in raw.iter().zip(t.values()) {
            assert!((s.apply(*r) - v).abs() < 1e-12);
        }
    }
}
