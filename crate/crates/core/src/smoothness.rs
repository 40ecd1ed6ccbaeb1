//! Kernel-smoothness penalty for CP factor matrices.
//!
//! Each factor row `a_i` is tied to `ã_i = Σ_s w(i, s) a_s`, a Gaussian-kernel
//! weighted average of the other rows within distance `S`:
//!
//! ```text
//! K(i, s) = exp(−(i − s)² / (2σ²))        w(i, s) = K(i, s) / Σ_s' K(i, s')
//! penalty  = Σ_n Σ_i ‖a_i^(n) − ã_i^(n)‖²
//! ```
//!
//! The row itself is never part of its own neighbourhood. A mode of size 1
//! has no neighbours and contributes nothing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::CpModel;
use crate::training::Regularizer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoothnessConfig {
    pub lambda: f64,
    pub window: usize,
    pub sigma: f64,
    /// Modes to smooth; `None` smooths every mode.
    pub modes: Option<Vec<usize>>,
}

impl Default for SmoothnessConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            window: 1,
            sigma: 1.0,
            modes: None,
        }
    }
}

impl SmoothnessConfig {
    pub fn with_lambda(lambda: f64) -> Self {
        Self {
            lambda,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lambda {} must be a non-negative number",
                self.lambda
            )));
        }
        if self.window == 0 {
            return Err(Error::InvalidArgument("window must be at least 1".into()));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sigma {} must be positive",
                self.sigma
            )));
        }
        Ok(())
    }
}

/// Normalised neighbour weights for every row of one mode.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelWeights {
    pub mode_size: usize,
    pub window: usize,
    pub sigma: f64,
    rows: Vec<Vec<(usize, f64)>>,
}

impl KernelWeights {
    /// `(neighbour, weight)` pairs of row `i`, nearest-first is not guaranteed.
    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }
}

pub fn kernel_weights(mode_size: usize, window: usize, sigma: f64) -> Result<KernelWeights> {
    if mode_size == 0 {
        return Err(Error::InvalidArgument("mode size must be positive".into()));
    }
    if window == 0 {
        return Err(Error::InvalidArgument("window must be at least 1".into()));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma {sigma} must be positive")));
    }
    let rows = (0..mode_size)
        .map(|i| {
            let lo = i.saturating_sub(window);
            let hi = (i + window).min(mode_size - 1);
            let kernels: Vec<(usize, f64)> = (lo..=hi)
                .filter(|&s| s != i)
                .map(|s| {
                    let d = s as f64 - i as f64;
                    (s, (-d * d / (2.0 * sigma * sigma)).exp())
                })
                .collect();
            let total: f64 = kernels.iter().map(|k| k.1).sum();
            kernels.into_iter().map(|(s, k)| (s, k / total)).collect()
        })
        .collect();
    Ok(KernelWeights {
        mode_size,
        window,
        sigma,
        rows,
    })
}

/// `ã_i`: weighted average of the neighbour rows of row `i` in a row-major
/// `I × R` factor.
pub fn smoothed_row(factor: &[f64], rank: usize, i: usize, weights: &KernelWeights) -> Vec<f64> {
    let mut out = vec![0.0; rank];
    for &(s, w) in weights.row(i) {
        for (o, a) in out.iter_mut().zip(&factor[s * rank..(s + 1) * rank]) {
            *o += w * a;
        }
    }
    out
}

/// The penalty bound to one CP parameter layout, with weights precomputed.
#[derive(Debug, Clone)]
pub struct SmoothnessRegularizer {
    lambda: f64,
    rank: usize,
    /// `(parameter offset, weights)` per smoothed mode.
    modes: Vec<(usize, KernelWeights)>,
}

impl SmoothnessRegularizer {
    pub fn new(config: &SmoothnessConfig, model: &CpModel) -> Result<Self> {
        config.validate()?;
        let order = model.shape().order();
        let selected: Vec<usize> = match &config.modes {
            None => (0..order).collect(),
            Some(m) => {
                if let Some(&bad) = m.iter().find(|&&n| n >= order) {
                    return Err(Error::InvalidArgument(format!(
                        "smoothed mode {bad} does not exist in an order-{order} tensor"
                    )));
                }
                m.clone()
            }
        };
        let modes = selected
            .into_iter()
            .map(|n| {
                Ok((
                    model.factor_offset(n),
                    kernel_weights(model.shape().dim(n), config.window, config.sigma)?,
                ))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            lambda: config.lambda,
            rank: model.rank(),
            modes,
        })
    }

    fn residuals(&self, params: &[f64], mut visit: impl FnMut(usize, &KernelWeights, usize, &[f64])) {
        let r = self.rank;
        let mut d = vec![0.0; r];
        for (offset, weights) in &self.modes {
            let factor = &params[*offset..*offset + weights.mode_size * r];
            for i in 0..weights.mode_size {
                if weights.row(i).is_empty() {
                    continue;
                }
                let smooth = smoothed_row(factor, r, i, weights);
                for k in 0..r {
                    d[k] = factor[i * r + k] - smooth[k];
                }
                visit(*offset, weights, i, &d);
            }
        }
    }
}

impl Regularizer for SmoothnessRegularizer {
    fn lambda(&self) -> f64 {
        self.lambda
    }

    fn penalty(&self, params: &[f64]) -> f64 {
        let mut total = 0.0;
        self.residuals(params, |_, _, _, d| {
            total += d.iter().map(|x| x * x).sum::<f64>();
        });
        total
    }

    fn accumulate_gradient(&self, params: &[f64], scale: f64, grad: &mut [f64]) {
        let r = self.rank;
        self.residuals(params, |offset, weights, i, d| {
            for k in 0..r {
                grad[offset + i * r + k] += scale * 2.0 * d[k];
            }
            for &(s, w) in weights.row(i) {
                for k in 0..r {
                    grad[offset + s * r + k] -= scale * 2.0 * w * d[k];
                }
            }
        });
    }
}

pub fn smoothness_penalty(model: &CpModel, config: &SmoothnessConfig) -> Result<f64> {
    Ok(SmoothnessRegularizer::new(config, model)?.penalty(model.params()))
}

/// Gradient of the (unweighted) penalty with respect to every CP parameter.
pub fn smoothness_gradient(model: &CpModel, config: &SmoothnessConfig) -> Result<Vec<f64>> {
    let reg = SmoothnessRegularizer::new(config, model)?;
    let mut grad = vec![0.0; model.params().len()];
    reg.accumulate_gradient(model.params(), 1.0, &mut grad);
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{init_model, CompletionModel, ModelInit, ModelKind};
    use crate::tensor::Shape;

    fn cp(dims: &[usize], rank: usize, params: Vec<f64>) -> CpModel {
        let m = CompletionModel::from_params(
            &ModelKind::cp(rank),
            &Shape::new(dims.to_vec()).unwrap(),
            params,
        )
        .unwrap();
        match m {
            CompletionModel::Cp(c) => c,
            _ => unreachable!(),
        }
    }

    #[test]
    fn boundary_singleton() {
        let w = kernel_weights(5, 1, 1.0).unwrap();
        assert_eq!(w.row(0), &[(1, 1.0)]);
        assert_eq!(w.row(4), &[(3, 1.0)]);
    }

    #[test]
    fn interior_halves() {
        let w = kernel_weights(5, 1, 1.0).unwrap();
        assert_eq!(w.row(2), &[(1, 0.5), (3, 0.5)]);
    }

    #[test]
    fn window_two_direct_formula() {
        let w = kernel_weights(5, 2, 1.0).unwrap();
        let far = (-2.0f64).exp();
        let near = (-0.5f64).exp();
        let total = 2.0 * far + 2.0 * near;
        let want = [(0, far / total), (1, near / total), (3, near / total), (4, far / total)];
        for (got, want) in w.row(2).iter().zip(want) {
            assert_eq!(got.0, want.0);
            assert!((got.1 - want.1).abs() < 1e-15);
        }
    }

    #[test]
    fn size_one_mode_has_no_neighbours() {
        let w = kernel_weights(1, 2, 1.0).unwrap();
        assert!(w.row(0).is_empty());
        let m = cp(&[1, 3], 2, vec![5.0, -5.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        assert_eq!(smoothness_penalty(&m, &SmoothnessConfig::default()).unwrap(), 0.0);
    }

    #[test]
    fn invalid_arguments() {
        assert!(kernel_weights(4, 0, 1.0).is_err());
        assert!(kernel_weights(4, 1, 0.0).is_err());
        assert!(kernel_weights(0, 1, 1.0).is_err());
        let m = cp(&[2, 2], 1, vec![1.0; 4]);
        let cfg = SmoothnessConfig {
            modes: Some(vec![2]),
            ..SmoothnessConfig::default()
        };
        assert!(smoothness_penalty(&m, &cfg).is_err());
    }

    #[test]
    fn smoothed_rows() {
        let w = kernel_weights(3, 1, 1.0).unwrap();
        let same = [0.4, -1.0, 0.4, -1.0, 0.4, -1.0];
        assert_eq!(smoothed_row(&same, 2, 1, &w), vec![0.4, -1.0]);

        let w2 = kernel_weights(2, 1, 1.0).unwrap();
        assert_eq!(smoothed_row(&[0.0, 2.0], 1, 0, &w2), vec![2.0]);

        let w4 = kernel_weights(4, 1, 1.0).unwrap();
        let f = [1.0, 2.0, 3.0, 7.0];
        assert_eq!(smoothed_row(&f, 1, 1, &w4), vec![0.5 * 1.0 + 0.5 * 3.0]);
        assert_eq!(smoothed_row(&f, 1, 2, &w4), vec![0.5 * 2.0 + 0.5 * 7.0]);
    }

    #[test]
    fn equal_rows_zero_penalty() {
        let m = cp(&[3, 4], 2, [0.3, 0.7].repeat(7));
        assert_eq!(smoothness_penalty(&m, &SmoothnessConfig::default()).unwrap(), 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let s = Shape::new(vec![4, 5]).unwrap();
        let cfg = SmoothnessConfig {
            window: 2,
            sigma: 1.3,
            ..SmoothnessConfig::default()
        };
        for seed in 0..10 {
            let m = init_model(&ModelKind::cp(3), &s, &ModelInit::new(seed)).unwrap();
            let c = m.as_cp().unwrap().clone();
            let g = smoothness_gradient(&c, &cfg).unwrap();
            let h = 1e-5;
            let mut worst: f64 = 0.0;
            for p in 0..c.params().len() {
                let mut plus = c.clone();
                plus.params_mut()[p] += h;
                let mut minus = c.clone();
                minus.params_mut()[p] -= h;
                let fd = (smoothness_penalty(&plus, &cfg).unwrap()
                    - smoothness_penalty(&minus, &cfg).unwrap())
                    / (2.0 * h);
                worst = worst.max((fd - g[p]).abs() / g[p].abs().max(1e-6));
            }
            assert!(worst < 1e-4, "seed {seed}: {worst}");
        }
    }

    #[test]
    fn penalty_scales_quadratically() {
        let s = Shape::new(vec![5, 3, 4]).unwrap();
        let m = init_model(&ModelKind::cp(2), &s, &ModelInit::new(3)).unwrap();
        let c = m.as_cp().unwrap();
        let base = smoothness_penalty(c, &SmoothnessConfig::default()).unwrap();
        let mut scaled = c.clone();
        scaled.params_mut().iter_mut().for_each(|p| *p *= 3.0);
        let p3 = smoothness_penalty(&scaled, &SmoothnessConfig::default()).unwrap();
        assert!((p3 - 9.0 * base).abs() < 1e-12 * p3.max(1.0));
    }

    #[test]
    fn wider_sigma_lifts_far_neighbour() {
        for size in [4, 7, 12] {
            for window in 1..=3 {
                let mut prev = 0.0;
                for sigma in [0.25, 0.5, 1.0, 2.0, 4.0] {
                    let w = kernel_weights(size, window, sigma).unwrap();
                    let i = size / 2;
                    let far = w
                        .row(i)
                        .iter()
                        .max_by_key(|(s, _)| s.abs_diff(i))
                        .unwrap()
                        .1;
                    assert!(far >= prev - 1e-15);
                    prev = far;
                }
            }
        }
    }
}
