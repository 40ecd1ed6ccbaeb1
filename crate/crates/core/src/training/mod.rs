//! Masked-MSE objective, Adam and the full-batch training loop.
//!
//! Only observed entries enter the loss: the mean is taken over the training
//! part of the observed set, so an unobserved index never contributes to the
//! loss or its gradient. A slice of the observed entries can be held out for
//! early stopping.

mod adam;
mod naive;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{init_model, CompletionModel, EntryModel, ModelInit, ModelKind, Parametric};
use crate::smoothness::{SmoothnessConfig, SmoothnessRegularizer};
use crate::tensor::{split_entries, HoldoutRole, SparseTensor, SplitSpec};

pub use adam::{adam_step, AdamParams, AdamState};
pub use naive::naive_baseline;

/// A penalty on the raw parameter vector, added to the loss with weight λ.
pub trait Regularizer: Sync {
    fn lambda(&self) -> f64;
    fn penalty(&self, params: &[f64]) -> f64;
    /// Adds `scale · ∇penalty` into `grad`.
    fn accumulate_gradient(&self, params: &[f64], scale: f64, grad: &mut [f64]);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_epochs: usize,
    pub patience: usize,
    /// Relative improvement of the monitored loss that resets patience.
    pub tolerance: f64,
    pub seed: u64,
    pub regularizer: Option<SmoothnessConfig>,
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_epochs: 2000,
            patience: 200,
            tolerance: 1e-6,
            seed: 0,
            regularizer: None,
            validation_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_smoothness(mut self, smoothness: SmoothnessConfig) -> Self {
        self.regularizer = Some(smoothness);
        self
    }

    pub fn adam(&self) -> AdamParams {
        AdamParams {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be >= 0", self.learning_rate));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return bad(format!("{name} = {b} not in (0, 1)"));
            }
        }
        if !(self.epsilon > 0.0) {
            return bad(format!("epsilon {} must be positive", self.epsilon));
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive".into());
        }
        if !(self.tolerance >= 0.0) {
            return bad(format!("tolerance {} must be >= 0", self.tolerance));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad(format!(
                "validation fraction {} not in [0, 1)",
                self.validation_fraction
            ));
        }
        if let Some(r) = &self.regularizer {
            r.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    EarlyStop,
    Divergence,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopReason::MaxEpochs => "max_epochs",
            StopReason::EarlyStop => "early_stop",
            StopReason::Divergence => "divergence",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub ms: f64,
}

#[derive(Debug, Clone)]
pub struct TrainTrace {
    pub epochs: Vec<EpochRecord>,
    /// Parameters with the best monitored loss seen during training.
    pub model: CompletionModel,
    pub stop_reason: StopReason,
    /// Training objective at the initial parameters.
    pub initial_loss: f64,
    pub best_epoch: usize,
    /// Re-initialisations performed by [`fit`].
    pub restarts: usize,
}

impl TrainTrace {
    pub fn final_train_loss(&self) -> f64 {
        self.epochs.last().map_or(self.initial_loss, |e| e.train_loss)
    }

    /// Same losses, epochs, stop reason and final parameters; timings ignored.
    pub fn same_run(&self, other: &TrainTrace) -> bool {
        self.stop_reason == other.stop_reason
            && self.model == other.model
            && self.epochs.len() == other.epochs.len()
            && self.epochs.iter().zip(&other.epochs).all(|(a, b)| {
                a.epoch == b.epoch
                    && a.train_loss.to_bits() == b.train_loss.to_bits()
                    && a.val_loss.map(f64::to_bits) == b.val_loss.map(f64::to_bits)
            })
    }

    /// `epoch,train_loss,val_loss,ms` with an empty field when there is no
    /// validation set.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,ms\n");
        for e in &self.epochs {
            let val = e.val_loss.map(|v| format!("{v:?}")).unwrap_or_default();
            out.push_str(&format!(
                "{},{:?},{},{:.3}\n",
                e.epoch, e.train_loss, val, e.ms
            ));
        }
        out
    }
}

fn check_compatible<M: EntryModel + ?Sized>(model: &M, observed: &SparseTensor) -> Result<()> {
    if model.shape() != observed.shape() {
        return Err(Error::ShapeMismatch {
            expected: model.shape().dims().to_vec(),
            found: observed.shape().dims().to_vec(),
        });
    }
    if observed.is_empty() {
        return Err(Error::Empty("observed entries"));
    }
    Ok(())
}

/// Mean squared error over the observed entries only.
pub fn masked_mse<M: EntryModel + ?Sized>(model: &M, observed: &SparseTensor) -> Result<f64> {
    check_compatible(model, observed)?;
    let sum: f64 = observed
        .iter()
        .map(|(idx, x)| (x - model.predict_unchecked(idx)).powi(2))
        .sum();
    Ok(sum / observed.len() as f64)
}

/// Masked MSE and its gradient with respect to every model parameter.
pub fn masked_mse_gradient<M: EntryModel + ?Sized>(
    model: &M,
    observed: &SparseTensor,
) -> Result<(f64, Vec<f64>)> {
    check_compatible(model, observed)?;
    let mut grad = vec![0.0; model.num_params()];
    let loss = accumulate_mse(model, observed, &mut grad);
    Ok((loss, grad))
}

fn accumulate_mse<M: EntryModel + ?Sized>(
    model: &M,
    observed: &SparseTensor,
    grad: &mut [f64],
) -> f64 {
    let m = observed.len() as f64;
    let mut sum = 0.0;
    for (idx, x) in observed.iter() {
        let r = model.predict_unchecked(idx) - x;
        sum += r * r;
        model.accumulate_gradient_unchecked(idx, 2.0 * r / m, grad);
    }
    sum / m
}

/// Splits off the validation slice used for early stopping.
pub fn training_split(
    observed: &SparseTensor,
    config: &TrainConfig,
) -> Result<(SparseTensor, Option<SparseTensor>)> {
    if observed.is_empty() {
        return Err(Error::Empty("observed entries"));
    }
    if config.validation_fraction == 0.0 {
        return Ok((observed.clone(), None));
    }
    let spec = SplitSpec::new(
        config.seed,
        1.0 - config.validation_fraction,
        HoldoutRole::Validation,
    )?;
    let (train, val) = split_entries(observed, &spec)?;
    if train.is_empty() {
        return Err(Error::Empty("training entries after validation split"));
    }
    Ok((train, (!val.is_empty()).then_some(val)))
}

fn build_regularizer(
    model: &CompletionModel,
    config: &TrainConfig,
) -> Result<Option<SmoothnessRegularizer>> {
    match &config.regularizer {
        None => Ok(None),
        Some(cfg) => {
            let cp = model.as_cp().ok_or_else(|| {
                Error::InvalidArgument("smoothness regularisation needs a CP model".into())
            })?;
            Ok(Some(SmoothnessRegularizer::new(cfg, cp)?))
        }
    }
}

/// Runs full-batch Adam on `masked_mse + λ·penalty` until `max_epochs`, early
/// stopping or divergence.
pub fn train(
    model: CompletionModel,
    observed: &SparseTensor,
    config: &TrainConfig,
) -> Result<TrainTrace> {
    config.validate()?;
    check_compatible(&model, observed)?;
    let reg = build_regularizer(&model, config)?;
    let (train_set, val_set) = training_split(observed, config)?;
    train_split(
        model,
        &train_set,
        val_set.as_ref(),
        config,
        reg.as_ref().map(|r| r as &dyn Regularizer),
    )
}

/// The training loop on an explicit train/validation split with an
/// arbitrary regularizer.
pub fn train_split(
    mut model: CompletionModel,
    train_set: &SparseTensor,
    val_set: Option<&SparseTensor>,
    config: &TrainConfig,
    reg: Option<&dyn Regularizer>,
) -> Result<TrainTrace> {
    config.validate()?;
    check_compatible(&model, train_set)?;
    let start = Instant::now();
    let hp = config.adam();
    let n_params = model.num_params();
    let mut state = AdamState::new(n_params);
    let mut grad = vec![0.0; n_params];

    let objective = |model: &CompletionModel, grad: &mut [f64]| -> f64 {
        grad.fill(0.0);
        let mse = accumulate_mse(model, train_set, grad);
        match reg {
            Some(r) => {
                let lambda = r.lambda();
                r.accumulate_gradient(model.params(), lambda, grad);
                mse + lambda * r.penalty(model.params())
            }
            None => mse,
        }
    };
    let validation = |model: &CompletionModel| -> Option<f64> {
        val_set.map(|v| masked_mse(model, v).expect("validation set checked"))
    };

    let initial_loss = objective(&model, &mut grad);
    let mut best_params = model.params().to_vec();
    let mut best_monitor = validation(&model).unwrap_or(initial_loss);
    let mut best_epoch = 0;
    let mut reference = best_monitor;
    let mut stale = 0usize;
    let mut epochs = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;

    if !initial_loss.is_finite() || !best_monitor.is_finite() {
        stop_reason = StopReason::Divergence;
    } else {
        for epoch in 1..=config.max_epochs {
            adam_step(model.params_mut(), &grad, &mut state, &hp);
            let train_loss = objective(&model, &mut grad);
            let val_loss = validation(&model);
            epochs.push(EpochRecord {
                epoch,
                train_loss,
                val_loss,
                ms: start.elapsed().as_secs_f64() * 1e3,
            });
            let monitor = val_loss.unwrap_or(train_loss);
            if !train_loss.is_finite() || !monitor.is_finite() {
                stop_reason = StopReason::Divergence;
                break;
            }
            if monitor < best_monitor {
                best_monitor = monitor;
                best_params.copy_from_slice(model.params());
                best_epoch = epoch;
            }
            if monitor < reference - config.tolerance * reference.abs() {
                reference = monitor;
                stale = 0;
            } else {
                stale += 1;
                if stale > config.patience {
                    stop_reason = StopReason::EarlyStop;
                    break;
                }
            }
        }
    }
    model.params_mut().copy_from_slice(&best_params);
    log::debug!(
        "trained {} for {} epochs ({}), best epoch {best_epoch}",
        model.kind().family_name(),
        epochs.len(),
        stop_reason.as_str()
    );
    Ok(TrainTrace {
        epochs,
        model,
        stop_reason,
        initial_loss,
        best_epoch,
        restarts: 0,
    })
}

/// Seed used for the single automatic re-initialisation of neural models.
pub fn restart_seed(seed: u64) -> u64 {
    seed ^ 0x9E37_79B9_7F4A_7C15
}

/// Initialises a model of `kind`, trains it, and for the neural family
/// restarts once with a fresh seed if training ended above the initial loss.
pub fn fit(
    kind: &ModelKind,
    observed: &SparseTensor,
    init: &ModelInit,
    config: &TrainConfig,
) -> Result<TrainTrace> {
    let model = init_model(kind, observed.shape(), init)?;
    let trace = train(model, observed, config)?;
    if trace.model.is_neural()
        && (trace.final_train_loss() > trace.initial_loss
            || trace.stop_reason == StopReason::Divergence)
    {
        log::info!("neural model failed to converge; restarting with a new seed");
        let retry_init = ModelInit {
            seed: restart_seed(init.seed),
            ..*init
        };
        let model = init_model(kind, observed.shape(), &retry_init)?;
        let mut retry = train(model, observed, config)?;
        retry.restarts = 1;
        return Ok(retry);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{init_model, ModelInit, ModelKind};
    use crate::tensor::{sample_observed, DenseTensor, Shape};

    fn rank_one(dims: &[usize], seed: u64) -> DenseTensor {
        let s = Shape::new(dims.to_vec()).unwrap();
        let m = init_model(&ModelKind::cp(1), &s, &ModelInit::new(seed)).unwrap();
        let d = m.reconstruct(&s).unwrap();
        let scale = d.values().iter().fold(0f64, |a, v| a.max(v.abs()));
        DenseTensor::new(s, d.values().iter().map(|v| v / scale).collect()).unwrap()
    }

    #[test]
    fn mse_hand_values() {
        let s = Shape::new(vec![2]).unwrap();
        let m = CompletionModel::from_params(&ModelKind::cp(1), &s, vec![3.0, 1.0]).unwrap();
        let one = SparseTensor::from_entries(s.clone(), vec![(vec![0], 1.0)]).unwrap();
        assert_eq!(masked_mse(&m, &one).unwrap(), 4.0);
        let two = SparseTensor::from_entries(s.clone(), vec![(vec![0], 2.0), (vec![1], 4.0)]).unwrap();
        assert_eq!(masked_mse(&m, &two).unwrap(), 5.0);
        let exact = SparseTensor::from_entries(s.clone(), vec![(vec![0], 3.0), (vec![1], 1.0)]).unwrap();
        assert_eq!(masked_mse(&m, &exact).unwrap(), 0.0);
        assert!(masked_mse(&m, &SparseTensor::empty(s)).is_err());
    }

    #[test]
    fn exact_recovery_rank_one() {
        let truth = rank_one(&[8, 8, 8], 3);
        let obs = sample_observed(&truth, 0.2, 1).unwrap();
        let trace = fit(&ModelKind::cp(1), &obs, &ModelInit::new(1), &TrainConfig::default()).unwrap();
        let pred = trace.model.reconstruct(truth.shape()).unwrap();
        let mae = crate::metrics::mae(&pred, &truth, &obs.unobserved_flat()).unwrap();
        assert!(mae < 1e-3, "mae {mae}, {:?} after {} epochs", trace.stop_reason, trace.epochs.len());
    }

    #[test]
    fn zero_learning_rate_freezes() {
        let truth = rank_one(&[4, 4, 4], 1);
        let obs = sample_observed(&truth, 0.5, 1).unwrap();
        let m = init_model(&ModelKind::cp(2), truth.shape(), &ModelInit::new(4)).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            max_epochs: 30,
            ..TrainConfig::default()
        };
        let trace = train(m.clone(), &obs, &cfg).unwrap();
        assert_eq!(trace.model, m);
    }

    #[test]
    fn deterministic_traces() {
        let truth = rank_one(&[5, 5, 5], 2);
        let obs = sample_observed(&truth, 0.3, 2).unwrap();
        let cfg = TrainConfig {
            max_epochs: 200,
            ..TrainConfig::default()
        };
        let a = fit(&ModelKind::cp(2), &obs, &ModelInit::new(5), &cfg).unwrap();
        let b = fit(&ModelKind::cp(2), &obs, &ModelInit::new(5), &cfg).unwrap();
        assert!(a.same_run(&b));
        assert!(a.to_csv().starts_with("epoch,train_loss,val_loss,ms\n1,"));
    }

    #[test]
    fn divergence_returns_best_so_far() {
        let truth = rank_one(&[4, 4, 4], 1);
        let obs = sample_observed(&truth, 0.5, 1).unwrap();
        let m = init_model(&ModelKind::cp(2), truth.shape(), &ModelInit::new(4)).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e150,
            max_epochs: 50,
            validation_fraction: 0.0,
            ..TrainConfig::default()
        };
        let trace = train(m, &obs, &cfg).unwrap();
        assert_eq!(trace.stop_reason, StopReason::Divergence);
        assert!(trace.model.params().iter().all(|p| p.is_finite()));
    }

    #[test]
    fn validation_values_never_reach_gradient() {
        let truth = rank_one(&[5, 5, 5], 7);
        let obs = sample_observed(&truth, 0.4, 3).unwrap();
        let cfg = TrainConfig::default().with_seed(11);
        let (train_a, val_a) = training_split(&obs, &cfg).unwrap();
        let val_a = val_a.unwrap();
        let perturbed: Vec<f64> = obs
            .flat_indices()
            .iter()
            .zip(obs.values())
            .map(|(f, v)| if val_a.position_of_flat(*f).is_some() { v + 100.0 } else { *v })
            .collect();
        let obs_b = obs.with_values(perturbed).unwrap();
        let (train_b, _) = training_split(&obs_b, &cfg).unwrap();
        let m = init_model(&ModelKind::cp(2), truth.shape(), &ModelInit::new(1)).unwrap();
        let ga = masked_mse_gradient(&m, &train_a).unwrap();
        let gb = masked_mse_gradient(&m, &train_b).unwrap();
        assert_eq!(ga, gb);
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        c.beta1 = 1.0;
        assert!(c.validate().is_err());
        let c = TrainConfig {
            validation_fraction: 1.0,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
        assert!(serde_json::from_str::<TrainConfig>(r#"{"learning_rate":0.1,"bogus":1}"#).is_err());
        let c: TrainConfig = serde_json::from_str(r#"{"max_epochs":10}"#).unwrap();
        assert_eq!(c.max_epochs, 10);
        assert_eq!(c.learning_rate, 0.01);
    }

    #[test]
    fn regularizer_requires_cp() {
        let truth = rank_one(&[4, 4, 4], 1);
        let obs = sample_observed(&truth, 0.5, 1).unwrap();
        let m = init_model(&ModelKind::Tucker { ranks: vec![2] }, truth.shape(), &ModelInit::new(0)).unwrap();
        let cfg = TrainConfig::default().with_smoothness(SmoothnessConfig::default());
        assert!(train(m, &obs, &cfg).is_err());
    }
}
