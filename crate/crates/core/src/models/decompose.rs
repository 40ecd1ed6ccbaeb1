use serde::{Deserialize, Serialize};

use super::{init_model, CompletionModel, CpModel, ModelInit, ModelKind};
use crate::error::{Error, Result};
use crate::metrics::{all_indices, normalized_error};
use crate::tensor::DenseTensor;
use crate::training::{train, StopReason, TrainConfig};

/// Training settings for fitting CP factors to a fully observed tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecomposeConfig {
    pub train: TrainConfig,
    pub init_scale: f64,
}

impl Default for DecomposeConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig {
                max_epochs: 10_000,
                patience: 200,
                tolerance: 1e-6,
                validation_fraction: 0.0,
                ..TrainConfig::default()
            },
            init_scale: ModelInit::DEFAULT_SCALE,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Decomposition {
    pub factors: CpModel,
    /// `‖X − X̂‖ / ‖X‖` over the whole tensor.
    pub normalized_error: f64,
    pub epochs: usize,
    pub stop_reason: StopReason,
}

/// Fits rank-`rank` CP factors to every entry of `dense` with the shared
/// Adam loop (no mask, no validation split).
pub fn decompose_dense(dense: &DenseTensor, rank: usize, config: &DecomposeConfig) -> Result<Decomposition> {
    if rank == 0 {
        return Err(Error::InvalidRank("decomposition rank must be positive".into()));
    }
    let init = ModelInit::new(config.train.seed).with_scale(config.init_scale);
    let model = init_model(&ModelKind::cp(rank), dense.shape(), &init)?;
    let observed = dense.to_sparse();
    let cfg = TrainConfig {
        validation_fraction: 0.0,
        ..config.train.clone()
    };
    let trace = train(model, &observed, &cfg)?;
    let recon = trace.model.reconstruct(dense.shape())?;
    let nerr = normalized_error(&recon, dense, &all_indices(dense.shape().numel()))?;
    let factors = match trace.model {
        CompletionModel::Cp(cp) => cp,
        _ => unreachable!("decomposition trains a CP model"),
    };
    Ok(Decomposition {
        factors,
        normalized_error: nerr,
        epochs: trace.epochs.len(),
        stop_reason: trace.stop_reason,
    })
}
