//! Ensembles of completion models.
//!
//! Every base model is trained on its own seeded share of the observed
//! entries (by default 90%, the excluded remainder differing per base) and
//! with its own rank. Per-entry predictions of the bases are combined by a
//! fixed statistic or by a small MLP trained on the observed entries.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::models::{
    decode_checkpoint, encode_checkpoint, Checkpoint, CompletionModel, EntryModel, ModelInit, ModelKind,
};
use crate::nn::{decode_mlp, encode_mlp, batch_loss, train_mlp, Batch, Loss, Mlp, MlpTrace, MlpTrainConfig};
use crate::smoothness::SmoothnessConfig;
use crate::tensor::{split_entries, DenseTensor, HoldoutRole, Shape, SparseTensor, SplitSpec};
use crate::training::{fit, StopReason, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseFamily {
    Cpd,
    #[serde(alias = "cpd-s")]
    CpdS,
    Neural,
}

impl BaseFamily {
    pub fn default_ranks(self) -> Vec<usize> {
        match self {
            BaseFamily::Cpd | BaseFamily::CpdS => vec![1, 3, 5],
            BaseFamily::Neural => vec![10, 20, 32],
        }
    }

    pub fn model_kind(self, rank: usize) -> ModelKind {
        match self {
            BaseFamily::Cpd | BaseFamily::CpdS => ModelKind::cp(rank),
            BaseFamily::Neural => ModelKind::neural(rank),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BaseFamily::Cpd => "cpd",
            BaseFamily::CpdS => "cpd_s",
            BaseFamily::Neural => "neural",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregatorKind {
    Mean,
    Median,
    Max,
    Min,
    #[serde(alias = "learned-mlp", alias = "mlp")]
    LearnedMlp,
}

impl AggregatorKind {
    pub fn name(self) -> &'static str {
        match self {
            AggregatorKind::Mean => "mean",
            AggregatorKind::Median => "median",
            AggregatorKind::Max => "max",
            AggregatorKind::Min => "min",
            AggregatorKind::LearnedMlp => "learned_mlp",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AggregatorConfig {
    pub hidden: usize,
    /// Share of the observed entries held out for early stopping.
    pub validation_fraction: f64,
    pub training: MlpTrainConfig,
}

impl Default for AggregatorConfig {
    fn default() -> Self {
        Self {
            hidden: 16,
            validation_fraction: 0.1,
            training: MlpTrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSpec {
    pub family: BaseFamily,
    /// One base per entry; the family's default list when absent.
    #[serde(default)]
    pub ranks: Option<Vec<usize>>,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default = "default_aggregator")]
    pub aggregator: AggregatorKind,
    #[serde(default)]
    pub seed: u64,
    /// Base `j` uses seed `seed + j · seed_step`; 0 gives every base the same
    /// split and initialisation.
    #[serde(default = "default_seed_step")]
    pub seed_step: u64,
    /// Used by the smoothed CP family.
    #[serde(default)]
    pub smoothness: SmoothnessConfig,
    #[serde(default)]
    pub aggregator_training: AggregatorConfig,
    /// Train bases concurrently on the current rayon pool.
    #[serde(default)]
    pub parallel: bool,
}

fn default_train_fraction() -> f64 {
    0.9
}

fn default_aggregator() -> AggregatorKind {
    AggregatorKind::Median
}

fn default_seed_step() -> u64 {
    1
}

impl EnsembleSpec {
    pub fn new(family: BaseFamily, aggregator: AggregatorKind) -> Self {
        Self {
            family,
            ranks: None,
            train_fraction: default_train_fraction(),
            aggregator,
            seed: 0,
            seed_step: default_seed_step(),
            smoothness: SmoothnessConfig::default(),
            aggregator_training: AggregatorConfig::default(),
            parallel: false,
        }
    }

    pub fn with_ranks(mut self, ranks: Vec<usize>) -> Self {
        self.ranks = Some(ranks);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.ranks.clone().unwrap_or_else(|| self.family.default_ranks())
    }

    pub fn base_seed(&self, j: usize) -> u64 {
        self.seed.wrapping_add((j as u64).wrapping_mul(self.seed_step))
    }

    pub fn validate(&self) -> Result<()> {
        let ranks = self.ranks();
        if ranks.len() < 2 {
            return Err(Error::Ensemble(format!("need at least 2 base models, got {}", ranks.len())));
        }
        if ranks.contains(&0) {
            return Err(Error::InvalidRank("ensemble ranks must be positive".into()));
        }
        SplitSpec::new(self.seed, self.train_fraction, HoldoutRole::BaseModelExclusion)?;
        if self.family == BaseFamily::CpdS {
            self.smoothness.validate()?;
        }
        let agg = &self.aggregator_training;
        if !(0.0..1.0).contains(&agg.validation_fraction) || agg.hidden < 2 {
            return Err(Error::InvalidArgument(format!(
                "aggregator needs validation fraction in [0, 1) and at least 2 hidden units, got {agg:?}"
            )));
        }
        agg.training.validate()
    }
}

/// Mean, median (midpoint of the central pair for even counts), max or min.
pub fn aggregate_fixed(predictions: &[f64], kind: AggregatorKind) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::Empty("base predictions"));
    }
    let n = predictions.len();
    Ok(match kind {
        AggregatorKind::Mean => predictions.iter().sum::<f64>() / n as f64,
        AggregatorKind::Max => predictions.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        AggregatorKind::Min => predictions.iter().copied().fold(f64::INFINITY, f64::min),
        AggregatorKind::Median => {
            let mut v = predictions.to_vec();
            v.sort_by(f64::total_cmp);
            if n % 2 == 1 {
                v[n / 2]
            } else {
                (v[n / 2 - 1] + v[n / 2]) / 2.0
            }
        }
        AggregatorKind::LearnedMlp => {
            return Err(Error::InvalidArgument("the learned aggregator is not a fixed statistic".into()))
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Aggregator {
    Fixed(AggregatorKind),
    Mlp(Mlp),
}

impl Aggregator {
    pub fn kind(&self) -> AggregatorKind {
        match self {
            Aggregator::Fixed(k) => *k,
            Aggregator::Mlp(_) => AggregatorKind::LearnedMlp,
        }
    }

    pub fn apply(&self, predictions: &[f64]) -> Result<f64> {
        match self {
            Aggregator::Fixed(k) => aggregate_fixed(predictions, *k),
            Aggregator::Mlp(m) => m.forward(predictions),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaseModel {
    pub model: CompletionModel,
    pub seed: u64,
    /// Observed entries withheld from this base.
    pub excluded: usize,
    pub epochs: usize,
    pub stop_reason: StopReason,
    pub restarts: usize,
}

impl BaseModel {
    pub fn diverged(&self) -> bool {
        self.stop_reason == StopReason::Divergence
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    shape: Shape,
    bases: Vec<BaseModel>,
    /// Bases that enter aggregation (those that did not diverge).
    active: Vec<usize>,
    aggregator: Aggregator,
}

impl EnsembleModel {
    /// Assembles an ensemble from trained bases; diverged bases are skipped.
    pub fn new(bases: Vec<BaseModel>, aggregator: Aggregator) -> Result<Self> {
        let shape = bases
            .first()
            .map(|b| b.model.shape().clone())
            .ok_or(Error::Empty("base models"))?;
        if let Some(b) = bases.iter().find(|b| b.model.shape() != &shape) {
            return Err(Error::ShapeMismatch {
                expected: shape.dims().to_vec(),
                found: b.model.shape().dims().to_vec(),
            });
        }
        let active: Vec<usize> = (0..bases.len()).filter(|&j| !bases[j].diverged()).collect();
        if active.len() < 2 {
            return Err(Error::Ensemble(format!(
                "only {} of {} base models converged",
                active.len(),
                bases.len()
            )));
        }
        if let Aggregator::Mlp(m) = &aggregator {
            if m.input_width() != active.len() {
                return Err(Error::ShapeMismatch {
                    expected: vec![active.len()],
                    found: vec![m.input_width()],
                });
            }
        }
        Ok(Self {
            shape,
            bases,
            active,
            aggregator,
        })
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn bases(&self) -> &[BaseModel] {
        &self.bases
    }

    pub fn active_bases(&self) -> impl Iterator<Item = &BaseModel> + '_ {
        self.active.iter().map(|&j| &self.bases[j])
    }

    pub fn aggregator(&self) -> &Aggregator {
        &self.aggregator
    }

    pub fn with_aggregator(&self, aggregator: Aggregator) -> Result<Self> {
        Self::new(self.bases.clone(), aggregator)
    }

    /// Predictions of the active bases at `index`, in base order.
    pub fn base_predictions(&self, index: &[usize]) -> Result<Vec<f64>> {
        self.shape.check_index(index)?;
        Ok(self.base_predictions_unchecked(index))
    }

    fn base_predictions_unchecked(&self, index: &[usize]) -> Vec<f64> {
        self.active_bases().map(|b| b.model.predict_unchecked(index)).collect()
    }

    pub fn reconstruct(&self) -> Result<DenseTensor> {
        let mut values = Vec::with_capacity(self.shape.numel());
        for idx in self.shape.indices() {
            values.push(self.aggregator.apply(&self.base_predictions_unchecked(&idx))?);
        }
        DenseTensor::new(self.shape.clone(), values)
    }
}

/// Aggregated prediction at one index.
pub fn predict_ensemble(model: &EnsembleModel, index: &[usize]) -> Result<f64> {
    model.aggregator.apply(&model.base_predictions(index)?)
}

fn train_base(
    observed: &SparseTensor,
    spec: &EnsembleSpec,
    config: &TrainConfig,
    j: usize,
    rank: usize,
) -> Result<BaseModel> {
    let seed = spec.base_seed(j);
    let split = SplitSpec::new(seed, spec.train_fraction, HoldoutRole::BaseModelExclusion)?;
    let (kept, excluded) = split_entries(observed, &split)?;
    if kept.is_empty() {
        return Err(Error::Empty("entries kept for a base model"));
    }
    let mut cfg = config.clone().with_seed(seed);
    cfg.regularizer = match spec.family {
        BaseFamily::CpdS => Some(spec.smoothness.clone()),
        BaseFamily::Cpd | BaseFamily::Neural => None,
    };
    let trace = fit(&spec.family.model_kind(rank), &kept, &ModelInit::new(seed), &cfg)?;
    if trace.stop_reason == StopReason::Divergence {
        log::warn!("base model {j} (rank {rank}) diverged");
    }
    Ok(BaseModel {
        epochs: trace.epochs.len(),
        stop_reason: trace.stop_reason,
        restarts: trace.restarts,
        model: trace.model,
        seed,
        excluded: excluded.len(),
    })
}

/// Trains all bases of `spec` on `observed`, then the aggregator.
pub fn train_ensemble(observed: &SparseTensor, spec: &EnsembleSpec, config: &TrainConfig) -> Result<EnsembleModel> {
    spec.validate()?;
    config.validate()?;
    if observed.is_empty() {
        return Err(Error::Empty("observed entries"));
    }
    let ranks = spec.ranks();
    let bases: Vec<BaseModel> = if spec.parallel {
        ranks
            .par_iter()
            .enumerate()
            .map(|(j, &r)| train_base(observed, spec, config, j, r))
            .collect::<Result<_>>()?
    } else {
        ranks
            .iter()
            .enumerate()
            .map(|(j, &r)| train_base(observed, spec, config, j, r))
            .collect::<Result<_>>()?
    };
    let placeholder = EnsembleModel::new(bases, Aggregator::Fixed(AggregatorKind::Mean))?;
    match spec.aggregator {
        AggregatorKind::LearnedMlp => {
            let trace = train_aggregator(&placeholder, observed, &spec.aggregator_training, spec.seed)?;
            placeholder.with_aggregator(Aggregator::Mlp(trace.mlp))
        }
        fixed => placeholder.with_aggregator(Aggregator::Fixed(fixed)),
    }
}

/// Fits the MLP aggregator on base predictions at the observed entries. A
/// seeded validation share of the observed entries is held out and only used
/// for model selection: it picks the starting network (the mean of the bases
/// or a copy of one base, whichever scores lowest) and stops training early.
pub fn train_aggregator(
    ensemble: &EnsembleModel,
    observed: &SparseTensor,
    config: &AggregatorConfig,
    seed: u64,
) -> Result<MlpTrace> {
    if observed.shape() != ensemble.shape() {
        return Err(Error::ShapeMismatch {
            expected: ensemble.shape().dims().to_vec(),
            found: observed.shape().dims().to_vec(),
        });
    }
    let (x, y, val) = aggregator_batches(ensemble, observed, config.validation_fraction, seed)?;
    let val_batch = match &val {
        Some((vx, vy)) => Some(Batch::new(vx, vy)?),
        None => None,
    };
    let fit_batch = Batch::new(&x, &y)?;
    let init = initial_aggregator(ensemble.active.len(), config.hidden, seed, val_batch.unwrap_or(fit_batch))?;
    train_mlp(init, fit_batch, val_batch, &config.training, Loss::Squared)
}

type Features = (Vec<Vec<f64>>, Vec<f64>);

/// Base predictions and targets at the aggregator's fitting entries, and at
/// its validation entries when there are any.
pub fn aggregator_batches(
    ensemble: &EnsembleModel,
    observed: &SparseTensor,
    validation_fraction: f64,
    seed: u64,
) -> Result<(Vec<Vec<f64>>, Vec<f64>, Option<Features>)> {
    let (fit_set, val_set) = aggregator_split(observed, validation_fraction, seed)?;
    let features = |s: &SparseTensor| -> Features {
        s.iter()
            .map(|(idx, v)| (ensemble.base_predictions_unchecked(idx), v))
            .unzip()
    };
    let (x, y) = features(&fit_set);
    Ok((x, y, val_set.as_ref().map(features)))
}

/// The starting aggregator: the mean of the `n` bases or an exact copy of
/// one base, whichever has the lowest squared loss on `select` (the mean wins
/// ties, then the lowest base index).
pub fn initial_aggregator(n: usize, hidden: usize, seed: u64, select: Batch<'_>) -> Result<Mlp> {
    let mut best = Mlp::mean(n, hidden, seed)?;
    let mut best_loss = batch_loss(&best, select, Loss::Squared)?;
    for j in 0..n {
        let mut w = vec![0.0; n];
        w[j] = 1.0;
        let candidate = Mlp::linear(n, hidden, &w, Some(seed))?;
        let l = batch_loss(&candidate, select, Loss::Squared)?;
        if l < best_loss {
            best = candidate;
            best_loss = l;
        }
    }
    Ok(best)
}

/// The aggregator's training entries and its validation holdout.
pub fn aggregator_split(
    observed: &SparseTensor,
    validation_fraction: f64,
    seed: u64,
) -> Result<(SparseTensor, Option<SparseTensor>)> {
    if validation_fraction == 0.0 {
        return Ok((observed.clone(), None));
    }
    let spec = SplitSpec::new(seed, 1.0 - validation_fraction, HoldoutRole::Validation)?;
    let (fit_set, val) = split_entries(observed, &spec)?;
    if fit_set.is_empty() {
        return Err(Error::Empty("aggregator training entries"));
    }
    Ok((fit_set, (!val.is_empty()).then_some(val)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestBase {
    pub file: String,
    pub seed: u64,
    pub excluded: usize,
    pub epochs: usize,
    pub stop_reason: StopReason,
    pub restarts: usize,
}

/// Index file of a saved ensemble: base checkpoints and the aggregator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleManifest {
    pub shape: Vec<usize>,
    pub aggregator: AggregatorKind,
    pub bases: Vec<ManifestBase>,
    pub aggregator_file: Option<String>,
}

pub const MANIFEST_FILE: &str = "ensemble.json";

/// Writes `ensemble.json`, one checkpoint per base and the aggregator network
/// (if learned) into `dir`.
pub fn save_ensemble(model: &EnsembleModel, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut bases = Vec::with_capacity(model.bases.len());
    for (j, b) in model.bases.iter().enumerate() {
        let file = format!("base-{j}.ckpt");
        let text = encode_checkpoint(&Checkpoint {
            seed: b.seed,
            model: b.model.clone(),
        });
        write_atomic(dir.join(&file), text.as_bytes())?;
        bases.push(ManifestBase {
            file,
            seed: b.seed,
            excluded: b.excluded,
            epochs: b.epochs,
            stop_reason: b.stop_reason,
            restarts: b.restarts,
        });
    }
    let aggregator_file = match &model.aggregator {
        Aggregator::Mlp(m) => {
            let file = "aggregator.mlp".to_string();
            write_atomic(dir.join(&file), encode_mlp(m).as_bytes())?;
            Some(file)
        }
        Aggregator::Fixed(_) => None,
    };
    let manifest = EnsembleManifest {
        shape: model.shape.dims().to_vec(),
        aggregator: model.aggregator.kind(),
        bases,
        aggregator_file,
    };
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    write_atomic(dir.join(MANIFEST_FILE), json.as_bytes())
}

pub fn load_ensemble(dir: impl AsRef<Path>) -> Result<EnsembleModel> {
    let dir = dir.as_ref();
    let manifest: EnsembleManifest = serde_json::from_str(&std::fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    let mut bases = Vec::with_capacity(manifest.bases.len());
    for b in &manifest.bases {
        let ckpt = decode_checkpoint(&std::fs::read_to_string(dir.join(&b.file))?)?;
        bases.push(BaseModel {
            model: ckpt.model,
            seed: b.seed,
            excluded: b.excluded,
            epochs: b.epochs,
            stop_reason: b.stop_reason,
            restarts: b.restarts,
        });
    }
    let aggregator = match (manifest.aggregator, &manifest.aggregator_file) {
        (AggregatorKind::LearnedMlp, Some(f)) => Aggregator::Mlp(decode_mlp(&std::fs::read_to_string(dir.join(f))?)?),
        (AggregatorKind::LearnedMlp, None) => {
            return Err(Error::Ensemble("manifest names a learned aggregator without a file".into()))
        }
        (k, _) => Aggregator::Fixed(k),
    };
    let model = EnsembleModel::new(bases, aggregator)?;
    if model.shape.dims() != manifest.shape.as_slice() {
        return Err(Error::ShapeMismatch {
            expected: manifest.shape,
            found: model.shape.dims().to_vec(),
        });
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::init_model;
    use crate::tensor::sample_observed;
    use proptest::prelude::*;

    const FIXED: [AggregatorKind; 4] = [
        AggregatorKind::Mean,
        AggregatorKind::Median,
        AggregatorKind::Max,
        AggregatorKind::Min,
    ];

    fn base(model: CompletionModel) -> BaseModel {
        BaseModel {
            model,
            seed: 0,
            excluded: 0,
            epochs: 0,
            stop_reason: StopReason::MaxEpochs,
            restarts: 0,
        }
    }

    fn constant_cp(shape: &Shape, c: f64) -> CompletionModel {
        // Rank 1 with every factor entry equal to the N-th root of c.
        let n = shape.order();
        let v = c.abs().powf(1.0 / n as f64);
        let mut params = vec![v; shape.dims().iter().sum()];
        if c < 0.0 {
            params[..shape.dim(0)].iter_mut().for_each(|p| *p = -*p);
        }
        CompletionModel::from_params(&ModelKind::cp(1), shape, params).unwrap()
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            max_epochs: 300,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn fixed_statistics() {
        let v = [0.2, 0.5, 0.9];
        assert_eq!(aggregate_fixed(&v, AggregatorKind::Median).unwrap(), 0.5);
        assert!((aggregate_fixed(&v, AggregatorKind::Mean).unwrap() - 1.6 / 3.0).abs() < 1e-15);
        assert_eq!(aggregate_fixed(&[0.2, 0.8], AggregatorKind::Median).unwrap(), 0.5);
        assert_eq!(aggregate_fixed(&v, AggregatorKind::Max).unwrap(), 0.9);
        assert_eq!(aggregate_fixed(&v, AggregatorKind::Min).unwrap(), 0.2);
        assert!(aggregate_fixed(&[], AggregatorKind::Mean).is_err());
        assert!(aggregate_fixed(&v, AggregatorKind::LearnedMlp).is_err());
    }

    #[test]
    fn mean_of_constant_bases() {
        let s = Shape::new(vec![2, 3]).unwrap();
        let bases = [1.0, 2.0, 3.0].iter().map(|&c| base(constant_cp(&s, c))).collect();
        let e = EnsembleModel::new(bases, Aggregator::Fixed(AggregatorKind::Mean)).unwrap();
        assert!((predict_ensemble(&e, &[1, 2]).unwrap() - 2.0).abs() < 1e-12);
        assert!(predict_ensemble(&e, &[2, 0]).is_err());
    }

    #[test]
    fn median_ignores_duplicate_of_median() {
        let s = Shape::new(vec![3, 3]).unwrap();
        let models: Vec<_> = (0..3).map(|k| init_model(&ModelKind::cp(2), &s, &ModelInit::new(k)).unwrap()).collect();
        let e = EnsembleModel::new(models.iter().cloned().map(base).collect(), Aggregator::Fixed(AggregatorKind::Median)).unwrap();
        for idx in s.indices() {
            let preds = e.base_predictions(&idx).unwrap();
            let med = aggregate_fixed(&preds, AggregatorKind::Median).unwrap();
            let mut more = preds.clone();
            more.push(med);
            assert_eq!(aggregate_fixed(&more, AggregatorKind::Median).unwrap(), med);
        }
    }

    #[test]
    fn learned_aggregator_matches_manual_forward() {
        let s = Shape::new(vec![3, 4]).unwrap();
        let models: Vec<_> = (0..3).map(|k| base(init_model(&ModelKind::cp(2), &s, &ModelInit::new(k)).unwrap())).collect();
        let mlp = Mlp::random(vec![3, 5, 1], 4).unwrap();
        let e = EnsembleModel::new(models.clone(), Aggregator::Mlp(mlp.clone())).unwrap();
        let p = mlp.params();
        for idx in s.indices() {
            let x: Vec<f64> = models.iter().map(|b| b.model.predict_entry(&idx).unwrap()).collect();
            let mut out = p[5 * 3 + 5 + 5];
            for h in 0..5 {
                let z = p[15 + h] + (0..3).map(|i| p[h * 3 + i] * x[i]).sum::<f64>();
                out += p[20 + h] * z.max(0.0);
            }
            assert!((predict_ensemble(&e, &idx).unwrap() - out).abs() < 1e-14);
        }
    }

    #[test]
    fn identity_aggregator_reproduces_base() {
        let s = Shape::new(vec![3, 4, 2]).unwrap();
        let models: Vec<_> = (0..3).map(|k| base(init_model(&ModelKind::cp(2), &s, &ModelInit::new(k)).unwrap())).collect();
        for j in 0..3 {
            let e = EnsembleModel::new(models.clone(), Aggregator::Mlp(Mlp::identity(3, 16, j).unwrap())).unwrap();
            for idx in s.indices() {
                assert_eq!(predict_ensemble(&e, &idx).unwrap(), models[j].model.predict_entry(&idx).unwrap());
            }
        }
    }

    #[test]
    fn identical_bases_collapse() {
        let s = Shape::new(vec![5, 5, 5]).unwrap();
        let truth = init_model(&ModelKind::cp(2), &s, &ModelInit::new(1)).unwrap().reconstruct(&s).unwrap();
        let obs = sample_observed(&truth, 0.3, 2).unwrap();
        let mut spec = EnsembleSpec::new(BaseFamily::Cpd, AggregatorKind::Mean).with_ranks(vec![2, 2, 2]);
        spec.train_fraction = 1.0;
        spec.seed_step = 0;
        let e = train_ensemble(&obs, &spec, &quick()).unwrap();
        let single = e.bases()[0].model.reconstruct(&s).unwrap();
        for k in FIXED {
            let r = e.with_aggregator(Aggregator::Fixed(k)).unwrap().reconstruct().unwrap();
            for (a, b) in r.values().iter().zip(single.values()) {
                assert!((a - b).abs() < 1e-12 * (1.0 + b.abs()), "{k:?}");
            }
        }
        for j in 0..3 {
            let r = e.with_aggregator(Aggregator::Mlp(Mlp::identity(3, 16, j).unwrap())).unwrap().reconstruct().unwrap();
            assert_eq!(r.values(), single.values());
        }
    }

    #[test]
    fn parallel_equals_sequential() {
        let s = Shape::new(vec![6, 6, 6]).unwrap();
        let truth = init_model(&ModelKind::cp(2), &s, &ModelInit::new(5)).unwrap().reconstruct(&s).unwrap();
        let obs = sample_observed(&truth, 0.2, 5).unwrap();
        let seq = EnsembleSpec::new(BaseFamily::Cpd, AggregatorKind::LearnedMlp).with_seed(3);
        let par = EnsembleSpec { parallel: true, ..seq.clone() };
        let a = train_ensemble(&obs, &seq, &quick()).unwrap();
        let b = train_ensemble(&obs, &par, &quick()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn exclusions_differ_and_are_unseen() {
        let s = Shape::new(vec![6, 6, 6]).unwrap();
        let truth = init_model(&ModelKind::cp(1), &s, &ModelInit::new(5)).unwrap().reconstruct(&s).unwrap();
        let obs = sample_observed(&truth, 0.3, 5).unwrap();
        let spec = EnsembleSpec::new(BaseFamily::Cpd, AggregatorKind::Mean).with_seed(10);
        let excluded: Vec<SparseTensor> = (0..3)
            .map(|j| {
                let split = SplitSpec::new(spec.base_seed(j), spec.train_fraction, HoldoutRole::BaseModelExclusion).unwrap();
                split_entries(&obs, &split).unwrap().1
            })
            .collect();
        assert_ne!(excluded[0].flat_indices(), excluded[1].flat_indices());
        assert_ne!(excluded[1].flat_indices(), excluded[2].flat_indices());

        // Changing the values a base excludes leaves that base untouched.
        let a = train_ensemble(&obs, &spec, &quick()).unwrap();
        let perturbed: Vec<f64> = obs
            .iter()
            .map(|(idx, v)| if excluded[0].contains(idx) { v + 100.0 } else { v })
            .collect();
        let b = train_ensemble(&obs.with_values(perturbed).unwrap(), &spec, &quick()).unwrap();
        assert_eq!(a.bases()[0], b.bases()[0]);
        assert_ne!(a.bases()[1].model, b.bases()[1].model);
    }

    #[test]
    fn aggregator_never_sees_validation_values() {
        let s = Shape::new(vec![5, 5, 5]).unwrap();
        let models: Vec<_> = (0..3).map(|k| base(init_model(&ModelKind::cp(2), &s, &ModelInit::new(k)).unwrap())).collect();
        let e = EnsembleModel::new(models, Aggregator::Fixed(AggregatorKind::Mean)).unwrap();
        let truth = init_model(&ModelKind::cp(1), &s, &ModelInit::new(9)).unwrap().reconstruct(&s).unwrap();
        let obs = sample_observed(&truth, 0.4, 1).unwrap();
        let cfg = AggregatorConfig {
            training: MlpTrainConfig {
                max_epochs: 50,
                patience: 1000,
                ..MlpTrainConfig::default()
            },
            ..AggregatorConfig::default()
        };
        let (_, val) = aggregator_split(&obs, cfg.validation_fraction, 7).unwrap();
        let val = val.unwrap();
        let perturbed: Vec<f64> = obs.iter().map(|(idx, v)| if val.contains(idx) { v * 3.0 + 1.0 } else { v }).collect();
        let obs2 = obs.with_values(perturbed).unwrap();
        let (x1, y1, v1) = aggregator_batches(&e, &obs, cfg.validation_fraction, 7).unwrap();
        let (x2, y2, v2) = aggregator_batches(&e, &obs2, cfg.validation_fraction, 7).unwrap();
        assert_eq!((&x1, &y1), (&x2, &y2));
        assert_ne!(v1.as_ref().unwrap().1, v2.as_ref().unwrap().1);
        // From the same start, the gradient steps never see validation values.
        let init = Mlp::mean(3, 16, 7).unwrap();
        let run = |v: &Features| {
            train_mlp(init.clone(), Batch::new(&x1, &y1).unwrap(), Some(Batch::new(&v.0, &v.1).unwrap()), &cfg.training, Loss::Squared)
                .unwrap()
        };
        let (t1, t2) = (run(v1.as_ref().unwrap()), run(v2.as_ref().unwrap()));
        assert_eq!(t1.train_losses, t2.train_losses);
        assert_ne!(t1.val_losses, t2.val_losses);
    }

    #[test]
    fn starts_from_the_base_that_scores_best() {
        let xs: Vec<Vec<f64>> = (0..20).map(|k| vec![k as f64, 0.5, -(k as f64)]).collect();
        let target: Vec<f64> = xs.iter().map(|x| x[2]).collect();
        let m = initial_aggregator(3, 8, 1, Batch::new(&xs, &target).unwrap()).unwrap();
        for x in &xs {
            assert_eq!(m.forward(x).unwrap(), x[2]);
        }
        let mean_target: Vec<f64> = xs.iter().map(|x| x.iter().sum::<f64>() / 3.0).collect();
        let m = initial_aggregator(3, 8, 1, Batch::new(&xs, &mean_target).unwrap()).unwrap();
        assert!((m.forward(&xs[4]).unwrap() - mean_target[4]).abs() < 1e-12);
    }

    #[test]
    fn too_few_survivors() {
        let s = Shape::new(vec![2, 2]).unwrap();
        let mut bad = base(constant_cp(&s, 1.0));
        bad.stop_reason = StopReason::Divergence;
        let err = EnsembleModel::new(vec![bad.clone(), base(constant_cp(&s, 1.0))], Aggregator::Fixed(AggregatorKind::Mean));
        assert!(matches!(err, Err(Error::Ensemble(_))));
        let ok = EnsembleModel::new(
            vec![bad, base(constant_cp(&s, 1.0)), base(constant_cp(&s, 3.0))],
            Aggregator::Fixed(AggregatorKind::Mean),
        )
        .unwrap();
        assert!((predict_ensemble(&ok, &[0, 0]).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn spec_validation_and_serde() {
        assert!(EnsembleSpec::new(BaseFamily::Cpd, AggregatorKind::Mean).with_ranks(vec![3]).validate().is_err());
        assert!(EnsembleSpec::new(BaseFamily::Cpd, AggregatorKind::Mean).with_ranks(vec![3, 0]).validate().is_err());
        let spec: EnsembleSpec = serde_json::from_str(r#"{"family":"cpd_s","aggregator":"learned_mlp"}"#).unwrap();
        assert_eq!(spec.ranks(), vec![1, 3, 5]);
        assert_eq!(spec.train_fraction, 0.9);
        let n: EnsembleSpec = serde_json::from_str(r#"{"family":"neural"}"#).unwrap();
        assert_eq!(n.ranks(), vec![10, 20, 32]);
        assert!(serde_json::from_str::<EnsembleSpec>(r#"{"family":"cpd","rnks":[1,2]}"#).is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let s = Shape::new(vec![3, 4]).unwrap();
        let models: Vec<_> = (0..3).map(|k| base(init_model(&ModelKind::cp(2), &s, &ModelInit::new(k)).unwrap())).collect();
        let dir = tempfile::tempdir().unwrap();
        for agg in [Aggregator::Fixed(AggregatorKind::Median), Aggregator::Mlp(Mlp::random(vec![3, 4, 1], 1).unwrap())] {
            let e = EnsembleModel::new(models.clone(), agg).unwrap();
            save_ensemble(&e, dir.path()).unwrap();
            assert_eq!(load_ensemble(dir.path()).unwrap(), e);
        }
    }

    proptest! {
        #[test]
        fn fixed_order_and_bounds(v in proptest::collection::vec(-10.0f64..10.0, 1..9), shift in 0usize..9) {
            let mut rotated = v.clone();
            rotated.rotate_left(shift % v.len());
            let get = |k| aggregate_fixed(&v, k).unwrap();
            for k in [AggregatorKind::Median, AggregatorKind::Max, AggregatorKind::Min] {
                prop_assert_eq!(get(k), aggregate_fixed(&rotated, k).unwrap());
            }
            prop_assert!((get(AggregatorKind::Mean) - aggregate_fixed(&rotated, AggregatorKind::Mean).unwrap()).abs() < 1e-12);
            let (lo, hi) = (get(AggregatorKind::Min), get(AggregatorKind::Max));
            prop_assert!(lo <= get(AggregatorKind::Median) && get(AggregatorKind::Median) <= hi);
            prop_assert!(lo - 1e-12 <= get(AggregatorKind::Mean) && get(AggregatorKind::Mean) <= hi + 1e-12);
        }
    }
}
