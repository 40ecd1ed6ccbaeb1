//! Experiment procedures and their reports.
//!
//! Every run samples an observed subset with a recorded seed, completes it
//! with one method and scores the prediction on the unobserved complement
//! only. Runs are independent and execute on the rayon pool; metrics do not
//! depend on scheduling.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::datagen::{cell_seed, generate, TaskSpec};
use crate::ensemble::{train_ensemble, EnsembleSpec};
use crate::error::{Error, Result};
use crate::io::{format_value, read_tensor, write_atomic, TensorData};
use crate::metrics::{all_indices, mae, normalized_error, rmse};
use crate::models::{decompose_dense, DecomposeConfig, ModelInit, ModelKind, DEFAULT_CHANNELS, DEFAULT_HIDDEN};
use crate::smoothness::SmoothnessConfig;
use crate::tensor::{sample_observed, DenseTensor, Shape, SparseTensor};
use crate::training::{fit, naive_baseline, TrainConfig};

fn default_channels() -> usize {
    DEFAULT_CHANNELS
}

fn default_hidden() -> usize {
    DEFAULT_HIDDEN
}

/// A completion method with its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum MethodSpec {
    Naive,
    Cpd {
        rank: usize,
    },
    CpdS {
        rank: usize,
        #[serde(default)]
        smoothness: SmoothnessConfig,
    },
    Tucker {
        ranks: Vec<usize>,
    },
    TensorTrain {
        ranks: Vec<usize>,
    },
    Neural {
        rank: usize,
        #[serde(default = "default_channels")]
        channels: usize,
        #[serde(default = "default_hidden")]
        hidden: usize,
    },
    Ensemble {
        ensemble: EnsembleSpec,
    },
}

impl MethodSpec {
    pub fn label(&self) -> String {
        match self {
            MethodSpec::Naive => "naive".into(),
            MethodSpec::Cpd { .. } => "cpd".into(),
            MethodSpec::CpdS { .. } => "cpd_s".into(),
            MethodSpec::Tucker { .. } => "tucker".into(),
            MethodSpec::TensorTrain { .. } => "tt".into(),
            MethodSpec::Neural { .. } => "neural".into(),
            MethodSpec::Ensemble { ensemble } => {
                format!("ensemble_{}_{}", ensemble.family.name(), ensemble.aggregator.name())
            }
        }
    }

    pub fn rank_label(&self) -> String {
        let join = |r: &[usize]| r.iter().map(usize::to_string).collect::<Vec<_>>().join("x");
        match self {
            MethodSpec::Naive => String::new(),
            MethodSpec::Cpd { rank } | MethodSpec::CpdS { rank, .. } | MethodSpec::Neural { rank, .. } => {
                rank.to_string()
            }
            MethodSpec::Tucker { ranks } | MethodSpec::TensorTrain { ranks } => join(ranks),
            MethodSpec::Ensemble { ensemble } => {
                ensemble.ranks().iter().map(usize::to_string).collect::<Vec<_>>().join("+")
            }
        }
    }

    pub fn lambda(&self) -> Option<f64> {
        match self {
            MethodSpec::CpdS { smoothness, .. } => Some(smoothness.lambda),
            MethodSpec::Ensemble { ensemble } if ensemble.family == crate::ensemble::BaseFamily::CpdS => {
                Some(ensemble.smoothness.lambda)
            }
            _ => None,
        }
    }

    fn model_kind(&self) -> Option<ModelKind> {
        Some(match self {
            MethodSpec::Cpd { rank } | MethodSpec::CpdS { rank, .. } => ModelKind::cp(*rank),
            MethodSpec::Tucker { ranks } => ModelKind::Tucker { ranks: ranks.clone() },
            MethodSpec::TensorTrain { ranks } => ModelKind::TensorTrain { ranks: ranks.clone() },
            MethodSpec::Neural { rank, channels, hidden } => ModelKind::Neural {
                rank: *rank,
                channels: *channels,
                hidden: *hidden,
            },
            MethodSpec::Naive | MethodSpec::Ensemble { .. } => return None,
        })
    }
}

/// A completed tensor with the run's bookkeeping.
#[derive(Debug, Clone)]
pub struct Completion {
    pub prediction: DenseTensor,
    pub stop_reason: String,
    /// Training plus reconstruction wall time.
    pub seconds: f64,
}

/// Completes `observed` with `method`; `seed` drives initialisation, splits
/// and sampling inside the method.
pub fn complete(method: &MethodSpec, observed: &SparseTensor, seed: u64, train: &TrainConfig) -> Result<Completion> {
    let start = Instant::now();
    let shape = observed.shape();
    let (prediction, stop_reason) = match method {
        MethodSpec::Naive => (naive_baseline(observed, seed)?, "none".to_string()),
        MethodSpec::Ensemble { ensemble } => {
            let spec = EnsembleSpec {
                seed,
                ..ensemble.clone()
            };
            let model = train_ensemble(observed, &spec, train)?;
            let diverged = model.bases().iter().filter(|b| b.diverged()).count();
            let reason = if diverged > 0 {
                format!("ensemble;{diverged}_diverged")
            } else {
                "ensemble".into()
            };
            (model.reconstruct()?, reason)
        }
        _ => {
            let kind = method.model_kind().expect("model method");
            let mut cfg = train.clone().with_seed(seed);
            cfg.regularizer = match method {
                MethodSpec::CpdS { smoothness, .. } => Some(smoothness.clone()),
                _ => None,
            };
            let trace = fit(&kind, observed, &ModelInit::new(seed), &cfg)?;
            let mut reason = trace.stop_reason.as_str().to_string();
            if trace.restarts > 0 {
                log::info!("{} restarted {} time(s)", method.label(), trace.restarts);
                reason.push_str(";restarted");
            }
            (trace.model.reconstruct(shape)?, reason)
        }
    };
    Ok(Completion {
        prediction,
        stop_reason,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub tensor: String,
    pub method: String,
    pub rank: String,
    pub lambda: Option<f64>,
    pub fraction: f64,
    pub rep: usize,
    pub seed: u64,
    /// Absent when the run failed.
    pub mae: Option<f64>,
    pub rmse: Option<f64>,
    pub nerr: Option<f64>,
    pub seconds: f64,
    pub stop_reason: String,
}

impl ReportRow {
    pub fn failed(&self) -> bool {
        self.mae.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation (0 for a single value).
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Stat { mean, std })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub tensor: String,
    pub method: String,
    pub rank: String,
    pub lambda: Option<f64>,
    pub fraction: f64,
    pub runs: usize,
    pub failures: usize,
    pub mae: Option<Stat>,
    pub rmse: Option<Stat>,
    pub nerr: Option<Stat>,
    pub seconds: Option<Stat>,
}

pub const CSV_HEADER: &str = "tensor,method,rank,lambda,fraction,rep,seed,mae,rmse,nerr,seconds,stop_reason";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl ExperimentReport {
    /// One aggregate per (tensor, method, rank, lambda, fraction), in order of
    /// first appearance; statistics over the successful runs.
    pub fn aggregates(&self) -> Vec<AggregateRow> {
        let mut order: Vec<(String, String, String, Option<u64>, u64)> = Vec::new();
        let mut groups: HashMap<(String, String, String, Option<u64>, u64), Vec<&ReportRow>> = HashMap::new();
        for r in &self.rows {
            let key = (
                r.tensor.clone(),
                r.method.clone(),
                r.rank.clone(),
                r.lambda.map(f64::to_bits),
                r.fraction.to_bits(),
            );
            groups
                .entry(key.clone())
                .or_insert_with(|| {
                    order.push(key);
                    Vec::new()
                })
                .push(r);
        }
        order
            .into_iter()
            .map(|key| {
                let rows = &groups[&key];
                let ok: Vec<&&ReportRow> = rows.iter().filter(|r| !r.failed()).collect();
                let stat = |f: fn(&ReportRow) -> Option<f64>| Stat::of(&ok.iter().filter_map(|r| f(r)).collect::<Vec<_>>());
                AggregateRow {
                    tensor: key.0,
                    method: key.1,
                    rank: key.2,
                    lambda: key.3.map(f64::from_bits),
                    fraction: f64::from_bits(key.4),
                    runs: rows.len(),
                    failures: rows.len() - ok.len(),
                    mae: stat(|r| r.mae),
                    rmse: stat(|r| r.rmse),
                    nerr: stat(|r| r.nerr),
                    seconds: stat(|r| Some(r.seconds)),
                }
            })
            .collect()
    }

    pub fn find(&self, method: &str) -> impl Iterator<Item = &ReportRow> + '_ {
        let method = method.to_string();
        self.rows.iter().filter(move |r| r.method == method)
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(format_value).unwrap_or_default();
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let fields = [
                csv_field(&r.tensor),
                csv_field(&r.method),
                csv_field(&r.rank),
                opt(r.lambda),
                format_value(r.fraction),
                r.rep.to_string(),
                r.seed.to_string(),
                opt(r.mae),
                opt(r.rmse),
                opt(r.nerr),
                format_value(r.seconds),
                csv_field(&r.stop_reason),
            ];
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }

    /// Aggregates with optional provenance, as written next to the CSV.
    pub fn aggregate_json(&self, provenance: Option<&Value>) -> Value {
        serde_json::json!({
            "provenance": provenance,
            "aggregates": self.aggregates(),
        })
    }

    /// Writes `<path>` (CSV rows) and the aggregates to `<path>` with a
    /// `.json` extension, both atomically.
    pub fn write(&self, path: impl AsRef<Path>, provenance: Option<&Value>) -> Result<PathBuf> {
        let path = path.as_ref();
        write_atomic(path, self.to_csv().as_bytes())?;
        let json_path = path.with_extension("json");
        let mut text = serde_json::to_string_pretty(&self.aggregate_json(provenance))?;
        text.push('\n');
        write_atomic(&json_path, text.as_bytes())?;
        Ok(json_path)
    }
}

/// Where an experiment's ground-truth tensor comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TensorSource {
    Generate(TaskSpec),
    /// A dense `.sptn` file; relative paths resolve against the config's
    /// directory.
    File(PathBuf),
}

impl TensorSource {
    /// Loads the dense tensor and a display name.
    pub fn load(&self, base_dir: Option<&Path>) -> Result<(String, DenseTensor)> {
        match self {
            TensorSource::Generate(spec) => {
                let g = generate(spec)?;
                Ok((format!("{}_{}", spec.kind_name(), spec.seed()), g.tensor))
            }
            TensorSource::File(p) => {
                let path = match base_dir {
                    Some(b) if p.is_relative() => b.join(p),
                    _ => p.clone(),
                };
                let file = read_tensor(&path)?;
                match file.tensor {
                    TensorData::Dense(d) => Ok((file.name, d)),
                    TensorData::Sparse(_) => Err(Error::InvalidArgument(format!(
                        "{} is sparse; experiments need a dense ground truth",
                        path.display()
                    ))),
                }
            }
        }
    }
}

pub const DEFAULT_REPETITIONS: usize = 5;
pub const DEFAULT_FRACTION: f64 = 0.05;
pub const SWEEP_FRACTIONS: [f64; 4] = [0.01, 0.025, 0.05, 0.10];

fn default_repetitions() -> usize {
    DEFAULT_REPETITIONS
}

fn default_methods() -> Vec<MethodSpec> {
    vec![
        MethodSpec::Cpd { rank: 3 },
        MethodSpec::CpdS {
            rank: 3,
            smoothness: SmoothnessConfig::default(),
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub tensor: TensorSource,
    /// Overrides the tensor's display name in reports.
    #[serde(default)]
    pub name: Option<String>,
    /// The naive baseline is always added.
    #[serde(default = "default_methods")]
    pub methods: Vec<MethodSpec>,
    /// Defaults to 5% (benchmark, timing) or the sweep grid.
    #[serde(default)]
    pub fractions: Option<Vec<f64>>,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub train: TrainConfig,
}

impl ExperimentSpec {
    pub fn new(tensor: TensorSource, methods: Vec<MethodSpec>) -> Self {
        Self {
            tensor,
            name: None,
            methods,
            fractions: None,
            repetitions: DEFAULT_REPETITIONS,
            seed: 0,
            train: TrainConfig::default(),
        }
    }
}

fn check_fraction(f: f64) -> Result<()> {
    if !(f > 0.0 && f < 1.0) {
        return Err(Error::InvalidArgument(format!("observed fraction {f} not in (0, 1)")));
    }
    Ok(())
}

/// Metrics of `prediction` against `truth` over the unobserved entries of
/// `observed`.
pub fn score(prediction: &DenseTensor, truth: &DenseTensor, observed: &SparseTensor) -> Result<(f64, f64, f64)> {
    let over = observed.unobserved_flat();
    Ok((
        mae(prediction, truth, &over)?,
        rmse(prediction, truth, &over)?,
        normalized_error(prediction, truth, &over)?,
    ))
}

struct Job<'a> {
    method: &'a MethodSpec,
    fraction: f64,
    rep: usize,
    seed: u64,
}

/// Every method × fraction × repetition on one tensor. Repetition `r` samples
/// its observed entries with seed `seed + r`, shared by all methods.
pub fn benchmark_tensor(
    name: &str,
    truth: &DenseTensor,
    methods: &[MethodSpec],
    fractions: &[f64],
    repetitions: usize,
    seed: u64,
    train: &TrainConfig,
) -> Result<ExperimentReport> {
    if repetitions == 0 {
        return Err(Error::InvalidArgument("repetitions must be at least 1".into()));
    }
    if fractions.is_empty() {
        return Err(Error::Empty("observed fractions"));
    }
    for &f in fractions {
        check_fraction(f)?;
    }
    train.validate()?;
    let mut all = Vec::with_capacity(methods.len() + 1);
    if !methods.contains(&MethodSpec::Naive) {
        all.push(MethodSpec::Naive);
    }
    all.extend_from_slice(methods);
    let mut jobs = Vec::new();
    for &fraction in fractions {
        for rep in 0..repetitions {
            for method in &all {
                jobs.push(Job {
                    method,
                    fraction,
                    rep,
                    seed: seed.wrapping_add(rep as u64),
                });
            }
        }
    }
    let rows = jobs
        .par_iter()
        .map(|job| -> Result<ReportRow> {
            let observed = sample_observed(truth, job.fraction, job.seed)?;
            let mut row = ReportRow {
                tensor: name.to_string(),
                method: job.method.label(),
                rank: job.method.rank_label(),
                lambda: job.method.lambda(),
                fraction: job.fraction,
                rep: job.rep,
                seed: job.seed,
                mae: None,
                rmse: None,
                nerr: None,
                seconds: 0.0,
                stop_reason: String::new(),
            };
            match complete(job.method, &observed, job.seed, train).and_then(|c| {
                let s = score(&c.prediction, truth, &observed)?;
                Ok((c, s))
            }) {
                Ok((c, (m, r, n))) => {
                    row.mae = Some(m);
                    row.rmse = Some(r);
                    row.nerr = Some(n);
                    row.seconds = c.seconds;
                    row.stop_reason = c.stop_reason;
                }
                Err(e) => {
                    log::warn!("{} at fraction {} rep {} failed: {e}", row.method, job.fraction, job.rep);
                    row.stop_reason = format!("failed: {e}");
                }
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentReport { rows })
}

fn load(spec: &ExperimentSpec, base_dir: Option<&Path>) -> Result<(String, DenseTensor)> {
    let (name, t) = spec.tensor.load(base_dir)?;
    Ok((spec.name.clone().unwrap_or(name), t))
}

/// Methods at the configured fractions (5% by default), naive included.
pub fn run_benchmark(spec: &ExperimentSpec, base_dir: Option<&Path>) -> Result<ExperimentReport> {
    let (name, truth) = load(spec, base_dir)?;
    let fractions = spec.fractions.clone().unwrap_or_else(|| vec![DEFAULT_FRACTION]);
    benchmark_tensor(&name, &truth, &spec.methods, &fractions, spec.repetitions, spec.seed, &spec.train)
}

/// As [`run_benchmark`] over the sweep grid 1%, 2.5%, 5%, 10% unless the spec
/// lists fractions.
pub fn sparsity_sweep(spec: &ExperimentSpec, base_dir: Option<&Path>) -> Result<ExperimentReport> {
    let (name, truth) = load(spec, base_dir)?;
    let fractions = spec.fractions.clone().unwrap_or_else(|| SWEEP_FRACTIONS.to_vec());
    benchmark_tensor(&name, &truth, &spec.methods, &fractions, spec.repetitions, spec.seed, &spec.train)
}

/// Per-run train plus inference seconds; the aggregates carry mean ± std.
pub fn timing_report(spec: &ExperimentSpec, base_dir: Option<&Path>) -> Result<ExperimentReport> {
    run_benchmark(spec, base_dir)
}

fn default_lambdas() -> Vec<f64> {
    vec![0.0, 0.01, 0.1, 1.0, 10.0]
}

fn default_lambda_rank() -> usize {
    3
}

fn default_fraction() -> f64 {
    DEFAULT_FRACTION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaSpec {
    pub tensor: TensorSource,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default = "default_lambda_rank")]
    pub rank: usize,
    #[serde(default = "default_lambdas")]
    pub lambdas: Vec<f64>,
    #[serde(default = "default_fraction")]
    pub fraction: f64,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub train: TrainConfig,
    /// Window, bandwidth and modes; λ comes from the grid.
    #[serde(default)]
    pub smoothness: SmoothnessConfig,
}

/// Smoothed CP at every λ of the grid (λ = 0 is plain CP), plus the naive
/// baseline and an unregularised CP run, for each repetition.
pub fn lambda_sensitivity_tensor(name: &str, truth: &DenseTensor, spec: &LambdaSpec) -> Result<ExperimentReport> {
    if spec.lambdas.is_empty() {
        return Err(Error::Empty("lambda grid"));
    }
    let mut methods = vec![MethodSpec::Cpd { rank: spec.rank }];
    for &lambda in &spec.lambdas {
        methods.push(MethodSpec::CpdS {
            rank: spec.rank,
            smoothness: SmoothnessConfig {
                lambda,
                ..spec.smoothness.clone()
            },
        });
    }
    benchmark_tensor(name, truth, &methods, &[spec.fraction], spec.repetitions, spec.seed, &spec.train)
}

pub fn lambda_sensitivity(spec: &LambdaSpec, base_dir: Option<&Path>) -> Result<ExperimentReport> {
    let (name, truth) = spec.tensor.load(base_dir)?;
    lambda_sensitivity_tensor(spec.name.as_deref().unwrap_or(&name), &truth, spec)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankPoint {
    pub rank: usize,
    pub normalized_error: f64,
    pub epochs: usize,
}

/// Fits CP factors to the whole tensor at each rank.
pub fn rank_scan(dense: &DenseTensor, ranks: &[usize], config: &DecomposeConfig) -> Result<Vec<RankPoint>> {
    if ranks.is_empty() {
        return Err(Error::Empty("rank grid"));
    }
    ranks
        .par_iter()
        .map(|&rank| {
            let d = decompose_dense(dense, rank, config)?;
            Ok(RankPoint {
                rank,
                normalized_error: d.normalized_error,
                epochs: d.epochs,
            })
        })
        .collect()
}

fn default_scan_ranks() -> Vec<usize> {
    (1..=8).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankScanSpec {
    pub tensor: TensorSource,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default = "default_scan_ranks")]
    pub ranks: Vec<usize>,
    #[serde(default)]
    pub decompose: DecomposeConfig,
}

/// The rank curve as report rows (method `decompose`, fraction 1, metrics
/// over all entries).
pub fn rank_scan_report(spec: &RankScanSpec, base_dir: Option<&Path>) -> Result<ExperimentReport> {
    let (name, truth) = spec.tensor.load(base_dir)?;
    let name = spec.name.clone().unwrap_or(name);
    let all = all_indices(truth.shape().numel());
    let rows = spec
        .ranks
        .par_iter()
        .map(|&rank| {
            let start = Instant::now();
            let d = decompose_dense(&truth, rank, &spec.decompose)?;
            let recon = DenseTensor::from_fn(truth.shape().clone(), |idx| d.factors.predict(idx))?;
            Ok(ReportRow {
                tensor: name.clone(),
                method: "decompose".into(),
                rank: rank.to_string(),
                lambda: None,
                fraction: 1.0,
                rep: 0,
                seed: spec.decompose.train.seed,
                mae: Some(mae(&recon, &truth, &all)?),
                rmse: Some(rmse(&recon, &truth, &all)?),
                nerr: Some(d.normalized_error),
                seconds: start.elapsed().as_secs_f64(),
                stop_reason: d.stop_reason.as_str().into(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentReport { rows })
}

fn default_target_fraction() -> f64 {
    0.01
}

fn default_context_fraction() -> f64 {
    0.15
}

fn default_cross_method() -> MethodSpec {
    MethodSpec::Ensemble {
        ensemble: EnsembleSpec::new(
            crate::ensemble::BaseFamily::CpdS,
            crate::ensemble::AggregatorKind::LearnedMlp,
        ),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossDatasetSpec {
    pub tensors: Vec<TensorSource>,
    /// Position of the target tensor in `tensors`.
    #[serde(default)]
    pub target: usize,
    #[serde(default = "default_target_fraction")]
    pub target_fraction: f64,
    #[serde(default = "default_context_fraction")]
    pub context_fraction: f64,
    #[serde(default = "default_cross_method")]
    pub method: MethodSpec,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub train: TrainConfig,
}

/// Stacks same-shape tensors along a new leading dataset mode and observes
/// `target_fraction` of the target slice (seed `seed`, identical to the
/// single-tensor sample) and `context_fraction` of every other slice.
pub fn stack_observed(
    tensors: &[DenseTensor],
    target: usize,
    target_fraction: f64,
    context_fraction: f64,
    seed: u64,
) -> Result<(DenseTensor, SparseTensor, SparseTensor)> {
    if target >= tensors.len() {
        return Err(Error::IndexOutOfBounds {
            index: vec![target],
            dims: vec![tensors.len()],
        });
    }
    check_fraction(target_fraction)?;
    check_fraction(context_fraction)?;
    let stacked = DenseTensor::stack(tensors)?;
    let k = tensors.len();
    let target_obs = sample_observed(&tensors[target], target_fraction, seed)?;
    let mut observed = target_obs.lift_leading(target, k)?;
    for (j, t) in tensors.iter().enumerate().filter(|(j, _)| *j != target) {
        let ctx = sample_observed(t, context_fraction, cell_seed(seed, j))?;
        observed = observed.merge(&ctx.lift_leading(j, k)?)?;
    }
    Ok((stacked, observed, target_obs))
}

/// Prepends a mode of size 1.
fn lift_dense(t: &DenseTensor) -> Result<DenseTensor> {
    let mut dims = vec![1];
    dims.extend_from_slice(t.shape().dims());
    DenseTensor::new(Shape::new(dims)?, t.values().to_vec())
}

/// Joint completion of the stacked tensor; returns the full stacked
/// prediction. A single tensor (no siblings) is completed directly, so the
/// result equals single-tensor completion.
pub fn complete_joint(
    method: &MethodSpec,
    stacked_observed: &SparseTensor,
    target_observed: &SparseTensor,
    seed: u64,
    train: &TrainConfig,
) -> Result<Completion> {
    if stacked_observed.shape().dim(0) == 1 {
        let mut c = complete(method, target_observed, seed, train)?;
        c.prediction = lift_dense(&c.prediction)?;
        return Ok(c);
    }
    complete(method, stacked_observed, seed, train)
}

/// For each repetition: target-slice metrics of joint completion (rows
/// `joint_<method>`) and of completing the target alone from the same target
/// observations (rows `single_<method>`).
pub fn cross_dataset_tensors(
    target_name: &str,
    tensors: &[DenseTensor],
    spec: &CrossDatasetSpec,
) -> Result<ExperimentReport> {
    if spec.repetitions == 0 {
        return Err(Error::InvalidArgument("repetitions must be at least 1".into()));
    }
    spec.train.validate()?;
    let truth = tensors.get(spec.target).ok_or_else(|| Error::IndexOutOfBounds {
        index: vec![spec.target],
        dims: vec![tensors.len()],
    })?;
    let label = spec.method.label();
    let jobs: Vec<(usize, bool)> = (0..spec.repetitions).flat_map(|r| [(r, true), (r, false)]).collect();
    let rows = jobs
        .par_iter()
        .map(|&(rep, joint)| -> Result<ReportRow> {
            let seed = spec.seed.wrapping_add(rep as u64);
            let (_, stacked_obs, target_obs) =
                stack_observed(tensors, spec.target, spec.target_fraction, spec.context_fraction, seed)?;
            let outcome = if joint {
                complete_joint(&spec.method, &stacked_obs, &target_obs, seed, &spec.train)
                    .and_then(|c| Ok((c.prediction.leading_slice(spec.target)?, c)))
            } else {
                complete(&spec.method, &target_obs, seed, &spec.train).map(|c| (c.prediction.clone(), c))
            };
            let mut row = ReportRow {
                tensor: target_name.to_string(),
                method: format!("{}_{label}", if joint { "joint" } else { "single" }),
                rank: spec.method.rank_label(),
                lambda: spec.method.lambda(),
                fraction: spec.target_fraction,
                rep,
                seed,
                mae: None,
                rmse: None,
                nerr: None,
                seconds: 0.0,
                stop_reason: String::new(),
            };
            match outcome.and_then(|(pred, c)| Ok((score(&pred, truth, &target_obs)?, c))) {
                Ok(((m, r, n), c)) => {
                    row.mae = Some(m);
                    row.rmse = Some(r);
                    row.nerr = Some(n);
                    row.seconds = c.seconds;
                    row.stop_reason = c.stop_reason;
                }
                Err(e) => {
                    log::warn!("{} rep {rep} failed: {e}", row.method);
                    row.stop_reason = format!("failed: {e}");
                }
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentReport { rows })
}

pub fn cross_dataset_completion(spec: &CrossDatasetSpec, base_dir: Option<&Path>) -> Result<ExperimentReport> {
    let mut names = Vec::with_capacity(spec.tensors.len());
    let mut tensors = Vec::with_capacity(spec.tensors.len());
    for src in &spec.tensors {
        let (n, t) = src.load(base_dir)?;
        names.push(n);
        tensors.push(t);
    }
    let name = names.get(spec.target).cloned().unwrap_or_default();
    cross_dataset_tensors(&name, &tensors, spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lowrank(rank: usize, seed: u64) -> TensorSource {
        TensorSource::Generate(TaskSpec::LowRank {
            shape: vec![6, 6, 6],
            rank,
            noise: 0.0,
            seed,
        })
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            max_epochs: 200,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn benchmark_row_counts_and_aggregates() {
        let mut spec = ExperimentSpec::new(
            lowrank(2, 1),
            vec![
                MethodSpec::Cpd { rank: 2 },
                MethodSpec::CpdS {
                    rank: 2,
                    smoothness: SmoothnessConfig::default(),
                },
                MethodSpec::Tucker { ranks: vec![2] },
            ],
        );
        spec.train = quick();
        let report = run_benchmark(&spec, None).unwrap();
        assert_eq!(report.rows.len(), 20);
        let aggs = report.aggregates();
        assert_eq!(aggs.len(), 4);
        for a in &aggs {
            assert_eq!(a.runs, 5);
            let maes: Vec<f64> = report.find(&a.method).map(|r| r.mae.unwrap()).collect();
            let mean = maes.iter().sum::<f64>() / 5.0;
            assert!((a.mae.as_ref().unwrap().mean - mean).abs() < 1e-15);
        }
        let csv = report.to_csv();
        assert!(csv.starts_with(CSV_HEADER));
        assert_eq!(csv.lines().count(), 21);
    }

    #[test]
    fn scores_only_unobserved_entries() {
        let (_, truth) = lowrank(1, 3).load(None).unwrap();
        let obs = sample_observed(&truth, 0.2, 4).unwrap();
        // Wrong everywhere except unobserved cells, which are exact.
        let pred = DenseTensor::from_fn(truth.shape().clone(), |idx| {
            let v = truth.get(idx).unwrap();
            if obs.contains(idx) {
                v + 5.0
            } else {
                v
            }
        })
        .unwrap();
        assert_eq!(score(&pred, &truth, &obs).unwrap(), (0.0, 0.0, 0.0));
    }

    #[test]
    fn failures_are_recorded() {
        let mut spec = ExperimentSpec::new(lowrank(1, 1), vec![MethodSpec::Cpd { rank: 0 }]);
        spec.repetitions = 2;
        let report = run_benchmark(&spec, None).unwrap();
        let bad: Vec<_> = report.find("cpd").collect();
        assert_eq!(bad.len(), 2);
        assert!(bad.iter().all(|r| r.failed() && r.stop_reason.starts_with("failed")));
        assert!(report.find("naive").all(|r| !r.failed()));
        assert_eq!(report.aggregates()[1].failures, 2);
    }

    #[test]
    fn rank_scan_single_point() {
        let (_, t) = lowrank(1, 2).load(None).unwrap();
        let curve = rank_scan(&t, &[1], &DecomposeConfig::default()).unwrap();
        assert_eq!(curve.len(), 1);
        assert!(curve[0].normalized_error < 1e-3);
    }

    #[test]
    fn cross_dataset_shapes_and_single_slice() {
        let (_, t) = lowrank(2, 5).load(None).unwrap();
        let (stacked, obs, target_obs) = stack_observed(&[t.clone(), t.clone()], 1, 0.05, 0.15, 3).unwrap();
        assert_eq!(stacked.shape().order(), t.shape().order() + 1);
        assert_eq!(obs.len(), target_obs.len() + (0.15f64 * 216.0).round() as usize);
        let spec = CrossDatasetSpec {
            tensors: vec![],
            target: 0,
            target_fraction: 0.1,
            context_fraction: 0.15,
            method: MethodSpec::Cpd { rank: 2 },
            repetitions: 2,
            seed: 0,
            train: quick(),
        };
        let report = cross_dataset_tensors("t", &[t.clone()], &spec).unwrap();
        let joint: Vec<_> = report.find("joint_cpd").map(|r| r.mae.unwrap()).collect();
        let single: Vec<_> = report.find("single_cpd").map(|r| r.mae.unwrap()).collect();
        assert_eq!(joint, single);
        let (_, o1, t1) = stack_observed(&[t.clone()], 0, 0.1, 0.15, 9).unwrap();
        let c = complete_joint(&MethodSpec::Cpd { rank: 1 }, &o1, &t1, 9, &quick()).unwrap();
        assert_eq!(c.prediction.shape().order(), 4);
    }

    #[test]
    fn method_labels_and_serde() {
        let m: MethodSpec = serde_json::from_str(r#"{"method":"cpd_s","rank":3,"smoothness":{"lambda":0.5}}"#).unwrap();
        assert_eq!((m.label(), m.rank_label(), m.lambda()), ("cpd_s".into(), "3".into(), Some(0.5)));
        let e: MethodSpec =
            serde_json::from_str(r#"{"method":"ensemble","ensemble":{"family":"cpd","aggregator":"median"}}"#).unwrap();
        assert_eq!(e.label(), "ensemble_cpd_median");
        assert_eq!(e.rank_label(), "1+3+5");
        assert!(serde_json::from_str::<MethodSpec>(r#"{"method":"cpd","rank":3,"lr":1}"#).is_err());
    }

    #[test]
    fn report_is_reproducible() {
        let mut spec = ExperimentSpec::new(lowrank(1, 8), vec![MethodSpec::Cpd { rank: 1 }]);
        spec.repetitions = 2;
        spec.train = quick();
        let strip = |r: ExperimentReport| -> Vec<ReportRow> {
            r.rows.into_iter().map(|row| ReportRow { seconds: 0.0, ..row }).collect()
        };
        assert_eq!(strip(run_benchmark(&spec, None).unwrap()), strip(run_benchmark(&spec, None).unwrap()));
    }
}
