//! Hyperparameter-grid tensors: every cell is the holdout F1 score of a small
//! in-repo classifier trained with one combination of axis values on a fixed
//! two-class Gaussian-blob dataset.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{cell_seed, AxisValue, GridAxis};
use crate::error::{Error, Result};
use crate::nn::{train_mlp, Batch, Loss, Mlp, MlpTrainConfig};
use crate::seeded_rng;
use crate::tensor::{DenseTensor, Shape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlobSpec {
    pub samples: usize,
    pub features: usize,
    /// Distance between the two class means.
    pub separation: f64,
    /// Probability that a sample belongs to the positive class.
    pub positive_fraction: f64,
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for BlobSpec {
    fn default() -> Self {
        Self {
            samples: 200,
            features: 4,
            separation: 2.0,
            positive_fraction: 0.5,
            holdout_fraction: 0.3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x_train: Vec<Vec<f64>>,
    pub y_train: Vec<bool>,
    pub x_test: Vec<Vec<f64>>,
    pub y_test: Vec<bool>,
}

/// Unit-variance Gaussian classes whose means sit at `±separation/2` along
/// the diagonal direction; the first samples form the training set.
pub fn make_blobs(spec: &BlobSpec) -> Result<Dataset> {
    let n_test = (spec.samples as f64 * spec.holdout_fraction).round() as usize;
    if spec.features == 0 || !(0.0..1.0).contains(&spec.holdout_fraction) || n_test == 0 || n_test >= spec.samples {
        return Err(Error::InvalidArgument(format!(
            "blob dataset needs features > 0 and non-empty train and holdout parts, got {spec:?}"
        )));
    }
    if !(0.0..=1.0).contains(&spec.positive_fraction) || !spec.separation.is_finite() {
        return Err(Error::InvalidArgument(format!("invalid blob class settings {spec:?}")));
    }
    let mut rng = seeded_rng(spec.seed);
    let shift = spec.separation / 2.0 / (spec.features as f64).sqrt();
    let mut xs = Vec::with_capacity(spec.samples);
    let mut ys = Vec::with_capacity(spec.samples);
    for _ in 0..spec.samples {
        let y = rng.random::<f64>() < spec.positive_fraction;
        let sign = if y { 1.0 } else { -1.0 };
        let x = (0..spec.features)
            .map(|_| sign * shift + <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
            .collect();
        xs.push(x);
        ys.push(y);
    }
    let n_train = spec.samples - n_test;
    let x_test = xs.split_off(n_train);
    let y_test = ys.split_off(n_train);
    Ok(Dataset {
        x_train: xs,
        y_train: ys,
        x_test,
        y_test,
    })
}

/// F1 of the positive class; 0 when there are neither true nor predicted
/// positives.
pub fn f1_score(truth: &[bool], predicted: &[bool]) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&t, &p) in truth.iter().zip(predicted) {
        match (t, p) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            (false, false) => {}
        }
    }
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Knn,
    DecisionTree,
    TinyMlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    Uniform,
    Distance,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnnParams {
    pub k: usize,
    /// Minkowski exponent.
    pub p: f64,
    pub weighting: Weighting,
}

impl Default for KnnParams {
    fn default() -> Self {
        Self {
            k: 5,
            p: 2.0,
            weighting: Weighting::Uniform,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Share of the features considered at each split.
    pub feature_fraction: f64,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: 4,
            min_leaf: 1,
            feature_fraction: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlpParams {
    pub layers: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for MlpParams {
    fn default() -> Self {
        Self {
            layers: 1,
            hidden: 8,
            epochs: 20,
            learning_rate: 0.01,
        }
    }
}

fn minkowski(a: &[f64], b: &[f64], p: f64) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs().powf(p)).sum::<f64>().powf(1.0 / p)
}

/// Majority vote of the `k` nearest training points (ties between classes go
/// to the negative class). With distance weighting, exact matches outvote
/// everything else.
pub fn knn_predict(data: &Dataset, params: &KnnParams) -> Vec<bool> {
    let k = params.k.clamp(1, data.x_train.len());
    data.x_test
        .iter()
        .map(|x| {
            let mut d: Vec<(f64, usize)> = data
                .x_train
                .iter()
                .enumerate()
                .map(|(i, t)| (minkowski(x, t, params.p), i))
                .collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let near = &d[..k];
            let exact = near.iter().any(|(dist, _)| *dist == 0.0);
            let (mut pos, mut neg) = (0.0, 0.0);
            for &(dist, i) in near {
                let w = match params.weighting {
                    Weighting::Uniform => 1.0,
                    Weighting::Distance if exact => f64::from(u8::from(dist == 0.0)),
                    Weighting::Distance => 1.0 / dist,
                };
                if data.y_train[i] {
                    pos += w;
                } else {
                    neg += w;
                }
            }
            pos > neg
        })
        .collect()
}

enum Node {
    Leaf(bool),
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    fn predict(&self, x: &[f64]) -> bool {
        match self {
            Node::Leaf(y) => *y,
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if x[*feature] <= *threshold {
                    left.predict(x)
                } else {
                    right.predict(x)
                }
            }
        }
    }
}

fn gini(pos: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

struct TreeBuilder<'a, R: Rng> {
    x: &'a [Vec<f64>],
    y: &'a [bool],
    params: TreeParams,
    n_features: usize,
    rng: R,
}

impl<R: Rng> TreeBuilder<'_, R> {
    fn build(&mut self, rows: &[usize], depth: usize) -> Node {
        let pos = rows.iter().filter(|&&r| self.y[r]).count();
        let leaf = Node::Leaf(2 * pos > rows.len());
        if depth >= self.params.max_depth || pos == 0 || pos == rows.len() || rows.len() < 2 * self.params.min_leaf {
            return leaf;
        }
        let d = self.x[0].len();
        let mut features: Vec<usize> = (0..d).collect();
        for i in 0..self.n_features {
            let j = self.rng.random_range(i..d);
            features.swap(i, j);
        }
        features.truncate(self.n_features);
        features.sort_unstable();

        let parent = gini(pos, rows.len());
        let mut best: Option<(f64, usize, f64)> = None;
        for &f in &features {
            let mut sorted = rows.to_vec();
            sorted.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]).then(a.cmp(&b)));
            let mut left_pos = 0;
            for cut in 1..sorted.len() {
                left_pos += usize::from(self.y[sorted[cut - 1]]);
                let (lo, hi) = (self.x[sorted[cut - 1]][f], self.x[sorted[cut]][f]);
                if lo == hi || cut < self.params.min_leaf || sorted.len() - cut < self.params.min_leaf {
                    continue;
                }
                let n = sorted.len() as f64;
                let right = sorted.len() - cut;
                let impurity = cut as f64 / n * gini(left_pos, cut) + right as f64 / n * gini(pos - left_pos, right);
                if best.is_none_or(|(b, _, _)| impurity < b) {
                    best = Some((impurity, f, (lo + hi) / 2.0));
                }
            }
        }
        match best {
            Some((impurity, feature, threshold)) if impurity < parent => {
                let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| self.x[i][feature] <= threshold);
                Node::Split {
                    feature,
                    threshold,
                    left: Box::new(self.build(&l, depth + 1)),
                    right: Box::new(self.build(&r, depth + 1)),
                }
            }
            _ => leaf,
        }
    }
}

/// CART with Gini impurity, depth and leaf-size limits and a seeded feature
/// subsample at each split.
pub fn tree_predict(data: &Dataset, params: &TreeParams, seed: u64) -> Vec<bool> {
    let d = data.x_train[0].len();
    let n_features = ((params.feature_fraction * d as f64).round() as usize).clamp(1, d);
    let mut builder = TreeBuilder {
        x: &data.x_train,
        y: &data.y_train,
        params: TreeParams {
            min_leaf: params.min_leaf.max(1),
            ..*params
        },
        n_features,
        rng: seeded_rng(seed),
    };
    let rows: Vec<usize> = (0..data.x_train.len()).collect();
    let tree = builder.build(&rows, 0);
    data.x_test.iter().map(|x| tree.predict(x)).collect()
}

/// Feedforward classifier trained with full-batch Adam on the logistic loss
/// for a fixed number of epochs.
pub fn mlp_predict(data: &Dataset, params: &MlpParams, seed: u64) -> Result<Vec<bool>> {
    let mut sizes = vec![data.x_train[0].len()];
    sizes.extend(std::iter::repeat_n(params.hidden.max(1), params.layers));
    sizes.push(1);
    let targets: Vec<f64> = data.y_train.iter().map(|&y| f64::from(u8::from(y))).collect();
    let epochs = params.epochs.max(1);
    let cfg = MlpTrainConfig {
        learning_rate: params.learning_rate,
        max_epochs: epochs,
        patience: epochs,
        tolerance: 0.0,
    };
    let trace = train_mlp(
        Mlp::random(sizes, seed)?,
        Batch::new(&data.x_train, &targets)?,
        None,
        &cfg,
        Loss::Logistic,
    )?;
    data.x_test.iter().map(|x| Ok(trace.mlp.forward(x)? > 0.0)).collect()
}

/// Reduced-range versions of the usual search axes of each learner.
pub fn default_axes(learner: LearnerKind) -> Vec<GridAxis> {
    match learner {
        LearnerKind::Knn => vec![
            GridAxis::geometric("k", 1.0, 32.0, 6),
            GridAxis::numeric("p", &[1.0, 1.5, 2.0, 3.0]),
            GridAxis::labels("weighting", &["uniform", "distance"]),
        ],
        LearnerKind::DecisionTree => vec![
            GridAxis::numeric("max_depth", &[1.0, 2.0, 3.0, 4.0, 6.0, 8.0]),
            GridAxis::geometric("min_leaf", 1.0, 16.0, 5),
            GridAxis::numeric("feature_fraction", &[0.25, 0.5, 0.75, 1.0]),
        ],
        LearnerKind::TinyMlp => vec![
            GridAxis::numeric("layers", &[1.0, 2.0]),
            GridAxis::geometric("hidden", 2.0, 16.0, 4),
            GridAxis::geometric("epochs", 5.0, 40.0, 4),
            GridAxis::geometric("learning_rate", 0.001, 0.1, 3),
        ],
    }
}

fn number(axis: &GridAxis, v: &AxisValue) -> Result<f64> {
    match v {
        AxisValue::Number(x) => Ok(*x),
        AxisValue::Label(s) => Err(Error::TypeMismatch(format!("axis {} expects numbers, got {s:?}", axis.name))),
    }
}

/// Rounds a numeric axis value to a count, clamping it into `[lo, hi]`;
/// clamped values are reported through `flags`.
fn count(axis: &GridAxis, v: &AxisValue, lo: usize, hi: usize, flags: &mut Vec<String>) -> Result<usize> {
    let x = number(axis, v)?;
    let r = x.round();
    let c = if r < lo as f64 { lo } else if r > hi as f64 { hi } else { r as usize };
    if c as f64 != x {
        flags.push(format!("{} = {x} clamped to {c}", axis.name));
    }
    Ok(c)
}

fn unknown(axis: &GridAxis, learner: LearnerKind) -> Error {
    Error::InvalidArgument(format!("axis {:?} is not a parameter of the {learner:?} learner", axis.name))
}

/// Scores one cell; returns the F1 and any clamping notes.
fn score_cell(
    learner: LearnerKind,
    axes: &[GridAxis],
    idx: &[usize],
    data: &Dataset,
    seed: u64,
) -> Result<(f64, Vec<String>)> {
    let mut flags = Vec::new();
    let n_train = data.x_train.len();
    let predicted = match learner {
        LearnerKind::Knn => {
            let mut p = KnnParams::default();
            for (axis, &i) in axes.iter().zip(idx) {
                let v = &axis.values[i];
                match axis.name.as_str() {
                    "k" => p.k = count(axis, v, 1, n_train, &mut flags)?,
                    "p" => {
                        p.p = number(axis, v)?;
                        if !(p.p > 0.0) {
                            return Err(Error::InvalidArgument(format!("distance power {} must be positive", p.p)));
                        }
                    }
                    "weighting" => {
                        p.weighting = match v {
                            AxisValue::Label(s) if s == "uniform" => Weighting::Uniform,
                            AxisValue::Label(s) if s == "distance" => Weighting::Distance,
                            other => {
                                return Err(Error::TypeMismatch(format!(
                                    "weighting must be \"uniform\" or \"distance\", got {other:?}"
                                )))
                            }
                        }
                    }
                    _ => return Err(unknown(axis, learner)),
                }
            }
            knn_predict(data, &p)
        }
        LearnerKind::DecisionTree => {
            let mut p = TreeParams::default();
            for (axis, &i) in axes.iter().zip(idx) {
                let v = &axis.values[i];
                match axis.name.as_str() {
                    "max_depth" => p.max_depth = count(axis, v, 0, usize::MAX, &mut flags)?,
                    "min_leaf" => p.min_leaf = count(axis, v, 1, n_train, &mut flags)?,
                    "feature_fraction" => {
                        let f = number(axis, v)?;
                        p.feature_fraction = f.clamp(f64::MIN_POSITIVE, 1.0);
                        if p.feature_fraction != f {
                            flags.push(format!("feature_fraction = {f} clamped to {}", p.feature_fraction));
                        }
                    }
                    _ => return Err(unknown(axis, learner)),
                }
            }
            tree_predict(data, &p, seed)
        }
        LearnerKind::TinyMlp => {
            let mut p = MlpParams::default();
            for (axis, &i) in axes.iter().zip(idx) {
                let v = &axis.values[i];
                match axis.name.as_str() {
                    "layers" => p.layers = count(axis, v, 0, 8, &mut flags)?,
                    "hidden" => p.hidden = count(axis, v, 1, 1024, &mut flags)?,
                    "epochs" => p.epochs = count(axis, v, 1, 100_000, &mut flags)?,
                    "learning_rate" => {
                        p.learning_rate = number(axis, v)?;
                        if !(p.learning_rate >= 0.0) {
                            return Err(Error::InvalidArgument(format!(
                                "learning rate {} must be >= 0",
                                p.learning_rate
                            )));
                        }
                    }
                    _ => return Err(unknown(axis, learner)),
                }
            }
            mlp_predict(data, &p, seed)?
        }
    };
    Ok((f1_score(&data.y_test, &predicted), flags))
}

/// A clamped or otherwise adjusted cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFlag {
    pub index: Vec<usize>,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HpoGrid {
    pub tensor: DenseTensor,
    pub flags: Vec<CellFlag>,
}

/// Trains `learner` for every combination of axis values and records the
/// holdout F1 score. Cells are scored in parallel with per-cell seeds, so the
/// result does not depend on scheduling.
pub fn generate_hpo_grid(axes: &[GridAxis], learner: LearnerKind, data: &BlobSpec, seed: u64) -> Result<HpoGrid> {
    for a in axes {
        a.validate()?;
    }
    let shape = Shape::new(axes.iter().map(|a| a.values.len()).collect())?;
    let dataset = make_blobs(data)?;
    let cells: Vec<(f64, Vec<String>)> = (0..shape.numel())
        .into_par_iter()
        .map(|flat| score_cell(learner, axes, &shape.unravel(flat), &dataset, cell_seed(seed, flat)))
        .collect::<Result<_>>()?;
    let mut flags = Vec::new();
    let mut values = Vec::with_capacity(cells.len());
    for (flat, (f1, notes)) in cells.into_iter().enumerate() {
        values.push(f1);
        for note in notes {
            flags.push(CellFlag {
                index: shape.unravel(flat),
                note,
            });
        }
    }
    Ok(HpoGrid {
        tensor: DenseTensor::new(shape, values)?,
        flags,
    })
}
