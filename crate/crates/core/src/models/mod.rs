//! Completion model families: CP, Tucker, tensor-train and the neural
//! embedding/convolution model.
//!
//! Every model keeps all of its parameters in one flat `Vec<f64>`, so the
//! optimizer and checkpoints treat the families uniformly. Gradients are the
//! exact derivative of a single-entry prediction, accumulated into a buffer
//! of the same length as the parameter vector.

mod checkpoint;
mod cp;
mod decompose;
mod neural;
mod tt;
mod tucker;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeded_rng;
use crate::tensor::{DenseTensor, Shape};

pub use checkpoint::{decode_checkpoint, encode_checkpoint, Checkpoint};
pub use cp::CpModel;
pub use decompose::{decompose_dense, DecomposeConfig, Decomposition};
pub use neural::NeuralModel;
pub use tt::TensorTrainModel;
pub use tucker::TuckerModel;

pub const DEFAULT_CHANNELS: usize = 32;
pub const DEFAULT_HIDDEN: usize = 32;

fn default_channels() -> usize {
    DEFAULT_CHANNELS
}

fn default_hidden() -> usize {
    DEFAULT_HIDDEN
}

/// Which family to build and with what rank(s).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelKind {
    Cp {
        rank: usize,
    },
    /// One rank per mode, or a single rank used for every mode.
    Tucker { ranks: Vec<usize> },
    /// Internal bond dimensions (`N − 1` values, or one value for all),
    /// or the full `r_0..r_N` list with unit boundaries.
    TensorTrain { ranks: Vec<usize> },
    Neural {
        rank: usize,
        #[serde(default = "default_channels")]
        channels: usize,
        #[serde(default = "default_hidden")]
        hidden: usize,
    },
}

impl ModelKind {
    pub fn cp(rank: usize) -> Self {
        ModelKind::Cp { rank }
    }

    pub fn neural(rank: usize) -> Self {
        ModelKind::Neural {
            rank,
            channels: DEFAULT_CHANNELS,
            hidden: DEFAULT_HIDDEN,
        }
    }

    pub fn family_name(&self) -> &'static str {
        match self {
            ModelKind::Cp { .. } => "cp",
            ModelKind::Tucker { .. } => "tucker",
            ModelKind::TensorTrain { .. } => "tensor_train",
            ModelKind::Neural { .. } => "neural",
        }
    }

    /// Short rank label used in reports.
    pub fn rank_label(&self) -> String {
        let join = |r: &[usize]| {
            r.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join("x")
        };
        match self {
            ModelKind::Cp { rank } | ModelKind::Neural { rank, .. } => rank.to_string(),
            ModelKind::Tucker { ranks } | ModelKind::TensorTrain { ranks } => join(ranks),
        }
    }

    /// Expands broadcast ranks against `shape` and validates them.
    pub fn resolve(&self, shape: &Shape) -> Result<ModelKind> {
        let order = shape.order();
        let positive = |rs: &[usize], what: &str| -> Result<()> {
            if rs.contains(&0) {
                Err(Error::InvalidRank(format!("{what} ranks must be positive, got {rs:?}")))
            } else {
                Ok(())
            }
        };
        match self {
            ModelKind::Cp { rank } => {
                positive(&[*rank], "cp")?;
                Ok(self.clone())
            }
            ModelKind::Tucker { ranks } => {
                positive(ranks, "tucker")?;
                let ranks = match ranks.len() {
                    1 => vec![ranks[0]; order],
                    n if n == order => ranks.clone(),
                    n => {
                        return Err(Error::InvalidRank(format!(
                            "tucker needs 1 or {order} ranks, got {n}"
                        )))
                    }
                };
                Ok(ModelKind::Tucker { ranks })
            }
            ModelKind::TensorTrain { ranks } => {
                positive(ranks, "tensor-train")?;
                let bonds = if ranks.len() == order + 1 {
                    if ranks[0] != 1 || ranks[order] != 1 {
                        return Err(Error::InvalidRank(format!(
                            "tensor-train boundary bonds must be 1, got {ranks:?}"
                        )));
                    }
                    ranks.clone()
                } else if ranks.len() == 1 || ranks.len() + 1 == order {
                    let mut b = vec![1];
                    for n in 0..order - 1 {
                        b.push(if ranks.len() == 1 { ranks[0] } else { ranks[n] });
                    }
                    b.push(1);
                    b
                } else {
                    return Err(Error::InvalidRank(format!(
                        "tensor-train bond list of length {} does not fit order {order}",
                        ranks.len()
                    )));
                };
                Ok(ModelKind::TensorTrain { ranks: bonds })
            }
            ModelKind::Neural {
                rank,
                channels,
                hidden,
            } => {
                positive(&[*rank, *channels, *hidden], "neural")?;
                Ok(self.clone())
            }
        }
    }
}

/// Support of the uniform initial draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitDistribution {
    /// `[0, scale]` for the multilinear families, `[−scale, scale]` for the
    /// neural head.
    #[default]
    Auto,
    Symmetric,
    NonNegative,
}

/// Seeded uniform initialisation of every parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelInit {
    pub seed: u64,
    #[serde(default = "ModelInit::default_scale")]
    pub scale: f64,
    #[serde(default)]
    pub distribution: InitDistribution,
}

impl ModelInit {
    pub const DEFAULT_SCALE: f64 = 0.5;

    fn default_scale() -> f64 {
        Self::DEFAULT_SCALE
    }

    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            scale: Self::DEFAULT_SCALE,
            distribution: InitDistribution::Auto,
        }
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    pub fn with_distribution(mut self, distribution: InitDistribution) -> Self {
        self.distribution = distribution;
        self
    }

    /// Lower end of the draw for `kind`.
    pub fn lower_bound(&self, kind: &ModelKind) -> f64 {
        let symmetric = match self.distribution {
            InitDistribution::Symmetric => true,
            InitDistribution::NonNegative => false,
            InitDistribution::Auto => matches!(kind, ModelKind::Neural { .. }),
        };
        if symmetric {
            -self.scale
        } else {
            0.0
        }
    }
}

/// Anything that predicts single entries and differentiates them.
pub trait EntryModel: Sync {
    fn shape(&self) -> &Shape;

    fn num_params(&self) -> usize;

    /// Prediction at an index already known to be in bounds.
    fn predict_unchecked(&self, index: &[usize]) -> f64;

    /// Adds `upstream · ∂prediction/∂θ` into `grad` for an in-bounds index.
    fn accumulate_gradient_unchecked(&self, index: &[usize], upstream: f64, grad: &mut [f64]);

    fn predict_entry(&self, index: &[usize]) -> Result<f64> {
        self.shape().check_index(index)?;
        Ok(self.predict_unchecked(index))
    }

    fn entry_gradient(&self, index: &[usize], upstream: f64) -> Result<Vec<f64>> {
        self.shape().check_index(index)?;
        let mut grad = vec![0.0; self.num_params()];
        self.accumulate_gradient_unchecked(index, upstream, &mut grad);
        Ok(grad)
    }
}

/// A model whose parameters the optimizer can update in place.
pub trait Parametric: EntryModel {
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
}

#[derive(Debug, Clone, PartialEq)]
pub enum CompletionModel {
    Cp(CpModel),
    Tucker(TuckerModel),
    TensorTrain(TensorTrainModel),
    Neural(NeuralModel),
}

impl CompletionModel {
    /// Builds a model of `kind` from an explicit parameter vector.
    pub fn from_params(kind: &ModelKind, shape: &Shape, params: Vec<f64>) -> Result<Self> {
        let kind = kind.resolve(shape)?;
        let expected = param_count(&kind, shape);
        if params.len() != expected {
            return Err(Error::InvalidArgument(format!(
                "{} parameters supplied, {} expects {expected}",
                params.len(),
                kind.family_name()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument("non-finite parameter".into()));
        }
        let shape = shape.clone();
        Ok(match kind {
            ModelKind::Cp { rank } => CompletionModel::Cp(CpModel::from_params(shape, rank, params)),
            ModelKind::Tucker { ranks } => CompletionModel::Tucker(TuckerModel::from_params(
                shape,
                Shape::new(ranks)?,
                params,
            )),
            ModelKind::TensorTrain { ranks } => {
                CompletionModel::TensorTrain(TensorTrainModel::from_params(shape, ranks, params))
            }
            ModelKind::Neural {
                rank,
                channels,
                hidden,
            } => CompletionModel::Neural(NeuralModel::from_params(
                shape, rank, channels, hidden, params,
            )),
        })
    }

    /// The resolved kind (broadcast ranks expanded).
    pub fn kind(&self) -> ModelKind {
        match self {
            CompletionModel::Cp(m) => ModelKind::Cp { rank: m.rank() },
            CompletionModel::Tucker(m) => ModelKind::Tucker {
                ranks: m.ranks().to_vec(),
            },
            CompletionModel::TensorTrain(m) => ModelKind::TensorTrain {
                ranks: m.bonds().to_vec(),
            },
            CompletionModel::Neural(m) => ModelKind::Neural {
                rank: m.rank(),
                channels: m.channels(),
                hidden: m.hidden(),
            },
        }
    }

    pub fn as_cp(&self) -> Option<&CpModel> {
        match self {
            CompletionModel::Cp(m) => Some(m),
            _ => None,
        }
    }

    pub fn is_neural(&self) -> bool {
        matches!(self, CompletionModel::Neural(_))
    }

    /// Every entry of the modelled tensor. `shape` must match the model.
    pub fn reconstruct(&self, shape: &Shape) -> Result<DenseTensor> {
        reconstruct(self, shape)
    }
}

impl EntryModel for CompletionModel {
    fn shape(&self) -> &Shape {
        match self {
            CompletionModel::Cp(m) => m.shape(),
            CompletionModel::Tucker(m) => m.shape(),
            CompletionModel::TensorTrain(m) => m.shape(),
            CompletionModel::Neural(m) => m.shape(),
        }
    }

    fn num_params(&self) -> usize {
        self.params().len()
    }

    fn predict_unchecked(&self, index: &[usize]) -> f64 {
        match self {
            CompletionModel::Cp(m) => m.predict(index),
            CompletionModel::Tucker(m) => m.predict(index),
            CompletionModel::TensorTrain(m) => m.predict(index),
            CompletionModel::Neural(m) => m.predict(index),
        }
    }

    fn accumulate_gradient_unchecked(&self, index: &[usize], upstream: f64, grad: &mut [f64]) {
        match self {
            CompletionModel::Cp(m) => m.accumulate_gradient(index, upstream, grad),
            CompletionModel::Tucker(m) => m.accumulate_gradient(index, upstream, grad),
            CompletionModel::TensorTrain(m) => m.accumulate_gradient(index, upstream, grad),
            CompletionModel::Neural(m) => m.accumulate_gradient(index, upstream, grad),
        }
    }
}

impl Parametric for CompletionModel {
    fn params(&self) -> &[f64] {
        match self {
            CompletionModel::Cp(m) => m.params(),
            CompletionModel::Tucker(m) => m.params(),
            CompletionModel::TensorTrain(m) => m.params(),
            CompletionModel::Neural(m) => m.params(),
        }
    }

    fn params_mut(&mut self) -> &mut [f64] {
        match self {
            CompletionModel::Cp(m) => m.params_mut(),
            CompletionModel::Tucker(m) => m.params_mut(),
            CompletionModel::TensorTrain(m) => m.params_mut(),
            CompletionModel::Neural(m) => m.params_mut(),
        }
    }
}

/// Number of parameters of an already resolved kind.
fn param_count(kind: &ModelKind, shape: &Shape) -> usize {
    match kind {
        ModelKind::Cp { rank } => CpModel::param_count(shape, *rank),
        ModelKind::Tucker { ranks } => TuckerModel::param_count(shape, ranks),
        ModelKind::TensorTrain { ranks } => TensorTrainModel::param_count(shape, ranks),
        ModelKind::Neural {
            rank,
            channels,
            hidden,
        } => NeuralModel::param_count(shape, *rank, *channels, *hidden),
    }
}

/// Draws every parameter i.i.d. uniform on `[lower, scale]`, see
/// [`ModelInit::lower_bound`].
pub fn init_model(kind: &ModelKind, shape: &Shape, init: &ModelInit) -> Result<CompletionModel> {
    if !(init.scale >= 0.0 && init.scale.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "init scale must be a non-negative finite number, got {}",
            init.scale
        )));
    }
    let kind = kind.resolve(shape)?;
    let count = param_count(&kind, shape);
    let mut rng = seeded_rng(init.seed);
    let s = init.scale;
    let lo = init.lower_bound(&kind);
    let params = if s == 0.0 {
        vec![0.0; count]
    } else {
        (0..count).map(|_| rng.random_range(lo..=s)).collect()
    };
    CompletionModel::from_params(&kind, shape, params)
}

/// Evaluates any entry model at every index of `shape`.
pub fn reconstruct<M: EntryModel + ?Sized>(model: &M, shape: &Shape) -> Result<DenseTensor> {
    if model.shape() != shape {
        return Err(Error::ShapeMismatch {
            expected: model.shape().dims().to_vec(),
            found: shape.dims().to_vec(),
        });
    }
    DenseTensor::from_fn(shape.clone(), |idx| model.predict_unchecked(idx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn shape(d: &[usize]) -> Shape {
        Shape::new(d.to_vec()).unwrap()
    }

    fn cp_abc() -> CompletionModel {
        // a=(1,2), b=(3,4), c=(5,6)
        CompletionModel::from_params(
            &ModelKind::cp(1),
            &shape(&[2, 2, 2]),
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
        )
        .unwrap()
    }

    /// Central differences of the prediction in every parameter.
    fn fd_gradient(model: &CompletionModel, index: &[usize], h: f64) -> Vec<f64> {
        let mut m = model.clone();
        (0..model.num_params())
            .map(|p| {
                let orig = m.params()[p];
                m.params_mut()[p] = orig + h;
                let plus = m.predict_unchecked(index);
                m.params_mut()[p] = orig - h;
                let minus = m.predict_unchecked(index);
                m.params_mut()[p] = orig;
                (plus - minus) / (2.0 * h)
            })
            .collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        diff / na.max(nb).max(1e-8)
    }

    #[test]
    fn cp_ones_predicts_one() {
        let m = CompletionModel::from_params(&ModelKind::cp(1), &shape(&[3, 2]), vec![1.0; 5])
            .unwrap();
        for idx in m.shape().clone().indices() {
            assert_eq!(m.predict_entry(&idx).unwrap(), 1.0);
        }
    }

    #[test]
    fn cp_hand_example() {
        let m = cp_abc();
        assert_eq!(m.predict_entry(&[1, 0, 1]).unwrap(), 36.0);
        let g = m.entry_gradient(&[1, 0, 1], 1.0).unwrap();
        assert_eq!(g, vec![0.0, 18.0, 12.0, 0.0, 0.0, 6.0]);
        assert!(m.entry_gradient(&[1, 0, 1], 0.0).unwrap().iter().all(|&x| x == 0.0));
        assert!(m.predict_entry(&[2, 0, 0]).is_err());
        assert!(m.entry_gradient(&[0, 0], 1.0).is_err());
    }

    #[test]
    fn tt_unit_bonds() {
        let s = shape(&[2, 3, 2]);
        let m = CompletionModel::from_params(
            &ModelKind::TensorTrain { ranks: vec![1] },
            &s,
            vec![1.0; 7],
        )
        .unwrap();
        for idx in s.indices() {
            assert_eq!(m.predict_entry(&idx).unwrap(), 1.0);
        }
    }

    #[test]
    fn tucker_identity_reconstructs_indicator() {
        let s = shape(&[3, 3, 3]);
        let mut m = init_model(&ModelKind::Tucker { ranks: vec![3] }, &s, &ModelInit::new(0))
            .unwrap();
        if let CompletionModel::Tucker(t) = &mut m {
            let core = t.core_mut();
            core.fill(0.0);
            for i in 0..3 {
                core[i * 9 + i * 3 + i] = 1.0;
            }
            for n in 0..3 {
                let f = t.factor_mut(n);
                f.fill(0.0);
                for i in 0..3 {
                    f[i * 3 + i] = 1.0;
                }
            }
        }
        let d = m.reconstruct(&s).unwrap();
        for idx in s.indices() {
            let want = if idx[0] == idx[1] && idx[1] == idx[2] { 1.0 } else { 0.0 };
            assert_eq!(d.get(&idx).unwrap(), want);
        }
    }

    #[test]
    fn init_contract() {
        let s = shape(&[3, 4, 5]);
        let a = init_model(&ModelKind::cp(5), &s, &ModelInit::new(7)).unwrap();
        let b = init_model(&ModelKind::cp(5), &s, &ModelInit::new(7)).unwrap();
        assert_eq!(a, b);
        let cp = a.as_cp().unwrap();
        assert_eq!(cp.factor(0).len(), 3 * 5);
        assert_eq!(cp.factor(1).len(), 4 * 5);
        assert_eq!(cp.factor(2).len(), 5 * 5);
        assert!(a.params().iter().all(|&p| (0.0..=0.5).contains(&p)));
        let sym = init_model(
            &ModelKind::cp(5),
            &s,
            &ModelInit::new(7).with_distribution(InitDistribution::Symmetric),
        )
        .unwrap();
        assert!(sym.params().iter().all(|p| p.abs() <= 0.5));
        assert!(sym.params().iter().any(|&p| p < 0.0));
        let nn = init_model(&ModelKind::neural(2), &s, &ModelInit::new(7)).unwrap();
        assert!(nn.params().iter().any(|&p| p < 0.0));

        let z = init_model(&ModelKind::neural(4), &s, &ModelInit::new(1).with_scale(0.0)).unwrap();
        assert!(z.reconstruct(&s).unwrap().values().iter().all(|&v| v == 0.0));

        assert!(init_model(&ModelKind::cp(0), &s, &ModelInit::new(0)).is_err());
        let bad_tt = ModelKind::TensorTrain {
            ranks: vec![2, 2, 2, 1],
        };
        assert!(matches!(
            init_model(&bad_tt, &s, &ModelInit::new(0)),
            Err(Error::InvalidRank(_))
        ));
        let bad_len = ModelKind::TensorTrain { ranks: vec![2, 2, 2] };
        assert!(init_model(&bad_len, &s, &ModelInit::new(0)).is_err());
        assert!(init_model(&ModelKind::Tucker { ranks: vec![2, 2] }, &s, &ModelInit::new(0)).is_err());
    }

    #[test]
    fn reconstruct_matches_predict() {
        let s = shape(&[3, 2, 4]);
        let kinds = [
            ModelKind::cp(2),
            ModelKind::Tucker { ranks: vec![2, 1, 3] },
            ModelKind::TensorTrain { ranks: vec![2, 3] },
            ModelKind::Neural {
                rank: 3,
                channels: 4,
                hidden: 5,
            },
        ];
        let mut rng = seeded_rng(1);
        for kind in &kinds {
            let m = init_model(kind, &s, &ModelInit::new(3)).unwrap();
            let d = m.reconstruct(&s).unwrap();
            for _ in 0..5 {
                let idx: Vec<usize> = s.dims().iter().map(|&n| rng.random_range(0..n)).collect();
                assert_eq!(d.get(&idx).unwrap(), m.predict_entry(&idx).unwrap());
            }
            assert!(m.reconstruct(&shape(&[3, 2])).is_err());
        }
    }

    #[test]
    fn cp_reconstruct_vs_triple_loop() {
        let s = shape(&[2, 2, 2]);
        let m = init_model(&ModelKind::cp(2), &s, &ModelInit::new(11)).unwrap();
        let p = m.params().to_vec();
        let d = m.reconstruct(&s).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    let mut want = 0.0;
                    for r in 0..2 {
                        want += p[i * 2 + r] * p[4 + j * 2 + r] * p[8 + k * 2 + r];
                    }
                    let got = d.get(&[i, j, k]).unwrap();
                    assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let s = shape(&[3, 4, 2]);
        let kinds = [
            ModelKind::cp(3),
            ModelKind::Tucker { ranks: vec![2, 3, 2] },
            ModelKind::TensorTrain { ranks: vec![3, 2] },
            ModelKind::Neural {
                rank: 3,
                channels: 4,
                hidden: 3,
            },
        ];
        let mut rng = seeded_rng(5);
        for kind in &kinds {
            for seed in 0..10 {
                let m = init_model(kind, &s, &ModelInit::new(seed)).unwrap();
                let idx: Vec<usize> = s.dims().iter().map(|&n| rng.random_range(0..n)).collect();
                if let CompletionModel::Neural(nm) = &m {
                    if nm.kink_margin(&idx) < 1e-4 {
                        continue;
                    }
                }
                let upstream = rng.random_range(-2.0..2.0);
                let analytic = m.entry_gradient(&idx, upstream).unwrap();
                let fd: Vec<f64> = fd_gradient(&m, &idx, 1e-5)
                    .into_iter()
                    .map(|g| g * upstream)
                    .collect();
                let e = rel_err(&analytic, &fd);
                assert!(e < 1e-4, "{kind:?} seed {seed}: rel err {e}");
            }
        }
    }

    #[test]
    fn tt_unit_bonds_equals_rank_one_cp() {
        let s = shape(&[3, 2, 4]);
        let tt = init_model(
            &ModelKind::TensorTrain { ranks: vec![1] },
            &s,
            &ModelInit::new(9),
        )
        .unwrap();
        // With unit bonds the cores are laid out exactly like rank-1 CP factors.
        let cp = CompletionModel::from_params(&ModelKind::cp(1), &s, tt.params().to_vec()).unwrap();
        for idx in s.indices() {
            let a = tt.predict_entry(&idx).unwrap();
            let b = cp.predict_entry(&idx).unwrap();
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-300));
        }
    }

    #[test]
    fn cp_rank_permutation_invariance() {
        let s = shape(&[3, 3, 2]);
        let m = init_model(&ModelKind::cp(3), &s, &ModelInit::new(2)).unwrap();
        let perm = [2, 0, 1];
        let cp = m.as_cp().unwrap();
        let mut permuted = Vec::new();
        for n in 0..3 {
            for row in cp.factor(n).chunks(3) {
                permuted.extend(perm.iter().map(|&k| row[k]));
            }
        }
        let m2 = CompletionModel::from_params(&ModelKind::cp(3), &s, permuted).unwrap();
        let a = m.reconstruct(&s).unwrap();
        let b = m2.reconstruct(&s).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn kind_serde() {
        let k: ModelKind = serde_json::from_str(r#"{"family":"neural","rank":10}"#).unwrap();
        assert_eq!(k, ModelKind::neural(10));
        assert!(serde_json::from_str::<ModelKind>(r#"{"family":"cp","rank":1,"x":2}"#).is_err());
        let tt = ModelKind::TensorTrain { ranks: vec![2] }
            .resolve(&shape(&[2, 2, 2, 2]))
            .unwrap();
        assert_eq!(tt, ModelKind::TensorTrain { ranks: vec![1, 2, 2, 2, 1] });
    }
}
