//! Benchmark tensor generators.
//!
//! Synthetic low-rank, high-rank and smooth tensors; hyperparameter grids
//! scored by in-repo classifiers; query-cardinality grids over an in-memory
//! table. Every generator is a deterministic function of its spec.

mod hpo;
mod query;
mod synthetic;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{DenseTensor, Shape};

pub use hpo::{
    default_axes, f1_score, generate_hpo_grid, knn_predict, make_blobs, mlp_predict, tree_predict, BlobSpec, CellFlag,
    Dataset, HpoGrid, KnnParams, LearnerKind, MlpParams, TreeParams, Weighting,
};
pub use query::{
    evaluate_template, generate_query_tensor, random_template, Column, CompareOp, Connector, Literal, Predicate,
    QueryTemplate, QueryTensor, Table, TableSpec, CITIES,
};
pub use synthetic::{
    generate_highrank, generate_lowrank, generate_smooth, min_max_scale, smooth_terms, Scaling, SmoothTerm,
    SMOOTH_TERMS,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AxisValue {
    Number(f64),
    Label(String),
}

/// A named tensor mode with its ordered labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridAxis {
    pub name: String,
    pub values: Vec<AxisValue>,
}

impl GridAxis {
    pub fn numeric(name: &str, values: &[f64]) -> Self {
        Self {
            name: name.into(),
            values: values.iter().map(|&v| AxisValue::Number(v)).collect(),
        }
    }

    pub fn labels(name: &str, values: &[&str]) -> Self {
        Self {
            name: name.into(),
            values: values.iter().map(|&v| AxisValue::Label(v.into())).collect(),
        }
    }

    /// `n` geometrically spaced values from `lo` to `hi` inclusive.
    pub fn geometric(name: &str, lo: f64, hi: f64, n: usize) -> Self {
        let ratio = (hi / lo).powf(1.0 / (n.max(2) - 1) as f64);
        let values: Vec<f64> = (0..n).map(|k| lo * ratio.powi(k as i32)).collect();
        Self::numeric(name, &values)
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.len() < 2 {
            return Err(Error::InvalidShape(format!(
                "axis {:?} needs at least 2 values",
                self.name
            )));
        }
        Ok(())
    }
}

/// Per-cell seed mixing the spec seed with the flat cell index.
pub fn cell_seed(seed: u64, flat: usize) -> u64 {
    // SplitMix64 finaliser.
    let mut z = seed ^ (flat as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn default_frequency() -> f64 {
    1.0
}

/// What to generate; the `kind` tag selects the generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskSpec {
    LowRank {
        shape: Vec<usize>,
        rank: usize,
        #[serde(default)]
        noise: f64,
        #[serde(default)]
        seed: u64,
    },
    HighRank {
        shape: Vec<usize>,
        #[serde(default)]
        seed: u64,
    },
    Smooth {
        shape: Vec<usize>,
        #[serde(default = "default_frequency")]
        frequency: f64,
        #[serde(default)]
        seed: u64,
    },
    HpoGrid {
        learner: LearnerKind,
        /// The learner's default axes when absent.
        #[serde(default)]
        axes: Option<Vec<GridAxis>>,
        #[serde(default)]
        data: BlobSpec,
        #[serde(default)]
        seed: u64,
    },
    Query {
        template: QueryTemplate,
    },
}

impl TaskSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            TaskSpec::LowRank { .. } => "low_rank",
            TaskSpec::HighRank { .. } => "high_rank",
            TaskSpec::Smooth { .. } => "smooth",
            TaskSpec::HpoGrid { .. } => "hpo_grid",
            TaskSpec::Query { .. } => "query",
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            TaskSpec::LowRank { seed, .. }
            | TaskSpec::HighRank { seed, .. }
            | TaskSpec::Smooth { seed, .. }
            | TaskSpec::HpoGrid { seed, .. } => *seed,
            TaskSpec::Query { template } => template.table.seed,
        }
    }

    /// Replaces the spec's seed (the table seed for query tensors).
    pub fn set_seed(&mut self, new: u64) {
        match self {
            TaskSpec::LowRank { seed, .. }
            | TaskSpec::HighRank { seed, .. }
            | TaskSpec::Smooth { seed, .. }
            | TaskSpec::HpoGrid { seed, .. } => *seed = new,
            TaskSpec::Query { template } => template.table.seed = new,
        }
    }
}

/// Sidecar description of a generated tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub kind: String,
    pub axes: Vec<GridAxis>,
    /// `scaled = (raw − offset) / scale`, when the values were rescaled.
    pub scaling: Option<Scaling>,
    pub flags: Vec<CellFlag>,
    /// Query tensors: the grouped boolean expression.
    pub expression: Option<String>,
    pub spec: TaskSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedTensor {
    pub tensor: DenseTensor,
    pub metadata: Metadata,
}

fn index_axes(shape: &Shape) -> Vec<GridAxis> {
    shape
        .dims()
        .iter()
        .enumerate()
        .map(|(n, &d)| GridAxis::numeric(&format!("mode{n}"), &(0..d).map(|i| i as f64).collect::<Vec<_>>()))
        .collect()
}

pub fn generate(spec: &TaskSpec) -> Result<GeneratedTensor> {
    let meta = |axes, scaling, flags, expression| Metadata {
        kind: spec.kind_name().into(),
        axes,
        scaling,
        flags,
        expression,
        spec: spec.clone(),
    };
    Ok(match spec {
        TaskSpec::LowRank {
            shape,
            rank,
            noise,
            seed,
        } => {
            let shape = Shape::new(shape.clone())?;
            let (tensor, s) = generate_lowrank(&shape, *rank, *noise, *seed)?;
            GeneratedTensor {
                metadata: meta(index_axes(&shape), Some(s), vec![], None),
                tensor,
            }
        }
        TaskSpec::HighRank { shape, seed } => {
            let shape = Shape::new(shape.clone())?;
            GeneratedTensor {
                tensor: generate_highrank(&shape, *seed)?,
                metadata: meta(index_axes(&shape), None, vec![], None),
            }
        }
        TaskSpec::Smooth { shape, frequency, seed } => {
            let shape = Shape::new(shape.clone())?;
            let (tensor, s) = generate_smooth(&shape, *frequency, *seed)?;
            GeneratedTensor {
                metadata: meta(index_axes(&shape), Some(s), vec![], None),
                tensor,
            }
        }
        TaskSpec::HpoGrid {
            learner,
            axes,
            data,
            seed,
        } => {
            let axes = axes.clone().unwrap_or_else(|| default_axes(*learner));
            let grid = generate_hpo_grid(&axes, *learner, data, *seed)?;
            GeneratedTensor {
                tensor: grid.tensor,
                metadata: meta(axes, None, grid.flags, None),
            }
        }
        TaskSpec::Query { template } => {
            let q = generate_query_tensor(template)?;
            let axes = template
                .predicates
                .iter()
                .map(|p| GridAxis {
                    name: format!("{} {}", p.column, p.op.symbol()),
                    values: p
                        .values
                        .iter()
                        .map(|v| match v {
                            Literal::Int(i) => AxisValue::Number(*i as f64),
                            Literal::Str(s) => AxisValue::Label(s.clone()),
                        })
                        .collect(),
                })
                .collect();
            GeneratedTensor {
                tensor: q.scaled,
                metadata: meta(axes, Some(q.scaling), vec![], Some(q.expression)),
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometric_axis() {
        let a = GridAxis::geometric("c", 0.125, 8.0, 7);
        let v: Vec<f64> = a
            .values
            .iter()
            .map(|x| match x {
                AxisValue::Number(n) => *n,
                AxisValue::Label(_) => unreachable!(),
            })
            .collect();
        for (got, want) in v.iter().zip([0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!(GridAxis::numeric("x", &[1.0]).validate().is_err());
    }

    #[test]
    fn specs_parse_and_generate_deterministically() {
        let specs = [
            r#"{"kind":"low_rank","shape":[4,4,4],"rank":2,"seed":3}"#,
            r#"{"kind":"high_rank","shape":[3,3]}"#,
            r#"{"kind":"smooth","shape":[5,5],"frequency":0.5}"#,
            r#"{"kind":"hpo_grid","learner":"knn","axes":[{"name":"k","values":[1,3]},{"name":"weighting","values":["uniform","distance"]}],"data":{"samples":50}}"#,
            r#"{"kind":"query","template":{"predicates":[{"column":"kids","op":"le","values":[0,2]},{"column":"city","op":"prefix","values":["B","C"]}],"connectors":["OR"]}}"#,
        ];
        for text in specs {
            let spec: TaskSpec = serde_json::from_str(text).unwrap();
            let a = generate(&spec).unwrap();
            assert_eq!(generate(&spec).unwrap(), a);
            assert_eq!(a.metadata.axes.len(), a.tensor.shape().order());
            assert!(a.tensor.values().iter().all(|v| (0.0..=1.0).contains(v)), "{text}");
            let meta = serde_json::to_string(&a.metadata).unwrap();
            let back: Metadata = serde_json::from_str(&meta).unwrap();
            assert_eq!(back, a.metadata);
        }
        assert!(serde_json::from_str::<TaskSpec>(r#"{"kind":"smooth","shape":[2],"freq":1}"#).is_err());
    }

    #[test]
    fn cell_seeds_differ() {
        let seeds: std::collections::HashSet<u64> = (0..1000).map(|f| cell_seed(7, f)).collect();
        assert_eq!(seeds.len(), 1000);
    }
}
