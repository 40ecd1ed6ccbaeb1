//! Sparse tensor completion for combinatorial search spaces.
//!
//! Hyperparameter grids, neural-architecture grids and query-cardinality
//! grids are modelled as tensors of which only a small fraction of cells has
//! been evaluated. The crate recovers the remaining cells with CP, smoothed
//! CP, Tucker, tensor-train and neural completion models, combines models in
//! ensembles, generates benchmark tensors and runs the evaluation harness.

pub mod datagen;
pub mod ensemble;
pub mod error;
pub mod harness;
pub mod io;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod smoothness;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The crate-wide deterministic generator.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
