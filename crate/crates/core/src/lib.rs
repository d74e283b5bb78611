//! Tensor-factorization embeddings for knowledge graph completion.
//!
//! The main model is SimplE. CP, DistMult and ComplEx share the same
//! parameter storage and training loop so they can be compared directly.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod expressivity;
pub mod model;
pub mod rng;
pub mod rules;
pub mod training;

pub use data::{Dataset, Triple, TripleSet, Vocabulary};
pub use error::{Error, Result};
pub use model::{Direction, ModelKind, ModelParams, RowKey, Slot, TieEntry};
pub use rules::{Rule, RuleKind, TieSpec};
pub use training::{TrainConfig, TrainHistory};
