//! User identity linkage across a pair of social networks.
//!
//! The pipeline fuses structure, profile and content similarities into
//! per-user node embeddings via encoder/decoder similarity reconstruction,
//! then re-ranks candidate pairs with pair-adaptive neighborhood embeddings,
//! and evaluates ranked matching with hit-precision@k.

pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod ground;
pub mod neighborhood;
pub mod pipeline;
pub mod seeding;
pub mod tensor;
pub mod text;

pub use error::{Error, Result};
