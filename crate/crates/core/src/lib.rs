//! Embedding-based metadata curation: map messy metadata terms onto a
//! permissible vocabulary, cluster equivalent terms, and run the accompanying
//! evaluation experiments.

pub mod compliance;
pub mod embedding;
pub mod error;
pub mod fixtures;
pub mod perturbation;
pub mod projection;
pub mod term;
pub mod unification;

pub use error::{Error, Result};
