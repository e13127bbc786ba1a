//! Desk-scale inference-time debiasing for generative language models:
//! extract a bias-attribute direction by difference-in-means over
//! contrastive prompt sets, ablate it at every residual write point during
//! generation, and quantify the effect with independent evaluators.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod steering;
pub mod tinylm;

pub use error::{Error, Result};
