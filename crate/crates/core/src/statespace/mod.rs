//! Linear-time per-feature Gaussian inference on Markov chains.

mod chain;
pub mod dense;
mod linalg;

pub use chain::{ChainError, FeatureChain};
pub use dense::{batch_posterior, DenseError};
