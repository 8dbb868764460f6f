//! Pairwise-comparison models whose latent scores are Gaussian processes over
//! time, fitted with linear-time approximate inference (expectation
//! propagation or reverse-KL variational inference) on state-space chains.

pub mod cli;
pub mod evaldata;
pub mod inference;
pub mod kernels;
pub mod likelihoods;
pub mod model;
pub mod quadrature;
pub mod special;
pub mod statespace;

pub use kernels::{Kernel, KernelError, StateSpace};
pub use likelihoods::{Derivatives, Likelihood, LikelihoodError, Outcome};
pub use statespace::{ChainError, FeatureChain};
pub use inference::{Criterion, FitConfig, FitError, FitReport, Objective};
pub use model::{interaction_id, Model, ModelError, ModelSpec, Prediction, Snapshot};
