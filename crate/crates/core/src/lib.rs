//! Bayesian deep ensembles for tabular supervised learning.
//!
//! Inference runs in two stages per ensemble member:
//!
//! 1. **Optimization.** A feed-forward network is fitted with AdamW on the mean
//!    negative log-likelihood, with validation-based early stopping
//!    ([`optimizer::train_member`]).
//! 2. **Sampling.** Starting from that mode, a microcanonical Langevin Monte Carlo
//!    chain with an energy-variance tuned step size explores the local posterior
//!    ([`sampler::sample_chain`]).
//!
//! Members run independently and in parallel ([`ensemble::fit`]). The union of
//! retained samples is a [`PosteriorEnsemble`], and [`predictive`] turns it into
//! posterior-predictive means, standard deviations, credible intervals and class
//! probabilities.
//!
//! # Data layout
//!
//! - All arithmetic is `f64`.
//! - Matrices are dense and row-major ([`Matrix`]).
//! - Network parameters live in one flat vector. Layer `l` stores its weights
//!   as a `fan_in x fan_out` row-major block followed by `fan_out` biases.
//!
//! # Quick start
//!
//! ```no_run
//! use bde_core::{ensemble, predictive, Dataset, EnsembleConfig, Matrix, NetworkConfig};
//!
//! # fn main() -> bde_core::Result<()> {
//! let x = Matrix::from_rows(&[vec![0.0], vec![0.5], vec![1.0]])?;
//! let y = Matrix::from_rows(&[vec![0.1], vec![0.4], vec![0.9]])?;
//! let data = Dataset::regression(x.clone(), y)?;
//!
//! let cfg = EnsembleConfig::new(NetworkConfig::regression(1, vec![16, 16], 1));
//! let ens = ensemble::fit(&data, &cfg)?;
//! let (means, stds) = predictive::predict_moments(&ens, &x)?;
//! # let _ = (means, stds);
//! # Ok(())
//! # }
//! ```

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ensemble;
pub mod error;
pub mod io;
pub mod matrix;
pub mod model;
pub mod optimizer;
pub mod predictive;
pub mod rng;
pub mod sampler;
pub mod standardize;
pub mod synthetic;

pub use ensemble::{EnsembleConfig, MemberMeta, PosteriorEnsemble, Workers};
pub use error::{BdeError, Result};
pub use matrix::Matrix;
pub use model::{
    Activation, Dataset, GaussianHeadOutput, NetworkConfig, ParameterVector, PriorSpec, Targets,
    Task,
};
pub use optimizer::{AdamWState, BatchSize, OptimizerConfig, TrainHistory};
pub use predictive::PredictionResult;
pub use sampler::{SamplerConfig, SamplerState, StepSetting};
pub use standardize::StandardizationStats;
