//! Variational autoencoders trained with an explicit variational lower bound
//! on mutual information between latent codes and observations.
//!
//! The crate provides:
//!
//! - [`tensor`]: dense f64 tensors, a recorded-tape reverse-mode gradient
//!   engine, dense layers, and an adaptive-moment optimizer;
//! - [`dist`]: diagonal Gaussians with reparametrized sampling, categoricals
//!   with the Gumbel-softmax relaxation, Bernoulli likelihoods, entropies and
//!   KL terms — in both value-level and recorded (differentiable) form;
//! - [`models`]: encoder/decoder/auxiliary network assemblies and checkpoint
//!   IO;
//! - [`objectives`]: ELBO and its weighted/capacity variants, the mutual
//!   information regularizer, and the combined training objective;
//! - [`training`]: the alternating maximization loop (auxiliary network
//!   first, then encoder/decoder) with minibatching, temperature schedules
//!   and metric logging;
//! - [`mi_eval`]: mutual information measurement for fixed models — a
//!   variational lower bound via a freshly trained auxiliary network, an
//!   analytic KL upper bound, and exact brute-force oracles on enumerable
//!   joints;
//! - [`em_gmm`]: a reference diagonal-covariance Gaussian mixture model fit
//!   by EM;
//! - [`data`]: IDX image/label ingestion, binarization, and seeded synthetic
//!   generators;
//! - [`config`] and [`cli`]: run configuration and the operator entry points
//!   behind the `mivae` binary.

pub mod cli;
pub mod config;
pub mod data;
pub mod models;
pub mod objectives;
pub mod training;
pub mod dist;
pub mod em_gmm;
pub mod error;
pub mod mi_eval;
pub mod tensor;

pub use error::{Error, Result};
