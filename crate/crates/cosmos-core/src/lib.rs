//! Supervised COSMOS autoencoder.
//!
//! A feedforward autoencoder trained with a multi-objective loss - cosine
//! similarity, a learnable Mahalanobis pseudo-metric, and mutual-information
//! supervision - via alternating minimization, plus the patch-tessellation
//! classification pipeline built on top of it.
//!
//! Modules:
//! - [`tensor`], [`optim`], [`gradcheck`], [`rng`]: dense f64 math, Adam,
//!   finite-difference oracle, deterministic RNG.
//! - [`losses`]: the loss terms and their analytic gradients.
//! - [`model`]: the tied-weight stacked autoencoder with skip connections,
//!   pseudo-metric and classifier head.
//! - [`training`]: the three-step alternating-minimization loop.
//! - [`pipeline`]: patch tessellation, per-stream classifiers, sum-rule fusion.
//! - [`data`]: IDX / CIFAR-10 ingestion, splits, synthetic data.

pub mod data;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::Tensor;
