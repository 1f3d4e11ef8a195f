//! Multi-modal fatty-liver prediction toolkit.
//!
//! * [`ndtensor`]: dense tensors with tape-based reverse-mode differentiation.
//! * [`cohort`]: participant records, a seeded synthetic cohort generator,
//!   acquisition-drift simulation, stratified folds and file I/O.
//! * [`analysis`]: Pearson ranking, descriptive statistics and Welch t-tests,
//!   Shapley attribution and the two-stage indicator selection.
//! * [`model`]: the face/metadata fusion network with its auxiliary head,
//!   joint loss and binary checkpoints.
//! * [`trainkit`]: training, metrics, cross-validation, cross-cohort
//!   evaluation and occlusion saliency.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, which is what the pipeline uses.

pub mod analysis;
pub mod cohort;
pub mod error;
pub mod model;
pub mod ndtensor;
pub mod scalar;
pub mod trainkit;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = ndtensor::Tensor<f64>;
pub type Tape = ndtensor::Tape<f64>;
pub type Gradients = ndtensor::Gradients<f64>;
pub type ModelParams = model::ModelParams<f64>;
pub type ModelOutput = model::ModelOutput<f64>;
pub type Trained = trainkit::Trained<f64>;
