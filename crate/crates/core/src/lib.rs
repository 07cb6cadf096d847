//! Scalable Gaussian-process toolkit for non-ergodic ground-motion models.
//!
//! The crate learns systematic site and path adjustments from residual
//! catalogs, estimates the aleatory variance components of a random-intercept
//! model, and propagates the resulting posteriors into hazard curves and
//! damage-state samples. Large kernel systems are handled through a sparse
//! inverse-Cholesky factor computed column by column under a maximin
//! ordering.

pub mod domain;
pub mod inference;
pub mod error;
pub mod fragility;
pub mod hazard;
pub mod kernels;
pub mod klsc;
pub mod linalg;
pub mod lmm;
pub mod optim;
pub mod params;
pub mod stats;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
pub use kernels::{CovarianceKernel, KernelHyper, MaternNu, PredictionPoint};
pub use lmm::VarianceComponents;
pub use params::HyperParams;
