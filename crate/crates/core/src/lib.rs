//! Black-box variational inference toolkit.
//!
//! The crate is organized bottom-up:
//!
//! - [`targets`]: log-density oracles on an unconstrained latent space, the
//!   constraint transforms that build them, and a small zoo of benchmark
//!   posteriors.
//! - [`families`]: variational families (diagonal and full-rank Gaussians,
//!   real-NVP flows) with reparameterized sampling and hand-derived
//!   parameter gradients.
//! - [`estimators`]: ELBO and IW-ELBO gradient estimators under a fixed
//!   per-iteration oracle budget.
//! - [`optimize`]: Adam, the ADVI step-size scheme, the comprehensive
//!   step-size search and Laplace initialization.
//! - [`inference`]: importance-weighted sampling and final bound evaluation.
//! - [`bench`]: method presets, suite execution and pairwise CCDF
//!   comparison.
//! - [`cli`]: the `bbvi` command-line front end.

pub mod bench;
pub mod cli;
pub mod error;
pub mod estimators;
pub mod families;
pub mod inference;
mod linalg;
pub mod optimize;
pub mod rng;
pub mod targets;

pub use error::{Error, Result};
