//! Diagonal-curvature toolkit for small dense/convolutional networks.
//!
//! The crate is organized bottom-up:
//! - [`tensor`]: a minimal row-major f64 tensor with the handful of ops
//!   the rest of the crate needs, plus a thread-local flop counter.
//! - [`model`]: layers, activations, forward caching, architecture
//!   specs, and checkpoints.
//! - [`curvature`]: the layerwise diagonal-curvature backward sweep and
//!   the loss-head diagonals it starts from.
//! - [`oracle`]: slow, independent ground truth (finite differences,
//!   exact diagonals, Hessian-vector products) for testing.
//! - [`estimators`]: stochastic and trivial diagonal baselines.
//! - [`optim`]: the shared adaptive-step template and its
//!   curvature-source variants.
//! - [`data`]: IDX parsing, synthetic datasets, seeded batching.
//! - [`bench`]: quality/timing/training experiment harnesses with CSV
//!   plus JSON-metadata outputs.

pub mod bench;
pub mod curvature;
pub mod data;
pub mod error;
pub mod estimators;
pub mod model;
pub mod optim;
pub mod oracle;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
