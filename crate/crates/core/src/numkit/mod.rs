//! Dense linear algebra and statistics kernel.
//!
//! Everything is `f64`. [`Matrix`] is row-major and immutable in spirit:
//! operations return new matrices, so values can be shared freely between
//! readers. [`Rng`] streams are single-owner.

mod linalg;
mod matrix;
mod rng;
mod stats;

pub use linalg::{pseudoinverse, svd, Svd, DEFAULT_PINV_TOL};
pub use matrix::{frobenius_norm, matmul, norm2, Matrix};
pub(crate) use matrix::axpy;
pub use rng::{derive_seed, rng_normal, Rng};
pub use stats::{mean, pearson};
