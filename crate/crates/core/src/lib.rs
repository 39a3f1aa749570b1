//! Output-sharpness laboratory.
//!
//! Computes the Frobenius norm of a network's input–output Jacobian (its
//! "output sharpness") through the backward beta recursion, and runs the
//! experiments that compare it against the ℓ2 weight norm as a predictor of
//! test performance: closed-form random-feature linear models, and trained
//! multilayer perceptrons across a depth × parameter-budget grid.

pub mod closedform;
pub mod dataset;
mod error;
pub mod network;
pub mod numkit;
pub mod report;
pub mod sweep;
pub mod trainer;

pub use error::{Error, Result};
