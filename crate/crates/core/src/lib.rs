//! Marginal treatment effects without instruments, identified by
//! nonlinearity of the propensity score in the covariates.
//!
//! The usual entry point is [`pipeline::run_pipeline`] on a [`data::Sample`];
//! [`run`] wraps it with file input and output for the `mte` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod diagnostics;
pub mod effects;
pub mod error;
pub mod inference;
pub mod liv;
pub(crate) mod linalg;
pub mod normal;
pub mod output;
pub mod pipeline;
pub mod propensity;
pub mod run;
pub mod separate;
pub mod simulate;
pub mod smoothing;

pub use error::{MteError, Result};
