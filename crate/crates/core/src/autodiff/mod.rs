//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] is rebuilt for every forward pass. Parameters live outside the
//! tape as plain [`Tensor`]s and are recorded as tracked leaves when a pass
//! begins; after [`Tape::backward`] their gradients are read back from those
//! leaves.

mod adam;
mod gradcheck;
pub(crate) mod kernels;
mod tape;
mod tensor;

use thiserror::Error;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradCheckReport, DEFAULT_STEP, GRAD_FLOOR};
pub use tape::{Tape, Var, LOG_FLOOR};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("contract violation: {0}")]
    Contract(String),
}

pub type Result<T> = std::result::Result<T, AutodiffError>;
