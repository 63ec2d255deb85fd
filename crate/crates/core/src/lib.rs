//! Layer compression by sparse plus low-rank decomposition.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod admm;
pub mod compress;
pub mod error;
pub mod infer;
pub mod pipeline;
pub mod prox;
pub mod solver;
pub mod synthetic;
pub mod tensor;

pub use error::{Error, Result};
