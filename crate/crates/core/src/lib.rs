//! Multi-region thermal-to-visible face synthesis by feature inversion.
//!
//! A visible-spectrum face image is recovered from a conventional or
//! polarimetric thermal image by matching dense SIFT features, predicted per
//! facial region by small learned cross-spectrum regressors, with momentum
//! gradient descent. The crate also carries the evaluation harness used to
//! score synthesized imagery.

// Parameter checks use `!(x > 0.0)` on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod crossmap;
pub mod dsift;
pub mod error;
pub mod eval;
pub mod imaging;
pub mod synthesis;
pub mod tensor;

pub use error::{Error, Result};
