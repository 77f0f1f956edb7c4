//! Scalar automatic differentiation.
//!
//! Forward tangents (normally along the time input) and reverse-mode
//! gradients are computed over the same recorded computation, which is what
//! a residual loss containing `∂x̂/∂t` needs for its weight gradient.

mod dual;
mod scalar;
mod tape;

pub use dual::Dual;
pub use scalar::Scalar;
pub use tape::{eval_dual, reverse_gradient, Adjoints, DualValue, GradientVector, Tape, Var};

use thiserror::Error;

#[derive(Clone, Copy, Debug, Error, PartialEq, Eq)]
pub enum AdError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("square root of a negative number")]
    NegativeSqrt,
    #[error("negative base raised to a non-integer power")]
    NegativeBasePow,
    #[error("tangent seed {seed} out of range for {leaves} leaves")]
    InvalidSeed { seed: usize, leaves: usize },
}
