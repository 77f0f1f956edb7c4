use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Numeric type that ODE right-hand sides and network layers are written against.
///
/// Implemented for `f64` (plain evaluation), [`Dual`](super::Dual) (one forward
/// tangent, no tape) and [`Var`](super::Var) (recorded on a [`Tape`](super::Tape)).
pub trait Scalar:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    /// Primal value.
    fn value(&self) -> f64;

    /// A constant living in the same context as `self` (same tape for `Var`).
    fn constant_like(&self, v: f64) -> Self;

    fn exp(self) -> Self;
    fn tanh(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn powf(self, exponent: f64) -> Self;
    fn powi(self, exponent: i32) -> Self;

    /// `max(self, other)`; ties select `self`.
    fn max(self, other: Self) -> Self;

    /// `max(x, 0)` with zero subgradient at the kink.
    fn relu(self) -> Self {
        self.constant_like(0.0).max(self)
    }

    /// Step function, `H(0) = 0`. Always a constant (zero derivative).
    fn heaviside(self) -> Self {
        self.constant_like(if self.value() > 0.0 { 1.0 } else { 0.0 })
    }

    fn square(self) -> Self {
        self * self
    }
}

impl Scalar for f64 {
    #[inline]
    fn value(&self) -> f64 {
        *self
    }
    #[inline]
    fn constant_like(&self, v: f64) -> Self {
        v
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn abs(self) -> Self {
        f64::abs(self)
    }
    #[inline]
    fn powf(self, exponent: f64) -> Self {
        f64::powf(self, exponent)
    }
    #[inline]
    fn powi(self, exponent: i32) -> Self {
        f64::powi(self, exponent)
    }
    #[inline]
    fn max(self, other: Self) -> Self {
        if self >= other {
            self
        } else {
            other
        }
    }
}
