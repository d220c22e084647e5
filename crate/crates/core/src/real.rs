//! Scalar abstraction for the event-driven integrator.
//!
//! Production runs use `f64`. The integrator is generic so that the same
//! code can be run at higher precision when checking properties, such as
//! time reversibility, that chaotic error growth destroys in double
//! precision within a few dozen collisions.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

pub trait Real:
    Clone
    + PartialOrd
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    /// Converts from `f64` at the working precision of the type.
    fn lift(x: f64) -> Self;

    /// Nearest `f64`.
    fn to_f64(&self) -> f64;

    fn sqrt(&self) -> Self;

    fn abs(&self) -> Self {
        if *self < Self::lift(0.0) {
            -self.clone()
        } else {
            self.clone()
        }
    }

    fn max0(self) -> Self {
        if self < Self::lift(0.0) {
            Self::lift(0.0)
        } else {
            self
        }
    }
}

impl Real for f64 {
    #[inline]
    fn lift(x: f64) -> Self {
        x
    }

    #[inline]
    fn to_f64(&self) -> f64 {
        *self
    }

    #[inline]
    fn sqrt(&self) -> Self {
        f64::sqrt(*self)
    }

    #[inline]
    fn abs(&self) -> Self {
        f64::abs(*self)
    }

    #[inline]
    fn max0(self) -> Self {
        self.max(0.0)
    }
}
