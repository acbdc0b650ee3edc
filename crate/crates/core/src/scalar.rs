//! Scalar abstractions shared by the numeric modules.
//!
//! [`Scalar`] covers every type the permutation search and the reductions can
//! run over, including exact rationals. [`Real`] adds the transcendental
//! functions needed by networks and smooth losses and is only implemented for
//! `f32` and `f64`.

use std::fmt::{Debug, Display};

use num_rational::Rational64;
use num_traits::{Float, FromPrimitive, Num, ToPrimitive};

pub trait Scalar:
    Copy + PartialOrd + Debug + Display + Num + FromPrimitive + ToPrimitive + Send + Sync + 'static
{
    fn magnitude(self) -> Self;

    /// `exp(self)`, or `None` for exact types that cannot represent it.
    fn try_exp(self) -> Option<Self>;

    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar")
    }
}

pub trait Real: Scalar + Float {
    /// Lossless widening used for reductions (means, variances, loss sums).
    fn widen(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn narrow(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).unwrap_or_else(Self::nan)
    }
}

macro_rules! impl_float_scalar {
    ($($t:ty),*) => {$(
        impl Scalar for $t {
            fn magnitude(self) -> Self {
                self.abs()
            }

            fn try_exp(self) -> Option<Self> {
                Some(self.exp())
            }
        }

        impl Real for $t {}
    )*};
}

impl_float_scalar!(f32, f64);

impl Scalar for Rational64 {
    fn magnitude(self) -> Self {
        if self < Rational64::from_integer(0) {
            -self
        } else {
            self
        }
    }

    fn try_exp(self) -> Option<Self> {
        None
    }
}
