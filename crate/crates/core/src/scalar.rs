//! Field scalars the solver is generic over: `f64` for real elliptic
//! problems and [`c64`] for Helmholtz / impedance problems.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

pub use faer::c64;
use faer::traits::ComplexField;

pub trait Scalar:
    ComplexField
    + Copy
    + Send
    + Sync
    + Debug
    + Display
    + PartialEq
    + Default
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + 'static
{
    const IS_COMPLEX: bool;

    fn from_f64(x: f64) -> Self;

    /// `None` for real scalars.
    fn from_c64(z: c64) -> Option<Self>;

    fn to_c64(self) -> c64;

    fn modulus(self) -> f64;

    fn scale(self, s: f64) -> Self {
        self * Self::from_f64(s)
    }

    fn is_finite_value(self) -> bool;

    fn zero_value() -> Self {
        Self::from_f64(0.0)
    }

    fn one_value() -> Self {
        Self::from_f64(1.0)
    }
}

impl Scalar for f64 {
    const IS_COMPLEX: bool = false;

    fn from_f64(x: f64) -> Self {
        x
    }

    fn from_c64(z: c64) -> Option<Self> {
        if z.im == 0.0 {
            Some(z.re)
        } else {
            None
        }
    }

    fn to_c64(self) -> c64 {
        c64::new(self, 0.0)
    }

    fn modulus(self) -> f64 {
        self.abs()
    }

    fn is_finite_value(self) -> bool {
        self.is_finite()
    }
}

impl Scalar for c64 {
    const IS_COMPLEX: bool = true;

    fn from_f64(x: f64) -> Self {
        c64::new(x, 0.0)
    }

    fn from_c64(z: c64) -> Option<Self> {
        Some(z)
    }

    fn to_c64(self) -> c64 {
        self
    }

    fn modulus(self) -> f64 {
        self.norm()
    }

    fn is_finite_value(self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
}

/// Euclidean norm with scaling, safe for entries near the overflow range.
pub fn norm2<T: Scalar>(v: impl IntoIterator<Item = T>) -> f64 {
    let mut scale = 0.0f64;
    let mut ssq = 1.0f64;
    for x in v {
        let a = x.modulus();
        if a == 0.0 {
            continue;
        }
        if !a.is_finite() {
            return f64::INFINITY;
        }
        if scale < a {
            ssq = 1.0 + ssq * (scale / a) * (scale / a);
            scale = a;
        } else {
            ssq += (a / scale) * (a / scale);
        }
    }
    scale * ssq.sqrt()
}
