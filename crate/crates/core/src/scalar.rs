//! Floating-point abstraction shared by the numeric modules.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar used by [`crate::metrics`] and [`crate::curves`].
///
/// Implemented for `f32` and `f64`. The pipeline itself runs on `f64`; see
/// the aliases at the crate root.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` literal. Panics only if the value is not representable,
    /// which cannot happen for finite inputs on `f32`/`f64`.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable in scalar type")
    }

    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    /// Tolerance for "sums to one" checks: the tighter of the fixed `1e-9`
    /// contract and what the type can actually resolve over `n` additions.
    fn sum_tolerance(n: usize) -> Self {
        let rounding = Self::epsilon() * Self::from_count(n.max(1)) * Self::lit(4.0);
        rounding.max(Self::lit(1e-9))
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
