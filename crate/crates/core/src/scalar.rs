//! Floating-point bound for the parts of the crate that do not depend on
//! the dense linear-algebra backend.

use std::fmt::{Debug, Display, LowerExp};

use num_traits::{Float, FloatConst, FromPrimitive};

pub trait Real: Float + FloatConst + FromPrimitive + Debug + Display + LowerExp + Send + Sync + 'static {}

impl<T> Real for T where T: Float + FloatConst + FromPrimitive + Debug + Display + LowerExp + Send + Sync + 'static {}

/// Literal conversion; every constant used in the crate is representable in f32.
#[inline]
pub(crate) fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("f64 literal representable")
}
