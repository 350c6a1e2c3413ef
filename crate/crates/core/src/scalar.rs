//! Scalar abstraction: the solver core is generic over the floating point
//! type. `f32` is supported for smoke-level work; the shipped tolerances
//! assume `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps};

/// Floating point scalar usable throughout the solver.
pub trait Real:
    Float + FromPrimitive + NumAssignOps + Sum + Debug + Display + Send + Sync + 'static
{
    /// Shorthand for converting an `f64` literal into `Self`.
    ///
    /// Panics only if the target type cannot represent any value near `x`
    /// (conversion rounds, it does not require exactness).
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal not representable in scalar type")
    }

    /// `x` as `f64`, for reporting and formatted output.
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar not representable as f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}
