//! Scalar abstraction for the core series and interval arithmetic.
//!
//! Everything in the coefficient-level layer (`series`, `interval`, `field`)
//! is generic over a floating point type implementing [`Scalar`]. The rest of
//! the crate pins the concrete aliases from the crate root (`f64`).

use num_traits::{Float, FloatConst, FromPrimitive};

/// Floating point scalar: f32 or f64.
///
/// Beyond the usual `num_traits` bounds this adds directed stepping to the
/// adjacent representable values, which the interval layer uses for outward
/// rounding.
pub trait Scalar:
    Float + FloatConst + FromPrimitive + Send + Sync + std::fmt::Debug + std::fmt::Display + 'static
{
    /// Smallest representable value strictly greater than `self`.
    fn step_up(self) -> Self;
    /// Largest representable value strictly less than `self`.
    fn step_down(self) -> Self;

    fn of_f64(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 convertible")
    }
    fn of_usize(x: usize) -> Self {
        <Self as FromPrimitive>::from_usize(x).expect("usize convertible")
    }
}

impl Scalar for f64 {
    fn step_up(self) -> Self {
        self.next_up()
    }
    fn step_down(self) -> Self {
        self.next_down()
    }
}

impl Scalar for f32 {
    fn step_up(self) -> Self {
        self.next_up()
    }
    fn step_down(self) -> Self {
        self.next_down()
    }
}
