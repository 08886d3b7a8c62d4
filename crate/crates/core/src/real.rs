use core::fmt::{Debug, Display};
use core::iter::Sum;

use num_traits::Float;

/// Scalar type the engine runs in: `f32` for training, `f64` for gradient checks.
pub trait Real: Float + Debug + Display + Default + Sum + Send + Sync + 'static {
    fn of(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}
