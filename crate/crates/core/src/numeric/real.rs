use std::fmt::{Debug, Display};

use num_traits::{Float, NumAssign};

/// Scalar type used by tensors and models.
///
/// Training runs in `f32`; gradient checks and hand-built fixtures use `f64`.
pub trait Real:
    Float + NumAssign + Default + Debug + Display + Send + Sync + std::iter::Sum + 'static
{
    /// Name written into checkpoint tensor tables.
    const DTYPE: &'static str;

    fn lit(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    const DTYPE: &'static str = "f32";

    #[inline(always)]
    fn lit(v: f64) -> Self {
        v as f32
    }

    #[inline(always)]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    const DTYPE: &'static str = "f64";

    #[inline(always)]
    fn lit(v: f64) -> Self {
        v
    }

    #[inline(always)]
    fn as_f64(self) -> f64 {
        self
    }
}
