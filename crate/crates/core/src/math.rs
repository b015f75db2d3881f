//! Float functions for `no_std`, routed through `libm`.

use crate::Real;

#[cfg(not(feature = "f32"))]
mod imp {
    pub use libm::{exp, floor, log as ln, sqrt};
}

#[cfg(feature = "f32")]
mod imp {
    pub use libm::{expf as exp, floorf as floor, logf as ln, sqrtf as sqrt};
}

#[inline]
pub fn exp(x: Real) -> Real {
    imp::exp(x)
}

#[inline]
pub fn ln(x: Real) -> Real {
    imp::ln(x)
}

#[inline]
pub fn sqrt(x: Real) -> Real {
    imp::sqrt(x)
}

#[inline]
pub fn floor(x: Real) -> Real {
    imp::floor(x)
}
