//! Fatality counts to conflict magnitude (`ln(n + 1)`) and conflict presence.

use alloc::format;

use crate::error::{Error, Result};
use crate::math;

/// Natural log of `fatalities + 1`.
pub fn log_magnitude(fatalities: u64) -> f64 {
    math::ln_1p(fatalities as f64)
}

/// [`log_magnitude`] for counts that arrive as floating-point values.
///
/// Rejects negative, non-integral and non-finite input.
pub fn log_magnitude_checked(fatalities: f64) -> Result<f64> {
    if !fatalities.is_finite() || fatalities < 0.0 || math::trunc(fatalities) != fatalities {
        return Err(Error::InvalidValue(format!(
            "fatality count must be a non-negative integer, got {fatalities}"
        )));
    }
    Ok(math::ln_1p(fatalities))
}

/// Conflict presence: 1 iff the magnitude is strictly positive.
pub fn binarize(magnitude: f64) -> Result<u8> {
    if magnitude.is_nan() || magnitude < 0.0 {
        return Err(Error::InvalidValue(format!("magnitude must be non-negative, got {magnitude}")));
    }
    Ok(u8::from(magnitude > 0.0))
}

/// Unchecked presence for volume data already known to be non-negative.
#[inline]
pub fn presence(magnitude: f32) -> f32 {
    if magnitude > 0.0 {
        1.0
    } else {
        0.0
    }
}
