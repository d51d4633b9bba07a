//! `f64` math that works with or without `std`.

use num_traits::Float;

#[inline]
pub fn ln_1p(x: f64) -> f64 {
    Float::ln_1p(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    Float::ln(x)
}

#[inline]
pub fn exp(x: f64) -> f64 {
    Float::exp(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    Float::sqrt(x)
}

#[inline]
pub fn abs(x: f64) -> f64 {
    Float::abs(x)
}

#[inline]
pub fn powf(x: f64, y: f64) -> f64 {
    Float::powf(x, y)
}

#[inline]
pub fn trunc(x: f64) -> f64 {
    Float::trunc(x)
}

#[inline]
pub fn floor(x: f64) -> f64 {
    Float::floor(x)
}

#[inline]
pub fn ceil(x: f64) -> f64 {
    Float::ceil(x)
}
