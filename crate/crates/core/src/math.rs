// Float intrinsics are not available in `core`; route them through libm.

#[inline]
pub(crate) fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub(crate) fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub(crate) fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub(crate) fn sin(x: f64) -> f64 {
    libm::sin(x)
}

#[inline]
pub(crate) fn cos(x: f64) -> f64 {
    libm::cos(x)
}

#[inline]
pub(crate) fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

#[inline]
pub(crate) fn floor(x: f64) -> f64 {
    libm::floor(x)
}

#[inline]
pub(crate) fn round(x: f64) -> f64 {
    libm::round(x)
}

#[inline]
pub(crate) fn powi(x: f64, n: i32) -> f64 {
    libm::pow(x, n as f64)
}

/// `sin(πs)`, exactly zero at integer `s`.
pub(crate) fn sin_pi(s: f64) -> f64 {
    if s == floor(s) {
        return 0.0;
    }
    sin(core::f64::consts::PI * s)
}

/// `cos(πs)`, exactly zero at half-integer `s`.
pub(crate) fn cos_pi(s: f64) -> f64 {
    let shifted = s - 0.5;
    if shifted == floor(shifted) {
        return 0.0;
    }
    cos(core::f64::consts::PI * s)
}
