// Scalar math routed through libm so results do not depend on whether the
// platform libm or std intrinsics are linked.

pub(crate) use core::f64::consts::PI;

pub(crate) type Vec3 = nalgebra::Vector3<f64>;
pub(crate) type Mat3 = nalgebra::Matrix3<f64>;
pub(crate) type Mat2x3 = nalgebra::Matrix2x3<f64>;

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
pub(crate) fn atan2(y: f64, x: f64) -> f64 {
    libm::atan2(y, x)
}

#[inline]
pub(crate) fn asin(x: f64) -> f64 {
    libm::asin(x)
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
pub(crate) fn ceil(x: f64) -> f64 {
    libm::ceil(x)
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
pub(crate) fn log10(x: f64) -> f64 {
    libm::log10(x)
}

#[inline]
pub(crate) fn powi(x: f64, n: i32) -> f64 {
    libm::pow(x, n as f64)
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + exp(-x))
}

#[inline]
pub(crate) fn logit(p: f64) -> f64 {
    ln(p / (1.0 - p))
}

#[inline]
pub(crate) fn norm3(v: &Vec3) -> f64 {
    sqrt(v.x * v.x + v.y * v.y + v.z * v.z)
}
