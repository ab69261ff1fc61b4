//! Scalar abstraction shared by every solver.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar the library is generic over (`f32` or `f64`).
pub trait Real:
    Float + FloatConst + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal. Never fails for finite or infinite inputs.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle<T: Real>(theta: T) -> T {
    let two_pi = T::TAU();
    let mut a = theta % two_pi;
    if a <= -T::PI() {
        a += two_pi;
    } else if a > T::PI() {
        a -= two_pi;
    }
    a
}

/// Neumaier-compensated sum; error independent of the number of terms.
pub fn compensated_sum<T: Real, I: IntoIterator<Item = T>>(values: I) -> T {
    let mut sum = T::zero();
    let mut c = T::zero();
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let v = [1.0_f64, 1e100, 1.0, -1e100];
        assert_eq!(compensated_sum(v), 2.0);
        let many = std::iter::repeat_n(0.1_f64, 1_000_000);
        assert!((compensated_sum(many) - 100_000.0).abs() < 1e-9);
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(0.0_f64), 0.0);
        assert!((wrap_angle(3.0 * std::f64::consts::PI) - std::f64::consts::PI).abs() < 1e-12);
        assert!((wrap_angle(-std::f64::consts::PI) - std::f64::consts::PI).abs() < 1e-12);
        assert!((wrap_angle(7.0_f32) - (7.0 - std::f32::consts::TAU)).abs() < 1e-6);
    }
}
