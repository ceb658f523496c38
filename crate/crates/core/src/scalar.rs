//! Scalar abstraction for the pointwise physics kernels.
//!
//! Constitutive laws, the active-stress ODE, the windkessel residual and the
//! time-integration formulas only need ordinary real arithmetic plus a few
//! transcendentals, so they are written against the [`Scalar`] trait and work
//! for both `f32` and `f64`. Everything mesh- or solver-facing uses the
//! crate-level [`crate::Real`] alias instead.

use num_traits::FromPrimitive;

/// Real scalar for physics kernels: nalgebra-compatible arithmetic plus
/// conversions from literal constants.
pub trait Scalar: nalgebra::RealField + FromPrimitive + Copy + Default {
    /// Converts an `f64` constant, panicking only for exotic scalar types
    /// that cannot represent it at all (never for `f32`/`f64`).
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("constant not representable in scalar type")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Smoothed Heaviside step `S+(x) = (1 + tanh(x / gamma)) / 2`.
///
/// Saturates cleanly for large `|x / gamma|` because `tanh` does; no
/// intermediate `exp` or `cosh` can overflow.
pub fn sigmoid_up<T: Scalar>(x: T, gamma: T) -> T {
    let half = T::of(0.5);
    half * (T::one() + (x / gamma).tanh())
}

/// Smoothed complement step `S-(x) = (1 - tanh(x / gamma)) / 2`.
pub fn sigmoid_down<T: Scalar>(x: T, gamma: T) -> T {
    let half = T::of(0.5);
    half * (T::one() - (x / gamma).tanh())
}

/// Derivative of [`sigmoid_up`] with respect to `x`.
///
/// Uses `sech^2 = 1 - tanh^2` so the result underflows to zero in the
/// saturated regime instead of overflowing through `cosh`.
pub fn sigmoid_up_deriv<T: Scalar>(x: T, gamma: T) -> T {
    let t = (x / gamma).tanh();
    let half = T::of(0.5);
    half * (T::one() - t * t) / gamma
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sigmoid_limits_and_midpoint() {
        let g = 1e-3_f64;
        assert_relative_eq!(sigmoid_up(0.0, g), 0.5);
        assert_relative_eq!(sigmoid_down(0.0, g), 0.5);
        // Far into saturation the step is exactly 0 or 1 in floating point.
        assert_eq!(sigmoid_up(1.0, g), 1.0);
        assert_eq!(sigmoid_up(-1.0, g), 0.0);
        assert_eq!(sigmoid_down(1.0, g), 0.0);
        // Complementarity.
        for x in [-2e-3, -1e-4, 0.0, 3e-4, 5e-3] {
            assert_relative_eq!(sigmoid_up(x, g) + sigmoid_down(x, g), 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn sigmoid_derivative_matches_finite_differences() {
        let g = 5e-3_f64;
        for x in [-6e-3, -1e-3, 0.0, 2e-3, 7e-3] {
            let h = 1e-7;
            let fd = (sigmoid_up(x + h, g) - sigmoid_up(x - h, g)) / (2.0 * h);
            assert_relative_eq!(sigmoid_up_deriv(x, g), fd, max_relative = 1e-6);
        }
    }

    #[test]
    fn derivative_saturates_without_overflow() {
        // Steepness used by the valve law is 1e-3 Pa while pressure jumps are
        // of order 1e3..1e4 Pa; a cosh-based form would overflow here.
        let d = sigmoid_up_deriv(5.0e3_f64, 1e-3);
        assert_eq!(d, 0.0);
        assert!(sigmoid_up_deriv(0.0_f64, 1e-3).is_finite());
    }

    #[test]
    fn generic_over_f32() {
        let s = sigmoid_up(0.0_f32, 1e-3_f32);
        assert!((s - 0.5).abs() < 1e-6);
    }
}
