//! Newmark and generalized-α time integration coefficients.
//!
//! The structural solver treats the end-of-step displacement as the primary
//! unknown; velocity and acceleration follow from the Newmark relations
//!
//! ```text
//! d_{n+1} = d_n + Δt v_n + Δt²[(1−2β)/2 · a_n + β · a_{n+1}]
//! v_{n+1} = v_n + Δt[(1−γ) a_n + γ a_{n+1}]
//! ```
//!
//! inverted for `a_{n+1}` and `v_{n+1}` in terms of the displacement
//! increment. Generalized-α evaluates inertia at the blended time
//! `n+1−α_m` and all displacement/velocity-dependent forces at `n+1−α_f`;
//! [`TimeIntParams::blend_f`]/[`blend_m`](TimeIntParams::blend_m) provide the
//! blending, and [`Newmark`] the update coefficients and the scaling factors
//! needed to assemble the consistent tangent.

use serde::{Deserialize, Serialize};

use crate::{Error, Real, Result};

/// Parameters of the coupled time discretization: Newmark (β, γ),
/// generalized-α blending (α_f, α_m), one-step-θ for the circulation, and
/// the step size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeIntParams {
    pub beta: Real,
    pub gamma: Real,
    pub alpha_f: Real,
    pub alpha_m: Real,
    pub theta: Real,
    pub dt: Real,
}

impl TimeIntParams {
    /// Non-dissipative second-order scheme (trapezoidal-family).
    pub fn standard(dt: Real) -> Self {
        Self {
            beta: 0.25,
            gamma: 0.5,
            alpha_f: 0.5,
            alpha_m: 0.5,
            theta: 1.0,
            dt,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!(
                "time step must be positive, got {}",
                self.dt
            )));
        }
        if !(self.beta > 0.0 && self.beta <= 0.5) {
            return Err(Error::Config(format!(
                "Newmark beta must lie in (0, 1/2], got {}",
                self.beta
            )));
        }
        if !(self.gamma >= 0.5 && self.gamma <= 1.0) {
            return Err(Error::Config(format!(
                "Newmark gamma must lie in [1/2, 1], got {}",
                self.gamma
            )));
        }
        for (name, a) in [("alpha_f", self.alpha_f), ("alpha_m", self.alpha_m)] {
            if !(0.0..1.0).contains(&a) {
                return Err(Error::Config(format!(
                    "{name} must lie in [0, 1), got {a}"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::Config(format!(
                "theta must lie in [0, 1], got {}",
                self.theta
            )));
        }
        Ok(())
    }

    /// Second-order accuracy of generalized-α requires γ = ½ − α_m + α_f.
    pub fn is_second_order(&self) -> bool {
        (self.gamma - (0.5 - self.alpha_m + self.alpha_f)).abs() < 1e-12
    }

    /// Blend a force-like quantity to the evaluation point `n+1−α_f`.
    pub fn blend_f(&self, new: Real, old: Real) -> Real {
        (1.0 - self.alpha_f) * new + self.alpha_f * old
    }

    /// Blend an inertia-like quantity to the evaluation point `n+1−α_m`.
    pub fn blend_m(&self, new: Real, old: Real) -> Real {
        (1.0 - self.alpha_m) * new + self.alpha_m * old
    }

    pub fn newmark(&self) -> Newmark {
        Newmark::new(self.beta, self.gamma, self.dt)
    }
}

/// Precomputed Newmark coefficients for one step size.
///
/// With `Δd = d_{n+1} − d_n`:
///
/// ```text
/// a_{n+1} = c_a_dd·Δd + c_a_v·v_n + c_a_a·a_n
/// v_{n+1} = c_v_dd·Δd + c_v_v·v_n + c_v_a·a_n
/// ```
#[derive(Debug, Clone, Copy)]
pub struct Newmark {
    pub dt: Real,
    pub c_a_dd: Real,
    pub c_a_v: Real,
    pub c_a_a: Real,
    pub c_v_dd: Real,
    pub c_v_v: Real,
    pub c_v_a: Real,
}

impl Newmark {
    pub fn new(beta: Real, gamma: Real, dt: Real) -> Self {
        Self {
            dt,
            c_a_dd: 1.0 / (beta * dt * dt),
            c_a_v: -1.0 / (beta * dt),
            c_a_a: -(1.0 - 2.0 * beta) / (2.0 * beta),
            c_v_dd: gamma / (beta * dt),
            c_v_v: 1.0 - gamma / beta,
            c_v_a: dt * (1.0 - gamma / (2.0 * beta)),
        }
    }

    /// New acceleration from the displacement increment and old rates.
    pub fn accel(&self, dd: Real, v_old: Real, a_old: Real) -> Real {
        self.c_a_dd * dd + self.c_a_v * v_old + self.c_a_a * a_old
    }

    /// New velocity from the displacement increment and old rates.
    pub fn vel(&self, dd: Real, v_old: Real, a_old: Real) -> Real {
        self.c_v_dd * dd + self.c_v_v * v_old + self.c_v_a * a_old
    }

    /// Updates velocity and acceleration vectors in place from the
    /// displacement increment `d_new − d_old`.
    pub fn update_rates(&self, d_new: &[Real], d_old: &[Real], v: &mut [Real], a: &mut [Real]) {
        debug_assert_eq!(d_new.len(), d_old.len());
        debug_assert_eq!(d_new.len(), v.len());
        debug_assert_eq!(d_new.len(), a.len());
        for i in 0..d_new.len() {
            let dd = d_new[i] - d_old[i];
            let (v_old, a_old) = (v[i], a[i]);
            a[i] = self.accel(dd, v_old, a_old);
            v[i] = self.vel(dd, v_old, a_old);
        }
    }
}
