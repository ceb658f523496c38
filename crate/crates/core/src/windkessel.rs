//! Four-element windkessel circulation with smooth valve diodes.
//!
//! Each ventricle drives an independent open-loop circulation with four
//! unknowns: ventricular pressure `p_v`, proximal pressure `p_p`, distal
//! pressure `p_d`, and the flow `q_p` through the proximal inertance. The
//! atrioventricular and semilunar valves are modeled as pressure-dependent
//! resistances that switch smoothly between `r_min` (open) and `r_max`
//! (closed) over a narrow sigmoid of width `k_valve`.
//!
//! The four balance equations (all in flow units, m³/s) are
//!
//! ```text
//! (p_v − p_at)/R_av + (p_v − p_p)/R_sl + V̇       = 0   (cavity volume rate)
//! q_p − (p_v − p_p)/R_sl + C_p ṗ_p               = 0   (proximal node)
//! q_p + (p_d − p_p)/R_p + (L_p/R_p) q̇_p          = 0   (inertance branch)
//! (p_d − p_ref)/R_d − q_p + C_d ṗ_d              = 0   (distal node)
//! ```
//!
//! with valve resistances `R_av = R(p_v − p_at)` and `R_sl = R(p_p − p_v)`.
//! Time discretization is the one-step-θ scheme: algebraic terms are
//! evaluated at the blended state `θ·(n+1) + (1−θ)·n`, rates as backward
//! differences. `V̇` couples the circulation to the structural cavity volume
//! and is supplied by the caller; [`residual`] and [`jacobian`] expose
//! everything a monolithic Newton solver needs, including `∂R/∂V̇`.

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::scalar::{sigmoid_down, sigmoid_up, sigmoid_up_deriv};
use crate::units::mmhg_to_pa;
use crate::{Error, Real, Result};

/// Constants of one ventricle's circulation, all in SI units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindkesselParams {
    /// Proximal inertance [Pa·s²/m³].
    pub l_p: Real,
    /// Proximal capacity [m³/Pa].
    pub c_p: Real,
    /// Distal capacity [m³/Pa].
    pub c_d: Real,
    /// Proximal resistance [Pa·s/m³].
    pub r_p: Real,
    /// Distal resistance [Pa·s/m³].
    pub r_d: Real,
    /// Reference (venous) pressure [Pa].
    pub p_ref: Real,
    /// Open-valve resistance [Pa·s/m³].
    pub r_min: Real,
    /// Closed-valve resistance [Pa·s/m³].
    pub r_max: Real,
    /// Width of the valve opening/closing transition [Pa].
    pub k_valve: Real,
}

impl WindkesselParams {
    /// Human-heart parameter set; the same values serve both ventricles.
    pub fn standard() -> Self {
        Self {
            l_p: 1.3e5,
            c_p: 7.7e-9,
            c_d: 8.7e-9,
            r_p: 7.3e6,
            r_d: 1.0e8,
            p_ref: 0.0,
            r_min: 1.0e6,
            r_max: 1.0e13,
            k_valve: 1.0e-3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("l_p", self.l_p),
            ("c_p", self.c_p),
            ("c_d", self.c_d),
            ("r_p", self.r_p),
            ("r_d", self.r_d),
            ("r_min", self.r_min),
            ("r_max", self.r_max),
            ("k_valve", self.k_valve),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "windkessel parameter {name} must be positive and finite, got {v}"
                )));
            }
        }
        if self.r_max <= self.r_min {
            return Err(Error::Config(format!(
                "windkessel r_max ({}) must exceed r_min ({})",
                self.r_max, self.r_min
            )));
        }
        if !self.p_ref.is_finite() {
            return Err(Error::Config("windkessel p_ref must be finite".into()));
        }
        Ok(())
    }

    /// Smooth diode resistance `R(Δp) = r_min + (r_max − r_min)·S⁺(Δp)`.
    ///
    /// `Δp > 0` closes the valve (resistance approaches `r_max`), `Δp < 0`
    /// opens it. A few multiples of `k_valve` away from zero the sigmoid
    /// saturates exactly in floating point, so a firmly open or closed valve
    /// has resistance bit-equal to `r_min` or `r_max`.
    pub fn valve_resistance(&self, dp: Real) -> Real {
        self.r_min + (self.r_max - self.r_min) * sigmoid_up(dp, self.k_valve)
    }

    /// Derivative of [`Self::valve_resistance`] with respect to `Δp`.
    pub fn valve_resistance_deriv(&self, dp: Real) -> Real {
        (self.r_max - self.r_min) * sigmoid_up_deriv(dp, self.k_valve)
    }

    /// Flow `q(Δp) = Δp / R(Δp)` through a valve whose closing argument is
    /// the same `Δp` as the driving pressure difference.
    pub fn valve_flow(&self, dp: Real) -> Real {
        dp / self.valve_resistance(dp)
    }

    /// Derivative of [`Self::valve_flow`] with respect to `Δp`.
    pub fn valve_flow_deriv(&self, dp: Real) -> Real {
        let r = self.valve_resistance(dp);
        1.0 / r - dp * self.valve_resistance_deriv(dp) / (r * r)
    }
}

/// Primary variables `[p_v, p_p, p_d, q_p]` of one circulation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WindkesselState {
    /// Ventricular pressure [Pa].
    pub p_v: Real,
    /// Proximal pressure [Pa].
    pub p_p: Real,
    /// Distal pressure [Pa].
    pub p_d: Real,
    /// Flow through the proximal inertance [m³/s].
    pub q_p: Real,
}

impl WindkesselState {
    /// Left-ventricle state at diastasis (systemic circulation).
    pub fn diastasis_left() -> Self {
        Self {
            p_v: mmhg_to_pa(8.0),
            p_p: mmhg_to_pa(61.8),
            p_d: mmhg_to_pa(59.7),
            q_p: 38.3e-6,
        }
    }

    /// Right-ventricle state at diastasis (pulmonary circulation).
    pub fn diastasis_right() -> Self {
        Self {
            p_v: mmhg_to_pa(6.0),
            p_p: mmhg_to_pa(24.0),
            p_d: mmhg_to_pa(23.2),
            q_p: 14.9e-6,
        }
    }

    pub fn to_array(self) -> [Real; 4] {
        [self.p_v, self.p_p, self.p_d, self.q_p]
    }

    pub fn from_array(a: [Real; 4]) -> Self {
        Self {
            p_v: a[0],
            p_p: a[1],
            p_d: a[2],
            q_p: a[3],
        }
    }

    /// Adds a Newton increment (same component order as [`Self::to_array`]).
    pub fn add_increment(&mut self, dp: &Vector4<Real>) {
        self.p_v += dp[0];
        self.p_p += dp[1];
        self.p_d += dp[2];
        self.q_p += dp[3];
    }
}

/// Prescribed atrial pressure over one cardiac cycle, periodically extended.
///
/// The curve is piecewise linear through `points` (time [s], pressure [Pa]);
/// times must be strictly increasing within `[0, period)` and the final
/// segment wraps around to the first point of the next cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtrialPressureCurve {
    pub points: Vec<(Real, Real)>,
    pub period: Real,
}

impl AtrialPressureCurve {
    pub fn constant(p: Real, period: Real) -> Self {
        Self {
            points: vec![(0.0, p)],
            period,
        }
    }

    /// Baseline pressure plus a smooth bump during atrial systole.
    ///
    /// The bump follows the product-of-sigmoids activation indicator with
    /// transition width `gamma`, sampled at 2.5 ms onto the piecewise-linear
    /// representation. The default amplitudes are a modeling choice; override
    /// them through configuration to match measured atrial pressures.
    pub fn with_systolic_bump(
        baseline: Real,
        amplitude: Real,
        t_sys: Real,
        t_dias: Real,
        gamma: Real,
        period: Real,
    ) -> Self {
        let n = (period / 2.5e-3).round() as usize;
        let points = (0..n)
            .map(|i| {
                let t = period * i as Real / n as Real;
                let f = sigmoid_up(t - t_sys, gamma) * sigmoid_down(t - t_dias, gamma);
                (t, baseline + amplitude * f)
            })
            .collect();
        Self { points, period }
    }

    /// Shipped default for the left atrium: 6 mmHg baseline, 2 mmHg bump
    /// during atrial systole (70–140 ms).
    pub fn default_left(period: Real) -> Self {
        Self::with_systolic_bump(
            mmhg_to_pa(6.0),
            mmhg_to_pa(2.0),
            0.070,
            0.140,
            0.005,
            period,
        )
    }

    /// Shipped default for the right atrium: 4 mmHg baseline, 1 mmHg bump.
    pub fn default_right(period: Real) -> Self {
        Self::with_systolic_bump(
            mmhg_to_pa(4.0),
            mmhg_to_pa(1.0),
            0.070,
            0.140,
            0.005,
            period,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::Config("atrial pressure curve has no points".into()));
        }
        if !(self.period > 0.0 && self.period.is_finite()) {
            return Err(Error::Config(format!(
                "atrial pressure period must be positive, got {}",
                self.period
            )));
        }
        for w in self.points.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::Config(
                    "atrial pressure curve times must be strictly increasing".into(),
                ));
            }
        }
        let (t0, _) = self.points[0];
        let (t1, _) = self.points[self.points.len() - 1];
        if t0 < 0.0 || t1 >= self.period {
            return Err(Error::Config(
                "atrial pressure curve times must lie in [0, period)".into(),
            ));
        }
        Ok(())
    }

    /// Pressure at time `t`, folding into the periodic cycle.
    pub fn at(&self, t: Real) -> Real {
        let tau = (t.rem_euclid(self.period)).min(self.period);
        // Index of the last point with time <= tau.
        let idx = match self
            .points
            .binary_search_by(|(tp, _)| tp.partial_cmp(&tau).unwrap())
        {
            Ok(i) => i,
            Err(0) => {
                // Before the first sample: wrap to the last segment of the
                // previous cycle.
                let (ta, pa) = *self.points.last().unwrap();
                let (tb, pb) = self.points[0];
                let span = tb + self.period - ta;
                let w = (tau + self.period - ta) / span;
                return pa + w * (pb - pa);
            }
            Err(i) => i - 1,
        };
        let (ta, pa) = self.points[idx];
        if idx + 1 == self.points.len() {
            let (tb, pb) = self.points[0];
            let span = tb + self.period - ta;
            if span <= 0.0 {
                return pa;
            }
            let w = (tau - ta) / span;
            pa + w * (pb - pa)
        } else {
            let (tb, pb) = self.points[idx + 1];
            let w = (tau - ta) / (tb - ta);
            pa + w * (pb - pa)
        }
    }
}

fn blend(theta: Real, new: Real, old: Real) -> Real {
    theta * new + (1.0 - theta) * old
}

/// Discrete residual of the one-step-θ scheme, in flow units [m³/s].
///
/// `p_at` is the atrial pressure evaluated by the caller at `t_{n+θ}` and
/// `vdot` the cavity volume rate `(V_{n+1} − V_n)/Δt`.
pub fn residual(
    new: &WindkesselState,
    old: &WindkesselState,
    p_at: Real,
    vdot: Real,
    dt: Real,
    theta: Real,
    prm: &WindkesselParams,
) -> Vector4<Real> {
    let p_v = blend(theta, new.p_v, old.p_v);
    let p_p = blend(theta, new.p_p, old.p_p);
    let p_d = blend(theta, new.p_d, old.p_d);
    let q_p = blend(theta, new.q_p, old.q_p);
    let q_av = prm.valve_flow(p_v - p_at);
    // The semilunar driving difference and the valve argument have opposite
    // signs: the valve closes when p_p exceeds p_v.
    let q_sl = (p_v - p_p) / prm.valve_resistance(p_p - p_v);
    Vector4::new(
        q_av + q_sl + vdot,
        q_p - q_sl + prm.c_p * (new.p_p - old.p_p) / dt,
        q_p + (p_d - p_p) / prm.r_p + prm.l_p / prm.r_p * (new.q_p - old.q_p) / dt,
        (p_d - prm.p_ref) / prm.r_d - q_p + prm.c_d * (new.p_d - old.p_d) / dt,
    )
}

/// Analytic Jacobian `∂R/∂state_{n+1}` (column order `[p_v, p_p, p_d, q_p]`).
pub fn jacobian(
    new: &WindkesselState,
    old: &WindkesselState,
    p_at: Real,
    dt: Real,
    theta: Real,
    prm: &WindkesselParams,
) -> Matrix4<Real> {
    let p_v = blend(theta, new.p_v, old.p_v);
    let p_p = blend(theta, new.p_p, old.p_p);
    let dq_av = prm.valve_flow_deriv(p_v - p_at);
    // d/dx [ x / R(−x) ] with x = p_v − p_p.
    let x = p_v - p_p;
    let r_sl = prm.valve_resistance(-x);
    let dq_sl = 1.0 / r_sl + x * prm.valve_resistance_deriv(-x) / (r_sl * r_sl);
    let th = theta;
    Matrix4::new(
        th * (dq_av + dq_sl),
        -th * dq_sl,
        0.0,
        0.0,
        //
        -th * dq_sl,
        th * dq_sl + prm.c_p / dt,
        0.0,
        th,
        //
        0.0,
        -th / prm.r_p,
        th / prm.r_p,
        th + prm.l_p / (prm.r_p * dt),
        //
        0.0,
        0.0,
        th / prm.r_d + prm.c_d / dt,
        -th,
    )
}

/// Derivative of the residual with respect to the volume rate `V̇`.
///
/// Only the cavity-volume equation contains `V̇`, linearly.
pub fn dresidual_dvdot() -> Vector4<Real> {
    Vector4::new(1.0, 0.0, 0.0, 0.0)
}

/// Advances one circulation by a single step with `V̇` prescribed, using a
/// damped Newton iteration on the 4×4 system.
///
/// This drives the circulation without a structural model, e.g. to study the
/// 0D system in isolation. The monolithic solver assembles [`residual`] and
/// [`jacobian`] into its own global system instead.
pub fn step_standalone(
    old: &WindkesselState,
    p_at: Real,
    vdot: Real,
    dt: Real,
    theta: Real,
    prm: &WindkesselParams,
) -> Result<WindkesselState> {
    let mut new = *old;
    let r0 = residual(&new, old, p_at, vdot, dt, theta, prm);
    let tol = (1e-9 * r0.amax()).max(1e-12);
    let mut rnorm = r0.amax();
    let mut r = r0;
    for _ in 0..50 {
        if rnorm <= tol {
            return Ok(new);
        }
        let j = jacobian(&new, old, p_at, dt, theta, prm);
        let delta = j.lu().solve(&(-r)).ok_or_else(|| Error::NewtonDiverged {
            time: 0.0,
            detail: "singular windkessel Jacobian".into(),
        })?;
        // A closed valve makes the volume equation nearly flat in p_v until
        // the opening pressure is reached, so the raw Newton step can be many
        // orders of magnitude too long. Capping the increment lets the
        // iteration walk up to the valve transition, where backtracking can
        // then locate the acceptance window.
        let p_len = delta.rows(0, 3).amax();
        let q_len = delta[3].abs();
        let cap = (2000.0 / p_len.max(1e-30))
            .min(2e-3 / q_len.max(1e-30))
            .min(1.0);
        let delta = cap * delta;
        // Backtracking line search on the residual norm.
        let mut step = 1.0;
        for _ in 0..12 {
            let mut trial = new;
            trial.add_increment(&(step * delta));
            let rt = residual(&trial, old, p_at, vdot, dt, theta, prm);
            if rt.amax() < rnorm || rt.amax() <= tol {
                new = trial;
                r = rt;
                rnorm = rt.amax();
                break;
            }
            step *= 0.5;
        }
    }
    if rnorm <= tol {
        Ok(new)
    } else {
        Err(Error::NewtonDiverged {
            time: 0.0,
            detail: format!("windkessel step stalled at |R| = {rnorm:.3e} m³/s"),
        })
    }
}
