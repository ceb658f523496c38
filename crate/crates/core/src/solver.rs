//! Monolithic time integration of the coupled 3D–0D system.
//!
//! Every time step solves one nonlinear system in the structural
//! displacements and all windkessel unknowns together:
//!
//! ```text
//! R^S  = M·a|_{n+1−αm} + F(d, ḋ, p)|_{n+1−αf}          (structure, gen-α)
//! R^0D = windkessel residual with V̇ = (V_{n+1} − V_n)/Δt   (one-step-θ)
//! ```
//!
//! with Newmark kinematics supplying `ḋ(d)` and `d̈(d)`. The force at the
//! previous time level is recomputed from the stored state rather than
//! cached, so a [`SystemState`] alone determines the trajectory and
//! checkpoints stay small.
//!
//! Newton's method converges when `‖R^S‖₂ < max(1e-6·‖R^S_ref‖, 1e-8 N)`
//! with `R^S_ref` the first-iteration norm, and the 0D residual passes the
//! same test with a `1e-12 m³/s` floor. Each update may backtrack (step
//! halving, at most 8 times) on the combined scaled norm before the step is
//! rejected.
//!
//! [`Solver::prestress`] implements the multiplicative update of the
//! prestress deformation gradient: the target pressure is ramped in
//! increments, each increment solves a static problem from zero
//! displacement, folds the converged gradient into `F_pre` (and the spring
//! offsets into the boundary operators), and resets the displacement. After
//! the ramp, fixed-point increments at the full target continue until the
//! reset state itself is in equilibrium, so the imaged geometry carries the
//! target pressure.
//!
//! Checkpoints are versioned JSON containers holding the full
//! [`SystemState`] plus the boundary-spring prestress offsets; restarting
//! from one reproduces the original run bit for bit.

use std::io::Write as _;
use std::path::Path;

use nalgebra::Vector4;
use serde::{Deserialize, Serialize};

use crate::activation::{step_tau, ActivationTiming};
use crate::assembly::{AssemblyInputs, Model, TangentScales};
use crate::boundary::PressureSource;
use crate::linsolve::SparseSystem;
use crate::timeint::TimeIntParams;
use crate::windkessel::{self, AtrialPressureCurve, WindkesselParams, WindkesselState};
use crate::{Error, Mat3, Real, Result, Vec3};

/// Maximum Newton updates per step.
pub const MAX_NEWTON_ITERATIONS: usize = 25;
/// Maximum line-search halvings before a step is rejected.
pub const MAX_LINE_SEARCH_HALVINGS: usize = 8;
/// Maximum fixed-point increments after the prestress ramp.
const MAX_PRESTRESS_POLISH: usize = 30;
/// Relative Newton tolerance on both residual blocks.
const NEWTON_RTOL: Real = 1.0e-6;
/// Absolute floor of the structural tolerance [N].
const STRUCT_TOL_ABS: Real = 1.0e-8;
/// Absolute floor of the 0D tolerance [m³/s].
const FLOW_TOL_ABS: Real = 1.0e-12;

/// Complete instantaneous state of the coupled system.
///
/// `d`, `v`, `a` are full nodal vectors (3 per node, tied slots filled from
/// their masters); `tau` is the spatially uniform active tension; `f_pre`
/// holds one prestress deformation gradient per element quadrature point.
#[derive(Debug, Clone)]
pub struct SystemState {
    /// Simulation time [s].
    pub t: Real,
    /// Nodal displacements [m].
    pub d: Vec<Real>,
    /// Nodal velocities [m/s].
    pub v: Vec<Real>,
    /// Nodal accelerations [m/s²].
    pub a: Vec<Real>,
    /// Active fiber tension [Pa].
    pub tau: Real,
    /// One windkessel state per channel.
    pub wk: Vec<WindkesselState>,
    /// Prestress deformation gradient per quadrature point.
    pub f_pre: Vec<Mat3>,
}

impl SystemState {
    /// State at rest: zero motion, zero active tension, identity prestress,
    /// default-initialized windkessel states (set them before running).
    pub fn quiescent(model: &Model) -> Self {
        Self {
            t: 0.0,
            d: vec![0.0; model.n_struct_dofs()],
            v: vec![0.0; model.n_struct_dofs()],
            a: vec![0.0; model.n_struct_dofs()],
            tau: 0.0,
            wk: vec![WindkesselState::default(); model.n_wk_channels()],
            f_pre: vec![Mat3::identity(); model.n_point_states()],
        }
    }

    /// Checks dimensional consistency against a model and physical sanity
    /// (finite values, positive prestress determinants).
    pub fn validate(&self, model: &Model) -> Result<()> {
        let ns = model.n_struct_dofs();
        if self.d.len() != ns || self.v.len() != ns || self.a.len() != ns {
            return Err(Error::Config(format!(
                "state vectors have lengths {}/{}/{}, model needs {ns}",
                self.d.len(),
                self.v.len(),
                self.a.len()
            )));
        }
        if self.wk.len() != model.n_wk_channels() {
            return Err(Error::Config(format!(
                "state has {} windkessel channels, model needs {}",
                self.wk.len(),
                model.n_wk_channels()
            )));
        }
        if self.f_pre.len() != model.n_point_states() {
            return Err(Error::Config(format!(
                "state has {} prestress gradients, model needs {}",
                self.f_pre.len(),
                model.n_point_states()
            )));
        }
        if !self.t.is_finite() || !self.tau.is_finite() {
            return Err(Error::Config(format!(
                "non-finite time {} or active tension {}",
                self.t, self.tau
            )));
        }
        for (name, vec) in [("d", &self.d), ("v", &self.v), ("a", &self.a)] {
            if vec.iter().any(|x| !x.is_finite()) {
                return Err(Error::Config(format!("non-finite entry in state vector {name}")));
            }
        }
        for (i, f) in self.f_pre.iter().enumerate() {
            let det = f.determinant();
            if !(det > 0.0) {
                return Err(Error::Config(format!(
                    "prestress gradient {i} has non-positive determinant {det}"
                )));
            }
        }
        Ok(())
    }
}

/// Per-step Newton diagnostics.
#[derive(Debug, Clone, Default)]
pub struct StepLog {
    /// Newton updates performed (= linear solves). A step that starts
    /// converged performs none and leaves the state unchanged.
    pub iterations: usize,
    /// Structural residual norm [N] before each update and after the last.
    pub r_struct: Vec<Real>,
    /// 0D residual norm [m³/s] at the same points.
    pub r_wk: Vec<Real>,
    /// Structural convergence tolerance [N] of this step.
    pub tol_struct: Real,
    /// 0D convergence tolerance [m³/s] of this step.
    pub tol_wk: Real,
    /// Total line-search halvings across all updates.
    pub halvings: usize,
    /// Whether the final residual met both tolerances.
    pub converged: bool,
}

impl StepLog {
    pub fn first_struct(&self) -> Real {
        self.r_struct.first().copied().unwrap_or(0.0)
    }

    pub fn final_struct(&self) -> Real {
        self.r_struct.last().copied().unwrap_or(0.0)
    }

    pub fn first_wk(&self) -> Real {
        self.r_wk.first().copied().unwrap_or(0.0)
    }

    pub fn final_wk(&self) -> Real {
        self.r_wk.last().copied().unwrap_or(0.0)
    }
}

/// Outcome of [`Solver::prestress`].
#[derive(Debug, Clone)]
pub struct PrestressReport {
    /// Newton diagnostics of the ramp increments.
    pub increments: Vec<StepLog>,
    /// Diagnostics of the fixed-point increments at the full target.
    pub polish: Vec<StepLog>,
    /// Residual norm [N] of the reset state under the target pressures.
    pub residual: Real,
    /// Tolerance [N] the residual was driven below, scaled by the pressure
    /// load on the imaged geometry.
    pub tolerance: Real,
}

/// One row of the time-series output.
#[derive(Debug, Clone)]
pub struct TimeSample {
    /// Simulation time [s].
    pub t: Real,
    /// Active fiber tension [Pa].
    pub tau: Real,
    /// Windkessel states, one per channel.
    pub wk: Vec<WindkesselState>,
    /// Cavity volumes [m³], one per pressure-coupled cavity.
    pub volumes: Vec<Real>,
    /// Discrete volume rates [m³/s] (backward difference; zero at the first
    /// sample).
    pub vdot: Vec<Real>,
    /// Applied cavity pressures [Pa].
    pub pressures: Vec<Real>,
}

/// Convergence bookkeeping of one accepted step.
#[derive(Debug, Clone)]
pub struct ConvergenceRecord {
    pub step: usize,
    pub t: Real,
    pub iterations: usize,
    pub r_struct_first: Real,
    pub r_struct_final: Real,
    pub tol_struct: Real,
    pub r_wk_first: Real,
    pub r_wk_final: Real,
    pub tol_wk: Real,
}

/// Result of [`Solver::run_transient`]: one sample per step (plus the
/// initial state) and one convergence record per accepted step.
#[derive(Debug, Clone, Default)]
pub struct TransientResult {
    pub samples: Vec<TimeSample>,
    pub convergence: Vec<ConvergenceRecord>,
}

/// Frozen per-step data: everything about the previous time level the
/// residual needs, so Newton iterations never touch the stored state.
struct StepCtx {
    t_new: Real,
    tau_new: Real,
    /// Rate force `F(d_n, ḋ_n, p_n)` for the generalized-α blend.
    f_old: Vec<Real>,
    /// Cavity volumes at `d_n`.
    vol_old: Vec<Real>,
    /// Atrial pressures at the θ-point of the step, per channel.
    p_at: Vec<Real>,
}

/// Reusable buffers for residual evaluations within one step.
struct Workspace {
    r: Vec<Real>,
    f_new: Vec<Real>,
    v: Vec<Real>,
    a: Vec<Real>,
    acc: Vec<Real>,
    tau: Vec<Real>,
    pressures: Vec<Real>,
}

impl Workspace {
    fn new(model: &Model) -> Self {
        let n = model.n_unknowns();
        let ns = model.n_struct_dofs();
        Self {
            r: vec![0.0; n],
            f_new: vec![0.0; n],
            v: vec![0.0; ns],
            a: vec![0.0; ns],
            acc: vec![0.0; ns],
            tau: vec![0.0; model.n_point_states()],
            pressures: vec![0.0; model.cavities.len()],
        }
    }
}

/// Monolithic implicit solver owning the model and the sparse system.
pub struct Solver {
    pub model: Model,
    pub params: TimeIntParams,
    pub wk_params: Vec<WindkesselParams>,
    pub atrial: Vec<AtrialPressureCurve>,
    pub timing: ActivationTiming<Real>,
    /// Cavity index backing each windkessel channel.
    cavity_of_channel: Vec<usize>,
    sys: SparseSystem,
}

impl Solver {
    /// Builds the solver and the sparse system for the model's coupling
    /// pattern. `wk_params` and `atrial` must have one entry per windkessel
    /// channel of the model.
    pub fn new(
        model: Model,
        params: TimeIntParams,
        wk_params: Vec<WindkesselParams>,
        atrial: Vec<AtrialPressureCurve>,
        timing: ActivationTiming<Real>,
    ) -> Result<Self> {
        params.validate()?;
        let n_wk = model.n_wk_channels();
        if wk_params.len() != n_wk || atrial.len() != n_wk {
            return Err(Error::Config(format!(
                "model has {n_wk} windkessel channels but {} parameter sets and {} atrial \
                 curves were given",
                wk_params.len(),
                atrial.len()
            )));
        }
        for p in &wk_params {
            p.validate()?;
        }
        for c in &atrial {
            c.validate()?;
        }
        let mut cavity_of_channel = vec![usize::MAX; n_wk];
        for (c, cav) in model.cavities.iter().enumerate() {
            if let PressureSource::Windkessel(k) = cav.source {
                cavity_of_channel[k] = c;
            }
        }
        let sys = SparseSystem::new(model.n_unknowns(), model.pattern())?;
        Ok(Self {
            model,
            params,
            wk_params,
            atrial,
            timing,
            cavity_of_channel,
            sys,
        })
    }

    /// Changes the time step; the sparsity pattern is unaffected.
    pub fn set_time_step(&mut self, dt: Real) -> Result<()> {
        let mut p = self.params;
        p.dt = dt;
        p.validate()?;
        self.params = p;
        Ok(())
    }

    /// Tangent weights of the dynamic step: `∂R^S/∂d` through the Newmark
    /// kinematics and the generalized-α force blend.
    fn dynamic_scales(&self) -> TangentScales {
        let nm = self.params.newmark();
        TangentScales {
            mass: (1.0 - self.params.alpha_m) * nm.c_a_dd,
            stiff: 1.0 - self.params.alpha_f,
            damp: (1.0 - self.params.alpha_f) * nm.c_v_dd,
        }
    }

    /// Captures the previous time level: old rate force, old cavity volumes
    /// and the new activation level.
    fn step_context(&self, state: &SystemState) -> Result<StepCtx> {
        let dt = self.params.dt;
        let mut work = Workspace::new(&self.model);
        fill_cavity_pressures(&self.model, &state.wk, state.t, &mut work.pressures);
        work.tau.fill(state.tau);
        let mut f_old = vec![0.0; self.model.n_unknowns()];
        let inputs = AssemblyInputs {
            u: &state.d,
            v: &state.v,
            tau: &work.tau,
            f_pre: Some(&state.f_pre),
            pressures: &work.pressures,
        };
        self.model.assemble(&inputs, &mut f_old, None)?;
        let vol_old = (0..self.model.cavities.len())
            .map(|c| self.model.cavity_volume(c, &state.d))
            .collect();
        let p_at = (0..self.model.n_wk_channels())
            .map(|k| self.atrial[k].at(state.t + self.params.theta * dt))
            .collect();
        Ok(StepCtx {
            t_new: state.t + dt,
            tau_new: step_tau(&self.timing, state.tau, state.t, dt),
            f_old,
            vol_old,
            p_at,
        })
    }

    /// Advances the state by one time step with the monolithic Newton
    /// iteration. On success the state holds the accepted new time level; on
    /// failure the state is untouched.
    pub fn step(&mut self, state: &mut SystemState) -> Result<StepLog> {
        let ctx = self.step_context(state)?;
        let n_struct = self.model.n_struct_dofs();
        let n = self.model.n_unknowns();
        let n_wk = self.model.n_wk_channels();
        let scales = self.dynamic_scales();
        let mut work = Workspace::new(&self.model);

        let mut d = state.d.clone();
        let mut wk = state.wk.clone();
        let mut d_trial = vec![0.0; n_struct];
        let mut wk_trial = wk.clone();
        let mut rhs = vec![0.0; n];
        let mut log = StepLog::default();
        let (mut scale_s, mut scale_w) = (1.0, 1.0);

        loop {
            let (rs, rw) = eval_step_residual(
                &self.model,
                &self.params,
                &self.wk_params,
                &self.cavity_of_channel,
                state,
                &ctx,
                &d,
                &wk,
                &mut work,
                Some((&mut self.sys, scales)),
            )?;
            if log.r_struct.is_empty() {
                log.tol_struct = (NEWTON_RTOL * rs).max(STRUCT_TOL_ABS);
                log.tol_wk = (NEWTON_RTOL * rw).max(FLOW_TOL_ABS);
                scale_s = rs.max(STRUCT_TOL_ABS);
                scale_w = rw.max(FLOW_TOL_ABS);
            }
            log.r_struct.push(rs);
            log.r_wk.push(rw);
            if rs <= log.tol_struct && rw <= log.tol_wk {
                log.converged = true;
                break;
            }
            if log.iterations >= MAX_NEWTON_ITERATIONS {
                return Err(Error::NewtonDiverged {
                    time: ctx.t_new,
                    detail: format!(
                        "no convergence after {MAX_NEWTON_ITERATIONS} iterations; \
                         ‖R_S‖ = {rs:.3e} N (tol {:.3e}), ‖R_0D‖ = {rw:.3e} m³/s \
                         (tol {:.3e}); consider a smaller time step",
                        log.tol_struct, log.tol_wk
                    ),
                });
            }

            for (dst, &r) in rhs.iter_mut().zip(&work.r) {
                *dst = -r;
            }
            self.sys.solve_in_place(&mut rhs)?;
            log.iterations += 1;

            // Cap the 0D increments (2 kPa on pressures, 2 ml/ms on the
            // flow) so a valve transition cannot fling the iterate across
            // the sigmoid; the backtracking search starts from the capped
            // length, which keeps the update along the Newton direction.
            let mut cap: Real = 1.0;
            for k in 0..self.model.n_wk_channels() {
                let off = self.model.wk_offset(k);
                for j in 0..3 {
                    cap = cap.min(2.0e3 / rhs[off + j].abs().max(1.0e-30));
                }
                cap = cap.min(2.0e-3 / rhs[off + 3].abs().max(1.0e-30));
            }

            // Backtracking line search on the combined scaled norm.
            let merit0 = rs / scale_s + rw / scale_w;
            let mut step_len = cap.min(1.0);
            let mut accepted = false;
            for halving in 0..=MAX_LINE_SEARCH_HALVINGS {
                for i in 0..n_struct {
                    d_trial[i] = d[i] + step_len * rhs[i];
                }
                self.model.apply_ties(&mut d_trial);
                for k in 0..n_wk {
                    let off = self.model.wk_offset(k);
                    let inc = Vector4::new(rhs[off], rhs[off + 1], rhs[off + 2], rhs[off + 3])
                        * step_len;
                    wk_trial[k] = wk[k];
                    wk_trial[k].add_increment(&inc);
                }
                let trial = eval_step_residual(
                    &self.model,
                    &self.params,
                    &self.wk_params,
                    &self.cavity_of_channel,
                    state,
                    &ctx,
                    &d_trial,
                    &wk_trial,
                    &mut work,
                    None,
                );
                match trial {
                    Ok((ts, tw)) => {
                        let merit = ts / scale_s + tw / scale_w;
                        if merit < merit0 || (ts <= log.tol_struct && tw <= log.tol_wk) {
                            d.copy_from_slice(&d_trial);
                            wk.copy_from_slice(&wk_trial);
                            log.halvings += halving;
                            accepted = true;
                            break;
                        }
                    }
                    // An inverted trial element just means the step was too
                    // long; halve and retry.
                    Err(Error::ElementInverted { .. }) => {}
                    Err(e) => return Err(e),
                }
                step_len *= 0.5;
            }
            if !accepted {
                return Err(Error::NewtonDiverged {
                    time: ctx.t_new,
                    detail: format!(
                        "line search stalled after {MAX_LINE_SEARCH_HALVINGS} halvings at \
                         ‖R_S‖ = {rs:.3e} N; consider a smaller time step"
                    ),
                });
            }
        }

        // Accepted: final Newmark rates from the total displacement
        // increment, then commit.
        let nm = self.params.newmark();
        let mut v = state.v.clone();
        let mut a = state.a.clone();
        nm.update_rates(&d, &state.d, &mut v, &mut a);
        self.model.apply_ties(&mut v);
        self.model.apply_ties(&mut a);
        state.d = d;
        state.v = v;
        state.a = a;
        state.wk = wk;
        state.t = ctx.t_new;
        state.tau = ctx.tau_new;
        Ok(log)
    }

    /// Solves `M a = −F(d, ḋ, p)` for a consistent initial acceleration.
    /// Call once before a transient run whenever the initial state carries
    /// loads (after prestressing this is a no-op up to the Newton tolerance).
    pub fn initialize_acceleration(&mut self, state: &mut SystemState) -> Result<()> {
        state.validate(&self.model)?;
        let n_struct = self.model.n_struct_dofs();
        let mut work = Workspace::new(&self.model);
        fill_cavity_pressures(&self.model, &state.wk, state.t, &mut work.pressures);
        work.tau.fill(state.tau);
        let inputs = AssemblyInputs {
            u: &state.d,
            v: &state.v,
            tau: &work.tau,
            f_pre: Some(&state.f_pre),
            pressures: &work.pressures,
        };
        self.sys.zero();
        self.model.assemble(
            &inputs,
            &mut work.r,
            Some((
                &mut self.sys,
                TangentScales {
                    mass: 1.0,
                    stiff: 0.0,
                    damp: 0.0,
                },
            )),
        )?;
        for k in 0..self.model.n_wk_channels() {
            let off = self.model.wk_offset(k);
            for i in 0..4 {
                self.sys.add(off + i, off + i, 1.0);
            }
        }
        let mut rhs: Vec<Real> = work.r.iter().map(|&r| -r).collect();
        self.sys.solve_in_place(&mut rhs)?;
        state.a.copy_from_slice(&rhs[..n_struct]);
        self.model.apply_ties(&mut state.a);
        Ok(())
    }

    /// Static solve at fixed pressures (no inertia, no viscosity, no
    /// activation), used by the prestress ramp. `d` is the start guess and
    /// returns the converged displacement.
    fn static_solve(&mut self, d: &mut [Real], f_pre: &[Mat3], pressures: &[Real]) -> Result<StepLog> {
        let n_struct = self.model.n_struct_dofs();
        let mut work = Workspace::new(&self.model);
        let mut d_trial = vec![0.0; n_struct];
        let mut rhs = vec![0.0; self.model.n_unknowns()];
        let mut log = StepLog::default();

        loop {
            let rs = eval_static_residual(
                &self.model,
                f_pre,
                pressures,
                d,
                &mut work,
                Some(&mut self.sys),
            )?;
            if log.r_struct.is_empty() {
                log.tol_struct = (NEWTON_RTOL * rs).max(STRUCT_TOL_ABS);
                log.tol_wk = FLOW_TOL_ABS;
            }
            log.r_struct.push(rs);
            log.r_wk.push(0.0);
            if rs <= log.tol_struct {
                log.converged = true;
                return Ok(log);
            }
            if log.iterations >= MAX_NEWTON_ITERATIONS {
                return Err(Error::NewtonDiverged {
                    time: 0.0,
                    detail: format!(
                        "static solve: no convergence after {MAX_NEWTON_ITERATIONS} \
                         iterations; ‖R_S‖ = {rs:.3e} N (tol {:.3e})",
                        log.tol_struct
                    ),
                });
            }

            for (dst, &r) in rhs.iter_mut().zip(&work.r) {
                *dst = -r;
            }
            self.sys.solve_in_place(&mut rhs)?;
            log.iterations += 1;

            let mut step_len = 1.0;
            let mut accepted = false;
            for halving in 0..=MAX_LINE_SEARCH_HALVINGS {
                for i in 0..n_struct {
                    d_trial[i] = d[i] + step_len * rhs[i];
                }
                self.model.apply_ties(&mut d_trial);
                match eval_static_residual(&self.model, f_pre, pressures, &d_trial, &mut work, None)
                {
                    Ok(ts) => {
                        if ts < rs || ts <= log.tol_struct {
                            d.copy_from_slice(&d_trial);
                            log.halvings += halving;
                            accepted = true;
                            break;
                        }
                    }
                    Err(Error::ElementInverted { .. }) => {}
                    Err(e) => return Err(e),
                }
                step_len *= 0.5;
            }
            if !accepted {
                return Err(Error::NewtonDiverged {
                    time: 0.0,
                    detail: format!(
                        "static solve: line search stalled after \
                         {MAX_LINE_SEARCH_HALVINGS} halvings at ‖R_S‖ = {rs:.3e} N"
                    ),
                });
            }
        }
    }

    /// Builds the prestress deformation gradient so the imaged geometry is
    /// in static equilibrium with `targets` (one pressure per cavity,
    /// overriding the cavity sources during the ramp).
    ///
    /// The target is reached in `ramp_steps` increments. Each increment
    /// solves a static problem from zero displacement, folds the result into
    /// `state.f_pre` multiplicatively and into the boundary-spring offsets,
    /// then resets the displacement. After the ramp, fixed-point increments
    /// at the full target repeat until assembling at zero displacement under
    /// the target pressures leaves a residual below the Newton tolerance of
    /// the load.
    pub fn prestress(
        &mut self,
        state: &mut SystemState,
        targets: &[Real],
        ramp_steps: usize,
    ) -> Result<PrestressReport> {
        if targets.len() != self.model.cavities.len() {
            return Err(Error::Config(format!(
                "{} prestress targets for {} cavities",
                targets.len(),
                self.model.cavities.len()
            )));
        }
        if ramp_steps == 0 {
            return Err(Error::Config(
                "prestress needs at least one ramp increment".into(),
            ));
        }
        state.validate(&self.model)?;
        if state.d.iter().any(|&x| x != 0.0) {
            return Err(Error::Config(
                "prestress must start from zero displacement".into(),
            ));
        }
        let n_struct = self.model.n_struct_dofs();

        // Tolerance scaled by the pressure load on the imaged geometry.
        let zeros = vec![0.0; n_struct];
        let mut load = vec![0.0; n_struct];
        for (c, &pc) in targets.iter().enumerate() {
            let grad = self.model.cavity_volume_gradient(c, &zeros);
            for i in 0..n_struct {
                load[i] -= pc * grad[i];
            }
        }
        let tolerance = (NEWTON_RTOL * norm2(&load)).max(STRUCT_TOL_ABS);

        let mut report = PrestressReport {
            increments: Vec::with_capacity(ramp_steps),
            polish: Vec::new(),
            residual: Real::INFINITY,
            tolerance,
        };
        let mut pressures = vec![0.0; targets.len()];
        for inc in 1..=ramp_steps {
            let frac = inc as Real / ramp_steps as Real;
            for (p, &t) in pressures.iter_mut().zip(targets) {
                *p = frac * t;
            }
            let log = self.prestress_increment(state, &pressures)?;
            report.increments.push(log);
        }

        // Fixed-point increments at the full target: the incremental reset
        // moves the linearization point, so the zero-displacement residual
        // lags one increment behind until the increments vanish.
        pressures.copy_from_slice(targets);
        let mut work = Workspace::new(&self.model);
        for _ in 0..MAX_PRESTRESS_POLISH {
            report.residual =
                eval_static_residual(&self.model, &state.f_pre, &pressures, &zeros, &mut work, None)?;
            if report.residual <= tolerance {
                return Ok(report);
            }
            let log = self.prestress_increment(state, &pressures)?;
            report.polish.push(log);
        }
        Err(Error::NewtonDiverged {
            time: 0.0,
            detail: format!(
                "prestress fixed point stalled at ‖R‖ = {:.3e} N (tolerance {:.3e} N); \
                 try more ramp increments",
                report.residual, tolerance
            ),
        })
    }

    /// One prestress increment: static solve from zero displacement, fold
    /// the converged gradient and spring offsets, reset the displacement.
    fn prestress_increment(
        &mut self,
        state: &mut SystemState,
        pressures: &[Real],
    ) -> Result<StepLog> {
        let mut d = vec![0.0; self.model.n_struct_dofs()];
        let log = self
            .static_solve(&mut d, &state.f_pre, pressures)
            .map_err(|e| match e {
                Error::NewtonDiverged { time, detail } => Error::NewtonDiverged {
                    time,
                    detail: format!("{detail}; prestress ramp failed, try more ramp increments"),
                },
                other => other,
            })?;
        state.f_pre = self.model.deformation_gradients(&d, Some(&state.f_pre));
        for op in &mut self.model.springs {
            op.record_prestress(&d)?;
        }
        Ok(log)
    }

    /// Marches `n_steps` steps, recording one [`TimeSample`] per time level
    /// (including the initial one) and one [`ConvergenceRecord`] per step.
    /// `on_step` runs after every accepted step (and once for the initial
    /// state with step index 0), e.g. to write output at some cadence.
    pub fn run_transient<F>(
        &mut self,
        state: &mut SystemState,
        n_steps: usize,
        mut on_step: F,
    ) -> Result<TransientResult>
    where
        F: FnMut(usize, &SystemState),
    {
        state.validate(&self.model)?;
        let mut result = TransientResult {
            samples: Vec::with_capacity(n_steps + 1),
            convergence: Vec::with_capacity(n_steps),
        };
        result.samples.push(self.sample(state, None));
        on_step(0, state);
        for step in 1..=n_steps {
            let log = self.step(state)?;
            let prev: Vec<Real> = result.samples.last().unwrap().volumes.clone();
            result.samples.push(self.sample(state, Some(&prev)));
            result.convergence.push(ConvergenceRecord {
                step,
                t: state.t,
                iterations: log.iterations,
                r_struct_first: log.first_struct(),
                r_struct_final: log.final_struct(),
                tol_struct: log.tol_struct,
                r_wk_first: log.first_wk(),
                r_wk_final: log.final_wk(),
                tol_wk: log.tol_wk,
            });
            on_step(step, state);
        }
        Ok(result)
    }

    fn sample(&self, state: &SystemState, prev_vol: Option<&[Real]>) -> TimeSample {
        let volumes: Vec<Real> = (0..self.model.cavities.len())
            .map(|c| self.model.cavity_volume(c, &state.d))
            .collect();
        let vdot = match prev_vol {
            Some(prev) => volumes
                .iter()
                .zip(prev)
                .map(|(v, p)| (v - p) / self.params.dt)
                .collect(),
            None => vec![0.0; volumes.len()],
        };
        let mut pressures = vec![0.0; volumes.len()];
        fill_cavity_pressures(&self.model, &state.wk, state.t, &mut pressures);
        TimeSample {
            t: state.t,
            tau: state.tau,
            wk: state.wk.clone(),
            volumes,
            vdot,
            pressures,
        }
    }
}

/// Residual (and optionally the scaled tangent) of the dynamic step at the
/// iterate `(d, wk)`. Returns the structural and 0D residual norms.
#[allow(clippy::too_many_arguments)]
fn eval_step_residual(
    model: &Model,
    prm: &TimeIntParams,
    wk_prm: &[WindkesselParams],
    cavity_of_channel: &[usize],
    state: &SystemState,
    ctx: &StepCtx,
    d: &[Real],
    wk: &[WindkesselState],
    work: &mut Workspace,
    mut tangent: Option<(&mut SparseSystem, TangentScales)>,
) -> Result<(Real, Real)> {
    let n_struct = model.n_struct_dofs();
    let nm = prm.newmark();
    for i in 0..n_struct {
        let dd = d[i] - state.d[i];
        work.a[i] = nm.accel(dd, state.v[i], state.a[i]);
        work.v[i] = nm.vel(dd, state.v[i], state.a[i]);
    }
    fill_cavity_pressures(model, wk, ctx.t_new, &mut work.pressures);
    work.tau.fill(ctx.tau_new);
    work.f_new.fill(0.0);
    let inputs = AssemblyInputs {
        u: d,
        v: &work.v,
        tau: &work.tau,
        f_pre: Some(&state.f_pre),
        pressures: &work.pressures,
    };
    if let Some((sys, scales)) = tangent.take() {
        sys.zero();
        model.assemble(&inputs, &mut work.f_new, Some((&mut *sys, scales)))?;
        // 0D blocks and the volume-rate coupling rows.
        for (k, &cav) in cavity_of_channel.iter().enumerate() {
            let off = model.wk_offset(k);
            let j4 = windkessel::jacobian(&wk[k], &state.wk[k], ctx.p_at[k], prm.dt, prm.theta, &wk_prm[k]);
            for i in 0..4 {
                for j in 0..4 {
                    sys.add(off + i, off + j, j4[(i, j)]);
                }
            }
            // ∂(V̇)/∂d of the flow-balance row.
            let grad = model.cavity_volume_gradient(cav, d);
            for (i, &g) in grad.iter().take(n_struct).enumerate() {
                if g != 0.0 {
                    sys.add(off, i, g / prm.dt);
                }
            }
        }
    } else {
        model.assemble(&inputs, &mut work.f_new, None)?;
    }

    // Structural rows: generalized-α blend plus inertia.
    work.r.fill(0.0);
    for i in 0..n_struct {
        work.r[i] = prm.blend_f(work.f_new[i], ctx.f_old[i]);
        work.acc[i] = prm.blend_m(work.a[i], state.a[i]);
    }
    model.add_mass_force(&work.acc, &mut work.r);
    // 0D rows.
    for (k, &cav) in cavity_of_channel.iter().enumerate() {
        let off = model.wk_offset(k);
        let vol = model.cavity_volume(cav, d);
        let vdot = (vol - ctx.vol_old[cav]) / prm.dt;
        let r4 = windkessel::residual(
            &wk[k],
            &state.wk[k],
            ctx.p_at[k],
            vdot,
            prm.dt,
            prm.theta,
            &wk_prm[k],
        );
        for i in 0..4 {
            work.r[off + i] = r4[i];
        }
    }
    Ok((norm2(&work.r[..n_struct]), norm2(&work.r[n_struct..])))
}

/// Static residual at fixed pressures: no inertia, no rates, no activation.
/// Windkessel rows are zeroed and, when a tangent is requested, pinned to
/// identity so the solved increments leave the 0D unknowns untouched.
fn eval_static_residual(
    model: &Model,
    f_pre: &[Mat3],
    pressures: &[Real],
    d: &[Real],
    work: &mut Workspace,
    tangent: Option<&mut SparseSystem>,
) -> Result<Real> {
    work.v.fill(0.0);
    work.tau.fill(0.0);
    work.r.fill(0.0);
    let inputs = AssemblyInputs {
        u: d,
        v: &work.v,
        tau: &work.tau,
        f_pre: Some(f_pre),
        pressures,
    };
    match tangent {
        Some(sys) => {
            sys.zero();
            model.assemble(&inputs, &mut work.r, Some((&mut *sys, TangentScales::STATIC)))?;
            for k in 0..model.n_wk_channels() {
                let off = model.wk_offset(k);
                for i in 0..4 {
                    sys.add(off + i, off + i, 1.0);
                }
            }
        }
        None => {
            model.assemble(&inputs, &mut work.r, None)?;
        }
    }
    let n_struct = model.n_struct_dofs();
    for r in &mut work.r[n_struct..] {
        *r = 0.0;
    }
    Ok(norm2(&work.r[..n_struct]))
}

/// Applied pressure of every cavity: the ventricular-pressure unknown for
/// windkessel-coupled cavities, the prescribed curve otherwise.
fn fill_cavity_pressures(model: &Model, wk: &[WindkesselState], t: Real, out: &mut [Real]) {
    for (c, cav) in model.cavities.iter().enumerate() {
        out[c] = match &cav.source {
            PressureSource::Windkessel(k) => wk[*k].p_v,
            PressureSource::Prescribed(_) => cav.source.prescribed_at(t).unwrap_or(0.0),
        };
    }
}

fn norm2(x: &[Real]) -> Real {
    x.iter().map(|v| v * v).sum::<Real>().sqrt()
}

// ---------------------------------------------------------------------------
// Checkpoint / restart
// ---------------------------------------------------------------------------

/// Container identifier written into every checkpoint.
pub const CHECKPOINT_FORMAT: &str = "cardiofem.checkpoint";
/// Current checkpoint layout version.
pub const CHECKPOINT_VERSION: u32 = 1;

/// On-disk checkpoint layout (JSON). Matrices are row-major `[Real; 9]`,
/// vectors `[Real; 3]`. The spring section captures the prestress offsets of
/// every boundary operator in model order.
#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    t: Real,
    tau: Real,
    d: Vec<Real>,
    v: Vec<Real>,
    a: Vec<Real>,
    wk: Vec<WindkesselState>,
    f_pre: Vec<[Real; 9]>,
    springs: Vec<SpringCheckpoint>,
}

#[derive(Serialize, Deserialize)]
struct SpringCheckpoint {
    surface: String,
    g_pre: Vec<Real>,
    u_pre: Vec<[Real; 3]>,
}

fn mat3_to_rows(m: &Mat3) -> [Real; 9] {
    std::array::from_fn(|i| m[(i / 3, i % 3)])
}

fn rows_to_mat3(a: &[Real; 9]) -> Mat3 {
    Mat3::new(a[0], a[1], a[2], a[3], a[4], a[5], a[6], a[7], a[8])
}

/// Writes a versioned JSON checkpoint of the state and the model's
/// boundary-spring offsets.
pub fn save_checkpoint(model: &Model, state: &SystemState, path: &Path) -> Result<()> {
    state.validate(model)?;
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        t: state.t,
        tau: state.tau,
        d: state.d.clone(),
        v: state.v.clone(),
        a: state.a.clone(),
        wk: state.wk.clone(),
        f_pre: state.f_pre.iter().map(mat3_to_rows).collect(),
        springs: model
            .springs
            .iter()
            .map(|op| {
                let (g_pre, u_pre) = op.prestress_offsets();
                SpringCheckpoint {
                    surface: op.surface().into(),
                    g_pre: g_pre.to_vec(),
                    u_pre: u_pre.iter().map(|u| [u.x, u.y, u.z]).collect(),
                }
            })
            .collect(),
    };
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(&mut w, &file)?;
    w.flush()?;
    Ok(())
}

/// Reads a checkpoint, restores the spring offsets into the model and
/// returns the state. Fails on format/version mismatch or if the checkpoint
/// does not fit the model's dimensions.
pub fn load_checkpoint(model: &mut Model, path: &Path) -> Result<SystemState> {
    let file: CheckpointFile =
        serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?;
    if file.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!(
            "not a checkpoint file (format '{}')",
            file.format
        )));
    }
    if file.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
            file.version
        )));
    }
    if file.d.len() != model.n_struct_dofs() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} structural dofs, model needs {}",
            file.d.len(),
            model.n_struct_dofs()
        )));
    }
    if file.f_pre.len() != model.n_point_states() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} prestress gradients, model needs {}",
            file.f_pre.len(),
            model.n_point_states()
        )));
    }
    if file.wk.len() != model.n_wk_channels() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} windkessel channels, model needs {}",
            file.wk.len(),
            model.n_wk_channels()
        )));
    }
    if file.springs.len() != model.springs.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} spring sections, model needs {}",
            file.springs.len(),
            model.springs.len()
        )));
    }
    for (op, sc) in model.springs.iter_mut().zip(&file.springs) {
        if op.surface() != sc.surface {
            return Err(Error::Checkpoint(format!(
                "spring surface mismatch: checkpoint '{}', model '{}'",
                sc.surface,
                op.surface()
            )));
        }
        let u: Vec<Vec3> = sc.u_pre.iter().map(|a| Vec3::new(a[0], a[1], a[2])).collect();
        op.restore_prestress_offsets(&sc.g_pre, &u)?;
    }
    let state = SystemState {
        t: file.t,
        d: file.d,
        v: file.v,
        a: file.a,
        tau: file.tau,
        wk: file.wk,
        f_pre: file.f_pre.iter().map(rows_to_mat3).collect(),
    };
    state.validate(model)?;
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::{BoundaryConditionSet, FollowerPressureSpec, SpringKind, SpringSpec};
    use crate::fibers::{analytic_ellipsoid_fibers, FiberAngles};
    use crate::materials::{
        self, HolzapfelForm, HolzapfelParams, Material, NeoHookeParams, PassiveModel,
    };
    use crate::mesh::ellipsoid::{default_spec, EllipsoidSpec};
    use crate::mesh::generate_half_ellipsoid;
    use crate::mesh::shape::{tet10_n, tet_rule};
    use crate::mesh::test_meshes::box_mesh;
    use approx::assert_relative_eq;
    use std::collections::BTreeMap;

    fn myocardium() -> Material<Real> {
        Material {
            passive: PassiveModel::Holzapfel(HolzapfelParams {
                a: 59.0,
                b: 8.023,
                a_f: 18472.0,
                b_f: 16.026,
                a_s: 2481.0,
                b_s: 11.120,
                a_fs: 216.0,
                b_fs: 11.436,
                form: HolzapfelForm::StandardHo2009,
            }),
            kappa: 1.0e6,
            eta: 100.0,
            density: 1.0e3,
        }
    }

    fn rubber(eta: Real) -> Material<Real> {
        Material {
            passive: PassiveModel::NeoHooke(NeoHookeParams { mu: 1.0e4 }),
            kappa: 1.0e5,
            eta,
            density: 1.2e3,
        }
    }

    fn inactive() -> ActivationTiming<Real> {
        ActivationTiming {
            t_sys: 0.0,
            t_dias: 1.0,
            gamma: 5.0e-3,
            alpha_max: 0.0,
            alpha_min: 0.0,
            sigma0: 0.0,
            period: 0.0,
        }
    }

    fn active(sigma0: Real, t_sys: Real) -> ActivationTiming<Real> {
        ActivationTiming {
            t_sys,
            t_dias: 0.484,
            gamma: 5.0e-3,
            alpha_max: 5.0,
            alpha_min: -30.0,
            sigma0,
            period: 0.8,
        }
    }

    /// Free-floating isotropic box; the mass matrix regularizes the dynamic
    /// tangent, so no supports are needed.
    fn box_solver(eta: Real, dt: Real) -> Solver {
        let mut mesh = box_mesh([2, 2, 2], [1.0e-2, 1.0e-2, 1.0e-2]);
        let topo = mesh.finalize().unwrap();
        let mats = BTreeMap::from([(1, rubber(eta))]);
        let model =
            Model::new(mesh, topo, mats, None, &BoundaryConditionSet::default(), 3).unwrap();
        Solver::new(model, TimeIntParams::standard(dt), vec![], vec![], inactive()).unwrap()
    }

    /// Half-ellipsoid left ventricle with pericardial springs on the
    /// epicardium, an omni spring on the base ring and the given cavity
    /// pressure source.
    fn lv_model(res: Real, source: PressureSource) -> Model {
        let spec = default_spec(res);
        let (mesh, topo) = generate_half_ellipsoid(&spec).unwrap();
        let fibers = analytic_ellipsoid_fibers(&mesh, &FiberAngles::default(), 3).unwrap();
        let bcs = BoundaryConditionSet {
            springs: vec![
                SpringSpec {
                    surface: "epicardium".into(),
                    kind: SpringKind::PericardialReferenceNormal,
                    k: 2.0e5,
                    c: 5.0e3,
                },
                SpringSpec {
                    surface: "base".into(),
                    kind: SpringKind::OmniSpring,
                    k: 1.0e6,
                    c: 1.0e4,
                },
            ],
            pressures: vec![FollowerPressureSpec {
                surfaces: vec!["endocardium".into(), "cavity_closure".into()],
                source,
            }],
        };
        let mats = BTreeMap::from([(1, myocardium())]);
        Model::new(mesh, topo, mats, Some(fibers), &bcs, 3).unwrap()
    }

    fn lv_solver(res: Real, dt: Real, timing: ActivationTiming<Real>) -> Solver {
        let model = lv_model(res, PressureSource::Windkessel(0));
        Solver::new(
            model,
            TimeIntParams::standard(dt),
            vec![WindkesselParams::standard()],
            vec![AtrialPressureCurve::default_left(0.8)],
            timing,
        )
        .unwrap()
    }

    /// Smooth, inhomogeneous initial velocity field on the unit box.
    fn smooth_box_velocity(model: &Model, amp: Real) -> Vec<Real> {
        let l = 1.0e-2;
        let mut v = vec![0.0; model.n_struct_dofs()];
        for (n, x) in model.mesh.nodes.iter().enumerate() {
            v[3 * n] = amp * 0.4 * (x.z / l);
            v[3 * n + 1] = amp * 0.2 * (x.x / l);
            v[3 * n + 2] = amp * (x.x / l) * (1.0 + 0.3 * (x.y / l));
        }
        v
    }

    fn diff_norm(a: &[Real], b: &[Real]) -> Real {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<Real>()
            .sqrt()
    }

    #[test]
    fn quiescent_model_stays_at_rest() {
        let mut solver = box_solver(100.0, 1.0e-3);
        let mut state = SystemState::quiescent(&solver.model);
        for _ in 0..10 {
            let log = solver.step(&mut state).unwrap();
            assert!(log.converged);
            assert_eq!(log.iterations, 0, "rest state must need no Newton update");
            assert_eq!(log.final_struct(), 0.0);
        }
        assert!(norm2(&state.d) < 1.0e-10);
        assert_eq!(norm2(&state.d), 0.0);
        assert_eq!(norm2(&state.v), 0.0);
        assert_eq!(norm2(&state.a), 0.0);
        assert_relative_eq!(state.t, 1.0e-2, max_relative = 1e-12);
    }

    #[test]
    fn solver_requires_matching_windkessel_setup() {
        let model = lv_model(6.0e-3, PressureSource::Windkessel(0));
        let res = Solver::new(model, TimeIntParams::standard(1e-3), vec![], vec![], inactive());
        assert!(matches!(res, Err(Error::Config(_))));
    }

    #[test]
    fn checkpoint_matrix_encoding_roundtrips() {
        let m = Mat3::new(1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0);
        assert_eq!(rows_to_mat3(&mat3_to_rows(&m)), m);
        assert_eq!(mat3_to_rows(&m)[1], 2.0, "row-major layout");
    }

    fn residual_at(
        solver: &Solver,
        state: &SystemState,
        ctx: &StepCtx,
        d: &[Real],
        wk: &[WindkesselState],
        work: &mut Workspace,
    ) -> Vec<Real> {
        eval_step_residual(
            &solver.model,
            &solver.params,
            &solver.wk_params,
            &solver.cavity_of_channel,
            state,
            ctx,
            d,
            wk,
            work,
            None,
        )
        .unwrap();
        work.r.clone()
    }

    /// The dynamic-step tangent against central differences: structural
    /// block (through the Newmark velocity/acceleration chain), the pressure
    /// coupling column, the volume-rate coupling row and the 0D block.
    #[test]
    fn step_tangent_matches_finite_differences_across_all_blocks() {
        let mut solver = lv_solver(6.0e-3, 1.0e-3, active(5.0e4, 0.0));
        let n_struct = solver.model.n_struct_dofs();
        let n = solver.model.n_unknowns();
        let mut state = SystemState::quiescent(&solver.model);
        state.wk[0] = WindkesselState::diastasis_left();
        state.tau = 4.0e3;
        for (node, x) in solver.model.mesh.nodes.iter().enumerate() {
            let s = x.norm() / 1.0e-2;
            state.d[3 * node] = 1.5e-4 * (x.z / 2.0e-2) + 5.0e-5 * s;
            state.d[3 * node + 1] = -1.0e-4 * (x.x / 1.0e-2);
            state.d[3 * node + 2] = 8.0e-5 * (x.y / 1.0e-2);
            state.v[3 * node] = 5.0e-3 * (x.y / 1.0e-2);
            state.v[3 * node + 2] = -4.0e-3 * s;
        }
        solver.model.apply_ties(&mut state.d);
        solver.model.apply_ties(&mut state.v);

        let ctx = solver.step_context(&state).unwrap();
        let scales = solver.dynamic_scales();
        let mut work = Workspace::new(&solver.model);

        // A Newton iterate away from the stored state.
        let mut d = state.d.clone();
        for (node, x) in solver.model.mesh.nodes.iter().enumerate() {
            d[3 * node] += -2.0e-5 * (x.y / 1.0e-2);
            d[3 * node + 2] += 3.0e-5 * (x.x / 1.0e-2);
        }
        solver.model.apply_ties(&mut d);
        let mut wk = state.wk.clone();
        wk[0].p_v += 120.0;
        wk[0].p_p += -40.0;
        wk[0].p_d += 15.0;
        wk[0].q_p += 2.0e-6;

        eval_step_residual(
            &solver.model,
            &solver.params,
            &solver.wk_params,
            &solver.cavity_of_channel,
            &state,
            &ctx,
            &d,
            &wk,
            &mut work,
            Some((&mut solver.sys, scales)),
        )
        .unwrap();

        let compare_column = |col: usize,
                              rp: &[Real],
                              rm: &[Real],
                              h: Real,
                              solver: &Solver| {
            let col_max = (0..n)
                .map(|row| solver.sys.get(row, col).abs())
                .fold(0.0, Real::max);
            for row in 0..n {
                let fd = (rp[row] - rm[row]) / (2.0 * h);
                let an = solver.sys.get(row, col);
                let den = an.abs().max(fd.abs()).max(1.0e-6 * col_max + 1.0e-14);
                assert!(
                    (an - fd).abs() / den < 1.0e-5,
                    "col {col}, row {row}: analytic {an:.8e} vs fd {fd:.8e}"
                );
            }
        };

        // Structural columns (ties re-applied after each perturbation).
        let h = 1.0e-7;
        let mut checked = 0;
        for col in (0..n_struct).step_by(n_struct / 9 + 1) {
            if solver.model.is_pinned(col / 3) {
                continue;
            }
            let mut dp = d.clone();
            dp[col] += h;
            solver.model.apply_ties(&mut dp);
            let mut dm = d.clone();
            dm[col] -= h;
            solver.model.apply_ties(&mut dm);
            let rp = residual_at(&solver, &state, &ctx, &dp, &wk, &mut work);
            let rm = residual_at(&solver, &state, &ctx, &dm, &wk, &mut work);
            compare_column(col, &rp, &rm, h, &solver);
            checked += 1;
        }
        assert!(checked >= 7, "too few structural columns checked");

        // Windkessel columns: the pressure coupling column sits in the p_v
        // slot; pressures are perturbed well away from the valve transition.
        let off = solver.model.wk_offset(0);
        let h_wk = [0.5, 0.5, 0.5, 1.0e-8];
        for (j, &hj) in h_wk.iter().enumerate() {
            let mut arr_p = wk[0].to_array();
            arr_p[j] += hj;
            let wkp = vec![WindkesselState::from_array(arr_p)];
            let mut arr_m = wk[0].to_array();
            arr_m[j] -= hj;
            let wkm = vec![WindkesselState::from_array(arr_m)];
            let rp = residual_at(&solver, &state, &ctx, &d, &wkp, &mut work);
            let rm = residual_at(&solver, &state, &ctx, &d, &wkm, &mut work);
            compare_column(off + j, &rp, &rm, hj, &solver);
        }
    }

    #[test]
    fn newton_convergence_is_quadratic_near_the_solution() {
        let model = lv_model(6.0e-3, PressureSource::Prescribed(vec![(0.0, 0.0)]));
        let mut solver =
            Solver::new(model, TimeIntParams::standard(1e-3), vec![], vec![], inactive()).unwrap();
        let f_pre = vec![Mat3::identity(); solver.model.n_point_states()];
        let mut d = vec![0.0; solver.model.n_struct_dofs()];
        let log = solver.static_solve(&mut d, &f_pre, &[2.0e3]).unwrap();
        assert!(log.converged);
        assert!(
            log.iterations >= 3,
            "expected several updates, got {} ({:?})",
            log.iterations,
            log.r_struct
        );
        assert!(norm2(&d) > 0.0);
        // Normalized residuals e_k = r_k/r_0; quadratic convergence shows as
        // ln e_{k+1} / ln e_k ≈ 2 on the final iterations.
        let e: Vec<Real> = log.r_struct.iter().map(|r| r / log.r_struct[0]).collect();
        let m = e.len() - 1;
        let ratio = e[m].ln() / e[m - 1].ln();
        assert!(
            (1.6..=2.9).contains(&ratio),
            "final log-ratio {ratio:.2} from residuals {:?}",
            log.r_struct
        );
    }

    #[test]
    fn prestress_with_zero_target_is_the_identity() {
        let model = lv_model(6.0e-3, PressureSource::Prescribed(vec![(0.0, 0.0)]));
        let mut solver =
            Solver::new(model, TimeIntParams::standard(1e-3), vec![], vec![], inactive()).unwrap();
        let mut state = SystemState::quiescent(&solver.model);
        let report = solver.prestress(&mut state, &[0.0], 3).unwrap();
        for f in &state.f_pre {
            assert_eq!(*f, Mat3::identity());
        }
        for log in &report.increments {
            assert_eq!(log.iterations, 0, "zero load must converge immediately");
        }
        assert!(report.polish.is_empty());
        assert!(report.residual <= report.tolerance);
        assert_eq!(report.tolerance, STRUCT_TOL_ABS);
        for op in &solver.model.springs {
            let (g, u) = op.prestress_offsets();
            assert!(g.iter().all(|&x| x == 0.0));
            assert!(u.iter().all(|v| v.norm() == 0.0));
        }
        assert_eq!(norm2(&state.d), 0.0);
    }

    #[test]
    fn prestress_balances_the_imaged_geometry_at_target_pressure() {
        let target = 8.0e2;
        let model = lv_model(6.0e-3, PressureSource::Prescribed(vec![(0.0, target)]));
        let mut solver =
            Solver::new(model, TimeIntParams::standard(1e-3), vec![], vec![], inactive()).unwrap();
        let mut state = SystemState::quiescent(&solver.model);
        let report = solver.prestress(&mut state, &[target], 4).unwrap();
        assert!(
            report.residual <= report.tolerance,
            "residual {:.3e} N above tolerance {:.3e} N",
            report.residual,
            report.tolerance
        );
        // Independent recomputation of the reset-state residual.
        let zeros = vec![0.0; solver.model.n_struct_dofs()];
        let mut work = Workspace::new(&solver.model);
        let rs = eval_static_residual(
            &solver.model,
            &state.f_pre,
            &[target],
            &zeros,
            &mut work,
            None,
        )
        .unwrap();
        assert_eq!(rs, report.residual);
        // The imaged geometry now stores elastic energy with healthy
        // jacobians, while the displacement field stays reset.
        let e = solver
            .model
            .energies(&zeros, &zeros, Some(&state.f_pre))
            .unwrap();
        assert!(e.strain > 0.0);
        for f in &state.f_pre {
            assert!(f.determinant() > 0.0);
        }
        assert_eq!(norm2(&state.d), 0.0);
        assert_eq!(state.t, 0.0);
    }

    /// Thick-walled sphere under internal pressure: the prestressed state
    /// must reproduce the Lamé stress field, which is independent of the
    /// elastic constants. Modeled as a symmetric half with a stiff normal
    /// spring as the equatorial roller.
    #[test]
    fn prestressed_thick_sphere_matches_the_lame_solution() {
        let nh = || Material::<Real> {
            passive: PassiveModel::NeoHooke(NeoHookeParams { mu: 5.0e4 }),
            kappa: 2.0e5,
            eta: 0.0,
            density: 1.0e3,
        };
        let p = 50.0;
        let spec = EllipsoidSpec {
            endo_semi_axes: [7.0e-3; 3],
            epi_semi_axes: [10.0e-3; 3],
            resolution: 2.5e-3,
        };
        let (mesh, topo) = generate_half_ellipsoid(&spec).unwrap();
        let bcs = BoundaryConditionSet {
            springs: vec![
                SpringSpec {
                    surface: "base".into(),
                    kind: SpringKind::PericardialReferenceNormal,
                    k: 1.0e10,
                    c: 0.0,
                },
                SpringSpec {
                    surface: "base".into(),
                    kind: SpringKind::OmniSpring,
                    k: 1.0e2,
                    c: 0.0,
                },
            ],
            pressures: vec![FollowerPressureSpec {
                surfaces: vec!["endocardium".into(), "cavity_closure".into()],
                source: PressureSource::Prescribed(vec![(0.0, p)]),
            }],
        };
        let model =
            Model::new(mesh, topo, BTreeMap::from([(1, nh())]), None, &bcs, 3).unwrap();
        let mut solver =
            Solver::new(model, TimeIntParams::standard(1e-3), vec![], vec![], inactive()).unwrap();
        let mut state = SystemState::quiescent(&solver.model);
        let report = solver.prestress(&mut state, &[p], 2).unwrap();
        assert!(report.residual <= report.tolerance);

        let a: Real = 7.0e-3;
        let b: Real = 10.0e-3;
        let (a3, b3) = (a * a * a, b * b * b);
        let s_rr = |r: Real| p * a3 / (b3 - a3) * (1.0 - b3 / (r * r * r));
        let s_tt = |r: Real| p * a3 / (b3 - a3) * (1.0 + b3 / (2.0 * r * r * r));
        let scale = |v: Real| v.abs().max(0.2 * p);

        let rule = tet_rule(3).unwrap();
        let n_qp = rule.len();
        let mat = nh();
        let mesh = &solver.model.mesh;
        let (mut err_rr, mut err_tt) = (0.0, 0.0);
        let (mut n_rr, mut n_tt) = (0usize, 0usize);
        for (e, conn) in mesh.tets.iter().enumerate() {
            for (q, (l, _w)) in rule.iter().enumerate() {
                let nv = tet10_n(l);
                let mut x = Vec3::zeros();
                for (sh, &node) in nv.iter().zip(conn) {
                    x += mesh.nodes[node] * *sh;
                }
                let f = state.f_pre[e * n_qp + q];
                let c = f.transpose() * f;
                let st = materials::evaluate(&mat, &c, None).unwrap();
                let sigma = f * st.s * f.transpose() / f.determinant();
                let r = x.norm();
                let rhat = x / r;
                let srr = (rhat.transpose() * sigma * rhat)[(0, 0)];
                err_rr += ((srr - s_rr(r)) / scale(s_rr(r))).powi(2);
                n_rr += 1;
                // Azimuthal direction is ill-defined near the pole.
                let az = Vec3::z().cross(&rhat);
                if az.norm() > 0.3 {
                    let t1 = az / az.norm();
                    let stt = (t1.transpose() * sigma * t1)[(0, 0)];
                    err_tt += ((stt - s_tt(r)) / scale(s_tt(r))).powi(2);
                    n_tt += 1;
                }
            }
        }
        let rms_rr = (err_rr / n_rr as Real).sqrt();
        let rms_tt = (err_tt / n_tt as Real).sqrt();
        assert!(rms_rr < 0.05, "radial stress RMS error {rms_rr:.4}");
        assert!(rms_tt < 0.05, "hoop stress RMS error {rms_tt:.4}");
    }

    #[test]
    fn debug_box_stall() {
        let mut solver = box_solver(0.0, 2.0e-5);
        let mut state = SystemState::quiescent(&solver.model);
        state.v = smooth_box_velocity(&solver.model, 1.0e-2);
        solver.initialize_acceleration(&mut state).unwrap();
        for step in 0..10 {
            match solver.step(&mut state) {
                Ok(log) => println!(
                    "step {step}: iters {} halvings {} residuals {:?}",
                    log.iterations, log.halvings, log.r_struct
                ),
                Err(e) => {
                    println!("step {step} FAILED: {e}");
                    // Dissect the failing Newton iteration.
                    let ctx = solver.step_context(&state).unwrap();
                    let scales = solver.dynamic_scales();
                    let mut work = Workspace::new(&solver.model);
                    let d = state.d.clone();
                    let wk = state.wk.clone();
                    let (rs, _) = eval_step_residual(
                        &solver.model,
                        &solver.params,
                        &solver.wk_params,
                        &solver.cavity_of_channel,
                        &state,
                        &ctx,
                        &d,
                        &wk,
                        &mut work,
                        Some((&mut solver.sys, scales)),
                    )
                    .unwrap();
                    println!("r0 = {rs:.6e}");
                    let r0 = work.r.clone();
                    let mut rhs: Vec<Real> = r0.iter().map(|&r| -r).collect();
                    solver.sys.solve_in_place(&mut rhs).unwrap();
                    // Solve quality: J*delta should equal -r0.
                    let mut jd = vec![0.0; r0.len()];
                    solver.sys.matvec(&rhs, &mut jd);
                    let lin_err = jd
                        .iter()
                        .zip(&r0)
                        .map(|(a, b)| (a + b) * (a + b))
                        .sum::<Real>()
                        .sqrt();
                    println!("‖J·Δ + r0‖ = {lin_err:.3e} (vs ‖r0‖ = {:.3e})", norm2(&r0));
                    println!("‖Δ‖ = {:.3e}", norm2(&rhs));
                    for k in 0..=8 {
                        let eps = 0.5_f64.powi(k);
                        let mut dt2 = d.clone();
                        for i in 0..dt2.len() {
                            dt2[i] += eps * rhs[i];
                        }
                        solver.model.apply_ties(&mut dt2);
                        let out = eval_step_residual(
                            &solver.model,
                            &solver.params,
                            &solver.wk_params,
                            &solver.cavity_of_channel,
                            &state,
                            &ctx,
                            &dt2,
                            &wk,
                            &mut work,
                            None,
                        );
                        match out {
                            Ok((ts, _)) => println!("  eps {eps:.4}: ‖r‖ = {ts:.6e}"),
                            Err(e) => println!("  eps {eps:.4}: error {e}"),
                        }
                    }
                    panic!("diagnosed");
                }
            }
        }
    }

    #[test]
    fn undamped_vibration_conserves_energy() {
        let mut solver = box_solver(0.0, 2.0e-5);
        let mut state = SystemState::quiescent(&solver.model);
        state.v = smooth_box_velocity(&solver.model, 1.0e-2);
        solver.initialize_acceleration(&mut state).unwrap();
        let e0 = solver
            .model
            .energies(&state.d, &state.v, Some(&state.f_pre))
            .unwrap()
            .total();
        assert!(e0 > 0.0);
        let (mut lo, mut hi) = (e0, e0);
        for _ in 0..100 {
            solver.step(&mut state).unwrap();
            let e = solver
                .model
                .energies(&state.d, &state.v, Some(&state.f_pre))
                .unwrap()
                .total();
            lo = lo.min(e);
            hi = hi.max(e);
        }
        let drift = (hi - lo) / hi;
        assert!(drift < 1.0e-4, "energy drift {drift:.3e} over 100 steps");
    }

    #[test]
    fn structural_self_convergence_is_second_order() {
        let run = |dt: Real, steps: usize| -> Vec<Real> {
            let mut solver = box_solver(0.0, dt);
            let mut state = SystemState::quiescent(&solver.model);
            state.v = smooth_box_velocity(&solver.model, 1.0e-2);
            solver.initialize_acceleration(&mut state).unwrap();
            for _ in 0..steps {
                solver.step(&mut state).unwrap();
            }
            state.d
        };
        let d1 = run(8.0e-5, 10);
        let d2 = run(4.0e-5, 20);
        let d3 = run(2.0e-5, 40);
        let e12 = diff_norm(&d1, &d2);
        let e23 = diff_norm(&d2, &d3);
        assert!(e12 > 1.0e-14, "differences must sit above roundoff");
        let order = (e12 / e23).log2();
        assert!(
            order > 1.8,
            "observed order {order:.2} (errors {e12:.3e}, {e23:.3e})"
        );
    }

    #[test]
    fn coupled_self_convergence_is_at_least_first_order() {
        let run = |dt: Real, steps: usize| -> (Vec<Real>, [Real; 4]) {
            let mut solver = lv_solver(6.0e-3, dt, active(4.0e4, 2.0e-3));
            let mut state = SystemState::quiescent(&solver.model);
            state.wk[0] = WindkesselState::diastasis_left();
            solver.initialize_acceleration(&mut state).unwrap();
            for _ in 0..steps {
                solver.step(&mut state).unwrap();
            }
            (state.d, state.wk[0].to_array())
        };
        let (d1, w1) = run(2.0e-3, 8);
        let (d2, w2) = run(1.0e-3, 16);
        let (d3, w3) = run(5.0e-4, 32);
        let ed12 = diff_norm(&d1, &d2);
        let ed23 = diff_norm(&d2, &d3);
        let ew12 = diff_norm(&w1, &w2);
        let ew23 = diff_norm(&w2, &w3);
        let order_d = (ed12 / ed23).log2();
        let order_w = (ew12 / ew23).log2();
        assert!(
            order_d > 0.75 && order_d < 3.0,
            "structural order {order_d:.2} (errors {ed12:.3e}, {ed23:.3e})"
        );
        assert!(
            order_w > 0.75 && order_w < 3.0,
            "windkessel order {order_w:.2} (errors {ew12:.3e}, {ew23:.3e})"
        );
    }

    #[test]
    fn checkpoint_restart_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.ckpt.json");
        let make = || lv_solver(6.0e-3, 1.0e-3, active(3.0e4, 1.0e-3));

        let mut s1 = make();
        let mut st1 = SystemState::quiescent(&s1.model);
        st1.wk[0] = WindkesselState::diastasis_left();
        let p_dias = st1.wk[0].p_v;
        s1.prestress(&mut st1, &[p_dias], 2).unwrap();
        s1.initialize_acceleration(&mut st1).unwrap();
        for _ in 0..3 {
            s1.step(&mut st1).unwrap();
        }
        save_checkpoint(&s1.model, &st1, &path).unwrap();
        for _ in 0..2 {
            s1.step(&mut st1).unwrap();
        }

        let mut s2 = make();
        let mut st2 = load_checkpoint(&mut s2.model, &path).unwrap();
        for _ in 0..2 {
            s2.step(&mut st2).unwrap();
        }

        assert_eq!(st1.t, st2.t);
        assert_eq!(st1.tau, st2.tau);
        assert_eq!(st1.d, st2.d);
        assert_eq!(st1.v, st2.v);
        assert_eq!(st1.a, st2.a);
        assert_eq!(st1.wk[0].to_array(), st2.wk[0].to_array());
        for (f1, f2) in st1.f_pre.iter().zip(&st2.f_pre) {
            assert_eq!(f1, f2);
        }

        // Unsupported version is rejected before touching the model.
        let text = std::fs::read_to_string(&path).unwrap();
        let bad = text.replace("\"version\":1", "\"version\":99");
        assert_ne!(text, bad);
        let bad_path = dir.path().join("bad.ckpt.json");
        std::fs::write(&bad_path, bad).unwrap();
        match load_checkpoint(&mut s2.model, &bad_path) {
            Err(Error::Checkpoint(msg)) => assert!(msg.contains("version")),
            other => panic!("expected a version error, got {other:?}"),
        }

        // A checkpoint from a different discretization is rejected.
        let mut bs = box_solver(0.0, 1.0e-3);
        match load_checkpoint(&mut bs.model, &path) {
            Err(Error::Checkpoint(_)) => {}
            other => panic!("expected a dimension error, got {other:?}"),
        }
    }

    /// End-to-end heartbeat on a coarse ventricle: prestress to diastasis,
    /// activate, and check that the ventricular pressure rises past the
    /// arterial pressure and ejects volume through the windkessel, with
    /// every accepted step inside its Newton tolerance.
    #[test]
    fn activated_ventricle_ejects_against_the_windkessel() {
        let mut solver = lv_solver(6.0e-3, 2.0e-3, active(6.0e4, 4.0e-3));
        let mut state = SystemState::quiescent(&solver.model);
        state.wk[0] = WindkesselState::diastasis_left();
        let p_dias = state.wk[0].p_v;
        solver.prestress(&mut state, &[p_dias], 3).unwrap();
        solver.initialize_acceleration(&mut state).unwrap();
        let result = solver.run_transient(&mut state, 50, |_, _| {}).unwrap();
        assert_eq!(result.samples.len(), 51);
        assert_eq!(result.convergence.len(), 50);
        for rec in &result.convergence {
            assert!(rec.iterations <= MAX_NEWTON_ITERATIONS);
            assert!(
                rec.r_struct_final <= rec.tol_struct * (1.0 + 1e-12),
                "step {} left the structural residual above tolerance",
                rec.step
            );
            assert!(
                rec.r_wk_final <= rec.tol_wk * (1.0 + 1e-12),
                "step {} left the 0D residual above tolerance",
                rec.step
            );
        }
        let v0 = result.samples[0].volumes[0];
        let v_min = result
            .samples
            .iter()
            .map(|s| s.volumes[0])
            .fold(Real::INFINITY, Real::min);
        let p_peak = result
            .samples
            .iter()
            .map(|s| s.wk[0].p_v)
            .fold(0.0, Real::max);
        let p_p0 = WindkesselState::diastasis_left().p_p;
        assert!(
            p_peak > p_p0,
            "peak p_v {p_peak:.0} Pa never reached the arterial {p_p0:.0} Pa"
        );
        assert!(
            v_min < 0.97 * v0,
            "no ejection: volume {v0:.4e} m³ only fell to {v_min:.4e} m³"
        );
        assert!(state.tau > 0.0);
    }
}
