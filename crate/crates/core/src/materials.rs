//! Hyperelastic constitutive models for myocardium and surrounding tissue.
//!
//! All models are formulated in the total-Lagrangian setting: input is the
//! right Cauchy-Green tensor `C = F^T F`, output is the second Piola-
//! Kirchhoff stress `S = 2 dpsi/dC` and the material tangent
//! `D = dS/dE` (with `E = (C - I)/2`), returned in Voigt form.
//!
//! The isotropic parts use the modified (isochoric) invariants
//! `I1_bar = J^(-2/3) I1` and `I2_bar = J^(-4/3) I2`; fiber terms use the
//! unmodified invariants `I4f = f0 . C f0`, `I4s = s0 . C s0`,
//! `I8fs = f0 . C s0`. Near-incompressibility is enforced by the penalty
//! `psi_vol = kappa/2 (1 - J)^2`, so the reference state is exactly
//! stress-free for the standard model forms.
//!
//! The exponential fiber-reinforced model comes in two switchable forms:
//!
//! * [`HolzapfelForm::StandardHo2009`] (default): fiber exponents
//!   `exp(b <I4 - 1>^2) - 1` with a tension-only switch; stress vanishes
//!   identically at `C = I`.
//! * [`HolzapfelForm::AsPrinted`]: fiber exponents `exp(b (I4 - 3)) - 1`
//!   as printed in some parameter tables; this variant carries a nonzero
//!   reference stress `a_f e^(-2 b_f) f0 x f0 + a_s e^(-2 b_s) s0 x s0`
//!   and is provided for reproducing results quoted against that form.
//!
//! Everything here is pointwise and generic over the scalar type.

use nalgebra::{Matrix3, SMatrix, Vector3};

use crate::scalar::Scalar;

/// Voigt index pairs: 11, 22, 33, 12, 23, 13.
pub const VOIGT: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (0, 1), (1, 2), (0, 2)];

/// 6x6 Voigt matrix.
pub type Voigt6<T> = SMatrix<T, 6, 6>;

/// Symmetric tensor to Voigt stress-like vector (no shear doubling).
pub fn sym_to_voigt<T: Scalar>(a: &Matrix3<T>) -> SMatrix<T, 6, 1> {
    SMatrix::<T, 6, 1>::from_fn(|k, _| a[VOIGT[k]])
}

/// Outer product `A (x) B` of symmetric tensors as a Voigt 6x6 matrix.
pub fn dyad_voigt<T: Scalar>(a: &Matrix3<T>, b: &Matrix3<T>) -> Voigt6<T> {
    Voigt6::from_fn(|m, n| a[VOIGT[m]] * b[VOIGT[n]])
}

/// Symmetrized product `(A (.) A)_ijkl = (A_ik A_jl + A_il A_jk) / 2` in
/// Voigt form; applied to `A = C^-1` this is `-d(C^-1)/dC`.
pub fn sym4_voigt<T: Scalar>(a: &Matrix3<T>) -> Voigt6<T> {
    let half = T::of(0.5);
    Voigt6::from_fn(|m, n| {
        let (i, j) = VOIGT[m];
        let (k, l) = VOIGT[n];
        half * (a[(i, k)] * a[(j, l)] + a[(i, l)] * a[(j, k)])
    })
}

/// Exponential fiber-term convention; see the module docs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HolzapfelForm {
    #[default]
    StandardHo2009,
    AsPrinted,
}

/// Orthotropic exponential model parameters (Pa for `a*`, dimensionless
/// `b*`).
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct HolzapfelParams<T> {
    pub a: T,
    pub b: T,
    pub a_f: T,
    pub b_f: T,
    pub a_s: T,
    pub b_s: T,
    pub a_fs: T,
    pub b_fs: T,
    #[serde(default)]
    pub form: HolzapfelForm,
}

/// Two-parameter Mooney-Rivlin solid (Pa).
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct MooneyRivlinParams<T> {
    pub c1: T,
    pub c2: T,
}

/// One-parameter neo-Hookean solid (Pa).
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct NeoHookeParams<T> {
    pub mu: T,
}

/// Passive (hyperelastic) part of a material.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum PassiveModel<T> {
    Holzapfel(HolzapfelParams<T>),
    MooneyRivlin(MooneyRivlinParams<T>),
    NeoHooke(NeoHookeParams<T>),
}

impl<T> PassiveModel<T> {
    /// Does this model require a fiber triad?
    pub fn needs_fibers(&self) -> bool {
        matches!(self, PassiveModel::Holzapfel(_))
    }
}

/// Complete pointwise material: passive model, volumetric penalty, viscous
/// pseudo-potential, density.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct Material<T> {
    pub passive: PassiveModel<T>,
    /// Bulk penalty `kappa` (Pa).
    pub kappa: T,
    /// Viscous modulus `eta` (Pa s); `S_visc = eta dE/dt`.
    pub eta: T,
    /// Reference density (kg/m^3).
    pub density: T,
}

/// Stress evaluation output: energy density, PK2 stress, material tangent.
#[derive(Debug, Clone)]
pub struct StressState<T: Scalar> {
    pub psi: T,
    pub s: Matrix3<T>,
    pub d: Voigt6<T>,
}

/// Kinematic quantities shared by all terms.
struct Kin<T: Scalar> {
    c: Matrix3<T>,
    cinv: Matrix3<T>,
    i1: T,
    i2: T,
    j: T,
}

impl<T: Scalar> Kin<T> {
    fn new(c: &Matrix3<T>) -> Option<Self> {
        let det = c.determinant();
        if det <= T::zero() {
            return None;
        }
        let cinv = c.try_inverse()?;
        let i1 = c.trace();
        let c2 = c * c;
        let half = T::of(0.5);
        let i2 = half * (i1 * i1 - c2.trace());
        Some(Kin {
            c: *c,
            cinv,
            i1,
            i2,
            j: det.sqrt(),
        })
    }
}

/// Isochoric `I1_bar` term: `psi = f(I1_bar)` given `f'`, `f''`.
fn i1_bar_term<T: Scalar>(k: &Kin<T>, f1: T, f2: T, s: &mut Matrix3<T>, d: &mut Voigt6<T>) {
    let third = T::of(1.0 / 3.0);
    let t = k.j.powf(-T::of(2.0 / 3.0));
    let ident = Matrix3::identity();
    let a1 = (ident - k.cinv * (k.i1 * third)) * t;
    *s += a1 * (T::of(2.0) * f1);

    let four = T::of(4.0);
    *d += dyad_voigt(&a1, &a1) * (four * f2);
    let da1 = dyad_voigt(&ident, &k.cinv) + dyad_voigt(&k.cinv, &ident);
    *d -= da1 * (four * f1 * t * third);
    *d += dyad_voigt(&k.cinv, &k.cinv) * (four * f1 * t * k.i1 * third * third);
    *d += sym4_voigt(&k.cinv) * (four * f1 * t * k.i1 * third);
}

/// Isochoric `I2_bar` term: `psi = g(I2_bar)` given `g'`, `g''`.
fn i2_bar_term<T: Scalar>(k: &Kin<T>, g1: T, g2: T, s: &mut Matrix3<T>, d: &mut Voigt6<T>) {
    let third = T::of(1.0 / 3.0);
    let two_thirds = T::of(2.0 / 3.0);
    let ss = k.j.powf(-T::of(4.0 / 3.0));
    let ident = Matrix3::identity();
    let di2 = ident * k.i1 - k.c;
    let a2 = (di2 - k.cinv * (T::of(2.0) * k.i2 * third)) * ss;
    *s += a2 * (T::of(2.0) * g1);

    let four = T::of(4.0);
    *d += dyad_voigt(&a2, &a2) * (four * g2);
    // d(A2)/dC, term by term.
    *d -= dyad_voigt(&a2, &k.cinv) * (four * g1 * two_thirds);
    *d += dyad_voigt(&ident, &ident) * (four * g1 * ss);
    *d -= sym4_voigt(&ident) * (four * g1 * ss);
    *d -= dyad_voigt(&k.cinv, &di2) * (four * g1 * ss * two_thirds);
    *d += sym4_voigt(&k.cinv) * (four * g1 * ss * two_thirds * k.i2);
}

/// Fiber invariant term `psi = h(I4)` with structure tensor `M = a0 (x) a0`:
/// `S += 2 h' M`, `D += 4 h'' M (x) M`.
fn fiber_term<T: Scalar>(m: &Matrix3<T>, h1: T, h2: T, s: &mut Matrix3<T>, d: &mut Voigt6<T>) {
    *s += *m * (T::of(2.0) * h1);
    *d += dyad_voigt(m, m) * (T::of(4.0) * h2);
}

/// Volumetric penalty `kappa/2 (1 - J)^2`.
fn vol_term<T: Scalar>(k: &Kin<T>, kappa: T, s: &mut Matrix3<T>, d: &mut Voigt6<T>) {
    let one = T::one();
    let two = T::of(2.0);
    *s += k.cinv * (kappa * k.j * (k.j - one));
    *d += dyad_voigt(&k.cinv, &k.cinv) * (kappa * k.j * (two * k.j - one));
    *d -= sym4_voigt(&k.cinv) * (two * kappa * k.j * (k.j - one));
}

/// Evaluates passive stress and tangent at `C` with optional fibers
/// `(f0, s0)`. Fails if `det C <= 0` or if an anisotropic model lacks
/// fibers.
pub fn evaluate<T: Scalar>(
    mat: &Material<T>,
    c: &Matrix3<T>,
    fibers: Option<(&Vector3<T>, &Vector3<T>)>,
) -> Result<StressState<T>, MaterialError> {
    let k = Kin::new(c).ok_or(MaterialError::NonPositiveJacobian)?;
    let mut psi = T::zero();
    let mut s = Matrix3::zeros();
    let mut d = Voigt6::zeros();
    let one = T::one();
    let half = T::of(0.5);
    let two = T::of(2.0);
    let three = T::of(3.0);

    let i1b = k.j.powf(-T::of(2.0 / 3.0)) * k.i1;
    match &mat.passive {
        PassiveModel::NeoHooke(p) => {
            psi += p.mu * half * (i1b - three);
            i1_bar_term(&k, p.mu * half, T::zero(), &mut s, &mut d);
        }
        PassiveModel::MooneyRivlin(p) => {
            let i2b = k.j.powf(-T::of(4.0 / 3.0)) * k.i2;
            psi += p.c1 * (i1b - three) + p.c2 * (i2b - three);
            i1_bar_term(&k, p.c1, T::zero(), &mut s, &mut d);
            i2_bar_term(&k, p.c2, T::zero(), &mut s, &mut d);
        }
        PassiveModel::Holzapfel(p) => {
            let (f0, s0) = fibers.ok_or(MaterialError::MissingFibers)?;
            // Isotropic exponential part.
            let e_iso = (p.b * (i1b - three)).exp();
            psi += p.a / (two * p.b) * (e_iso - one);
            i1_bar_term(&k, p.a * half * e_iso, p.a * p.b * half * e_iso, &mut s, &mut d);

            let mf = f0 * f0.transpose();
            let ms = s0 * s0.transpose();
            let i4f = (f0.transpose() * k.c * f0)[(0, 0)];
            let i4s = (s0.transpose() * k.c * s0)[(0, 0)];
            match p.form {
                HolzapfelForm::StandardHo2009 => {
                    for (m, i4, a, b) in [(&mf, i4f, p.a_f, p.b_f), (&ms, i4s, p.a_s, p.b_s)] {
                        let q = i4 - one;
                        if q > T::zero() {
                            let e = (b * q * q).exp();
                            psi += a / (two * b) * (e - one);
                            let h1 = a * q * e;
                            let h2 = a * e * (one + two * b * q * q);
                            fiber_term(m, h1, h2, &mut s, &mut d);
                        }
                    }
                }
                HolzapfelForm::AsPrinted => {
                    for (m, i4, a, b) in [(&mf, i4f, p.a_f, p.b_f), (&ms, i4s, p.a_s, p.b_s)] {
                        let e = (b * (i4 - three)).exp();
                        psi += a / (two * b) * (e - one);
                        let h1 = a * half * e;
                        let h2 = a * b * half * e;
                        fiber_term(m, h1, h2, &mut s, &mut d);
                    }
                }
            }
            // Shear coupling term, shared by both forms.
            let i8 = (f0.transpose() * k.c * s0)[(0, 0)];
            let mfs = (f0 * s0.transpose() + s0 * f0.transpose()) * half;
            let e8 = (p.b_fs * i8 * i8).exp();
            psi += p.a_fs / (two * p.b_fs) * (e8 - one);
            let g1 = p.a_fs * i8 * e8;
            let g2 = p.a_fs * e8 * (one + two * p.b_fs * i8 * i8);
            fiber_term(&mfs, g1, g2, &mut s, &mut d);
        }
    }

    // Volumetric penalty applies to every model.
    let jm = one - k.j;
    psi += mat.kappa * half * jm * jm;
    vol_term(&k, mat.kappa, &mut s, &mut d);

    Ok(StressState { psi, s, d })
}

/// Viscous PK2 contribution `S_visc = eta dE/dt`; the corresponding tangent
/// block is `eta` times the symmetric fourth-order identity (in Voigt form,
/// via [`sym4_voigt`] of the unit tensor), scaled by the time-integration
/// rate factor in the assembly.
pub fn viscous_pk2<T: Scalar>(eta: T, e_dot: &Matrix3<T>) -> Matrix3<T> {
    *e_dot * eta
}

/// Pointwise material evaluation failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum MaterialError {
    #[error("non-positive Jacobian (det C <= 0)")]
    NonPositiveJacobian,
    #[error("anisotropic material evaluated without fiber directions")]
    MissingFibers,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{Matrix3, Vector3};

    type M3 = Matrix3<f64>;
    type V3 = Vector3<f64>;

    pub use crate::test_util::Lcg;

    /// Random deformation state with guaranteed positive Jacobian.
    pub fn random_c(rng: &mut Lcg, amp: f64) -> M3 {
        loop {
            let f = M3::identity()
                + M3::from_fn(|_, _| rng.sym_range(-amp, amp));
            if f.determinant() > 0.3 {
                return f.transpose() * f;
            }
        }
    }

    fn random_unit(rng: &mut Lcg) -> V3 {
        loop {
            let v = V3::new(
                rng.sym_range(-1.0, 1.0),
                rng.sym_range(-1.0, 1.0),
                rng.sym_range(-1.0, 1.0),
            );
            if v.norm() > 0.1 {
                return v.normalize();
            }
        }
    }

    /// Orthonormal fiber/sheet pair.
    pub fn random_fibers(rng: &mut Lcg) -> (V3, V3) {
        let f = random_unit(rng);
        loop {
            let h = random_unit(rng);
            let s = h - f * f.dot(&h);
            if s.norm() > 0.1 {
                return (f, s.normalize());
            }
        }
    }

    pub fn holzapfel_myocardium(form: HolzapfelForm) -> Material<f64> {
        Material {
            passive: PassiveModel::Holzapfel(HolzapfelParams {
                a: 59.0,
                b: 8.023,
                a_f: 18_472.0,
                b_f: 16.026,
                a_s: 2_481.0,
                b_s: 11.120,
                a_fs: 216.0,
                b_fs: 11.436,
                form,
            }),
            kappa: 1.0e6,
            eta: 100.0,
            density: 1.0e3,
        }
    }

    fn mooney() -> Material<f64> {
        Material {
            passive: PassiveModel::MooneyRivlin(MooneyRivlinParams { c1: 1.0e4, c2: 40.0 }),
            kappa: 1.0e7,
            eta: 10.0,
            density: 1.0e3,
        }
    }

    fn neohooke() -> Material<f64> {
        Material {
            passive: PassiveModel::NeoHooke(NeoHookeParams { mu: 1.0e3 }),
            kappa: 1.0e5,
            eta: 0.0,
            density: 1.0e3,
        }
    }

    /// Checks `S = 2 dpsi/dC` and `D = dS/dE` against central differences.
    fn fd_check(mat: &Material<f64>, fibers: Option<(&V3, &V3)>, c: &M3, tol: f64) {
        let st = evaluate(mat, c, fibers).unwrap();
        // Symmetric random-ish direction built from the state itself for
        // determinism.
        let dirs = [
            M3::identity(),
            M3::new(0.3, 0.1, -0.2, 0.1, -0.4, 0.25, -0.2, 0.25, 0.15),
            M3::new(-0.1, 0.05, 0.3, 0.05, 0.2, -0.15, 0.3, -0.15, 0.4),
        ];
        let h = 1e-5 * c.norm();
        for dir in dirs {
            let cp = c + dir * h;
            let cm = c - dir * h;
            let sp = evaluate(mat, &cp, fibers).unwrap();
            let sm = evaluate(mat, &cm, fibers).unwrap();
            // Energy consistency: dpsi = (S : dC) / 2.
            let fd_psi = (sp.psi - sm.psi) / (2.0 * h);
            let an_psi = 0.5 * st.s.dot(&dir);
            let scale = an_psi.abs().max(st.s.norm() * dir.norm()).max(1e-8);
            assert!(
                (fd_psi - an_psi).abs() / scale < tol,
                "dpsi mismatch: fd {fd_psi:.6e} vs {an_psi:.6e}"
            );
            // Tangent consistency: dS = D : dE (engineering Voigt).
            let fd_s = (sp.s - sm.s) / (2.0 * h);
            let de = crate::materials::sym_to_voigt(&dir);
            let mut de_eng = de;
            for k in 3..6 {
                de_eng[k] *= 2.0;
            }
            // dC = 2 dE, so the direction `dir` in C corresponds to
            // dE = dir / 2.
            let ds = st.d * (de_eng * 0.5);
            for (k, &(i, j)) in VOIGT.iter().enumerate() {
                let an = ds[k];
                let fd = fd_s[(i, j)];
                let sc = st.d.norm() * 0.5 * de_eng.norm();
                assert!(
                    (an - fd).abs() / sc.max(1e-8) < tol,
                    "tangent mismatch at {k}: fd {fd:.6e} vs {an:.6e}"
                );
            }
        }
    }

    #[test]
    fn stress_and_tangent_match_finite_differences_all_models() {
        let mut rng = Lcg::new(42);
        for trial in 0..30 {
            let c = random_c(&mut rng, 0.25);
            let (f0, s0) = random_fibers(&mut rng);
            fd_check(&neohooke(), None, &c, 1e-6);
            fd_check(&mooney(), None, &c, 1e-6);
            fd_check(
                &holzapfel_myocardium(HolzapfelForm::StandardHo2009),
                Some((&f0, &s0)),
                &c,
                2e-6,
            );
            fd_check(
                &holzapfel_myocardium(HolzapfelForm::AsPrinted),
                Some((&f0, &s0)),
                &c,
                2e-6,
            );
            let _ = trial;
        }
    }

    #[test]
    fn standard_form_reference_state_is_stress_free() {
        // With exactly orthogonal fibers every term cancels exactly.
        let f0 = V3::new(1.0, 0.0, 0.0);
        let s0 = V3::new(0.0, 1.0, 0.0);
        for mat in [
            holzapfel_myocardium(HolzapfelForm::StandardHo2009),
            mooney(),
            neohooke(),
        ] {
            let st = evaluate(&mat, &M3::identity(), Some((&f0, &s0))).unwrap();
            assert!(
                st.s.norm() == 0.0,
                "reference stress {:.3e} should vanish exactly",
                st.s.norm()
            );
            assert_eq!(st.psi, 0.0);
        }
        // Numerically orthonormalized fibers leave only rounding-level
        // residue through the I8 coupling, far below 1e-9 Pa.
        let mut rng = Lcg::new(7);
        for _ in 0..20 {
            let (f0, s0) = random_fibers(&mut rng);
            let st = evaluate(
                &holzapfel_myocardium(HolzapfelForm::StandardHo2009),
                &M3::identity(),
                Some((&f0, &s0)),
            )
            .unwrap();
            assert!(st.s.norm() < 1e-9, "reference stress {:.3e} Pa", st.s.norm());
            assert!(st.psi.abs() < 1e-20);
        }
    }

    #[test]
    fn as_printed_reference_stress_has_documented_value() {
        let f0 = V3::new(1.0, 0.0, 0.0);
        let s0 = V3::new(0.0, 1.0, 0.0);
        let mat = holzapfel_myocardium(HolzapfelForm::AsPrinted);
        let st = evaluate(&mat, &M3::identity(), Some((&f0, &s0))).unwrap();
        let (a_f, b_f, a_s, b_s) = (18_472.0, 16.026, 2_481.0, 11.120);
        let expect = a_f * (-2.0 * b_f as f64).exp() * f0 * f0.transpose()
            + a_s * (-2.0 * b_s as f64).exp() * s0 * s0.transpose();
        assert_relative_eq!((st.s - expect).norm(), 0.0, epsilon = 1e-12);
        assert!(st.s.norm() > 0.0);
    }

    #[test]
    fn frame_indifference_under_material_rotation() {
        // psi(Q^T C Q) with co-rotated fibers equals psi(C).
        let mut rng = Lcg::new(99);
        for _ in 0..10 {
            let c = random_c(&mut rng, 0.3);
            let (f0, s0) = random_fibers(&mut rng);
            let axis = random_fibers(&mut rng).0;
            let q = nalgebra::Rotation3::from_axis_angle(
                &nalgebra::Unit::new_normalize(axis),
                rng.sym_range(-3.0, 3.0),
            )
            .into_inner();
            let cq = q.transpose() * c * q;
            let fq = q.transpose() * f0;
            let sq = q.transpose() * s0;
            for mat in [
                holzapfel_myocardium(HolzapfelForm::StandardHo2009),
                mooney(),
            ] {
                let p0 = evaluate(&mat, &c, Some((&f0, &s0))).unwrap().psi;
                let p1 = evaluate(&mat, &cq, Some((&fq, &sq))).unwrap().psi;
                assert_relative_eq!(p0, p1, max_relative = 1e-11);
            }
        }
    }

    #[test]
    fn tangent_is_major_symmetric() {
        let mut rng = Lcg::new(3);
        for _ in 0..10 {
            let c = random_c(&mut rng, 0.3);
            let (f0, s0) = random_fibers(&mut rng);
            for mat in [
                holzapfel_myocardium(HolzapfelForm::StandardHo2009),
                mooney(),
                neohooke(),
            ] {
                let st = evaluate(&mat, &c, Some((&f0, &s0))).unwrap();
                assert!(st.s.transpose() == st.s, "S must be symmetric");
                let asym = (st.d - st.d.transpose()).norm() / st.d.norm().max(1.0);
                assert!(asym < 1e-13, "tangent asymmetry {asym:.3e}");
            }
        }
    }

    #[test]
    fn anisotropic_without_fibers_is_an_error() {
        let mat = holzapfel_myocardium(HolzapfelForm::StandardHo2009);
        let err = evaluate(&mat, &M3::identity(), None);
        assert_eq!(err.unwrap_err(), MaterialError::MissingFibers);
    }

    #[test]
    fn non_positive_jacobian_is_an_error() {
        let mat = neohooke();
        let c = M3::from_diagonal(&V3::new(1.0, 1.0, -0.5));
        assert_eq!(
            evaluate(&mat, &c, None).unwrap_err(),
            MaterialError::NonPositiveJacobian
        );
    }

    #[test]
    fn viscous_stress_is_linear_in_strain_rate() {
        let edot = M3::new(0.1, 0.02, 0.0, 0.02, -0.05, 0.01, 0.0, 0.01, 0.03);
        let s = viscous_pk2(100.0, &edot);
        assert_relative_eq!((s - edot * 100.0).norm(), 0.0);
    }

    #[test]
    fn generic_over_f32() {
        let mat = Material::<f32> {
            passive: PassiveModel::NeoHooke(NeoHookeParams { mu: 1.0e3 }),
            kappa: 1.0e5,
            eta: 0.0,
            density: 1.0e3,
        };
        let c = Matrix3::<f32>::identity() * 1.1;
        let st = evaluate(&mat, &c, None).unwrap();
        assert!(st.s.norm() > 0.0);
    }
}
