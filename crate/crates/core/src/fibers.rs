//! Rule-based myocardial fiber architecture.
//!
//! The construction follows the harmonic-lifting recipe. A scalar transmural
//! coordinate solves a Laplace problem with value 0 on the endocardium and 1
//! on the epicardium; the direction of its gradient is the sheet-normal `n0`,
//! the local circumferential direction is the normalized cross product of the
//! long axis with `n0`, and the fiber direction `f0` rotates the
//! circumferential direction about `n0` by the helix angle, interpolated
//! linearly in the transmural coordinate between its endocardial and
//! epicardial values. The sheet direction closes the triad as `s0 = n0 x f0`.
//!
//! Meshes produced by [`crate::mesh::generate_half_ellipsoid`] carry their
//! wall parameterization, so the transmural coordinate is also available in
//! closed form; [`analytic_ellipsoid_fibers`] uses it to build the same
//! triads without a linear solve. Note that the two coordinates agree on the
//! wall surfaces but differ in between: the harmonic profile decays roughly
//! like 1/r across a curved wall while the analytic coordinate is linear in
//! wall depth, so the midwall angle prescriptions differ by a few degrees on
//! thick-walled geometries.

use std::collections::BTreeMap;

use crate::linsolve::SparseSystem;
use crate::mesh::shape::{tet10_dn, tet10_n, tet_rule};
use crate::mesh::{EllipsoidSpec, Mesh};
use crate::{Error, Mat3, Real, Result, Vec3};

/// Helix-angle prescription and frame configuration.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct FiberAngles {
    /// Helix angle on the endocardium [deg].
    pub alpha_endo_deg: Real,
    /// Helix angle on the epicardium [deg].
    pub alpha_epi_deg: Real,
    /// Long-axis direction pointing from apex to base; need not be unit
    /// length. For the generated half ellipsoid this is `+z`.
    pub long_axis: [Real; 3],
}

impl Default for FiberAngles {
    fn default() -> Self {
        Self {
            alpha_endo_deg: 60.0,
            alpha_epi_deg: -60.0,
            long_axis: [0.0, 0.0, 1.0],
        }
    }
}

impl FiberAngles {
    /// Angles for a helix magnitude: `(+deg, -deg)` endo/epi about the z axis.
    pub fn symmetric(deg: Real) -> Self {
        Self {
            alpha_endo_deg: deg,
            alpha_epi_deg: -deg,
            ..Self::default()
        }
    }

    /// Helix angle [deg] at transmural coordinate `t` (0 endo, 1 epi).
    pub fn alpha_deg(&self, t: Real) -> Real {
        self.alpha_endo_deg + (self.alpha_epi_deg - self.alpha_endo_deg) * t
    }

    fn long_axis_unit(&self) -> Result<Vec3> {
        let ell = Vec3::from(self.long_axis);
        let n = ell.norm();
        if !n.is_finite() || n < 1e-12 {
            return Err(Error::Fibers(format!(
                "long axis {:?} must be a nonzero finite vector",
                self.long_axis
            )));
        }
        Ok(ell / n)
    }

    /// Check that the prescription is usable.
    pub fn validate(&self) -> Result<()> {
        if !self.alpha_endo_deg.is_finite() || !self.alpha_epi_deg.is_finite() {
            return Err(Error::Fibers("helix angles must be finite".into()));
        }
        self.long_axis_unit().map(|_| ())
    }
}

/// Per-quadrature-point orthonormal fiber triads.
///
/// Storage is flat: element `e`, quadrature point `q` live at index
/// `e * n_qp + q`. The triad is right-handed with `f0 x s0 = n0`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiberField {
    /// Quadrature points per element.
    pub n_qp: usize,
    /// Fiber direction.
    pub f0: Vec<Vec3>,
    /// Sheet direction.
    pub s0: Vec<Vec3>,
    /// Sheet-normal (transmural) direction.
    pub n0: Vec<Vec3>,
    /// Helix angle prescribed at each point [deg].
    pub helix_deg: Vec<Real>,
    /// Transmural coordinate at each point (0 endo, 1 epi).
    pub transmural: Vec<Real>,
}

impl FiberField {
    /// Flat index of element `e`, quadrature point `q`.
    pub fn idx(&self, e: usize, q: usize) -> usize {
        e * self.n_qp + q
    }

    /// Triad `(f0, s0, n0)` at element `e`, quadrature point `q`.
    pub fn triad(&self, e: usize, q: usize) -> (Vec3, Vec3, Vec3) {
        let i = self.idx(e, q);
        (self.f0[i], self.s0[i], self.n0[i])
    }

    /// Total number of stored points.
    pub fn len(&self) -> usize {
        self.f0.len()
    }

    /// Whether the field is empty.
    pub fn is_empty(&self) -> bool {
        self.f0.is_empty()
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        Self((0..n).collect())
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.0[i] != i {
            self.0[i] = self.0[self.0[i]];
            i = self.0[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra] = rb;
        }
    }
}

/// Solve the Laplace problem on the mesh with Dirichlet data prescribed on
/// the named surfaces and natural (zero-flux) conditions elsewhere.
///
/// Returns one value per mesh node. Nodes that belong to no tetrahedron
/// (e.g. cavity-closure lid nodes) carry no equation and are reported as
/// their Dirichlet value if they have one, otherwise zero.
///
/// Fails if two surfaces prescribe different values at a shared node, or if a
/// connected component of the volume mesh carries no Dirichlet data at all
/// (the problem would be singular there).
pub fn harmonic_lift(mesh: &Mesh, dirichlet: &[(&str, Real)]) -> Result<Vec<Real>> {
    let n = mesh.nodes.len();
    let mut fixed: Vec<Option<Real>> = vec![None; n];
    for &(name, value) in dirichlet {
        let surf = mesh.surface(name)?;
        for tri in &surf.tris {
            for &node in tri {
                match fixed[node] {
                    Some(v) if v != value => {
                        return Err(Error::Fibers(format!(
                            "node {node} receives conflicting Dirichlet values {v} and {value}"
                        )))
                    }
                    _ => fixed[node] = Some(value),
                }
            }
        }
    }

    // Every element-connected component must see some boundary data.
    let mut uf = UnionFind::new(n);
    let mut in_volume = vec![false; n];
    for tet in &mesh.tets {
        for &a in tet {
            in_volume[a] = true;
            uf.union(tet[0], a);
        }
    }
    let mut component_ok: BTreeMap<usize, bool> = BTreeMap::new();
    for node in 0..n {
        if in_volume[node] {
            let root = uf.find(node);
            *component_ok.entry(root).or_insert(false) |= fixed[node].is_some();
        }
    }
    if let Some((&root, _)) = component_ok.iter().find(|&(_, &ok)| !ok) {
        return Err(Error::Fibers(format!(
            "connected component containing node {root} has no Dirichlet data; \
             the Laplace problem is singular"
        )));
    }

    let mut dof: Vec<Option<usize>> = vec![None; n];
    let mut n_free = 0usize;
    for node in 0..n {
        if in_volume[node] && fixed[node].is_none() {
            dof[node] = Some(n_free);
            n_free += 1;
        }
    }

    let mut entries = Vec::new();
    for tet in &mesh.tets {
        for &a in tet {
            let Some(row) = dof[a] else { continue };
            for &b in tet {
                if let Some(col) = dof[b] {
                    entries.push((row, col));
                }
            }
        }
    }
    let mut sys = SparseSystem::new(n_free, entries)?;
    let mut rhs = vec![0.0; n_free];

    let rule = tet_rule(3)?;
    for (e, tet) in mesh.tets.iter().enumerate() {
        for (q, &(l, w)) in rule.iter().enumerate() {
            let geom = QpGeometry::at(mesh, tet, &l).map_err(|det_j| Error::ElementInverted {
                element: e,
                qp: q,
                det_j,
            })?;
            let scale = w * geom.det_j;
            for a in 0..10 {
                let Some(row) = dof[tet[a]] else { continue };
                for b in 0..10 {
                    let k_ab = scale * geom.grads[a].dot(&geom.grads[b]);
                    match dof[tet[b]] {
                        Some(col) => sys.add(row, col, k_ab),
                        None => rhs[row] -= k_ab * fixed[tet[b]].unwrap_or(0.0),
                    }
                }
            }
        }
    }

    if n_free > 0 {
        sys.solve_in_place(&mut rhs)?;
    }

    let mut phi = vec![0.0; n];
    for node in 0..n {
        phi[node] = match (fixed[node], dof[node]) {
            (Some(v), _) => v,
            (None, Some(d)) => rhs[d],
            (None, None) => 0.0,
        };
    }
    Ok(phi)
}

/// Isoparametric data at one quadrature point of one element.
struct QpGeometry {
    /// Shape function values.
    n: [Real; 10],
    /// Physical shape-function gradients.
    grads: [Vec3; 10],
    /// Physical position.
    x: Vec3,
    /// Jacobian determinant (positive).
    det_j: Real,
}

impl QpGeometry {
    /// Evaluate at barycentric point `l`; `Err(det_j)` if the map inverts.
    fn at(mesh: &Mesh, tet: &[usize; 10], l: &[Real; 4]) -> std::result::Result<Self, Real> {
        let n = tet10_n(l);
        let dn = tet10_dn(l);
        let mut j = Mat3::zeros();
        let mut x = Vec3::zeros();
        for (a, &node) in tet.iter().enumerate() {
            let p = mesh.nodes[node];
            x += p * n[a];
            for r in 0..3 {
                for c in 0..3 {
                    j[(r, c)] += p[r] * dn[a][c];
                }
            }
        }
        let det_j = j.determinant();
        if det_j <= 0.0 {
            return Err(det_j);
        }
        let jinv_t = j.try_inverse().ok_or(det_j)?.transpose();
        let grads = std::array::from_fn(|a| jinv_t * Vec3::new(dn[a][0], dn[a][1], dn[a][2]));
        Ok(Self { n, grads, x, det_j })
    }
}

/// Rotate the circumferential direction about the transmural normal and close
/// the triad. Returns `(f0, s0, used_fallback)`.
fn triad_from_normal(n_hat: &Vec3, long_axis: &Vec3, alpha_rad: Real) -> (Vec3, Vec3, bool) {
    let c_raw = long_axis.cross(n_hat);
    let (c, fallback) = if c_raw.norm() < 1e-6 {
        (fallback_perp(n_hat), true)
    } else {
        (c_raw.normalize(), false)
    };
    let f_raw = c * alpha_rad.cos() + n_hat.cross(&c) * alpha_rad.sin();
    let f = (f_raw - n_hat * f_raw.dot(n_hat)).normalize();
    let s = n_hat.cross(&f);
    (f, s, fallback)
}

/// Deterministic unit vector perpendicular to `n`: the coordinate axis least
/// aligned with `n`, projected into the plane normal to `n`.
fn fallback_perp(n: &Vec3) -> Vec3 {
    let mags = [n.x.abs(), n.y.abs(), n.z.abs()];
    let i = (0..3).min_by(|&p, &q| mags[p].total_cmp(&mags[q])).unwrap();
    let mut e = Vec3::zeros();
    e[i] = 1.0;
    (e - n * n[i]).normalize()
}

/// Shared driver: sample `(transmural, n_hat)` at every quadrature point and
/// build the triads.
fn build_from_samples(
    mesh: &Mesh,
    angles: &FiberAngles,
    quad_degree: usize,
    mut sample: impl FnMut(usize, usize, &QpGeometry) -> Result<(Real, Vec3)>,
) -> Result<FiberField> {
    angles.validate()?;
    let ell = angles.long_axis_unit()?;
    let rule = tet_rule(quad_degree)?;
    let n_qp = rule.len();
    let total = mesh.tets.len() * n_qp;
    let mut field = FiberField {
        n_qp,
        f0: Vec::with_capacity(total),
        s0: Vec::with_capacity(total),
        n0: Vec::with_capacity(total),
        helix_deg: Vec::with_capacity(total),
        transmural: Vec::with_capacity(total),
    };
    let mut n_fallback = 0usize;
    for (e, tet) in mesh.tets.iter().enumerate() {
        for (q, &(l, _)) in rule.iter().enumerate() {
            let geom = QpGeometry::at(mesh, tet, &l).map_err(|det_j| Error::ElementInverted {
                element: e,
                qp: q,
                det_j,
            })?;
            let (t, n_hat) = sample(e, q, &geom)?;
            let alpha_deg = angles.alpha_deg(t);
            let (f, s, fallback) = triad_from_normal(&n_hat, &ell, alpha_deg.to_radians());
            if fallback {
                n_fallback += 1;
            }
            field.f0.push(f);
            field.s0.push(s);
            field.n0.push(n_hat);
            field.helix_deg.push(alpha_deg);
            field.transmural.push(t);
        }
    }
    if n_fallback > 0 {
        log::warn!(
            "fiber frame fell back to an arbitrary circumferential direction at {n_fallback} \
             quadrature point(s) where the transmural normal is parallel to the long axis"
        );
    }
    Ok(field)
}

/// Build fiber triads from a harmonic transmural coordinate.
///
/// The mesh must expose surfaces named `endocardium` and `epicardium`; the
/// transmural coordinate solves the Laplace problem with values 0 and 1
/// there. `quad_degree` selects the quadrature rule whose points the field is
/// stored at (it must match the rule used by the assembly that consumes the
/// field).
pub fn build_fibers(mesh: &Mesh, angles: &FiberAngles, quad_degree: usize) -> Result<FiberField> {
    let phi = harmonic_lift(mesh, &[("endocardium", 0.0), ("epicardium", 1.0)])?;
    build_from_samples(mesh, angles, quad_degree, |e, _q, geom| {
        let mut t = 0.0;
        let mut grad = Vec3::zeros();
        for a in 0..10 {
            // Connectivity lookup through the element is repeated here to
            // keep the closure independent of the geometry cache.
            let node = mesh.tets[e][a];
            t += geom.n[a] * phi[node];
            grad += geom.grads[a] * phi[node];
        }
        let norm = grad.norm();
        if norm < 1e-10 {
            return Err(Error::Fibers(format!(
                "transmural gradient vanishes in element {e} (|grad| = {norm:.3e}); \
                 endocardial and epicardial data do not separate this element"
            )));
        }
        Ok((t, grad / norm))
    })
}

/// Build fiber triads from the closed-form wall parameterization of a
/// generated half-ellipsoid mesh. Rejects meshes that do not carry generator
/// metadata.
pub fn analytic_ellipsoid_fibers(
    mesh: &Mesh,
    angles: &FiberAngles,
    quad_degree: usize,
) -> Result<FiberField> {
    let meta = mesh.ellipsoid.as_ref().ok_or_else(|| {
        Error::Fibers(
            "analytic fiber construction requires a generator-produced ellipsoid mesh; \
             use build_fibers for general meshes"
                .into(),
        )
    })?;
    let spec = meta.spec;
    build_from_samples(mesh, angles, quad_degree, |_, _, geom| {
        let u = ellipsoid_transmural(&spec, &geom.x)?;
        Ok((u, ellipsoid_normal(&spec, &geom.x, u)))
    })
}

/// Semi-axes of the wall-interpolating ellipsoid at transmural coordinate `u`.
fn semi_axes_at(spec: &EllipsoidSpec, u: Real) -> [Real; 3] {
    std::array::from_fn(|i| (1.0 - u) * spec.endo_semi_axes[i] + u * spec.epi_semi_axes[i])
}

/// Transmural coordinate of a point inside the ellipsoidal wall: the root of
/// `sum_i (x_i / r_i(u))^2 = 1` where `r_i(u)` interpolates the endocardial
/// and epicardial semi-axes. 0 on the endocardium, 1 on the epicardium.
///
/// The left-hand side decreases strictly in `u`, so the root is unique; it is
/// bracketed and bisected to machine precision. Points far outside the wall
/// (beyond half a wall thickness of extrapolation on either side) are
/// rejected.
pub fn ellipsoid_transmural(spec: &EllipsoidSpec, x: &Vec3) -> Result<Real> {
    let f = |u: Real| {
        let r = semi_axes_at(spec, u);
        (0..3).map(|i| (x[i] / r[i]).powi(2)).sum::<Real>() - 1.0
    };
    let mut lo: Real = -0.5;
    let mut hi: Real = 1.5;
    if f(lo) < 0.0 {
        return Err(Error::Fibers(format!(
            "point ({:.4e}, {:.4e}, {:.4e}) lies well inside the endocardial surface",
            x.x, x.y, x.z
        )));
    }
    if f(hi) > 0.0 {
        return Err(Error::Fibers(format!(
            "point ({:.4e}, {:.4e}, {:.4e}) lies well outside the epicardial surface",
            x.x, x.y, x.z
        )));
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if f(mid) >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Outward unit normal of the `u`-level ellipsoid through `x`.
fn ellipsoid_normal(spec: &EllipsoidSpec, x: &Vec3, u: Real) -> Vec3 {
    let r = semi_axes_at(spec, u);
    Vec3::new(x.x / (r[0] * r[0]), x.y / (r[1] * r[1]), x.z / (r[2] * r[2])).normalize()
}
