//! Boundary tractions: pericardial normal spring-dashpots (reference-normal
//! and closest-point-projection forms), omni-directional spring-dashpots, and
//! follower pressure loads.
//!
//! The pericardium is modeled as a spring/dashpot layer acting along the
//! local surface normal only, so the heart can slide tangentially while being
//! held radially. Two variants are provided: the *reference* form evaluates
//! the gap as `u · N` with the fixed reference normal `N`, while the
//! *projection* form computes the signed distance of the current position to
//! the undeformed epicardial surface by closest-point projection. Both
//! integrate over the reference surface measure, which keeps the stiffness
//! contribution constant and symmetric.
//!
//! Tractions returned here are *resisting* tractions: they enter the residual
//! on the internal-force side, so a positive gap produces a force that pulls
//! the surface back.

use std::collections::BTreeMap;

use crate::linsolve::SparseSystem;
use crate::mesh::shape::{tri6_dn, tri6_n, TRI_DUNAVANT6};
use crate::mesh::Mesh;
use crate::{Error, Mat3, Real, Result, Vec3};

/// Which flavor of spring acts on a surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpringKind {
    /// `t = N (k u·N + c u̇·N)` with the reference normal `N`.
    PericardialReferenceNormal,
    /// `t = n (k g + c u̇·n)` with `g` the signed closest-point distance to
    /// the reference surface and `n` the reference-surface normal there.
    PericardialProjection,
    /// `t = k u + c u̇`, acting in all directions.
    OmniSpring,
}

/// One spring-type boundary condition. Stiffness and viscosity are in SI
/// units (Pa/m and Pa·s/m).
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SpringSpec {
    pub surface: String,
    pub kind: SpringKind,
    pub k: Real,
    pub c: Real,
}

/// Pressure driving a follower load on a cavity.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PressureSource {
    /// Coupled monolithically to the windkessel ventricle with this index.
    Windkessel(usize),
    /// Prescribed piecewise-linear pressure history `(t [s], p [Pa])`,
    /// clamped at both ends.
    Prescribed(Vec<(Real, Real)>),
}

impl PressureSource {
    /// Prescribed pressure at time `t`; `None` for coupled sources.
    pub fn prescribed_at(&self, t: Real) -> Option<Real> {
        let PressureSource::Prescribed(points) = self else {
            return None;
        };
        let first = points.first()?;
        let last = points.last()?;
        if t <= first.0 {
            return Some(first.1);
        }
        if t >= last.0 {
            return Some(last.1);
        }
        let i = points.partition_point(|&(ti, _)| ti <= t);
        let (t0, p0) = points[i - 1];
        let (t1, p1) = points[i];
        Some(p0 + (p1 - p0) * (t - t0) / (t1 - t0))
    }

    /// Check well-formedness (prescribed histories must be finite and sorted
    /// strictly in time).
    pub fn validate(&self) -> Result<()> {
        if let PressureSource::Prescribed(points) = self {
            if points.is_empty() {
                return Err(Error::Config("prescribed pressure history is empty".into()));
            }
            if points.iter().any(|&(t, p)| !t.is_finite() || !p.is_finite()) {
                return Err(Error::Config(
                    "prescribed pressure history must be finite".into(),
                ));
            }
            for w in points.windows(2) {
                if w[1].0 <= w[0].0 {
                    return Err(Error::Config(
                        "prescribed pressure times must increase strictly".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Follower pressure load on a closed cavity: the named surfaces (wall
/// patches plus closure lids) bound the pressurized volume.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct FollowerPressureSpec {
    pub surfaces: Vec<String>,
    pub source: PressureSource,
}

/// Full set of boundary conditions for a run.
#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
pub struct BoundaryConditionSet {
    pub springs: Vec<SpringSpec>,
    pub pressures: Vec<FollowerPressureSpec>,
}

impl BoundaryConditionSet {
    /// Check parameter signs and that each surface carries at most one
    /// spring-type condition.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeMap::new();
        for s in &self.springs {
            if !(s.k >= 0.0 && s.c >= 0.0 && s.k.is_finite() && s.c.is_finite()) {
                return Err(Error::Config(format!(
                    "spring on surface '{}' must have k, c >= 0 (got k = {}, c = {})",
                    s.surface, s.k, s.c
                )));
            }
            if seen.insert(s.surface.clone(), s.kind).is_some() {
                return Err(Error::Config(format!(
                    "surface '{}' carries more than one spring condition",
                    s.surface
                )));
            }
        }
        for p in &self.pressures {
            if p.surfaces.is_empty() {
                return Err(Error::Config("pressure load lists no surfaces".into()));
            }
            p.source.validate()?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Pointwise traction laws.
// ---------------------------------------------------------------------------

/// Pericardial traction in the reference form: `N (k u·N + c u̇·N)`.
pub fn pericardial_traction_reference(
    u: &Vec3,
    udot: &Vec3,
    n_ref: &Vec3,
    k: Real,
    c: Real,
) -> Vec3 {
    n_ref * (k * u.dot(n_ref) + c * udot.dot(n_ref))
}

/// Omni-directional spring-dashpot traction: `k u + c u̇`.
pub fn omni_traction(u: &Vec3, udot: &Vec3, k: Real, c: Real) -> Vec3 {
    u * k + udot * c
}

/// Follower pressure traction per unit *reference* area: `p cof(F) N =
/// p J F^{-T} N` (Nanson pullback of `p n` per unit current area).
///
/// The determinant factor is kept even though the weak form in the source
/// literature is often written as `p F^{-T} N`: without it the traction is
/// not work-conjugate to the cavity volume (`p V̇` would not equal the
/// boundary working rate).
pub fn follower_traction(p: Real, f: &Mat3, n_ref: &Vec3) -> Result<Vec3> {
    Ok(follower_traction_dp(f, n_ref)? * p)
}

/// Pressure sensitivity of [`follower_traction`]: `∂t/∂p = cof(F) N`.
pub fn follower_traction_dp(f: &Mat3, n_ref: &Vec3) -> Result<Vec3> {
    let j = f.determinant();
    if j <= 0.0 {
        return Err(Error::Mesh(format!(
            "deformation gradient has non-positive determinant {j:.3e}"
        )));
    }
    let f_inv_t = f
        .try_inverse()
        .ok_or_else(|| Error::Mesh("deformation gradient is singular".into()))?
        .transpose();
    Ok(f_inv_t * n_ref * j)
}

// ---------------------------------------------------------------------------
// Assembled spring operators.
// ---------------------------------------------------------------------------

/// Scale factors applied while assembling a spring operator. Time
/// integrators fold their blending and rate coefficients into these: `force`
/// multiplies the residual contribution, `stiff` the displacement tangent
/// (`∂F/∂u`) and `damp` the velocity tangent (`∂F/∂u̇`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpringScales {
    pub force: Real,
    pub stiff: Real,
    pub damp: Real,
}

impl SpringScales {
    /// Raw force, stiffness and damping without integrator factors.
    pub const UNIT: Self = Self {
        force: 1.0,
        stiff: 1.0,
        damp: 1.0,
    };

    /// Residual only; matrix contributions are zeroed.
    pub const FORCE_ONLY: Self = Self {
        force: 1.0,
        stiff: 0.0,
        damp: 0.0,
    };
}

/// Geometry of the reference surface at one quadrature point.
#[derive(Debug, Clone)]
struct SpringQp {
    /// The six nodes of the triangle carrying this point.
    nodes: [usize; 6],
    /// Shape function values at the point.
    shape: [Real; 6],
    /// Quadrature weight times reference surface Jacobian (area measure).
    w_area: Real,
    /// Outward unit reference normal.
    normal: Vec3,
    /// Reference position.
    x_ref: Vec3,
}

/// A spring-type boundary condition assembled on one surface.
///
/// Displacements and velocities are passed as flat arrays with node `a`
/// occupying entries `3a..3a+3`.
#[derive(Debug, Clone)]
pub struct SpringOperator {
    pub spec: SpringSpec,
    qps: Vec<SpringQp>,
    /// Accumulated prestress gap per quadrature point (normal variants).
    g_pre: Vec<Real>,
    /// Accumulated prestress offset per quadrature point (omni variant).
    u_pre: Vec<Vec3>,
    /// Closest-point machinery (projection variant only).
    projector: Option<SurfaceProjector>,
}

impl SpringOperator {
    /// Build the operator for `spec` on `mesh`. The mesh must be finalized so
    /// boundary triangles are oriented outward.
    pub fn new(mesh: &Mesh, spec: &SpringSpec) -> Result<Self> {
        if !(spec.k >= 0.0 && spec.c >= 0.0) {
            return Err(Error::Config(format!(
                "spring on surface '{}' must have k, c >= 0",
                spec.surface
            )));
        }
        let surf = mesh.surface(&spec.surface)?;
        let mut qps = Vec::with_capacity(surf.tris.len() * TRI_DUNAVANT6.len());
        for tri in &surf.tris {
            for &(l, w) in &TRI_DUNAVANT6 {
                let shape = tri6_n(&l);
                let dn = tri6_dn(&l);
                let mut x = Vec3::zeros();
                let mut g1 = Vec3::zeros();
                let mut g2 = Vec3::zeros();
                for (a, &node) in tri.iter().enumerate() {
                    let p = mesh.nodes[node];
                    x += p * shape[a];
                    g1 += p * dn[a][0];
                    g2 += p * dn[a][1];
                }
                let cross = g1.cross(&g2);
                let area_j = cross.norm();
                if area_j <= 0.0 {
                    return Err(Error::Mesh(format!(
                        "degenerate triangle on surface '{}'",
                        spec.surface
                    )));
                }
                qps.push(SpringQp {
                    nodes: *tri,
                    shape,
                    w_area: w * area_j,
                    normal: cross / area_j,
                    x_ref: x,
                });
            }
        }
        let projector = if spec.kind == SpringKind::PericardialProjection {
            Some(SurfaceProjector::new(mesh, &spec.surface)?)
        } else {
            None
        };
        let n = qps.len();
        Ok(Self {
            spec: spec.clone(),
            qps,
            g_pre: vec![0.0; n],
            u_pre: vec![Vec3::zeros(); n],
            projector,
        })
    }

    /// Total reference area of the surface (quadrature sum).
    pub fn area(&self) -> Real {
        self.qps.iter().map(|q| q.w_area).sum()
    }

    /// Name of the surface this operator acts on.
    pub fn surface(&self) -> &str {
        &self.spec.surface
    }

    /// Sparsity-pattern entries contributed by this operator.
    pub fn pattern_entries(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.qps.iter().flat_map(|qp| {
            let nodes = qp.nodes;
            nodes.into_iter().flat_map(move |a| {
                nodes.into_iter().flat_map(move |b| {
                    (0..3).flat_map(move |i| (0..3).map(move |j| (3 * a + i, 3 * b + j)))
                })
            })
        })
    }

    /// Add spring forces to the residual and, optionally, the scaled tangent
    /// to the matrix (see [`SpringScales`]).
    pub fn assemble(
        &self,
        u: &[Real],
        v: &[Real],
        scales: SpringScales,
        r: &mut [Real],
        mut sys: Option<&mut SparseSystem>,
    ) -> Result<()> {
        let (k, c) = (self.spec.k, self.spec.c);
        for (i, qp) in self.qps.iter().enumerate() {
            let (u_qp, v_qp) = interp_uv(qp, u, v);
            // Traction and the normal (if any) defining the tangent block.
            let (traction, tangent_normal) = match self.spec.kind {
                SpringKind::PericardialReferenceNormal => {
                    let gap = u_qp.dot(&qp.normal) + self.g_pre[i];
                    let rate = v_qp.dot(&qp.normal);
                    (qp.normal * (k * gap + c * rate), Some(qp.normal))
                }
                SpringKind::PericardialProjection => {
                    let x = qp.x_ref + u_qp;
                    let hit = self.projector.as_ref().unwrap().closest(&x).map_err(|e| {
                        Error::Mesh(format!(
                            "projection failed for a quadrature point of surface '{}' at \
                             ({:.4e}, {:.4e}, {:.4e}): {e}",
                            self.spec.surface, x.x, x.y, x.z
                        ))
                    })?;
                    let gap = (x - hit.point).dot(&hit.normal) + self.g_pre[i];
                    let rate = v_qp.dot(&hit.normal);
                    (hit.normal * (k * gap + c * rate), Some(hit.normal))
                }
                SpringKind::OmniSpring => ((u_qp + self.u_pre[i]) * k + v_qp * c, None),
            };
            let fw = qp.w_area * scales.force;
            for (a, &node) in qp.nodes.iter().enumerate() {
                for d in 0..3 {
                    r[3 * node + d] += fw * qp.shape[a] * traction[d];
                }
            }
            if let Some(sys) = sys.as_deref_mut() {
                // For the projection variant this freezes the projection
                // normal: the curvature of the projection map is dropped,
                // which perturbs Newton's tangent but not the residual.
                let coeff = qp.w_area * (scales.stiff * k + scales.damp * c);
                for (a, &na) in qp.nodes.iter().enumerate() {
                    for (b, &nb) in qp.nodes.iter().enumerate() {
                        // Grouping keeps the block bitwise symmetric.
                        let s = coeff * (qp.shape[a] * qp.shape[b]);
                        match tangent_normal {
                            Some(n) => {
                                for i in 0..3 {
                                    for j in 0..3 {
                                        sys.add(3 * na + i, 3 * nb + j, s * (n[i] * n[j]));
                                    }
                                }
                            }
                            None => {
                                for i in 0..3 {
                                    sys.add(3 * na + i, 3 * nb + i, s);
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Stored spring energy `½ ∫ k gap² dA` at the given displacement state.
    pub fn energy(&self, u: &[Real]) -> Result<Real> {
        let k = self.spec.k;
        let mut e = 0.0;
        for (i, qp) in self.qps.iter().enumerate() {
            let u_qp = interp(qp, u);
            let g2 = match self.spec.kind {
                SpringKind::PericardialReferenceNormal => {
                    let gap = u_qp.dot(&qp.normal) + self.g_pre[i];
                    gap * gap
                }
                SpringKind::PericardialProjection => {
                    let x = qp.x_ref + u_qp;
                    let hit = self.projector.as_ref().unwrap().closest(&x)?;
                    let gap = (x - hit.point).dot(&hit.normal) + self.g_pre[i];
                    gap * gap
                }
                SpringKind::OmniSpring => (u_qp + self.u_pre[i]).norm_squared(),
            };
            e += 0.5 * k * g2 * qp.w_area;
        }
        Ok(e)
    }

    /// Fold the converged prestress displacement into the spring's zero-force
    /// reference, so the force is unchanged when the displacement field is
    /// subsequently reset to zero.
    pub fn record_prestress(&mut self, u: &[Real]) -> Result<()> {
        for i in 0..self.qps.len() {
            let qp = &self.qps[i];
            let u_qp = interp(qp, u);
            match self.spec.kind {
                SpringKind::PericardialReferenceNormal => {
                    self.g_pre[i] += u_qp.dot(&qp.normal);
                }
                SpringKind::PericardialProjection => {
                    let x = qp.x_ref + u_qp;
                    let hit = self.projector.as_ref().unwrap().closest(&x)?;
                    self.g_pre[i] += (x - hit.point).dot(&hit.normal);
                }
                SpringKind::OmniSpring => {
                    self.u_pre[i] += u_qp;
                }
            }
        }
        Ok(())
    }

    /// Prestress offsets accumulated by [`SpringOperator::record_prestress`]:
    /// per-quadrature-point normal gaps and displacement offsets. Exposed so
    /// checkpoints can capture the full boundary state.
    pub fn prestress_offsets(&self) -> (&[Real], &[Vec3]) {
        (&self.g_pre, &self.u_pre)
    }

    /// Restores prestress offsets captured by
    /// [`SpringOperator::prestress_offsets`]. Lengths must match the
    /// operator's quadrature-point count.
    pub fn restore_prestress_offsets(&mut self, g_pre: &[Real], u_pre: &[Vec3]) -> Result<()> {
        if g_pre.len() != self.qps.len() || u_pre.len() != self.qps.len() {
            return Err(Error::Checkpoint(format!(
                "spring offsets for surface '{}' have lengths {}/{}, expected {}",
                self.spec.surface,
                g_pre.len(),
                u_pre.len(),
                self.qps.len()
            )));
        }
        self.g_pre.copy_from_slice(g_pre);
        self.u_pre.copy_from_slice(u_pre);
        Ok(())
    }

    /// Area-weighted mean normal traction over the surface, with positive
    /// values meaning the spring is stretched (tension). Used for reporting
    /// pericardial contact stress.
    pub fn mean_normal_traction(&self, u: &[Real], v: &[Real]) -> Result<Real> {
        let (k, c) = (self.spec.k, self.spec.c);
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, qp) in self.qps.iter().enumerate() {
            let (u_qp, v_qp) = interp_uv(qp, u, v);
            let tn = match self.spec.kind {
                SpringKind::PericardialReferenceNormal => {
                    k * (u_qp.dot(&qp.normal) + self.g_pre[i]) + c * v_qp.dot(&qp.normal)
                }
                SpringKind::PericardialProjection => {
                    let x = qp.x_ref + u_qp;
                    let hit = self.projector.as_ref().unwrap().closest(&x)?;
                    k * ((x - hit.point).dot(&hit.normal) + self.g_pre[i])
                        + c * v_qp.dot(&hit.normal)
                }
                SpringKind::OmniSpring => {
                    ((u_qp + self.u_pre[i]) * k + v_qp * c).dot(&qp.normal)
                }
            };
            num += tn * qp.w_area;
            den += qp.w_area;
        }
        Ok(num / den)
    }
}

fn interp(qp: &SpringQp, u: &[Real]) -> Vec3 {
    let mut out = Vec3::zeros();
    for (a, &node) in qp.nodes.iter().enumerate() {
        out += Vec3::new(u[3 * node], u[3 * node + 1], u[3 * node + 2]) * qp.shape[a];
    }
    out
}

fn interp_uv(qp: &SpringQp, u: &[Real], v: &[Real]) -> (Vec3, Vec3) {
    (interp(qp, u), interp(qp, v))
}

/// Build one operator per spring condition in the set.
pub fn build_spring_operators(
    mesh: &Mesh,
    set: &BoundaryConditionSet,
) -> Result<Vec<SpringOperator>> {
    set.validate()?;
    set.springs
        .iter()
        .map(|spec| SpringOperator::new(mesh, spec))
        .collect()
}

// ---------------------------------------------------------------------------
// Closest-point projection onto the reference surface.
// ---------------------------------------------------------------------------

/// Result of a closest-point query.
#[derive(Debug, Clone, Copy)]
struct ProjectionHit {
    /// Closest point on the (curved) reference surface.
    point: Vec3,
    /// Outward unit surface normal at that point.
    normal: Vec3,
}

/// Closest-point projector onto a quadratic reference surface, accelerated by
/// a uniform grid over triangle bounding boxes.
#[derive(Debug, Clone)]
struct SurfaceProjector {
    tris: Vec<[usize; 6]>,
    nodes: Vec<Vec3>,
    origin: Vec3,
    cell: Real,
    dims: [usize; 3],
    bins: Vec<Vec<u32>>,
    search_radius: Real,
}

impl SurfaceProjector {
    fn new(mesh: &Mesh, surface: &str) -> Result<Self> {
        let surf = mesh.surface(surface)?;
        let tris = surf.tris.clone();
        if tris.is_empty() {
            return Err(Error::Mesh(format!("surface '{surface}' has no triangles")));
        }
        let nodes = mesh.nodes.clone();
        // Uniqueness radius: twice the longest triangle edge of the surface.
        let mut h_max: Real = 0.0;
        for tri in &tris {
            for (a, b) in [(0, 1), (1, 2), (2, 0)] {
                h_max = h_max.max((nodes[tri[a]] - nodes[tri[b]]).norm());
            }
        }
        let search_radius = 2.0 * h_max;
        let cell = search_radius;
        let mut lo = nodes[tris[0][0]];
        let mut hi = lo;
        for tri in &tris {
            for &n in tri {
                lo = lo.inf(&nodes[n]);
                hi = hi.sup(&nodes[n]);
            }
        }
        // Pad by one search radius so queries near the rim still land inside.
        let lo = lo.add_scalar(-search_radius);
        let hi = hi.add_scalar(search_radius);
        let dims = std::array::from_fn(|d| (((hi[d] - lo[d]) / cell).ceil() as usize).max(1));
        let mut bins = vec![Vec::new(); dims[0] * dims[1] * dims[2]];
        let clamp_idx = |p: &Vec3| -> [usize; 3] {
            std::array::from_fn(|d| {
                (((p[d] - lo[d]) / cell).floor() as isize).clamp(0, dims[d] as isize - 1) as usize
            })
        };
        for (t, tri) in tris.iter().enumerate() {
            let mut blo = nodes[tri[0]];
            let mut bhi = blo;
            for &n in tri {
                blo = blo.inf(&nodes[n]);
                bhi = bhi.sup(&nodes[n]);
            }
            let ilo = clamp_idx(&blo);
            let ihi = clamp_idx(&bhi);
            for i in ilo[0]..=ihi[0] {
                for j in ilo[1]..=ihi[1] {
                    for k in ilo[2]..=ihi[2] {
                        bins[(k * dims[1] + j) * dims[0] + i].push(t as u32);
                    }
                }
            }
        }
        Ok(Self {
            tris,
            nodes,
            origin: lo,
            cell,
            dims,
            bins,
            search_radius,
        })
    }

    /// Closest point on the surface to `x`, if within the uniqueness radius.
    fn closest(&self, x: &Vec3) -> Result<ProjectionHit> {
        let idx: [isize; 3] =
            std::array::from_fn(|d| ((x[d] - self.origin[d]) / self.cell).floor() as isize);
        let mut best: Option<(Real, ProjectionHit)> = None;
        let mut seen = Vec::new();
        for di in -1..=1isize {
            for dj in -1..=1isize {
                for dk in -1..=1isize {
                    let (i, j, k) = (idx[0] + di, idx[1] + dj, idx[2] + dk);
                    if i < 0
                        || j < 0
                        || k < 0
                        || i >= self.dims[0] as isize
                        || j >= self.dims[1] as isize
                        || k >= self.dims[2] as isize
                    {
                        continue;
                    }
                    let bin =
                        &self.bins[(k as usize * self.dims[1] + j as usize) * self.dims[0]
                            + i as usize];
                    for &t in bin {
                        if seen.contains(&t) {
                            continue;
                        }
                        seen.push(t);
                        if let Some((d2, hit)) = self.project_on_tri(t as usize, x) {
                            if best.is_none_or(|(b, _)| d2 < b) {
                                best = Some((d2, hit));
                            }
                        }
                    }
                }
            }
        }
        match best {
            Some((d2, hit)) if d2.sqrt() <= self.search_radius => Ok(hit),
            _ => Err(Error::Mesh(format!(
                "no surface point within the search radius {:.3e}",
                self.search_radius
            ))),
        }
    }

    /// Clamped Newton minimization of the squared distance to one quadratic
    /// triangle patch. Returns `(distance², hit)`.
    fn project_on_tri(&self, t: usize, x: &Vec3) -> Option<(Real, ProjectionHit)> {
        let tri = &self.tris[t];
        let p: [Vec3; 6] = std::array::from_fn(|a| self.nodes[tri[a]]);
        // Seed from the flat corner triangle.
        let (mut xi, mut eta) = closest_on_flat_triangle(x, &p[0], &p[1], &p[2]);
        // Constant second derivatives of the quadratic patch.
        let d2: [[Real; 3]; 6] = [
            [4.0, 4.0, 4.0],
            [4.0, 0.0, 0.0],
            [0.0, 0.0, 4.0],
            [-8.0, -4.0, 0.0],
            [0.0, 4.0, 0.0],
            [0.0, -4.0, -8.0],
        ];
        let mut x_xx = Vec3::zeros();
        let mut x_xe = Vec3::zeros();
        let mut x_ee = Vec3::zeros();
        for a in 0..6 {
            x_xx += p[a] * d2[a][0];
            x_xe += p[a] * d2[a][1];
            x_ee += p[a] * d2[a][2];
        }
        let eval = |xi: Real, eta: Real| -> (Vec3, Vec3, Vec3) {
            let l = [1.0 - xi - eta, xi, eta];
            let n = tri6_n(&l);
            let dn = tri6_dn(&l);
            let mut s = Vec3::zeros();
            let mut g1 = Vec3::zeros();
            let mut g2 = Vec3::zeros();
            for a in 0..6 {
                s += p[a] * n[a];
                g1 += p[a] * dn[a][0];
                g2 += p[a] * dn[a][1];
            }
            (s, g1, g2)
        };
        let (mut s, mut g1, mut g2) = eval(xi, eta);
        let mut d2_best = (x - s).norm_squared();
        for _ in 0..50 {
            let r = x - s;
            // Gradient and Hessian of ½‖x − X(ξ,η)‖².
            let grad = [-r.dot(&g1), -r.dot(&g2)];
            let h11 = g1.dot(&g1) - r.dot(&x_xx);
            let h12 = g1.dot(&g2) - r.dot(&x_xe);
            let h22 = g2.dot(&g2) - r.dot(&x_ee);
            let det = h11 * h22 - h12 * h12;
            let (mut dxi, mut deta) = if det.abs() > 1e-30 {
                (
                    (-grad[0] * h22 + grad[1] * h12) / det,
                    (-h11 * grad[1] + h12 * grad[0]) / det,
                )
            } else {
                // Gauss-Newton fallback.
                let g11 = g1.dot(&g1);
                let g12 = g1.dot(&g2);
                let g22 = g2.dot(&g2);
                let gdet = g11 * g22 - g12 * g12;
                if gdet.abs() < 1e-30 {
                    return None;
                }
                (
                    (-grad[0] * g22 + grad[1] * g12) / gdet,
                    (-g11 * grad[1] + g12 * grad[0]) / gdet,
                )
            };
            // Backtrack if the step does not decrease the distance.
            let mut improved = false;
            for _ in 0..8 {
                let (nxi, neta) = clamp_to_triangle(xi + dxi, eta + deta);
                let (ns, ng1, ng2) = eval(nxi, neta);
                let nd2 = (x - ns).norm_squared();
                if nd2 <= d2_best * (1.0 + 1e-14) {
                    let step = (nxi - xi).hypot(neta - eta);
                    xi = nxi;
                    eta = neta;
                    s = ns;
                    g1 = ng1;
                    g2 = ng2;
                    d2_best = nd2;
                    improved = true;
                    if step < 1e-13 {
                        let n = g1.cross(&g2);
                        let nn = n.norm();
                        if nn <= 0.0 {
                            return None;
                        }
                        return Some((
                            d2_best,
                            ProjectionHit {
                                point: s,
                                normal: n / nn,
                            },
                        ));
                    }
                    break;
                }
                dxi *= 0.5;
                deta *= 0.5;
            }
            if !improved {
                break;
            }
        }
        let n = g1.cross(&g2);
        let nn = n.norm();
        if nn <= 0.0 {
            return None;
        }
        Some((
            d2_best,
            ProjectionHit {
                point: s,
                normal: n / nn,
            },
        ))
    }
}

/// Parametric coordinates `(ξ, η)` of the closest point to `x` on the flat
/// triangle `(p0, p1, p2)` (Ericson's region method).
fn closest_on_flat_triangle(x: &Vec3, p0: &Vec3, p1: &Vec3, p2: &Vec3) -> (Real, Real) {
    let ab = p1 - p0;
    let ac = p2 - p0;
    let ap = x - p0;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (0.0, 0.0);
    }
    let bp = x - p1;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (1.0, 0.0);
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return (d1 / (d1 - d3), 0.0);
    }
    let cp = x - p2;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (0.0, 1.0);
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return (0.0, d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (1.0 - w, w);
    }
    let denom = 1.0 / (va + vb + vc);
    (vb * denom, vc * denom)
}

/// Closest point to `(ξ, η)` inside the parameter triangle
/// `{ξ ≥ 0, η ≥ 0, ξ + η ≤ 1}`.
fn clamp_to_triangle(xi: Real, eta: Real) -> (Real, Real) {
    if xi >= 0.0 && eta >= 0.0 && xi + eta <= 1.0 {
        return (xi, eta);
    }
    let q = Vec3::new(xi, eta, 0.0);
    closest_on_flat_triangle(&q, &Vec3::zeros(), &Vec3::x(), &Vec3::y())
}

/// Select the part of a surface whose triangles lie entirely within `radius`
/// of `center` (e.g. an apical spring patch on the epicardium).
pub fn select_patch(
    mesh: &Mesh,
    surface: &str,
    center: Vec3,
    radius: Real,
) -> Result<Vec<[usize; 6]>> {
    let surf = mesh.surface(surface)?;
    let kept: Vec<[usize; 6]> = surf
        .tris
        .iter()
        .copied()
        .filter(|tri| {
            tri.iter()
                .all(|&n| (mesh.nodes[n] - center).norm() <= radius)
        })
        .collect();
    if kept.is_empty() {
        return Err(Error::Config(format!(
            "no triangles of surface '{surface}' lie within {radius:.3e} of the patch center"
        )));
    }
    Ok(kept)
}
