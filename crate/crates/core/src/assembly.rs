//! Global finite-element assembly: residual forces, consistent tangent,
//! mass action, cavity-pressure coupling blocks and energy bookkeeping.
//!
//! The weak form is total-Lagrangian over the (imaged) mesh geometry. Static
//! prestressing is handled by a stored per-quadrature-point deformation
//! gradient `F_pre`: with the modified shape gradients `G̃_a = F_preᵀ G_a`
//! the total deformation gradient becomes `F = F_pre + Σ_a u_a ⊗ G̃_a`, and
//! every element quantity (strain, stress, B-matrix, geometric stiffness)
//! takes its standard form in terms of `F` and `G̃`. The integration measure
//! stays that of the imaged mesh.
//!
//! Global unknown layout: 3 displacement dofs per node (including tied
//! closure-surface nodes, whose rows are pinned to identity and whose
//! coupling is redistributed onto their masters), followed by four lumped-
//! circulation unknowns per windkessel channel. Assembly fills the
//! structural rows; the solver owns the circulation rows.

use std::collections::BTreeMap;

use nalgebra::{SMatrix, SVector};

use crate::boundary::{
    build_spring_operators, BoundaryConditionSet, PressureSource, SpringOperator, SpringScales,
};
use crate::linsolve::SparseSystem;
use crate::materials::{self, sym4_voigt, sym_to_voigt, Material, MaterialError};
use crate::mesh::shape::{tet10_dn, tet10_n, tet_rule, TetPoint};
use crate::mesh::{CavityManifold, Mesh, Topology};
use crate::{fibers::FiberField, Error, Mat3, Real, Result, Vec3};

/// Scale factors for the assembled tangent. The time integrator folds its
/// blending and rate coefficients into these: the matrix receives
/// `mass·M + stiff·∂F/∂d + damp·∂F/∂ḋ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentScales {
    pub mass: Real,
    pub stiff: Real,
    pub damp: Real,
}

impl TangentScales {
    /// Static tangent: stiffness only.
    pub const STATIC: Self = Self {
        mass: 0.0,
        stiff: 1.0,
        damp: 0.0,
    };
}

/// State inputs for one assembly pass. All nodal arrays are full-length
/// (`3 · n_nodes`) with tie relations already applied.
#[derive(Debug, Clone, Copy)]
pub struct AssemblyInputs<'a> {
    pub u: &'a [Real],
    pub v: &'a [Real],
    /// Active fiber stress per element quadrature point (Pa); length
    /// [`Model::n_point_states`].
    pub tau: &'a [Real],
    /// Prestress deformation gradients per element quadrature point;
    /// `None` means identity.
    pub f_pre: Option<&'a [Mat3]>,
    /// Current cavity pressures (Pa), one per cavity in model order.
    pub pressures: &'a [Real],
}

/// Diagnostics from one assembly pass.
#[derive(Debug, Clone, Copy, Default)]
pub struct AssembleStats {
    /// Smallest `det F` over all quadrature points.
    pub min_det_j: Real,
    /// Total passive strain energy (J), volumetric penalty included.
    pub strain_energy: Real,
}

/// Energy bookkeeping for conservation checks.
#[derive(Debug, Clone, Copy, Default)]
pub struct Energies {
    pub strain: Real,
    pub kinetic: Real,
    pub springs: Real,
}

impl Energies {
    pub fn total(&self) -> Real {
        self.strain + self.kinetic + self.springs
    }
}

/// A pressurized cavity: closed manifold plus its pressure source.
#[derive(Debug, Clone)]
pub struct CavityCoupling {
    pub surfaces: Vec<String>,
    pub source: PressureSource,
    pub manifold: CavityManifold,
}

/// Per-quadrature-point reference data.
#[derive(Debug, Clone)]
struct ElemQp {
    /// Shape values.
    n: [Real; 10],
    /// Reference shape gradients.
    g: [Vec3; 10],
    /// Quadrature weight times reference Jacobian determinant.
    w_det: Real,
}

/// Assembled problem definition: mesh, constitutive data, boundary
/// conditions and all precomputed element geometry.
pub struct Model {
    pub mesh: Mesh,
    pub topo: Topology,
    pub materials: BTreeMap<i32, Material<Real>>,
    pub fibers: Option<FiberField>,
    pub springs: Vec<SpringOperator>,
    pub cavities: Vec<CavityCoupling>,
    /// Quadrature rule shared by all volume terms.
    quad: Vec<TetPoint>,
    /// Flattened per-element quadrature data (`elem * n_qp + q`).
    qps: Vec<ElemQp>,
    /// Per node: resolved tie expansion onto untied nodes, `[(node, w)]`.
    /// Untied volume nodes map to themselves.
    expansion: Vec<Vec<(usize, Real)>>,
    /// Per node: true if the node carries no equations of its own (tied or
    /// isolated); such rows are pinned to identity.
    pinned: Vec<bool>,
    /// Number of windkessel channels referenced by cavity sources.
    n_wk: usize,
}

impl Model {
    /// Build a model on a finalized mesh. `materials` must cover every
    /// region tag; `fibers` is required if any region's model is
    /// anisotropic. Windkessel channel indices referenced by the boundary
    /// set must be exactly `0..n` for some `n`.
    pub fn new(
        mesh: Mesh,
        topo: Topology,
        materials: BTreeMap<i32, Material<Real>>,
        fibers: Option<FiberField>,
        bcs: &BoundaryConditionSet,
        quad_degree: usize,
    ) -> Result<Self> {
        bcs.validate()?;
        for (e, &region) in mesh.tet_region.iter().enumerate() {
            let mat = materials.get(&region).ok_or_else(|| {
                Error::Config(format!("tet {e} has region tag {region} with no material"))
            })?;
            if mat.passive.needs_fibers() && fibers.is_none() {
                return Err(Error::Config(format!(
                    "region {region} uses an anisotropic material but no fiber field was given"
                )));
            }
        }
        let quad = tet_rule(quad_degree)?;
        if let Some(f) = &fibers {
            let expect = mesh.n_tets() * quad.len();
            if f.len() != expect {
                return Err(Error::Config(format!(
                    "fiber field has {} samples, expected {} ({} tets x {} quadrature points)",
                    f.len(),
                    expect,
                    mesh.n_tets(),
                    quad.len()
                )));
            }
        }

        // Reference geometry at every quadrature point.
        let mut qps = Vec::with_capacity(mesh.n_tets() * quad.len());
        for (e, conn) in mesh.tets.iter().enumerate() {
            for (q, &(l, w)) in quad.iter().enumerate() {
                let n = tet10_n(&l);
                let dn = tet10_dn(&l);
                let mut jac = Mat3::zeros();
                for a in 0..10 {
                    let x = mesh.nodes[conn[a]];
                    for i in 0..3 {
                        for d in 0..3 {
                            jac[(i, d)] += x[i] * dn[a][d];
                        }
                    }
                }
                let det_j = jac.determinant();
                if det_j <= 0.0 {
                    return Err(Error::ElementInverted {
                        element: e,
                        qp: q,
                        det_j,
                    });
                }
                let jinv_t = jac
                    .try_inverse()
                    .ok_or(Error::ElementInverted {
                        element: e,
                        qp: q,
                        det_j,
                    })?
                    .transpose();
                let mut g = [Vec3::zeros(); 10];
                for a in 0..10 {
                    g[a] = jinv_t * Vec3::new(dn[a][0], dn[a][1], dn[a][2]);
                }
                qps.push(ElemQp {
                    n,
                    g,
                    w_det: w * det_j,
                });
            }
        }

        // Tie expansion: process ties in declaration order so chained
        // masters are already resolved.
        let n_nodes = mesh.n_nodes();
        let mut expansion: Vec<Vec<(usize, Real)>> = (0..n_nodes).map(|n| vec![(n, 1.0)]).collect();
        let mut pinned = vec![false; n_nodes];
        for tie in &topo.ties.ties {
            let mut resolved: BTreeMap<usize, Real> = BTreeMap::new();
            for &(m, w) in &tie.masters {
                for &(base, wb) in &expansion[m] {
                    *resolved.entry(base).or_insert(0.0) += w * wb;
                }
            }
            expansion[tie.node] = resolved.into_iter().collect();
            pinned[tie.node] = true;
        }
        for (node, &in_volume) in topo.volume_node.iter().enumerate() {
            if !in_volume && !pinned[node] {
                // Isolated node: no element, no tie. Pin it so its rows are
                // regular; nothing ever assembles a force there.
                pinned[node] = true;
                expansion[node] = Vec::new();
            }
        }

        let springs = build_spring_operators(&mesh, bcs)?;

        // Cavities with their windkessel channel bookkeeping.
        let mut cavities = Vec::new();
        let mut channels = Vec::new();
        for spec in &bcs.pressures {
            let manifold = CavityManifold::new(&mesh, &topo, &spec.surfaces)?;
            if let PressureSource::Windkessel(k) = spec.source {
                channels.push(k);
            }
            cavities.push(CavityCoupling {
                surfaces: spec.surfaces.clone(),
                source: spec.source.clone(),
                manifold,
            });
        }
        let n_wk = channels.len();
        channels.sort_unstable();
        if channels.iter().enumerate().any(|(i, &k)| i != k) {
            return Err(Error::Config(format!(
                "windkessel channel indices must be exactly 0..{n_wk}, got {channels:?}"
            )));
        }

        Ok(Self {
            mesh,
            topo,
            materials,
            fibers,
            springs,
            cavities,
            quad,
            qps,
            expansion,
            pinned,
            n_wk,
        })
    }

    /// Number of volume quadrature points per element.
    pub fn n_qp(&self) -> usize {
        self.quad.len()
    }

    /// Length of per-quadrature-point state arrays (`tau`, `f_pre`).
    pub fn n_point_states(&self) -> usize {
        self.qps.len()
    }

    /// Structural dof count (3 per node, tied nodes included).
    pub fn n_struct_dofs(&self) -> usize {
        3 * self.mesh.n_nodes()
    }

    /// Total unknown count: structural dofs plus 4 per windkessel channel.
    pub fn n_unknowns(&self) -> usize {
        self.n_struct_dofs() + 4 * self.n_wk
    }

    /// Number of windkessel channels.
    pub fn n_wk_channels(&self) -> usize {
        self.n_wk
    }

    /// First unknown index of windkessel channel `k` (its `p_v` slot).
    pub fn wk_offset(&self, k: usize) -> usize {
        self.n_struct_dofs() + 4 * k
    }

    /// Column of the ventricular-pressure unknown driving cavity `i`, if it
    /// is windkessel-coupled.
    pub fn pressure_column(&self, cavity: usize) -> Option<usize> {
        match self.cavities[cavity].source {
            PressureSource::Windkessel(k) => Some(self.wk_offset(k)),
            PressureSource::Prescribed(_) => None,
        }
    }

    /// Fills tied slots of a full nodal vector from their masters.
    pub fn apply_ties(&self, full: &mut [Real]) {
        self.topo.ties.apply(full);
    }

    /// True if the node carries no equations of its own (tied or isolated);
    /// its rows are pinned to identity.
    pub fn is_pinned(&self, node: usize) -> bool {
        self.pinned[node]
    }

    /// Sparsity pattern of the full coupled system (structural blocks,
    /// pinned diagonals, pressure coupling and windkessel blocks).
    pub fn pattern(&self) -> Vec<(usize, usize)> {
        let mut entries = Vec::new();
        // Element blocks (all element nodes are untied by construction).
        for conn in &self.mesh.tets {
            for &a in conn {
                for &b in conn {
                    for i in 0..3 {
                        for j in 0..3 {
                            entries.push((3 * a + i, 3 * b + j));
                        }
                    }
                }
            }
        }
        for op in &self.springs {
            entries.extend(op.pattern_entries());
        }
        // Pinned identity rows.
        for (node, &p) in self.pinned.iter().enumerate() {
            if p {
                for d in 0..3 {
                    entries.push((3 * node + d, 3 * node + d));
                }
            }
        }
        // Cavity pressure blocks: Hessian (expanded through ties), the
        // pressure coupling column and the volume-rate coupling row.
        for (c, cav) in self.cavities.iter().enumerate() {
            let mut support: Vec<usize> = cav
                .manifold
                .faces()
                .flatten()
                .flat_map(|&n| self.expansion[n].iter().map(|&(m, _)| m))
                .collect();
            support.sort_unstable();
            support.dedup();
            for &a in &support {
                for &b in &support {
                    for i in 0..3 {
                        for j in 0..3 {
                            entries.push((3 * a + i, 3 * b + j));
                        }
                    }
                }
            }
            if let Some(col) = self.pressure_column(c) {
                let row = col; // flow-balance row of the same channel
                for &a in &support {
                    for d in 0..3 {
                        entries.push((3 * a + d, col));
                        entries.push((row, 3 * a + d));
                    }
                }
            }
        }
        // Dense 4x4 block per windkessel channel.
        for k in 0..self.n_wk {
            let base = self.wk_offset(k);
            for i in 0..4 {
                for j in 0..4 {
                    entries.push((base + i, base + j));
                }
            }
        }
        entries
    }

    /// Material for element `e`.
    fn material(&self, e: usize) -> &Material<Real> {
        &self.materials[&self.mesh.tet_region[e]]
    }

    /// Assemble the rate-dependent force vector `F(d, ḋ, p) = F_int + F_bc −
    /// Σ p_c ∇V_c` into `force[0..3n]` and, if requested, the scaled tangent
    /// of the structural rows (including pinned identity rows and the
    /// pressure coupling columns).
    ///
    /// `force` must have length [`Model::n_unknowns`] and is accumulated
    /// into; inertia is deliberately excluded (see [`Model::add_mass_force`]).
    pub fn assemble(
        &self,
        inputs: &AssemblyInputs,
        force: &mut [Real],
        mut tangent: Option<(&mut SparseSystem, TangentScales)>,
    ) -> Result<AssembleStats> {
        let n_struct = self.n_struct_dofs();
        assert_eq!(force.len(), self.n_unknowns(), "force vector length");
        assert_eq!(inputs.u.len(), n_struct, "displacement length");
        assert_eq!(inputs.v.len(), n_struct, "velocity length");
        assert_eq!(inputs.tau.len(), self.n_point_states(), "tau length");
        if let Some(fp) = inputs.f_pre {
            assert_eq!(fp.len(), self.n_point_states(), "prestress length");
        }
        assert_eq!(
            inputs.pressures.len(),
            self.cavities.len(),
            "pressure count"
        );

        let mut stats = AssembleStats {
            min_det_j: Real::INFINITY,
            strain_energy: 0.0,
        };
        let (mut sys_opt, scales) = match tangent.take() {
            Some((sys, s)) => (Some(sys), s),
            None => (None, TangentScales::STATIC),
        };
        let want_k = sys_opt.is_some();

        let n_qp = self.quad.len();
        let mut u_e = SVector::<Real, 30>::zeros();
        let mut v_e = SVector::<Real, 30>::zeros();
        for (e, conn) in self.mesh.tets.iter().enumerate() {
            let mat = self.material(e);
            for a in 0..10 {
                for d in 0..3 {
                    u_e[3 * a + d] = inputs.u[3 * conn[a] + d];
                    v_e[3 * a + d] = inputs.v[3 * conn[a] + d];
                }
            }
            let mut f_e = SVector::<Real, 30>::zeros();
            let mut k_e = SMatrix::<Real, 30, 30>::zeros();

            for q in 0..n_qp {
                let qp = &self.qps[e * n_qp + q];
                let pt = e * n_qp + q;
                let f_pre = inputs.f_pre.map_or_else(Mat3::identity, |fp| fp[pt]);

                // Modified gradients and total deformation gradient.
                let f_pre_t = f_pre.transpose();
                let mut g = [Vec3::zeros(); 10];
                for (ga, gq) in g.iter_mut().zip(&qp.g) {
                    *ga = f_pre_t * gq;
                }
                let mut f = f_pre;
                let mut f_dot = Mat3::zeros();
                for a in 0..10 {
                    let ua = Vec3::new(u_e[3 * a], u_e[3 * a + 1], u_e[3 * a + 2]);
                    let va = Vec3::new(v_e[3 * a], v_e[3 * a + 1], v_e[3 * a + 2]);
                    f += ua * g[a].transpose();
                    f_dot += va * g[a].transpose();
                }
                let det_j = f.determinant();
                stats.min_det_j = stats.min_det_j.min(det_j);
                if det_j <= 0.0 {
                    return Err(Error::ElementInverted {
                        element: e,
                        qp: q,
                        det_j,
                    });
                }

                let c = f.transpose() * f;
                let triad = self.fibers.as_ref().map(|ff| ff.triad(e, q));
                let fib = triad.as_ref().map(|t| (&t.0, &t.1));
                let state = materials::evaluate(mat, &c, fib).map_err(|err| match err {
                    MaterialError::NonPositiveJacobian => Error::ElementInverted {
                        element: e,
                        qp: q,
                        det_j,
                    },
                    MaterialError::MissingFibers => {
                        Error::Config(format!("element {e}: {err}"))
                    }
                })?;
                stats.strain_energy += qp.w_det * state.psi;

                // Total second Piola-Kirchhoff stress: passive + active +
                // viscous.
                let mut s_tot = state.s;
                if mat.passive.needs_fibers() {
                    let tau = inputs.tau[pt];
                    if tau != 0.0 {
                        let f0 = &triad.as_ref().unwrap().0;
                        s_tot += f0 * f0.transpose() * tau;
                    }
                }
                if mat.eta != 0.0 {
                    let e_dot = (f.transpose() * f_dot + f_dot.transpose() * f) * 0.5;
                    s_tot += materials::viscous_pk2(mat.eta, &e_dot);
                }

                let b = b_matrix(&f, &g);
                let s_voigt = sym_to_voigt(&s_tot);
                f_e += b.transpose() * s_voigt * qp.w_det;

                if want_k {
                    // Material + viscous constitutive tangent.
                    let mut d_mat = state.d * scales.stiff;
                    if mat.eta != 0.0 && scales.damp != 0.0 {
                        d_mat += sym4_voigt(&Mat3::identity()) * (mat.eta * scales.damp);
                    }
                    k_e += b.transpose() * d_mat * b * qp.w_det;
                    // Viscous stress variation through F at fixed velocity.
                    if mat.eta != 0.0 && scales.stiff != 0.0 {
                        let b_v = b_matrix(&f_dot, &g);
                        let dv = sym4_voigt(&Mat3::identity()) * (mat.eta * scales.stiff);
                        k_e += b.transpose() * dv * b_v * qp.w_det;
                    }
                    // Geometric stiffness with the total stress, and the
                    // consistent mass block.
                    let ws = qp.w_det * scales.stiff;
                    let wm = qp.w_det * scales.mass * mat.density;
                    for a in 0..10 {
                        let sg_a = s_tot * g[a];
                        for bn in 0..10 {
                            let geo = ws * sg_a.dot(&g[bn]);
                            let m = wm * (qp.n[a] * qp.n[bn]);
                            for i in 0..3 {
                                k_e[(3 * a + i, 3 * bn + i)] += geo + m;
                            }
                        }
                    }
                }
            }

            for a in 0..10 {
                for d in 0..3 {
                    force[3 * conn[a] + d] += f_e[3 * a + d];
                }
            }
            if let Some(sys) = sys_opt.as_deref_mut() {
                for a in 0..10 {
                    for bn in 0..10 {
                        for i in 0..3 {
                            for j in 0..3 {
                                sys.add(
                                    3 * conn[a] + i,
                                    3 * conn[bn] + j,
                                    k_e[(3 * a + i, 3 * bn + j)],
                                );
                            }
                        }
                    }
                }
            }
        }

        // Boundary springs.
        let spring_scales = SpringScales {
            force: 1.0,
            stiff: scales.stiff,
            damp: scales.damp,
        };
        for op in &self.springs {
            op.assemble(
                inputs.u,
                inputs.v,
                spring_scales,
                force,
                sys_opt.as_deref_mut(),
            )?;
        }

        // Cavity pressures: F_ext = p ∇V enters the residual force with a
        // minus sign; the tangent gets −p·stiff·Hess(V) and the coupling
        // column −stiff·∇V for windkessel channels.
        if !self.cavities.is_empty() {
            let x = self.current_positions(inputs.u);
            let mut grad = vec![0.0; n_struct];
            for (ci, cav) in self.cavities.iter().enumerate() {
                let p = inputs.pressures[ci];
                grad.iter_mut().for_each(|v| *v = 0.0);
                cav.manifold.add_volume_gradient(&x, &mut grad);
                self.topo.ties.fold(&mut grad);
                for i in 0..n_struct {
                    force[i] -= p * grad[i];
                }
                if let Some(sys) = sys_opt.as_deref_mut() {
                    if let Some(col) = self.pressure_column(ci) {
                        for (i, &gi) in grad.iter().enumerate() {
                            if gi != 0.0 {
                                sys.add(i, col, -scales.stiff * gi);
                            }
                        }
                    }
                    if p != 0.0 && scales.stiff != 0.0 {
                        let c = -p * scales.stiff;
                        cav.manifold.for_each_volume_hessian(&x, |nodes, blocks| {
                            for (b, &nb) in nodes.iter().enumerate() {
                                for (cn, &nc) in nodes.iter().enumerate() {
                                    let h = &blocks[b][cn];
                                    for &(mb, wb) in &self.expansion[nb] {
                                        for &(mc, wc) in &self.expansion[nc] {
                                            let s = c * (wb * wc);
                                            for i in 0..3 {
                                                for j in 0..3 {
                                                    sys.add(
                                                        3 * mb + i,
                                                        3 * mc + j,
                                                        s * h[(i, j)],
                                                    );
                                                }
                                            }
                                        }
                                    }
                                }
                            }
                        });
                    }
                }
            }
        }

        // Pinned rows keep an identity diagonal so the system stays regular.
        if let Some(sys) = sys_opt {
            for (node, &p) in self.pinned.iter().enumerate() {
                if p {
                    for d in 0..3 {
                        sys.add(3 * node + d, 3 * node + d, 1.0);
                    }
                }
            }
        }

        if stats.min_det_j == Real::INFINITY {
            stats.min_det_j = 1.0;
        }
        Ok(stats)
    }

    /// Adds the consistent-mass inertia force `M·a` to `force[0..3n]`.
    pub fn add_mass_force(&self, acc: &[Real], force: &mut [Real]) {
        let n_qp = self.quad.len();
        for (e, conn) in self.mesh.tets.iter().enumerate() {
            let rho = self.material(e).density;
            for q in 0..n_qp {
                let qp = &self.qps[e * n_qp + q];
                let mut a_qp = Vec3::zeros();
                for (a, &node) in conn.iter().enumerate() {
                    a_qp += Vec3::new(acc[3 * node], acc[3 * node + 1], acc[3 * node + 2])
                        * qp.n[a];
                }
                let w = rho * qp.w_det;
                for (a, &node) in conn.iter().enumerate() {
                    for d in 0..3 {
                        force[3 * node + d] += w * qp.n[a] * a_qp[d];
                    }
                }
            }
        }
    }

    /// Current nodal positions `x = X + u`.
    pub fn current_positions(&self, u: &[Real]) -> Vec<Vec3> {
        self.mesh
            .nodes
            .iter()
            .enumerate()
            .map(|(n, x)| x + Vec3::new(u[3 * n], u[3 * n + 1], u[3 * n + 2]))
            .collect()
    }

    /// Volume of cavity `i` at displacement `u`.
    pub fn cavity_volume(&self, cavity: usize, u: &[Real]) -> Real {
        self.cavities[cavity].manifold.volume(&self.current_positions(u))
    }

    /// Tie-folded volume gradient of cavity `i` (length `n_unknowns`, only
    /// structural slots populated). This is the coupling row/column vector.
    pub fn cavity_volume_gradient(&self, cavity: usize, u: &[Real]) -> Vec<Real> {
        let x = self.current_positions(u);
        let mut grad = vec![0.0; self.n_struct_dofs()];
        self.cavities[cavity]
            .manifold
            .add_volume_gradient(&x, &mut grad);
        self.topo.ties.fold(&mut grad);
        grad.resize(self.n_unknowns(), 0.0);
        grad
    }

    /// The volume quadrature rule shared by all elements.
    pub fn quadrature(&self) -> &[TetPoint] {
        &self.quad
    }

    /// Total deformation gradient `F_tot = F_pre + Σ_a u_a ⊗ (F_preᵀ G_a)`
    /// at every quadrature point (flattened `elem * n_qp + q`, matching the
    /// per-point state layout). With `u = 0` this returns `f_pre` verbatim.
    pub fn deformation_gradients(&self, u: &[Real], f_pre: Option<&[Mat3]>) -> Vec<Mat3> {
        assert_eq!(u.len(), self.n_struct_dofs(), "displacement length");
        if let Some(fp) = f_pre {
            assert_eq!(fp.len(), self.n_point_states(), "prestress length");
        }
        let n_qp = self.quad.len();
        let mut out = Vec::with_capacity(self.qps.len());
        for (e, conn) in self.mesh.tets.iter().enumerate() {
            for q in 0..n_qp {
                let qp = &self.qps[e * n_qp + q];
                let f_pre_q = f_pre.map_or_else(Mat3::identity, |fp| fp[e * n_qp + q]);
                let f_pre_t = f_pre_q.transpose();
                let mut f = f_pre_q;
                for (a, &node) in conn.iter().enumerate() {
                    let ua = Vec3::new(u[3 * node], u[3 * node + 1], u[3 * node + 2]);
                    f += ua * (f_pre_t * qp.g[a]).transpose();
                }
                out.push(f);
            }
        }
        out
    }

    /// Strain, kinetic and boundary-spring energies at the given state.
    pub fn energies(
        &self,
        u: &[Real],
        v: &[Real],
        f_pre: Option<&[Mat3]>,
    ) -> Result<Energies> {
        let n_qp = self.quad.len();
        let mut out = Energies::default();
        for (e, conn) in self.mesh.tets.iter().enumerate() {
            let mat = self.material(e);
            for q in 0..n_qp {
                let qp = &self.qps[e * n_qp + q];
                let pt = e * n_qp + q;
                let f_pre_q = f_pre.map_or_else(Mat3::identity, |fp| fp[pt]);
                let mut f = f_pre_q;
                let mut v_qp = Vec3::zeros();
                for (a, &node) in conn.iter().enumerate() {
                    let ua = Vec3::new(u[3 * node], u[3 * node + 1], u[3 * node + 2]);
                    f += ua * (f_pre_q.transpose() * qp.g[a]).transpose();
                    v_qp += Vec3::new(v[3 * node], v[3 * node + 1], v[3 * node + 2]) * qp.n[a];
                }
                let c = f.transpose() * f;
                let triad = self.fibers.as_ref().map(|ff| ff.triad(e, q));
                let fib = triad.as_ref().map(|t| (&t.0, &t.1));
                let state = materials::evaluate(mat, &c, fib).map_err(|err| {
                    Error::Config(format!("element {e} qp {q}: {err}"))
                })?;
                out.strain += qp.w_det * state.psi;
                out.kinetic += 0.5 * mat.density * qp.w_det * v_qp.norm_squared();
            }
        }
        for op in &self.springs {
            out.springs += op.energy(u)?;
        }
        Ok(out)
    }
}

/// Total-Lagrangian strain-displacement matrix in Voigt engineering form:
/// `B δd = [δE11, δE22, δE33, 2δE12, 2δE23, 2δE13]` with `δE = sym(Fᵀ δF)`.
fn b_matrix(f: &Mat3, g: &[Vec3; 10]) -> SMatrix<Real, 6, 30> {
    let mut b = SMatrix::<Real, 6, 30>::zeros();
    for (a, ga) in g.iter().enumerate() {
        for k in 0..3 {
            let col = 3 * a + k;
            b[(0, col)] = f[(k, 0)] * ga[0];
            b[(1, col)] = f[(k, 1)] * ga[1];
            b[(2, col)] = f[(k, 2)] * ga[2];
            b[(3, col)] = f[(k, 0)] * ga[1] + f[(k, 1)] * ga[0];
            b[(4, col)] = f[(k, 1)] * ga[2] + f[(k, 2)] * ga[1];
            b[(5, col)] = f[(k, 0)] * ga[2] + f[(k, 2)] * ga[0];
        }
    }
    b
}
