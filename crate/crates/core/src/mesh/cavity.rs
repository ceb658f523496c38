//! Cavity volumes by the divergence theorem, with exact derivatives.
//!
//! A cavity is the region enclosed by a set of named surfaces (boundary
//! patches plus closures). Its volume is
//!
//! ```text
//! V = (1/3) * surface integral of  x . n  da
//! ```
//!
//! evaluated on the current configuration with normals pointing out of the
//! cavity. The integrand on a quadratic triangle is a polynomial of degree 4
//! in the parameters, so the degree-4 triangle rule integrates it exactly:
//! the computed value is the exact volume of the region bounded by the
//! discrete quadratic surface. First and second derivatives with respect to
//! nodal positions are assembled from the same parameterization; the second
//! derivative is what makes follower-pressure tangents and volume coupling
//! consistent.
//!
//! Construction validates watertightness (every corner edge shared by
//! exactly two faces, consistent midside nodes) and resolves the relative
//! orientation of the input surfaces automatically by requiring that every
//! directed edge appear once in each direction.

use std::collections::{BTreeMap, HashMap};

use super::shape::{tri6_dn, tri6_n, TRI_DUNAVANT6};
use super::{Mesh, Topology};
use crate::{Error, Mat3, Real, Result, Vec3};

/// Closed, consistently oriented face set enclosing one cavity.
#[derive(Debug, Clone)]
pub struct CavityManifold {
    /// Faces oriented out of the cavity, grouped by source surface.
    pub oriented: BTreeMap<String, Vec<[usize; 6]>>,
}

fn flip(tri: &[usize; 6]) -> [usize; 6] {
    [tri[0], tri[2], tri[1], tri[5], tri[4], tri[3]]
}

/// Skew-symmetric matrix `S(v)` with `S(v) w = v x w`.
fn skew(v: Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

impl CavityManifold {
    /// Builds the manifold from named surfaces of a finalized mesh.
    pub fn new(mesh: &Mesh, _topo: &Topology, surface_names: &[String]) -> Result<Self> {
        if surface_names.is_empty() {
            return Err(Error::Mesh("cavity needs at least one surface".into()));
        }
        let mut groups: Vec<(String, Vec<[usize; 6]>)> = Vec::new();
        for name in surface_names {
            let s = mesh.surface(name)?;
            groups.push((name.clone(), s.tris.clone()));
        }

        // Midside consistency across the whole face set.
        let mut edge_mid: HashMap<(usize, usize), usize> = HashMap::new();
        for (name, tris) in &groups {
            for tri in tris {
                for (k, &(i, j)) in super::shape::TRI_EDGES.iter().enumerate() {
                    let key = (tri[i].min(tri[j]), tri[i].max(tri[j]));
                    let mid = tri[3 + k];
                    if let Some(&m) = edge_mid.get(&key) {
                        if m != mid {
                            return Err(Error::Mesh(format!(
                                "cavity surfaces disagree on the midside node of edge \
                                 {key:?} (surface '{name}': {mid} vs {m})"
                            )));
                        }
                    } else {
                        edge_mid.insert(key, mid);
                    }
                }
            }
        }

        // Resolve per-surface signs so every directed corner edge appears
        // exactly once in each direction.
        let k = groups.len();
        if k > 12 {
            return Err(Error::Mesh(
                "too many surfaces in one cavity (limit 12)".into(),
            ));
        }
        let mut chosen: Option<Vec<bool>> = None;
        'combos: for combo in 0..(1usize << (k - 1)) {
            // Surface 0 keeps its orientation; others may flip.
            let flips: Vec<bool> = (0..k)
                .map(|i| i > 0 && (combo >> (i - 1)) & 1 == 1)
                .collect();
            let mut net: HashMap<(usize, usize), (i64, u64)> = HashMap::new();
            for (g, (_, tris)) in groups.iter().enumerate() {
                for tri in tris {
                    let t = if flips[g] { flip(tri) } else { *tri };
                    for &(i, j) in &super::shape::TRI_EDGES {
                        let (a, b) = (t[i], t[j]);
                        let key = (a.min(b), a.max(b));
                        let dir = if a < b { 1 } else { -1 };
                        let e = net.entry(key).or_insert((0, 0));
                        e.0 += dir;
                        e.1 += 1;
                    }
                }
            }
            if net.values().all(|&(n, c)| n == 0 && c == 2) {
                chosen = Some(flips);
                break 'combos;
            }
        }
        let flips = chosen.ok_or_else(|| {
            Error::Mesh(format!(
                "surfaces {surface_names:?} do not form a watertight, orientable cavity \
                 (unmatched or inconsistently shared edges)"
            ))
        })?;

        let mut oriented: BTreeMap<String, Vec<[usize; 6]>> = BTreeMap::new();
        for (g, (name, tris)) in groups.iter().enumerate() {
            let list = if flips[g] {
                tris.iter().map(flip).collect()
            } else {
                tris.clone()
            };
            oriented.insert(name.clone(), list);
        }
        let mut cavity = CavityManifold { oriented };

        // Make normals point out of the cavity: enclosed volume positive.
        let v = cavity.volume(&mesh.nodes);
        if v < 0.0 {
            for tris in cavity.oriented.values_mut() {
                for t in tris.iter_mut() {
                    *t = flip(t);
                }
            }
        } else if v == 0.0 {
            return Err(Error::Mesh("cavity encloses zero volume".into()));
        }

        // Closed-surface sanity: the integral of n da must vanish.
        let (flux, area) = cavity.net_flux(&mesh.nodes);
        if flux.norm() > 1e-10 * area {
            return Err(Error::Mesh(format!(
                "cavity flux defect {:.3e} m^2 exceeds tolerance (area {:.3e} m^2)",
                flux.norm(),
                area
            )));
        }
        Ok(cavity)
    }

    /// All oriented faces, flattened.
    pub fn faces(&self) -> impl Iterator<Item = &[usize; 6]> {
        self.oriented.values().flatten()
    }

    /// Number of faces.
    pub fn n_faces(&self) -> usize {
        self.oriented.values().map(Vec::len).sum()
    }

    /// Net outward flux `integral n da` and total area, on positions `x`.
    pub fn net_flux(&self, x: &[Vec3]) -> (Vec3, Real) {
        let mut flux = Vec3::zeros();
        let mut area = 0.0;
        for tri in self.faces() {
            for (l, w) in &TRI_DUNAVANT6 {
                let dn = tri6_dn(l);
                let mut g1 = Vec3::zeros();
                let mut g2 = Vec3::zeros();
                for a in 0..6 {
                    g1 += dn[a][0] * x[tri[a]];
                    g2 += dn[a][1] * x[tri[a]];
                }
                let n = g1.cross(&g2);
                flux += *w * n;
                area += *w * n.norm();
            }
        }
        (flux, area)
    }

    /// Enclosed volume on current positions `x` (length `n_nodes`).
    pub fn volume(&self, x: &[Vec3]) -> Real {
        let mut v = 0.0;
        for tri in self.faces() {
            v += face_volume(tri, x);
        }
        v / 3.0
    }

    /// Accumulates `dV/dx` into `grad` (length `3 * n_nodes`). Tied nodes
    /// receive raw contributions; callers fold them onto masters.
    pub fn add_volume_gradient(&self, x: &[Vec3], grad: &mut [Real]) {
        for tri in self.faces() {
            face_volume_gradient(tri, x, 1.0 / 3.0, grad);
        }
    }

    /// Convenience: freshly allocated `dV/dx`.
    pub fn volume_gradient(&self, x: &[Vec3]) -> Vec<Real> {
        let mut g = vec![0.0; 3 * x.len()];
        self.add_volume_gradient(x, &mut g);
        g
    }

    /// Visits the volume Hessian face by face: `visit(face_nodes, blocks)`
    /// where `blocks[b][c]` is the 3x3 second derivative of `V` with respect
    /// to nodes `face_nodes[b]`, `face_nodes[c]`.
    pub fn for_each_volume_hessian<F>(&self, x: &[Vec3], mut visit: F)
    where
        F: FnMut(&[usize; 6], &[[Mat3; 6]; 6]),
    {
        for tri in self.faces() {
            let h = face_volume_hessian(tri, x, 1.0 / 3.0);
            visit(tri, &h);
        }
    }

    /// Same per-face visitation for the gradient (used by surface loads that
    /// act on a subset of the cavity faces).
    pub fn for_each_face_gradient<F>(&self, surface: &str, x: &[Vec3], mut visit: F)
    where
        F: FnMut(&[usize; 6], &[Vec3; 6]),
    {
        if let Some(tris) = self.oriented.get(surface) {
            for tri in tris {
                let blocks = face_volume_gradient_blocks(tri, x, 1.0 / 3.0);
                visit(tri, &blocks);
            }
        }
    }
}

/// `3 * (volume contribution)` of one face: integral of `x . (g1 x g2)`.
fn face_volume(tri: &[usize; 6], x: &[Vec3]) -> Real {
    let mut v = 0.0;
    for (l, w) in &TRI_DUNAVANT6 {
        let n = tri6_n(l);
        let dn = tri6_dn(l);
        let mut xp = Vec3::zeros();
        let mut g1 = Vec3::zeros();
        let mut g2 = Vec3::zeros();
        for a in 0..6 {
            let xa = x[tri[a]];
            xp += n[a] * xa;
            g1 += dn[a][0] * xa;
            g2 += dn[a][1] * xa;
        }
        v += w * xp.dot(&g1.cross(&g2));
    }
    v
}

/// Per-node gradient blocks of one face's volume contribution.
fn face_volume_gradient_blocks(tri: &[usize; 6], x: &[Vec3], scale: Real) -> [Vec3; 6] {
    let mut blocks = [Vec3::zeros(); 6];
    for (l, w) in &TRI_DUNAVANT6 {
        let n = tri6_n(l);
        let dn = tri6_dn(l);
        let mut xp = Vec3::zeros();
        let mut g1 = Vec3::zeros();
        let mut g2 = Vec3::zeros();
        for a in 0..6 {
            let xa = x[tri[a]];
            xp += n[a] * xa;
            g1 += dn[a][0] * xa;
            g2 += dn[a][1] * xa;
        }
        let n_vec = g1.cross(&g2);
        let g2xx = g2.cross(&xp);
        let xxg1 = xp.cross(&g1);
        let c = scale * w;
        for b in 0..6 {
            blocks[b] += c * (n[b] * n_vec + dn[b][0] * g2xx + dn[b][1] * xxg1);
        }
    }
    blocks
}

fn face_volume_gradient(tri: &[usize; 6], x: &[Vec3], scale: Real, grad: &mut [Real]) {
    let blocks = face_volume_gradient_blocks(tri, x, scale);
    for (b, &node) in tri.iter().enumerate() {
        grad[3 * node] += blocks[b].x;
        grad[3 * node + 1] += blocks[b].y;
        grad[3 * node + 2] += blocks[b].z;
    }
}

/// Per-face volume Hessian blocks `d2V/dx_b dx_c` (3x3 each).
fn face_volume_hessian(tri: &[usize; 6], x: &[Vec3], scale: Real) -> [[Mat3; 6]; 6] {
    let mut h = [[Mat3::zeros(); 6]; 6];
    for (l, w) in &TRI_DUNAVANT6 {
        let n = tri6_n(l);
        let dn = tri6_dn(l);
        let mut xp = Vec3::zeros();
        let mut g1 = Vec3::zeros();
        let mut g2 = Vec3::zeros();
        for a in 0..6 {
            let xa = x[tri[a]];
            xp += n[a] * xa;
            g1 += dn[a][0] * xa;
            g2 += dn[a][1] * xa;
        }
        let s_g1 = skew(g1);
        let s_g2 = skew(g2);
        let s_x = skew(xp);
        let c = scale * w;
        for b in 0..6 {
            for cc in 0..6 {
                // d/dx_c of the gradient term at b; antisymmetric shape
                // coefficients times skew matrices keep the block pair
                // (b,c)/(c,b) transpose-consistent.
                let k1 = dn[b][0] * n[cc] - n[b] * dn[cc][0];
                let k2 = n[b] * dn[cc][1] - dn[b][1] * n[cc];
                let k3 = dn[b][1] * dn[cc][0] - dn[b][0] * dn[cc][1];
                h[b][cc] += c * (k1 * s_g2 + k2 * s_g1 + k3 * s_x);
            }
        }
    }
    h
}

#[cfg(test)]
pub(crate) mod surface_meshes {
    //! Closed quadratic surface meshes for volume tests.

    use super::*;
    use crate::mesh::Surface;

    /// Latitude-longitude sphere of radius `r` about `center`; `n_phi` polar
    /// rows (>= 2), `n_theta` azimuthal columns (>= 3). Surface-only mesh
    /// with a single surface named "shell".
    pub fn uv_sphere(center: Vec3, r: Real, n_phi: usize, n_theta: usize) -> Mesh {
        use std::f64::consts::PI;
        assert!(n_phi >= 2 && n_theta >= 3);
        struct Sph {
            center: Vec3,
            r: Real,
            nodes: Vec<Vec3>,
            params: Vec<(Real, Real, bool)>, // (phi, theta, pole)
        }
        impl Sph {
            fn push(&mut self, phi: Real, theta: Real, pole: bool) -> usize {
                let p = if pole {
                    let z = if phi == 0.0 { self.r } else { -self.r };
                    self.center + Vec3::new(0.0, 0.0, z)
                } else {
                    self.center
                        + Vec3::new(
                            self.r * phi.sin() * theta.cos(),
                            self.r * phi.sin() * theta.sin(),
                            self.r * phi.cos(),
                        )
                };
                self.nodes.push(p);
                self.params.push((phi, theta, pole));
                self.nodes.len() - 1
            }
        }
        let mut s = Sph {
            center,
            r,
            nodes: Vec::new(),
            params: Vec::new(),
        };
        let north = s.push(0.0, 0.0, true);
        let mut ring = vec![vec![0usize; n_theta]; n_phi - 1];
        for i in 1..n_phi {
            for j in 0..n_theta {
                let phi = PI * i as Real / n_phi as Real;
                let theta = 2.0 * PI * j as Real / n_theta as Real;
                ring[i - 1][j] = s.push(phi, theta, false);
            }
        }
        let south = s.push(PI, 0.0, true);

        // Corner triangles, outward (CCW seen from outside).
        let mut corner_tris: Vec<[usize; 3]> = Vec::new();
        for j in 0..n_theta {
            let jp = (j + 1) % n_theta;
            corner_tris.push([north, ring[0][j], ring[0][jp]]);
        }
        for i in 0..n_phi - 2 {
            for j in 0..n_theta {
                let jp = (j + 1) % n_theta;
                let (a, b, c, d) = (ring[i][j], ring[i + 1][j], ring[i + 1][jp], ring[i][jp]);
                corner_tris.push([a, b, c]);
                corner_tris.push([a, c, d]);
            }
        }
        let last = n_phi - 2;
        for j in 0..n_theta {
            let jp = (j + 1) % n_theta;
            corner_tris.push([south, ring[last][jp], ring[last][j]]);
        }

        // Quadratic promotion: midnodes on the sphere via parameter means.
        let mut edge_mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut tris: Vec<[usize; 6]> = Vec::new();
        for t in &corner_tris {
            let mut conn = [0usize; 6];
            conn[..3].copy_from_slice(t);
            for (k, &(i, j)) in crate::mesh::shape::TRI_EDGES.iter().enumerate() {
                let key = (t[i].min(t[j]), t[i].max(t[j]));
                let mid = match edge_mid.get(&key) {
                    Some(&m) => m,
                    None => {
                        let (p1, t1, pole1) = s.params[key.0];
                        let (p2, t2, pole2) = s.params[key.1];
                        let phi = 0.5 * (p1 + p2);
                        let theta = if pole1 {
                            t2
                        } else if pole2 {
                            t1
                        } else if (t1 - t2).abs() > PI {
                            (0.5 * (t1 + t2) + PI).rem_euclid(2.0 * PI)
                        } else {
                            0.5 * (t1 + t2)
                        };
                        let m = s.push(phi, theta, false);
                        edge_mid.insert(key, m);
                        m
                    }
                };
                conn[3 + k] = mid;
            }
            tris.push(conn);
        }

        let mut surfaces = BTreeMap::new();
        surfaces.insert("shell".to_string(), Surface { tag: 1, tris });
        Mesh {
            nodes: s.nodes,
            tets: vec![],
            tet_region: vec![],
            surfaces,
            ellipsoid: None,
        }
    }

    /// Axis-aligned cube `[o, o + s]^3` as 12 flat quadratic triangles,
    /// outward-oriented, surface "shell".
    pub fn cube(o: Vec3, s: Real) -> Mesh {
        let corners: Vec<Vec3> = (0..8)
            .map(|k| {
                o + Vec3::new(
                    s * ((k >> 0) & 1) as Real,
                    s * ((k >> 1) & 1) as Real,
                    s * ((k >> 2) & 1) as Real,
                )
            })
            .collect();
        // Faces as corner quads (outward CCW), split along a diagonal.
        let quads: [[usize; 4]; 6] = [
            [0, 2, 3, 1], // z = 0, normal -z
            [4, 5, 7, 6], // z = s, normal +z
            [0, 1, 5, 4], // y = 0, normal -y
            [2, 6, 7, 3], // y = s, normal +y
            [0, 4, 6, 2], // x = 0, normal -x
            [1, 3, 7, 5], // x = s, normal +x
        ];
        let mut nodes = corners;
        let mut edge_mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut tris: Vec<[usize; 6]> = Vec::new();
        let mut mid = |a: usize, b: usize, nodes: &mut Vec<Vec3>| -> usize {
            let key = (a.min(b), a.max(b));
            if let Some(&m) = edge_mid.get(&key) {
                return m;
            }
            let x = 0.5 * (nodes[a] + nodes[b]);
            nodes.push(x);
            let id = nodes.len() - 1;
            edge_mid.insert(key, id);
            id
        };
        for q in quads {
            for t in [[q[0], q[1], q[2]], [q[0], q[2], q[3]]] {
                let m01 = mid(t[0], t[1], &mut nodes);
                let m12 = mid(t[1], t[2], &mut nodes);
                let m20 = mid(t[2], t[0], &mut nodes);
                tris.push([t[0], t[1], t[2], m01, m12, m20]);
            }
        }
        let mut surfaces = BTreeMap::new();
        surfaces.insert("shell".to_string(), Surface { tag: 1, tris });
        Mesh {
            nodes,
            tets: vec![],
            tet_region: vec![],
            surfaces,
            ellipsoid: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::surface_meshes::{cube, uv_sphere};
    use super::*;
    use approx::assert_relative_eq;

    fn manifold(mesh: &mut Mesh) -> CavityManifold {
        let topo = mesh.finalize().unwrap();
        CavityManifold::new(mesh, &topo, &["shell".to_string()]).unwrap()
    }

    #[test]
    fn cube_volume_exact() {
        let mut m = cube(Vec3::new(-3.0, 2.0, 11.0), 10.0);
        let c = manifold(&mut m);
        let v = c.volume(&m.nodes);
        assert_relative_eq!(v, 1000.0, max_relative = 1e-14);
    }

    #[test]
    fn sphere_volume_within_one_percent_and_second_order() {
        let exact = 4.0 / 3.0 * std::f64::consts::PI;
        let mut errs = Vec::new();
        for n in [6usize, 12, 24] {
            let mut m = uv_sphere(Vec3::zeros(), 1.0, n, 2 * n);
            let c = manifold(&mut m);
            let v = c.volume(&m.nodes);
            errs.push(((1.0 / n as Real), ((v - exact) / exact).abs()));
        }
        // 1% already at the coarsest level.
        assert!(errs[0].1 < 1e-2, "coarse error {}", errs[0].1);
        // Observed order from the log-log slope between successive levels.
        let p1 = (errs[0].1 / errs[1].1).ln() / (errs[0].0 / errs[1].0).ln();
        let p2 = (errs[1].1 / errs[2].1).ln() / (errs[1].0 / errs[2].0).ln();
        assert!(p1 > 2.0 && p2 > 2.0, "orders {p1:.2}, {p2:.2}");
    }

    #[test]
    fn translation_invariance() {
        let mut m = uv_sphere(Vec3::zeros(), 1.0, 8, 16);
        let c = manifold(&mut m);
        let v0 = c.volume(&m.nodes);
        let shifted: Vec<Vec3> = m
            .nodes
            .iter()
            .map(|&x| x + Vec3::new(17.0, -4.0, 9.5))
            .collect();
        let v1 = c.volume(&shifted);
        assert_relative_eq!(v1, v0, max_relative = 1e-10);
    }

    #[test]
    fn auto_orientation_fixes_flipped_input() {
        let mut m = uv_sphere(Vec3::zeros(), 1.0, 6, 12);
        // Flip every face; construction must still produce positive volume.
        {
            let s = m.surfaces.get_mut("shell").unwrap();
            for t in s.tris.iter_mut() {
                *t = [t[0], t[2], t[1], t[5], t[4], t[3]];
            }
        }
        let c = manifold(&mut m);
        assert!(c.volume(&m.nodes) > 0.0);
    }

    #[test]
    fn open_surface_rejected() {
        let mut m = uv_sphere(Vec3::zeros(), 1.0, 6, 12);
        m.surfaces.get_mut("shell").unwrap().tris.pop();
        let topo = m.finalize().unwrap();
        let err = CavityManifold::new(&m, &topo, &["shell".to_string()]);
        assert!(err.is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut m = uv_sphere(Vec3::new(0.3, -0.2, 0.1), 1.0, 4, 6);
        let c = manifold(&mut m);
        let grad = c.volume_gradient(&m.nodes);
        // Deterministic pseudo-random direction.
        let dir: Vec<Vec3> = (0..m.nodes.len())
            .map(|i| {
                let f = |k: usize| ((i * 37 + k * 101 + 13) % 97) as Real / 96.0 - 0.5;
                Vec3::new(f(0), f(1), f(2))
            })
            .collect();
        let h = 1e-6;
        let perturbed = |s: Real| -> Vec<Vec3> {
            m.nodes
                .iter()
                .zip(&dir)
                .map(|(&x, &d)| x + s * d)
                .collect()
        };
        let fd = (c.volume(&perturbed(h)) - c.volume(&perturbed(-h))) / (2.0 * h);
        let analytic: Real = dir
            .iter()
            .enumerate()
            .map(|(i, d)| d.x * grad[3 * i] + d.y * grad[3 * i + 1] + d.z * grad[3 * i + 2])
            .sum();
        assert_relative_eq!(analytic, fd, max_relative = 1e-7);
    }

    #[test]
    fn hessian_matches_gradient_finite_differences() {
        let mut m = uv_sphere(Vec3::zeros(), 1.0, 3, 5);
        let c = manifold(&mut m);
        let n = m.nodes.len();
        // Assemble the full Hessian densely (small mesh).
        let mut hess = vec![vec![0.0; 3 * n]; 3 * n];
        c.for_each_volume_hessian(&m.nodes, |tri, blocks| {
            for b in 0..6 {
                for cc in 0..6 {
                    for r in 0..3 {
                        for s in 0..3 {
                            hess[3 * tri[b] + r][3 * tri[cc] + s] += blocks[b][cc][(r, s)];
                        }
                    }
                }
            }
        });
        // FD of the gradient along two node perturbations.
        let h = 1e-6;
        for probe in [1usize, 7] {
            for d in 0..3 {
                let mut xp = m.nodes.clone();
                let mut xm = m.nodes.clone();
                xp[probe][d] += h;
                xm[probe][d] -= h;
                let gp = c.volume_gradient(&xp);
                let gm = c.volume_gradient(&xm);
                for i in 0..3 * n {
                    let fd = (gp[i] - gm[i]) / (2.0 * h);
                    let an = hess[i][3 * probe + d];
                    assert_relative_eq!(an, fd, epsilon = 1e-9, max_relative = 1e-5);
                }
            }
        }
        // Symmetry.
        for i in 0..3 * n {
            for j in 0..3 * n {
                assert_relative_eq!(hess[i][j], hess[j][i], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn mismatched_midside_nodes_rejected() {
        let mut m = cube(Vec3::zeros(), 1.0);
        // Corrupt one face's midside to a different (duplicate) node.
        let extra = m.nodes.len();
        let pos = m.nodes[8]; // some midside node
        m.nodes.push(pos);
        {
            let s = m.surfaces.get_mut("shell").unwrap();
            let old = s.tris[0][3];
            s.tris[0][3] = extra;
            // Keep a second face still pointing at `old` so the mismatch is
            // detectable.
            assert!(s.tris.iter().skip(1).any(|t| t.contains(&old)));
        }
        let topo = m.finalize().unwrap();
        assert!(CavityManifold::new(&m, &topo, &["shell".to_string()]).is_err());
    }
}
