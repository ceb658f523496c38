//! Prolate half-ellipsoid generator: an idealized left ventricle.
//!
//! The wall is the region between two concentric half-ellipsoids, truncated
//! by the base plane `z = 0`, apex pointing toward `-z`. A structured grid in
//! the parameters (transmural `u`, azimuth `theta`, polar angle `phi`) is
//! split into tetrahedra with the Kuhn six-tet pattern, which is conforming
//! on structured grids because the split is translation-invariant in index
//! space. Cells touching the apex collapse to three tetrahedra per cell.
//! Mid-edge nodes are placed at parameter-space midpoints so they lie on the
//! interpolated shells, and every edge gets exactly one midnode via a global
//! edge map.
//!
//! Generated surfaces: `endocardium`, `epicardium`, `base` (boundary), and
//! `cavity_closure`, a fan of triangles spanning the endocardial rim at the
//! base plane so the ventricular blood pool is watertight. Fan nodes carry no
//! degrees of freedom; they are tied to rim nodes (see [`super::TieMap`]).

use std::collections::{BTreeMap, HashMap};

use super::{shape, Mesh, Surface, Topology};
use crate::{Error, Real, Result, Vec3};

/// Geometry request for [`generate_half_ellipsoid`].
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct EllipsoidSpec {
    /// Endocardial semi-axes `(a, b, c)` in meters; the apex is at `-c`.
    pub endo_semi_axes: [Real; 3],
    /// Epicardial semi-axes in meters.
    pub epi_semi_axes: [Real; 3],
    /// Target edge length in meters.
    pub resolution: Real,
}

/// Generator metadata kept on the mesh; the analytic fiber construction and
/// apex-patch selection need it.
#[derive(Debug, Clone)]
pub struct EllipsoidMeta {
    pub spec: EllipsoidSpec,
    pub n_u: usize,
    pub n_theta: usize,
    pub n_phi: usize,
    /// Node id of the epicardial apex (outer pole).
    pub apex_epi_node: usize,
}

/// Parameters of a grid vertex; midnodes interpolate these.
#[derive(Debug, Clone, Copy)]
struct Param {
    u: Real,
    theta: Real,
    phi: Real,
    pole: bool,
}

struct Builder {
    spec: EllipsoidSpec,
    nodes: Vec<Vec3>,
    params: Vec<Param>,
}

impl Builder {
    fn semi_axes(&self, u: Real) -> [Real; 3] {
        std::array::from_fn(|d| {
            let e = self.spec.endo_semi_axes[d];
            e + u * (self.spec.epi_semi_axes[d] - e)
        })
    }

    /// Maps parameters to a point, keeping the base plane and the pole exact.
    fn position(&self, p: &Param) -> Vec3 {
        let [a, b, c] = self.semi_axes(p.u);
        if p.pole {
            return Vec3::new(0.0, 0.0, -c);
        }
        let (sin_phi, cos_phi) = if p.phi == std::f64::consts::FRAC_PI_2 {
            (1.0, 0.0)
        } else {
            (p.phi.sin(), p.phi.cos())
        };
        Vec3::new(
            a * sin_phi * p.theta.cos(),
            b * sin_phi * p.theta.sin(),
            c * cos_phi,
        )
    }

    fn push(&mut self, p: Param) -> usize {
        let x = self.position(&p);
        self.nodes.push(x);
        self.params.push(p);
        self.nodes.len() - 1
    }

    /// Parameter midpoint of an edge, handling the azimuthal seam and poles.
    fn midpoint_param(&self, i: usize, j: usize) -> Param {
        let (p, q) = (self.params[i], self.params[j]);
        let u = 0.5 * (p.u + q.u);
        let phi = 0.5 * (p.phi + q.phi);
        if p.pole && q.pole {
            return Param {
                u,
                theta: 0.0,
                phi: std::f64::consts::PI,
                pole: true,
            };
        }
        let theta = if p.pole {
            q.theta
        } else if q.pole {
            p.theta
        } else if (p.theta - q.theta).abs() > std::f64::consts::PI {
            // Edge crossing the theta = 0 seam.
            let t = 0.5 * (p.theta + q.theta) + std::f64::consts::PI;
            t.rem_euclid(2.0 * std::f64::consts::PI)
        } else {
            0.5 * (p.theta + q.theta)
        };
        Param {
            u,
            theta,
            phi,
            pole: false,
        }
    }
}

/// Builds a half-ellipsoid Tet10 mesh with the given target edge length.
pub fn generate_half_ellipsoid(spec: &EllipsoidSpec) -> Result<(Mesh, Topology)> {
    validate_spec(spec)?;
    let h = spec.resolution;
    let [a_epi, b_epi, c_epi] = spec.epi_semi_axes;
    let r_max = a_epi.max(b_epi);
    let n_theta = ((2.0 * std::f64::consts::PI * r_max / h).ceil() as usize).max(4);
    let quarter_arc = std::f64::consts::FRAC_PI_4 * (0.5 * (a_epi + b_epi) + c_epi);
    let n_phi = ((quarter_arc / h).ceil() as usize).max(2);
    let thickness: Real = (0..3)
        .map(|d| spec.epi_semi_axes[d] - spec.endo_semi_axes[d])
        .sum::<Real>()
        / 3.0;
    let n_u = ((thickness / h).round() as usize).max(1);

    let mut b = Builder {
        spec: *spec,
        nodes: Vec::new(),
        params: Vec::new(),
    };

    // Vertex grid: layers k (transmural), rows i (polar), columns j
    // (azimuthal); row n_phi is the apex pole, one node per layer.
    let mut vid = vec![vec![vec![usize::MAX; n_theta]; n_phi]; n_u + 1];
    let mut pole = vec![usize::MAX; n_u + 1];
    for k in 0..=n_u {
        let u = k as Real / n_u as Real;
        for i in 0..n_phi {
            let phi = std::f64::consts::FRAC_PI_2
                + std::f64::consts::FRAC_PI_2 * i as Real / n_phi as Real;
            for j in 0..n_theta {
                let theta = 2.0 * std::f64::consts::PI * j as Real / n_theta as Real;
                vid[k][i][j] = b.push(Param {
                    u,
                    theta,
                    phi,
                    pole: false,
                });
            }
        }
        pole[k] = b.push(Param {
            u,
            theta: 0.0,
            phi: std::f64::consts::PI,
            pole: true,
        });
    }

    // Kuhn split; the pole row reuses the same pattern with collapsed
    // corners, dropping tetrahedra that lose a vertex.
    let mut corner_tets: Vec<[usize; 4]> = Vec::new();
    let kuhn: [[usize; 4]; 6] = [
        // Corner code bits: x = theta, y = phi, z = u (binary xyz below).
        [0b000, 0b100, 0b110, 0b111],
        [0b000, 0b100, 0b111, 0b101],
        [0b000, 0b010, 0b111, 0b110],
        [0b000, 0b010, 0b011, 0b111],
        [0b000, 0b001, 0b101, 0b111],
        [0b000, 0b001, 0b111, 0b011],
    ];
    for k in 0..n_u {
        for i in 0..n_phi {
            for j in 0..n_theta {
                let jp = (j + 1) % n_theta;
                let corner = |code: usize| -> usize {
                    let dx = (code >> 2) & 1; // theta
                    let dy = (code >> 1) & 1; // phi
                    let dz = code & 1; // u
                    let kk = k + dz;
                    let ii = i + dy;
                    if ii == n_phi {
                        pole[kk]
                    } else {
                        vid[kk][ii][if dx == 1 { jp } else { j }]
                    }
                };
                for t in &kuhn {
                    let c: [usize; 4] = std::array::from_fn(|q| corner(t[q]));
                    let distinct = (0..4).all(|p| (p + 1..4).all(|q| c[p] != c[q]));
                    if distinct {
                        corner_tets.push(c);
                    }
                }
            }
        }
    }

    // Orient positively in physical space.
    for t in corner_tets.iter_mut() {
        let p0 = b.nodes[t[0]];
        let det = (b.nodes[t[1]] - p0)
            .cross(&(b.nodes[t[2]] - p0))
            .dot(&(b.nodes[t[3]] - p0));
        if det == 0.0 {
            return Err(Error::Mesh("generator produced a degenerate tet".into()));
        }
        if det < 0.0 {
            t.swap(1, 2);
        }
    }

    // Quadratic promotion via a global edge -> midnode map.
    let mut edge_mid: HashMap<(usize, usize), usize> = HashMap::new();
    let mut tets: Vec<[usize; 10]> = Vec::with_capacity(corner_tets.len());
    for c in &corner_tets {
        let mut conn = [0usize; 10];
        conn[..4].copy_from_slice(c);
        for (k, &(i, j)) in shape::TET_EDGES.iter().enumerate() {
            let key = (c[i].min(c[j]), c[i].max(c[j]));
            let mid = *edge_mid.entry(key).or_insert_with(|| {
                let p = b.midpoint_param(key.0, key.1);
                b.push(p)
            });
            conn[4 + k] = mid;
        }
        tets.push(conn);
    }

    // Boundary faces, classified by the grid parameters of their corners.
    let mut face_count: HashMap<[usize; 3], usize> = HashMap::new();
    for conn in &tets {
        for f in shape::TET_FACES {
            let mut key = [conn[f[0]], conn[f[1]], conn[f[2]]];
            key.sort_unstable();
            *face_count.entry(key).or_insert(0) += 1;
        }
    }
    let mut endo = Vec::new();
    let mut epi = Vec::new();
    let mut base = Vec::new();
    for conn in &tets {
        for f in shape::TET_FACES {
            let corners = [conn[f[0]], conn[f[1]], conn[f[2]]];
            let mut key = corners;
            key.sort_unstable();
            if face_count[&key] != 1 {
                continue;
            }
            let tri = [
                corners[0],
                corners[1],
                corners[2],
                super::tet_edge_mid(conn, f[0], f[1]),
                super::tet_edge_mid(conn, f[1], f[2]),
                super::tet_edge_mid(conn, f[2], f[0]),
            ];
            let on = |pred: &dyn Fn(&Param) -> bool| corners.iter().all(|&n| pred(&b.params[n]));
            if on(&|p| p.u == 0.0) {
                endo.push(tri);
            } else if on(&|p| p.u == 1.0) {
                epi.push(tri);
            } else if on(&|p| p.phi == std::f64::consts::FRAC_PI_2) {
                base.push(tri);
            } else {
                return Err(Error::Mesh(
                    "generator produced an unclassified boundary face".into(),
                ));
            }
        }
    }

    // Closure fan over the endocardial rim at the base plane.
    let rim: Vec<usize> = (0..n_theta).map(|j| vid[0][0][j]).collect();
    let center = b.push(Param {
        u: 0.0,
        theta: 0.0,
        phi: std::f64::consts::FRAC_PI_2,
        pole: false,
    });
    let center_id = center;
    b.nodes[center_id] = Vec3::zeros();
    let spoke_mid: Vec<usize> = rim
        .iter()
        .map(|&v| {
            let x = 0.5 * (b.nodes[v] + b.nodes[center_id]);
            b.nodes.push(x);
            b.params.push(b.params[v]);
            b.nodes.len() - 1
        })
        .collect();
    let mut closure = Vec::new();
    for j in 0..n_theta {
        let jp = (j + 1) % n_theta;
        let rim_mid = edge_mid[&(rim[j].min(rim[jp]), rim[j].max(rim[jp]))];
        closure.push([
            center_id,
            rim[j],
            rim[jp],
            spoke_mid[j],
            rim_mid,
            spoke_mid[jp],
        ]);
    }

    let apex_epi_node = pole[n_u];
    let n_tets = tets.len();
    let mut surfaces = BTreeMap::new();
    surfaces.insert("endocardium".to_string(), Surface { tag: 1, tris: endo });
    surfaces.insert("epicardium".to_string(), Surface { tag: 2, tris: epi });
    surfaces.insert("base".to_string(), Surface { tag: 3, tris: base });
    surfaces.insert(
        "cavity_closure".to_string(),
        Surface {
            tag: 4,
            tris: closure,
        },
    );
    let mut mesh = Mesh {
        nodes: b.nodes,
        tets,
        tet_region: vec![1; n_tets],
        surfaces,
        ellipsoid: Some(EllipsoidMeta {
            spec: *spec,
            n_u,
            n_theta,
            n_phi,
            apex_epi_node,
        }),
    };
    let topo = mesh.finalize()?;
    Ok((mesh, topo))
}

fn validate_spec(spec: &EllipsoidSpec) -> Result<()> {
    for d in 0..3 {
        if spec.endo_semi_axes[d] <= 0.0 || spec.epi_semi_axes[d] <= 0.0 {
            return Err(Error::Mesh("ellipsoid semi-axes must be positive".into()));
        }
        if spec.epi_semi_axes[d] <= spec.endo_semi_axes[d] {
            return Err(Error::Mesh(
                "epicardial semi-axes must exceed endocardial ones (positive wall thickness)"
                    .into(),
            ));
        }
    }
    if !(spec.resolution > 0.0) {
        return Err(Error::Mesh("resolution must be positive".into()));
    }
    Ok(())
}

/// Default geometry: endocardial semi-axes (7, 7, 17) mm, epicardial
/// (10, 10, 20) mm.
pub fn default_spec(resolution_m: Real) -> EllipsoidSpec {
    EllipsoidSpec {
        endo_semi_axes: [7.0e-3, 7.0e-3, 17.0e-3],
        epi_semi_axes: [10.0e-3, 10.0e-3, 20.0e-3],
        resolution: resolution_m,
    }
}
