//! Mesh data model: quadratic tetrahedra, named surface patches, cavity
//! closures, and the bookkeeping that ties them together.
//!
//! A [`Mesh`] stores reference (undeformed) geometry only. Surfaces come in
//! two kinds, detected rather than declared: a *boundary* surface triangulates
//! faces of volume elements; a *closure* surface spans an opening (e.g. a
//! valve plane) so that cavity volumes are well defined. Closure nodes that do
//! not belong to any volume element carry no degrees of freedom; their motion
//! is tied to volume-attached nodes (see [`TieMap`]).

pub mod cavity;
pub mod ellipsoid;
pub mod gmsh;
pub mod shape;

use std::collections::{BTreeMap, HashMap};

use crate::{Error, Real, Result, Vec3};

pub use cavity::CavityManifold;
pub use ellipsoid::{generate_half_ellipsoid, EllipsoidMeta, EllipsoidSpec};

/// A named surface patch: quadratic triangles over mesh nodes.
#[derive(Debug, Clone)]
pub struct Surface {
    /// Physical tag (Gmsh-compatible integer id).
    pub tag: i32,
    /// Tri6 connectivity in Gmsh order.
    pub tris: Vec<[usize; 6]>,
}

/// How a surface relates to the volume mesh.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurfaceKind {
    /// Every triangle is a face of some tetrahedron; oriented outward from
    /// the solid after [`Mesh::finalize`].
    Boundary,
    /// No triangle touches a volume face; spans an opening. Unattached nodes
    /// are tied.
    Closure,
}

/// Volume mesh with named surfaces.
#[derive(Debug, Clone, Default)]
pub struct Mesh {
    /// Reference node coordinates (meters).
    pub nodes: Vec<Vec3>,
    /// Tet10 connectivity in Gmsh order.
    pub tets: Vec<[usize; 10]>,
    /// Region (physical volume) tag per tetrahedron.
    pub tet_region: Vec<i32>,
    /// Named surface patches.
    pub surfaces: BTreeMap<String, Surface>,
    /// Generator metadata, present only for meshes built by
    /// [`generate_half_ellipsoid`]; required by the analytic fiber path.
    pub ellipsoid: Option<EllipsoidMeta>,
}

/// One tied node: its displacement is the weighted mean of its masters.
/// Masters may themselves be tied provided they appear earlier in the tie
/// order.
#[derive(Debug, Clone)]
pub struct Tie {
    pub node: usize,
    pub masters: Vec<(usize, Real)>,
}

/// Ordered tie relations for closure-only nodes.
///
/// `apply` evaluates tied nodal values from master values; `fold` is the
/// transpose operation, accumulating gradients (or forces) from tied slots
/// back onto masters. Both are exact linear maps, so volumes and their
/// derivatives computed through tied coordinates stay consistent.
#[derive(Debug, Clone, Default)]
pub struct TieMap {
    pub ties: Vec<Tie>,
}

impl TieMap {
    /// Is any node tied?
    pub fn is_empty(&self) -> bool {
        self.ties.is_empty()
    }

    /// Fills tied entries of a nodal 3-vector field (length `3 * n_nodes`).
    pub fn apply(&self, field: &mut [Real]) {
        for tie in &self.ties {
            let mut v = [0.0; 3];
            for &(m, w) in &tie.masters {
                for d in 0..3 {
                    v[d] += w * field[3 * m + d];
                }
            }
            field[3 * tie.node..3 * tie.node + 3].copy_from_slice(&v);
        }
    }

    /// Transpose of [`TieMap::apply`]: folds gradient entries at tied nodes
    /// onto their masters and zeroes the tied slots.
    pub fn fold(&self, grad: &mut [Real]) {
        for tie in self.ties.iter().rev() {
            let g: [Real; 3] = std::array::from_fn(|d| grad[3 * tie.node + d]);
            for d in 0..3 {
                grad[3 * tie.node + d] = 0.0;
            }
            for &(m, w) in &tie.masters {
                for d in 0..3 {
                    grad[3 * m + d] += w * g[d];
                }
            }
        }
    }
}

/// Mesh-derived bookkeeping produced by [`Mesh::finalize`].
#[derive(Debug, Clone, Default)]
pub struct Topology {
    /// Kind of each named surface.
    pub kind: BTreeMap<String, SurfaceKind>,
    /// Per node: does it belong to at least one tetrahedron?
    pub volume_node: Vec<bool>,
    /// Tie relations for closure-only nodes.
    pub ties: TieMap,
}

/// Outward-wound boundary face of a tetrahedron.
#[derive(Debug, Clone, Copy)]
struct VolumeFace {
    corners: [usize; 3],
    mids: [usize; 3],
}

fn sorted3(mut t: [usize; 3]) -> [usize; 3] {
    t.sort_unstable();
    t
}

/// Midside node of tet `conn` on the edge between local corners `i`, `j`.
fn tet_edge_mid(conn: &[usize; 10], i: usize, j: usize) -> usize {
    for (k, &(a, b)) in shape::TET_EDGES.iter().enumerate() {
        if (a, b) == (i, j) || (b, a) == (i, j) {
            return conn[4 + k];
        }
    }
    unreachable!("tet edge ({i},{j}) not found")
}

/// Applies a corner permutation to a Tet10 connectivity, carrying the edge
/// nodes along.
fn permute_tet10(conn: &[usize; 10], perm: [usize; 4]) -> [usize; 10] {
    let mut out = [0usize; 10];
    for i in 0..4 {
        out[i] = conn[perm[i]];
    }
    for (k, &(i, j)) in shape::TET_EDGES.iter().enumerate() {
        out[4 + k] = tet_edge_mid(conn, perm[i], perm[j]);
    }
    out
}

impl Mesh {
    /// Number of nodes.
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Number of tetrahedra.
    pub fn n_tets(&self) -> usize {
        self.tets.len()
    }

    /// Signed volume of the linear (corner) tetrahedron `e`.
    pub fn tet_corner_volume(&self, e: usize) -> Real {
        let c = &self.tets[e];
        let p0 = self.nodes[c[0]];
        let a = self.nodes[c[1]] - p0;
        let b = self.nodes[c[2]] - p0;
        let d = self.nodes[c[3]] - p0;
        a.cross(&b).dot(&d) / 6.0
    }

    /// Named surface lookup.
    pub fn surface(&self, name: &str) -> Result<&Surface> {
        self.surfaces
            .get(name)
            .ok_or_else(|| Error::Mesh(format!("no surface named '{name}'")))
    }

    /// Validates the mesh, fixes orientations in place, classifies surfaces
    /// and builds tie relations. Must be called (once) before assembly.
    pub fn finalize(&mut self) -> Result<Topology> {
        let n = self.nodes.len();
        if self.tets.len() != self.tet_region.len() {
            return Err(Error::Mesh(format!(
                "{} tetrahedra but {} region tags",
                self.tets.len(),
                self.tet_region.len()
            )));
        }
        for (e, conn) in self.tets.iter().enumerate() {
            for &a in conn {
                if a >= n {
                    return Err(Error::Mesh(format!(
                        "tet {e} references node {a} out of {n}"
                    )));
                }
            }
        }
        for (name, s) in &self.surfaces {
            for tri in &s.tris {
                for &a in tri {
                    if a >= n {
                        return Err(Error::Mesh(format!(
                            "surface '{name}' references node {a} out of {n}"
                        )));
                    }
                }
            }
        }

        // Positive orientation of every tetrahedron (corner swap fixes a
        // negative one; edge nodes are permuted along).
        let mut flipped_tets = 0usize;
        for e in 0..self.tets.len() {
            let v = self.tet_corner_volume(e);
            if v == 0.0 || !v.is_finite() {
                return Err(Error::Mesh(format!(
                    "tet {e} is degenerate (corner volume {v:.3e})"
                )));
            }
            if v < 0.0 {
                self.tets[e] = permute_tet10(&self.tets[e], [0, 2, 1, 3]);
                flipped_tets += 1;
            }
        }
        if flipped_tets > 0 {
            log::warn!("reoriented {flipped_tets} negatively ordered tetrahedra");
        }

        // Boundary faces of the volume mesh: sorted corner triple -> outward
        // face, dropping interior faces (seen twice).
        let mut face_map: HashMap<[usize; 3], Option<VolumeFace>> = HashMap::new();
        for conn in &self.tets {
            for f in shape::TET_FACES {
                let corners = [conn[f[0]], conn[f[1]], conn[f[2]]];
                let mids = [
                    tet_edge_mid(conn, f[0], f[1]),
                    tet_edge_mid(conn, f[1], f[2]),
                    tet_edge_mid(conn, f[2], f[0]),
                ];
                let key = sorted3(corners);
                match face_map.entry(key) {
                    std::collections::hash_map::Entry::Vacant(v) => {
                        v.insert(Some(VolumeFace { corners, mids }));
                    }
                    std::collections::hash_map::Entry::Occupied(mut o) => {
                        if o.get().is_none() {
                            return Err(Error::Mesh(format!(
                                "face {key:?} shared by more than two tetrahedra"
                            )));
                        }
                        o.insert(None);
                    }
                }
            }
        }

        let mut volume_node = vec![false; n];
        for conn in &self.tets {
            for &a in conn {
                volume_node[a] = true;
            }
        }

        // Classify each surface and align boundary windings with the
        // solid-outward orientation.
        let mut kind = BTreeMap::new();
        let mut flipped_faces = 0usize;
        let surface_names: Vec<String> = self.surfaces.keys().cloned().collect();
        for name in &surface_names {
            let tris = self.surfaces[name].tris.clone();
            if tris.is_empty() {
                return Err(Error::Mesh(format!("surface '{name}' has no faces")));
            }
            let mut n_boundary = 0usize;
            for tri in &tris {
                let key = sorted3([tri[0], tri[1], tri[2]]);
                match face_map.get(&key) {
                    Some(Some(_)) => n_boundary += 1,
                    Some(None) => {
                        return Err(Error::Mesh(format!(
                            "surface '{name}' contains an interior volume face {key:?}"
                        )))
                    }
                    None => {}
                }
            }
            if n_boundary == 0 {
                kind.insert(name.clone(), SurfaceKind::Closure);
                continue;
            }
            if n_boundary != tris.len() {
                return Err(Error::Mesh(format!(
                    "surface '{name}' mixes volume-attached and free faces \
                     ({n_boundary} of {})",
                    tris.len()
                )));
            }
            kind.insert(name.clone(), SurfaceKind::Boundary);
            let fixed: Vec<[usize; 6]> = tris
                .iter()
                .map(|tri| {
                    let key = sorted3([tri[0], tri[1], tri[2]]);
                    let vf = face_map[&key].as_ref().unwrap();
                    align_face(name, tri, vf, &mut flipped_faces)
                })
                .collect::<Result<_>>()?;
            self.surfaces.get_mut(name).unwrap().tris = fixed;
        }
        if flipped_faces > 0 {
            log::warn!("flipped {flipped_faces} boundary faces to solid-outward orientation");
        }

        let ties = self.build_ties(&kind, &volume_node)?;

        let mut orphans = 0usize;
        let mut surface_node = vec![false; n];
        for s in self.surfaces.values() {
            for tri in &s.tris {
                for &a in tri {
                    surface_node[a] = true;
                }
            }
        }
        for a in 0..n {
            if !volume_node[a] && !surface_node[a] {
                orphans += 1;
            }
        }
        if orphans > 0 {
            log::warn!("{orphans} nodes belong to no element; they are ignored");
        }

        Ok(Topology {
            kind,
            volume_node,
            ties,
        })
    }

    /// Builds tie relations: closure-only corner nodes tie to the mean of the
    /// volume-attached nodes of their incident faces, then closure-only edge
    /// nodes tie to the mean of their edge endpoints.
    fn build_ties(
        &self,
        kind: &BTreeMap<String, SurfaceKind>,
        volume_node: &[bool],
    ) -> Result<TieMap> {
        // Surface-only meshes (volume computations on closed shells) have no
        // degrees of freedom to tie.
        if self.tets.is_empty() {
            return Ok(TieMap::default());
        }
        // Corner ties first (deterministic node order), then edge ties.
        let mut corner_masters: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        let mut edge_ends: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
        for (name, s) in &self.surfaces {
            if kind[name] != SurfaceKind::Closure {
                continue;
            }
            for tri in &s.tris {
                for i in 0..3 {
                    let a = tri[i];
                    if !volume_node[a] {
                        let masters = corner_masters.entry(a).or_default();
                        for &b in tri.iter() {
                            if b != a && volume_node[b] {
                                masters.push(b);
                            }
                        }
                    }
                }
                for (k, &(i, j)) in shape::TRI_EDGES.iter().enumerate() {
                    let m = tri[3 + k];
                    if !volume_node[m] {
                        edge_ends.insert(m, (tri[i], tri[j]));
                    }
                }
            }
        }

        let mut ties = Vec::new();
        let mut tied = vec![false; self.nodes.len()];
        for (node, mut masters) in corner_masters {
            masters.sort_unstable();
            masters.dedup();
            if masters.is_empty() {
                return Err(Error::Mesh(format!(
                    "closure node {node} has no volume-attached neighbors to tie to"
                )));
            }
            let w = 1.0 / masters.len() as Real;
            ties.push(Tie {
                node,
                masters: masters.into_iter().map(|m| (m, w)).collect(),
            });
            tied[node] = true;
        }
        for (node, (a, b)) in edge_ends {
            for end in [a, b] {
                if !volume_node[end] && !tied[end] {
                    return Err(Error::Mesh(format!(
                        "closure edge node {node} depends on unresolved node {end}"
                    )));
                }
            }
            ties.push(Tie {
                node,
                masters: vec![(a, 0.5), (b, 0.5)],
            });
        }
        Ok(TieMap { ties })
    }

    /// Nodes within Euclidean distance `r` of `center` (reference positions).
    pub fn nodes_within(&self, center: Vec3, r: Real) -> Vec<bool> {
        self.nodes
            .iter()
            .map(|&x| (x - center).norm() <= r)
            .collect()
    }

    /// Edge-length statistics (min, mean, max) over tetrahedron edges.
    pub fn edge_length_stats(&self) -> (Real, Real, Real) {
        let mut min = Real::INFINITY;
        let mut max: Real = 0.0;
        let mut sum = 0.0;
        let mut count = 0usize;
        for conn in &self.tets {
            for &(i, j) in &shape::TET_EDGES {
                let l = (self.nodes[conn[i]] - self.nodes[conn[j]]).norm();
                min = min.min(l);
                max = max.max(l);
                sum += l;
                count += 1;
            }
        }
        if count == 0 {
            (0.0, 0.0, 0.0)
        } else {
            (min, sum / count as Real, max)
        }
    }
}

/// Aligns a surface triangle with the outward volume face winding,
/// verifying that its midside nodes agree with the volume mesh.
fn align_face(
    name: &str,
    tri: &[usize; 6],
    vf: &VolumeFace,
    flipped: &mut usize,
) -> Result<[usize; 6]> {
    let c = [tri[0], tri[1], tri[2]];
    // Cyclic rotations of the outward winding.
    let fwd = (0..3).find(|&r| {
        (0..3).all(|i| c[i] == vf.corners[(r + i) % 3])
    });
    if let Some(r) = fwd {
        // Midsides of the rotated outward face.
        let expect: [usize; 3] = std::array::from_fn(|i| vf.mids[(r + i) % 3]);
        if [tri[3], tri[4], tri[5]] != expect {
            return Err(Error::Mesh(format!(
                "surface '{name}' face {c:?} has midside nodes inconsistent with the volume mesh"
            )));
        }
        return Ok(*tri);
    }
    // Reversed winding: flip to outward.
    let rev = (0..3).find(|&r| {
        (0..3).all(|i| c[i] == vf.corners[(r + 3 - i) % 3])
    });
    if rev.is_some() {
        *flipped += 1;
        let flip = [tri[0], tri[2], tri[1], tri[5], tri[4], tri[3]];
        let c2 = [flip[0], flip[1], flip[2]];
        let r = (0..3)
            .find(|&r| (0..3).all(|i| c2[i] == vf.corners[(r + i) % 3]))
            .expect("flipped face must match outward winding");
        let expect: [usize; 3] = std::array::from_fn(|i| vf.mids[(r + i) % 3]);
        if [flip[3], flip[4], flip[5]] != expect {
            return Err(Error::Mesh(format!(
                "surface '{name}' face {c:?} has midside nodes inconsistent with the volume mesh"
            )));
        }
        return Ok(flip);
    }
    Err(Error::Mesh(format!(
        "surface '{name}' face {c:?} does not match any volume face winding"
    )))
}
