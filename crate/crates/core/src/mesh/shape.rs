//! Reference elements: 10-node tetrahedra, 6-node triangles, quadrature.
//!
//! Node ordering follows the Gmsh convention. For the tetrahedron the four
//! vertices come first, then the edge nodes on (0,1), (1,2), (2,0), (0,3),
//! (2,3), (1,3). For the triangle: three vertices, then edge nodes on (0,1),
//! (1,2), (2,0).
//!
//! Shape functions are expressed in barycentric coordinates `L`. For the
//! tetrahedron `L = (L0, L1, L2, L3)` with `L0 = 1 - xi - eta - zeta`;
//! parametric gradients are taken with respect to `(xi, eta, zeta) =
//! (L1, L2, L3)`. Quadrature weights include the reference-element measure
//! (1/6 for the tetrahedron, 1/2 for the triangle), so a physical integral is
//! `sum_q w_q f(xi_q) |det J_q|`.

use crate::Real;

/// Tetrahedron edge list in Gmsh order: node `4 + k` sits on `TET_EDGES[k]`.
pub const TET_EDGES: [(usize, usize); 6] = [(0, 1), (1, 2), (2, 0), (0, 3), (2, 3), (1, 3)];

/// Triangle edge list in Gmsh order: node `3 + k` sits on `TRI_EDGES[k]`.
pub const TRI_EDGES: [(usize, usize); 3] = [(0, 1), (1, 2), (2, 0)];

/// Faces of a tetrahedron (corner indices), wound so the face normal points
/// out of a positively oriented element.
pub const TET_FACES: [[usize; 3]; 4] = [[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]];

/// Quadratic tetrahedron shape functions at barycentric `l`.
pub fn tet10_n(l: &[Real; 4]) -> [Real; 10] {
    let v = |i: usize| l[i] * (2.0 * l[i] - 1.0);
    let e = |i: usize, j: usize| 4.0 * l[i] * l[j];
    [
        v(0),
        v(1),
        v(2),
        v(3),
        e(0, 1),
        e(1, 2),
        e(2, 0),
        e(0, 3),
        e(2, 3),
        e(1, 3),
    ]
}

/// Parametric gradients of the quadratic tetrahedron shape functions.
pub fn tet10_dn(l: &[Real; 4]) -> [[Real; 3]; 10] {
    // dL/d(xi,eta,zeta)
    const DL: [[Real; 3]; 4] = [
        [-1.0, -1.0, -1.0],
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
    ];
    let mut dn = [[0.0; 3]; 10];
    for i in 0..4 {
        let c = 4.0 * l[i] - 1.0;
        for d in 0..3 {
            dn[i][d] = c * DL[i][d];
        }
    }
    for (k, &(i, j)) in TET_EDGES.iter().enumerate() {
        for d in 0..3 {
            dn[4 + k][d] = 4.0 * (l[i] * DL[j][d] + l[j] * DL[i][d]);
        }
    }
    dn
}

/// Quadratic triangle shape functions at barycentric `l`.
pub fn tri6_n(l: &[Real; 3]) -> [Real; 6] {
    let v = |i: usize| l[i] * (2.0 * l[i] - 1.0);
    let e = |i: usize, j: usize| 4.0 * l[i] * l[j];
    [v(0), v(1), v(2), e(0, 1), e(1, 2), e(2, 0)]
}

/// Parametric gradients of the quadratic triangle shape functions with
/// respect to `(xi, eta) = (L1, L2)`.
pub fn tri6_dn(l: &[Real; 3]) -> [[Real; 2]; 6] {
    const DL: [[Real; 2]; 3] = [[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]];
    let mut dn = [[0.0; 2]; 6];
    for i in 0..3 {
        let c = 4.0 * l[i] - 1.0;
        for d in 0..2 {
            dn[i][d] = c * DL[i][d];
        }
    }
    for (k, &(i, j)) in TRI_EDGES.iter().enumerate() {
        for d in 0..2 {
            dn[3 + k][d] = 4.0 * (l[i] * DL[j][d] + l[j] * DL[i][d]);
        }
    }
    dn
}

/// One quadrature point: barycentric position and weight (including the
/// reference measure).
pub type TetPoint = ([Real; 4], Real);
/// Triangle quadrature point.
pub type TriPoint = ([Real; 3], Real);

/// Keast 5-point rule, exact for polynomials of degree 3.
///
/// The centroid carries a negative weight; the rule is nevertheless the
/// standard choice for quadratic tetrahedra.
pub const TET_KEAST5: [TetPoint; 5] = {
    const V: Real = 1.0 / 6.0;
    const A: Real = 0.25;
    const B: Real = 0.5;
    const C: Real = 1.0 / 6.0;
    [
        ([A, A, A, A], -0.8 * V),
        ([B, C, C, C], 0.45 * V),
        ([C, B, C, C], 0.45 * V),
        ([C, C, B, C], 0.45 * V),
        ([C, C, C, B], 0.45 * V),
    ]
};

/// Keast 14-point rule, exact for polynomials of degree 5. Available as an
/// accuracy upgrade over [`TET_KEAST5`].
pub fn tet_keast14() -> Vec<TetPoint> {
    const V: Real = 1.0 / 6.0;
    let mut pts = Vec::with_capacity(14);
    // Two 4-point orbits (a,a,a,1-3a) and one 6-point orbit (b,b,c,c).
    let orbits4: [(Real, Real); 2] = [
        (0.092_735_250_310_891_2, 0.073_493_043_116_361_95),
        (0.310_885_919_263_300_6, 0.112_687_925_718_015_8),
    ];
    for (a, w) in orbits4 {
        let d = 1.0 - 3.0 * a;
        let mut p = [[a; 4]; 4];
        for i in 0..4 {
            p[i][i] = d;
            pts.push((p[i], w * V));
        }
    }
    let b = 0.045_503_704_125_649_65;
    let c = 0.5 - b;
    let w6 = 0.042_546_020_777_081_47 * V;
    let pairs = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];
    for (i, j) in pairs {
        let mut p = [c; 4];
        p[i] = b;
        p[j] = b;
        pts.push((p, w6));
    }
    pts
}

/// Dunavant 6-point triangle rule, exact for polynomials of degree 4; this
/// integrates the quadratic-surface volume flux exactly.
pub const TRI_DUNAVANT6: [TriPoint; 6] = {
    const S: Real = 0.5;
    const A: Real = 0.445_948_490_915_965;
    const WA: Real = 0.223_381_589_678_011 * S;
    const B: Real = 0.091_576_213_509_771;
    const WB: Real = 0.109_951_743_655_322 * S;
    [
        ([1.0 - 2.0 * A, A, A], WA),
        ([A, 1.0 - 2.0 * A, A], WA),
        ([A, A, 1.0 - 2.0 * A], WA),
        ([1.0 - 2.0 * B, B, B], WB),
        ([B, 1.0 - 2.0 * B, B], WB),
        ([B, B, 1.0 - 2.0 * B], WB),
    ]
};

/// Returns the tetrahedron rule for the requested polynomial degree.
///
/// Degree 3 (default) and degree 5 are available.
pub fn tet_rule(degree: usize) -> crate::Result<Vec<TetPoint>> {
    match degree {
        0..=3 => Ok(TET_KEAST5.to_vec()),
        4 | 5 => Ok(tet_keast14()),
        d => Err(crate::Error::Config(format!(
            "unsupported tetrahedron quadrature degree {d}; available: 3, 5"
        ))),
    }
}
