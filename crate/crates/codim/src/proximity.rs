//! Exact primitive-pair distances with first and second derivatives,
//! subcase classification, and intersection predicates.
//!
//! Distances are computed and differentiated on squared distance internally
//! and reported as the square root, which keeps the intermediate algebra
//! regular as d approaches zero. Each pair kind is classified into the
//! region (subcase) whose smooth branch realizes the minimum; derivatives
//! are those of the active branch. The point-point and point-edge branches
//! carry hand-derived derivatives; the edge-edge and point-triangle interior
//! branches are differentiated with [`crate::math::Dual2`].

use crate::math::{dcross, ddot, dvec3_const, dvec3_var, DVec3, Dual2};
use crate::{Result, SimError};
use nalgebra::{Matrix3, SMatrix, SVector, Vector3};

/// Maximum stencil degrees of freedom (4 vertices x 3 coordinates).
pub const MAX_DOF: usize = 12;

pub type StencilVec = SVector<f64, MAX_DOF>;
pub type StencilMat = SMatrix<f64, MAX_DOF, MAX_DOF>;

/// Discrete contact stencil taxonomy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PairKind {
    PointPoint,
    PointEdge,
    EdgeEdge,
    PointTriangle,
}

impl PairKind {
    /// Stencil vertex count (PP: 2, PE: 3, EE/PT: 4).
    pub fn vertex_count(self) -> usize {
        match self {
            PairKind::PointPoint => 2,
            PairKind::PointEdge => 3,
            PairKind::EdgeEdge | PairKind::PointTriangle => 4,
        }
    }
}

/// Region realizing the minimum distance of a stencil.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subcase {
    /// Point-point pair (single region).
    PpPp,
    /// Point vs edge endpoint 0 / endpoint 1 / interior.
    PeEnd0,
    PeEnd1,
    PeInterior,
    /// Edge-edge: endpoint-endpoint corners, endpoint-interior sides,
    /// interior-interior.
    EeA0B0,
    EeA0B1,
    EeA1B0,
    EeA1B1,
    EeA0Int,
    EeA1Int,
    EeIntB0,
    EeIntB1,
    EeInterior,
    /// Point-triangle: closest to a vertex, an edge, or the face interior.
    PtV0,
    PtV1,
    PtV2,
    PtE01,
    PtE12,
    PtE20,
    PtInterior,
}

/// Distance value with exact derivatives over the stencil coordinates.
///
/// Gradient and Hessian are padded to [`MAX_DOF`]; only the leading
/// `3 * vertex_count` entries are meaningful.
#[derive(Clone, Debug)]
pub struct DistanceResult {
    pub value: f64,
    pub subcase: Subcase,
    pub gradient: StencilVec,
    pub hessian: StencilMat,
    pub vertex_count: usize,
}

impl DistanceResult {
    pub fn dof(&self) -> usize {
        3 * self.vertex_count
    }
}

fn check_coords(kind: PairKind, coords: &[Vector3<f64>]) -> Result<()> {
    if coords.len() != kind.vertex_count() {
        return Err(SimError::InvalidPrimitive(format!(
            "{:?} stencil expects {} vertices, got {}",
            kind,
            kind.vertex_count(),
            coords.len()
        )));
    }
    Ok(())
}

fn check_edge(a: &Vector3<f64>, b: &Vector3<f64>, which: &str) -> Result<()> {
    if (b - a).norm_squared() == 0.0 {
        return Err(SimError::DegeneratePrimitive(format!(
            "zero-length edge ({which})"
        )));
    }
    Ok(())
}

fn check_triangle(t0: &Vector3<f64>, t1: &Vector3<f64>, t2: &Vector3<f64>) -> Result<()> {
    if (t1 - t0).cross(&(t2 - t0)).norm_squared() == 0.0 {
        return Err(SimError::DegeneratePrimitive(
            "zero-area triangle".to_string(),
        ));
    }
    Ok(())
}

/// Clamped parameter of the closest point on segment `[a, b]` to `p`.
fn segment_param(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let u = b - a;
    let t = u.dot(&(p - a)) / u.norm_squared();
    t.clamp(0.0, 1.0)
}

/// Closest-point parameters (s on A, t on B) between two segments.
/// Follows the standard clamping cascade; parallel pairs resolve onto
/// endpoint subcases deterministically.
fn seg_seg_params(
    a0: &Vector3<f64>,
    a1: &Vector3<f64>,
    b0: &Vector3<f64>,
    b1: &Vector3<f64>,
) -> (f64, f64) {
    let d1 = a1 - a0;
    let d2 = b1 - b0;
    let r = a0 - b0;
    let a = d1.norm_squared();
    let e = d2.norm_squared();
    let f = d2.dot(&r);
    let c = d1.dot(&r);
    let b = d1.dot(&d2);
    let denom = a * e - b * b;
    let mut s = if denom != 0.0 {
        ((b * f - c * e) / denom).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let mut t = (b * s + f) / e;
    if t < 0.0 {
        t = 0.0;
        s = (-c / a).clamp(0.0, 1.0);
    } else if t > 1.0 {
        t = 1.0;
        s = ((b - c) / a).clamp(0.0, 1.0);
    }
    (s, t)
}

/// Feature region of the closest point on triangle `(t0, t1, t2)` to `p`.
fn triangle_region(
    p: &Vector3<f64>,
    t0: &Vector3<f64>,
    t1: &Vector3<f64>,
    t2: &Vector3<f64>,
) -> Subcase {
    let ab = t1 - t0;
    let ac = t2 - t0;
    let ap = p - t0;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return Subcase::PtV0;
    }
    let bp = p - t1;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return Subcase::PtV1;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return Subcase::PtE01;
    }
    let cp = p - t2;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return Subcase::PtV2;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return Subcase::PtE20;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return Subcase::PtE12;
    }
    Subcase::PtInterior
}

// ---------------------------------------------------------------------------
// Derivative branches. Each writes squared-distance derivatives into the
// padded stencil arrays at the given global vertex slots, and returns the
// squared distance.
// ---------------------------------------------------------------------------

/// Point-point branch: s = |p - q|^2, p at slot `ip`, q at slot `iq`.
fn pp_branch(
    p: &Vector3<f64>,
    q: &Vector3<f64>,
    ip: usize,
    iq: usize,
    grad: &mut StencilVec,
    hess: &mut StencilMat,
) -> f64 {
    let diff = p - q;
    for c in 0..3 {
        grad[3 * ip + c] = 2.0 * diff[c];
        grad[3 * iq + c] = -2.0 * diff[c];
    }
    for c in 0..3 {
        hess[(3 * ip + c, 3 * ip + c)] = 2.0;
        hess[(3 * iq + c, 3 * iq + c)] = 2.0;
        hess[(3 * ip + c, 3 * iq + c)] = -2.0;
        hess[(3 * iq + c, 3 * ip + c)] = -2.0;
    }
    diff.norm_squared()
}

fn put_block(hess: &mut StencilMat, bi: usize, bj: usize, m: &Matrix3<f64>) {
    for r in 0..3 {
        for c in 0..3 {
            hess[(3 * bi + r, 3 * bj + c)] = m[(r, c)];
        }
    }
}

/// Point-edge interior branch: s = |w|^2 - (u.w)^2 / |u|^2 with w = p - a,
/// u = b - a. Analytic derivatives; point at slot `ip`, edge ends at slots
/// `ia`, `ib`.
fn pe_branch(
    p: &Vector3<f64>,
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    ip: usize,
    ia: usize,
    ib: usize,
    grad: &mut StencilVec,
    hess: &mut StencilMat,
) -> f64 {
    let w = p - a;
    let u = b - a;
    let l = u.norm_squared();
    let t = u.dot(&w) / l;
    let q = w - u * t;
    let s = q.norm_squared();

    let gw = q * 2.0;
    let gu = q * (-2.0 * t);
    for c in 0..3 {
        grad[3 * ip + c] = gw[c];
        grad[3 * ib + c] = gu[c];
        grad[3 * ia + c] = -gw[c] - gu[c];
    }

    let eye = Matrix3::identity();
    let proj = eye - (u * u.transpose()) / l;
    let qtu = q - u * t; // q - t*u
    let s_ww = proj * 2.0;
    // d(2q)/du
    let s_wu = eye * (-2.0 * t) - (u * qtu.transpose()) * (2.0 / l);
    let s_uw = s_wu.transpose();
    let s_uu = eye * (2.0 * t * t) - (qtu * qtu.transpose()) * (2.0 / l);

    let h_pp = s_ww;
    let h_pb = s_wu;
    let h_bb = s_uu;
    let h_pa = -s_ww - s_wu;
    let h_ba = -s_uw - s_uu;
    let h_aa = s_ww + s_wu + s_uw + s_uu;

    put_block(hess, ip, ip, &h_pp);
    put_block(hess, ip, ib, &h_pb);
    put_block(hess, ib, ip, &h_pb.transpose());
    put_block(hess, ib, ib, &h_bb);
    put_block(hess, ip, ia, &h_pa);
    put_block(hess, ia, ip, &h_pa.transpose());
    put_block(hess, ib, ia, &h_ba);
    put_block(hess, ia, ib, &h_ba.transpose());
    put_block(hess, ia, ia, &h_aa);
    s
}

/// Squared distance of the "signed projection onto a cross-product normal"
/// form shared by the edge-edge and point-triangle interior branches:
/// s = ((r1 - r0) . n)^2 / |n|^2 with n = (e1a - e0a) x (e1b - e0b).
fn normal_projection_sq<const N: usize>(r: &DVec3<N>, n: &DVec3<N>) -> Dual2<N> {
    let num = ddot(r, n);
    num * num / ddot(n, n)
}

fn scatter_dual12(
    d: &Dual2<12>,
    grad: &mut StencilVec,
    hess: &mut StencilMat,
) {
    let h = d.hessian();
    for i in 0..12 {
        grad[i] = d.g[i];
        for j in 0..12 {
            hess[(i, j)] = h[(i, j)];
        }
    }
}

/// Edge-edge interior branch over slots [a0, a1, b0, b1].
fn ee_interior_branch(
    coords: &[Vector3<f64>],
    grad: &mut StencilVec,
    hess: &mut StencilMat,
) -> f64 {
    let a0 = dvec3_var::<12>(&coords[0], 0);
    let a1 = dvec3_var::<12>(&coords[1], 1);
    let b0 = dvec3_var::<12>(&coords[2], 2);
    let b1 = dvec3_var::<12>(&coords[3], 3);
    let ua = crate::math::dsub(&a1, &a0);
    let ub = crate::math::dsub(&b1, &b0);
    let n = dcross(&ua, &ub);
    let r = crate::math::dsub(&b0, &a0);
    let s = normal_projection_sq(&r, &n);
    scatter_dual12(&s, grad, hess);
    s.v
}

/// Point-triangle interior branch over slots [p, t0, t1, t2].
fn pt_interior_branch(
    coords: &[Vector3<f64>],
    grad: &mut StencilVec,
    hess: &mut StencilMat,
) -> f64 {
    let p = dvec3_var::<12>(&coords[0], 0);
    let t0 = dvec3_var::<12>(&coords[1], 1);
    let t1 = dvec3_var::<12>(&coords[2], 2);
    let t2 = dvec3_var::<12>(&coords[3], 3);
    let e1 = crate::math::dsub(&t1, &t0);
    let e2 = crate::math::dsub(&t2, &t0);
    let n = dcross(&e1, &e2);
    let r = crate::math::dsub(&p, &t0);
    let s = normal_projection_sq(&r, &n);
    scatter_dual12(&s, grad, hess);
    s.v
}

// Keep the constant-vector helper alive for downstream energy code.
#[allow(dead_code)]
fn _const_usage<const N: usize>(v: &Vector3<f64>) -> DVec3<N> {
    dvec3_const(v)
}

/// Convert squared-distance derivatives in-place to derivatives of the
/// distance itself: d = sqrt(s).
fn to_distance_derivatives(s: f64, grad: &mut StencilVec, hess: &mut StencilMat) -> f64 {
    let d = s.sqrt();
    let inv2d = 1.0 / (2.0 * d);
    *grad *= inv2d;
    let outer = *grad * grad.transpose();
    *hess = *hess * inv2d - outer / d;
    d
}

/// Minimum distance and subcase without derivatives.
pub fn pair_distance_value(kind: PairKind, coords: &[Vector3<f64>]) -> Result<(f64, Subcase)> {
    check_coords(kind, coords)?;
    match kind {
        PairKind::PointPoint => Ok(((coords[0] - coords[1]).norm(), Subcase::PpPp)),
        PairKind::PointEdge => {
            check_edge(&coords[1], &coords[2], "point-edge stencil")?;
            let t = segment_param(&coords[0], &coords[1], &coords[2]);
            let closest = coords[1] + (coords[2] - coords[1]) * t;
            let sub = if t <= 0.0 {
                Subcase::PeEnd0
            } else if t >= 1.0 {
                Subcase::PeEnd1
            } else {
                Subcase::PeInterior
            };
            Ok(((coords[0] - closest).norm(), sub))
        }
        PairKind::EdgeEdge => {
            check_edge(&coords[0], &coords[1], "edge A")?;
            check_edge(&coords[2], &coords[3], "edge B")?;
            let (s, t) = seg_seg_params(&coords[0], &coords[1], &coords[2], &coords[3]);
            let pa = coords[0] + (coords[1] - coords[0]) * s;
            let pb = coords[2] + (coords[3] - coords[2]) * t;
            let sub = match (param_side(s), param_side(t)) {
                (Side::Lo, Side::Lo) => Subcase::EeA0B0,
                (Side::Lo, Side::Hi) => Subcase::EeA0B1,
                (Side::Hi, Side::Lo) => Subcase::EeA1B0,
                (Side::Hi, Side::Hi) => Subcase::EeA1B1,
                (Side::Lo, Side::In) => Subcase::EeA0Int,
                (Side::Hi, Side::In) => Subcase::EeA1Int,
                (Side::In, Side::Lo) => Subcase::EeIntB0,
                (Side::In, Side::Hi) => Subcase::EeIntB1,
                (Side::In, Side::In) => Subcase::EeInterior,
            };
            Ok(((pa - pb).norm(), sub))
        }
        PairKind::PointTriangle => {
            check_triangle(&coords[1], &coords[2], &coords[3])?;
            let sub = triangle_region(&coords[0], &coords[1], &coords[2], &coords[3]);
            let d = match sub {
                Subcase::PtV0 => (coords[0] - coords[1]).norm(),
                Subcase::PtV1 => (coords[0] - coords[2]).norm(),
                Subcase::PtV2 => (coords[0] - coords[3]).norm(),
                Subcase::PtE01 => point_edge_value(&coords[0], &coords[1], &coords[2]),
                Subcase::PtE12 => point_edge_value(&coords[0], &coords[2], &coords[3]),
                Subcase::PtE20 => point_edge_value(&coords[0], &coords[3], &coords[1]),
                Subcase::PtInterior => {
                    let n = (coords[2] - coords[1]).cross(&(coords[3] - coords[1]));
                    ((coords[0] - coords[1]).dot(&n)).abs() / n.norm()
                }
                _ => unreachable!(),
            };
            Ok((d, sub))
        }
    }
}

fn point_edge_value(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let t = segment_param(p, a, b);
    (p - (a + (b - a) * t)).norm()
}

enum Side {
    Lo,
    In,
    Hi,
}

fn param_side(t: f64) -> Side {
    if t <= 0.0 {
        Side::Lo
    } else if t >= 1.0 {
        Side::Hi
    } else {
        Side::In
    }
}

/// Minimum distance between two primitives with exact derivatives of the
/// active smooth branch.
pub fn pair_distance(kind: PairKind, coords: &[Vector3<f64>]) -> Result<DistanceResult> {
    check_coords(kind, coords)?;
    let mut grad = StencilVec::zeros();
    let mut hess = StencilMat::zeros();
    let (s, subcase) = match kind {
        PairKind::PointPoint => {
            let s = pp_branch(&coords[0], &coords[1], 0, 1, &mut grad, &mut hess);
            (s, Subcase::PpPp)
        }
        PairKind::PointEdge => {
            check_edge(&coords[1], &coords[2], "point-edge stencil")?;
            let t = segment_param(&coords[0], &coords[1], &coords[2]);
            if t <= 0.0 {
                let s = pp_branch(&coords[0], &coords[1], 0, 1, &mut grad, &mut hess);
                (s, Subcase::PeEnd0)
            } else if t >= 1.0 {
                let s = pp_branch(&coords[0], &coords[2], 0, 2, &mut grad, &mut hess);
                (s, Subcase::PeEnd1)
            } else {
                let s = pe_branch(&coords[0], &coords[1], &coords[2], 0, 1, 2, &mut grad, &mut hess);
                (s, Subcase::PeInterior)
            }
        }
        PairKind::EdgeEdge => {
            check_edge(&coords[0], &coords[1], "edge A")?;
            check_edge(&coords[2], &coords[3], "edge B")?;
            let (sp, tp) = seg_seg_params(&coords[0], &coords[1], &coords[2], &coords[3]);
            match (param_side(sp), param_side(tp)) {
                (Side::Lo, Side::Lo) => {
                    let s = pp_branch(&coords[0], &coords[2], 0, 2, &mut grad, &mut hess);
                    (s, Subcase::EeA0B0)
                }
                (Side::Lo, Side::Hi) => {
                    let s = pp_branch(&coords[0], &coords[3], 0, 3, &mut grad, &mut hess);
                    (s, Subcase::EeA0B1)
                }
                (Side::Hi, Side::Lo) => {
                    let s = pp_branch(&coords[1], &coords[2], 1, 2, &mut grad, &mut hess);
                    (s, Subcase::EeA1B0)
                }
                (Side::Hi, Side::Hi) => {
                    let s = pp_branch(&coords[1], &coords[3], 1, 3, &mut grad, &mut hess);
                    (s, Subcase::EeA1B1)
                }
                (Side::Lo, Side::In) => {
                    let s = pe_branch(&coords[0], &coords[2], &coords[3], 0, 2, 3, &mut grad, &mut hess);
                    (s, Subcase::EeA0Int)
                }
                (Side::Hi, Side::In) => {
                    let s = pe_branch(&coords[1], &coords[2], &coords[3], 1, 2, 3, &mut grad, &mut hess);
                    (s, Subcase::EeA1Int)
                }
                (Side::In, Side::Lo) => {
                    let s = pe_branch(&coords[2], &coords[0], &coords[1], 2, 0, 1, &mut grad, &mut hess);
                    (s, Subcase::EeIntB0)
                }
                (Side::In, Side::Hi) => {
                    let s = pe_branch(&coords[3], &coords[0], &coords[1], 3, 0, 1, &mut grad, &mut hess);
                    (s, Subcase::EeIntB1)
                }
                (Side::In, Side::In) => {
                    let s = ee_interior_branch(coords, &mut grad, &mut hess);
                    (s, Subcase::EeInterior)
                }
            }
        }
        PairKind::PointTriangle => {
            check_triangle(&coords[1], &coords[2], &coords[3])?;
            let sub = triangle_region(&coords[0], &coords[1], &coords[2], &coords[3]);
            let s = match sub {
                Subcase::PtV0 => pp_branch(&coords[0], &coords[1], 0, 1, &mut grad, &mut hess),
                Subcase::PtV1 => pp_branch(&coords[0], &coords[2], 0, 2, &mut grad, &mut hess),
                Subcase::PtV2 => pp_branch(&coords[0], &coords[3], 0, 3, &mut grad, &mut hess),
                Subcase::PtE01 => {
                    pe_branch(&coords[0], &coords[1], &coords[2], 0, 1, 2, &mut grad, &mut hess)
                }
                Subcase::PtE12 => {
                    pe_branch(&coords[0], &coords[2], &coords[3], 0, 2, 3, &mut grad, &mut hess)
                }
                Subcase::PtE20 => {
                    pe_branch(&coords[0], &coords[3], &coords[1], 0, 3, 1, &mut grad, &mut hess)
                }
                Subcase::PtInterior => pt_interior_branch(coords, &mut grad, &mut hess),
                _ => unreachable!(),
            };
            (s, sub)
        }
    };
    let value = to_distance_derivatives(s, &mut grad, &mut hess);
    Ok(DistanceResult {
        value,
        subcase,
        gradient: grad,
        hessian: hess,
        vertex_count: kind.vertex_count(),
    })
}

/// Closest-point weights of a stencil: signed coefficients such that the
/// relative contact-point motion is `sum_k c_k * dx_k` (positive for the
/// first primitive, negative for the second), plus the contact normal from
/// the second primitive's closest point toward the first's.
///
/// Degenerate (zero-distance) pairs return a zero normal.
pub fn closest_weights(
    kind: PairKind,
    coords: &[Vector3<f64>],
) -> Result<([f64; 4], Vector3<f64>)> {
    check_coords(kind, coords)?;
    let (wa, wb, pa, pb): (Vec<(usize, f64)>, Vec<(usize, f64)>, Vector3<f64>, Vector3<f64>) =
        match kind {
            PairKind::PointPoint => (
                vec![(0, 1.0)],
                vec![(1, 1.0)],
                coords[0],
                coords[1],
            ),
            PairKind::PointEdge => {
                let t = segment_param(&coords[0], &coords[1], &coords[2]);
                let p = coords[1] + (coords[2] - coords[1]) * t;
                (
                    vec![(0, 1.0)],
                    vec![(1, 1.0 - t), (2, t)],
                    coords[0],
                    p,
                )
            }
            PairKind::EdgeEdge => {
                let (s, t) = seg_seg_params(&coords[0], &coords[1], &coords[2], &coords[3]);
                let p = coords[0] + (coords[1] - coords[0]) * s;
                let q = coords[2] + (coords[3] - coords[2]) * t;
                (
                    vec![(0, 1.0 - s), (1, s)],
                    vec![(2, 1.0 - t), (3, t)],
                    p,
                    q,
                )
            }
            PairKind::PointTriangle => {
                let w = triangle_closest_barycentric(&coords[0], &coords[1], &coords[2], &coords[3]);
                let q = coords[1] * w[0] + coords[2] * w[1] + coords[3] * w[2];
                (
                    vec![(0, 1.0)],
                    vec![(1, w[0]), (2, w[1]), (3, w[2])],
                    coords[0],
                    q,
                )
            }
        };
    let mut c = [0.0; 4];
    for (i, w) in wa {
        c[i] += w;
    }
    for (i, w) in wb {
        c[i] -= w;
    }
    let diff = pa - pb;
    let n = diff.norm();
    let normal = if n > 0.0 {
        diff / n
    } else {
        Vector3::zeros()
    };
    Ok((c, normal))
}

/// Barycentric coordinates of the closest point on the (closed) triangle.
fn triangle_closest_barycentric(
    p: &Vector3<f64>,
    t0: &Vector3<f64>,
    t1: &Vector3<f64>,
    t2: &Vector3<f64>,
) -> [f64; 3] {
    match triangle_region(p, t0, t1, t2) {
        Subcase::PtV0 => [1.0, 0.0, 0.0],
        Subcase::PtV1 => [0.0, 1.0, 0.0],
        Subcase::PtV2 => [0.0, 0.0, 1.0],
        Subcase::PtE01 => {
            let t = segment_param(p, t0, t1);
            [1.0 - t, t, 0.0]
        }
        Subcase::PtE12 => {
            let t = segment_param(p, t1, t2);
            [0.0, 1.0 - t, t]
        }
        Subcase::PtE20 => {
            let t = segment_param(p, t2, t0);
            [t, 0.0, 1.0 - t]
        }
        _ => {
            // interior: project onto the plane and solve for barycentrics
            let e1 = t1 - t0;
            let e2 = t2 - t0;
            let n = e1.cross(&e2);
            let q = p - n * ((p - t0).dot(&n) / n.norm_squared());
            let d = q - t0;
            let d11 = e1.norm_squared();
            let d12 = e1.dot(&e2);
            let d22 = e2.norm_squared();
            let r1 = d.dot(&e1);
            let r2 = d.dot(&e2);
            let det = d11 * d22 - d12 * d12;
            let w1 = (d22 * r1 - d12 * r2) / det;
            let w2 = (d11 * r2 - d12 * r1) / det;
            [1.0 - w1 - w2, w1, w2]
        }
    }
}

/// True iff the minimum segment-segment distance is below `tol`.
pub fn segments_intersect(
    a0: &Vector3<f64>,
    a1: &Vector3<f64>,
    b0: &Vector3<f64>,
    b1: &Vector3<f64>,
    tol: f64,
) -> bool {
    let (s, t) = seg_seg_params(a0, a1, b0, b1);
    let pa = a0 + (a1 - a0) * s;
    let pb = b0 + (b1 - b0) * t;
    (pa - pb).norm() < tol
}

fn orient3d(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>, d: &Vector3<f64>) -> f64 {
    (b - a).cross(&(c - a)).dot(&(d - a))
}

/// True iff the open segment (s0, s1) transversally crosses the closed
/// triangle (t0, t1, t2). Coplanar segments never cross.
pub fn segment_triangle_intersect(
    s0: &Vector3<f64>,
    s1: &Vector3<f64>,
    t0: &Vector3<f64>,
    t1: &Vector3<f64>,
    t2: &Vector3<f64>,
) -> Result<bool> {
    check_triangle(t0, t1, t2)?;
    let v0 = orient3d(t0, t1, t2, s0);
    let v1 = orient3d(t0, t1, t2, s1);
    // endpoints strictly on opposite sides of the supporting plane
    if v0 == 0.0 || v1 == 0.0 || (v0 > 0.0) == (v1 > 0.0) {
        return Ok(false);
    }
    let u = orient3d(s0, s1, t0, t1);
    let v = orient3d(s0, s1, t1, t2);
    let w = orient3d(s0, s1, t2, t0);
    Ok((u >= 0.0 && v >= 0.0 && w >= 0.0) || (u <= 0.0 && v <= 0.0 && w <= 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(x: f64, y: f64, z: f64) -> Vector3<f64> {
        Vector3::new(x, y, z)
    }

    #[test]
    fn pp_pythagorean() {
        let r = pair_distance(PairKind::PointPoint, &[v(0.0, 0.0, 0.0), v(3.0, 4.0, 0.0)]).unwrap();
        assert_relative_eq!(r.value, 5.0, epsilon = 1e-14);
        assert_eq!(r.subcase, Subcase::PpPp);
    }

    #[test]
    fn pe_perpendicular_foot() {
        let r = pair_distance(
            PairKind::PointEdge,
            &[v(0.0, 1.0, 0.0), v(-1.0, 0.0, 0.0), v(1.0, 0.0, 0.0)],
        )
        .unwrap();
        assert_relative_eq!(r.value, 1.0, epsilon = 1e-14);
        assert_eq!(r.subcase, Subcase::PeInterior);
    }

    #[test]
    fn ee_skew_perpendicular() {
        let r = pair_distance(
            PairKind::EdgeEdge,
            &[
                v(0.0, 0.0, 0.0),
                v(1.0, 0.0, 0.0),
                v(0.5, 1.0, -0.5),
                v(0.5, 1.0, 0.5),
            ],
        )
        .unwrap();
        assert_relative_eq!(r.value, 1.0, epsilon = 1e-14);
        assert_eq!(r.subcase, Subcase::EeInterior);
    }

    #[test]
    fn degenerate_primitives_are_rejected() {
        let e = pair_distance(
            PairKind::PointEdge,
            &[v(0.0, 1.0, 0.0), v(2.0, 0.0, 0.0), v(2.0, 0.0, 0.0)],
        );
        assert!(matches!(e, Err(SimError::DegeneratePrimitive(_))));
        let t = pair_distance(
            PairKind::PointTriangle,
            &[
                v(0.0, 1.0, 0.0),
                v(0.0, 0.0, 0.0),
                v(1.0, 0.0, 0.0),
                v(2.0, 0.0, 0.0),
            ],
        );
        assert!(matches!(t, Err(SimError::DegeneratePrimitive(_))));
    }

    fn rand_v(rng: &mut ChaCha8Rng) -> Vector3<f64> {
        v(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        )
    }

    fn rand_coords(kind: PairKind, rng: &mut ChaCha8Rng) -> Vec<Vector3<f64>> {
        (0..kind.vertex_count()).map(|_| rand_v(rng)).collect()
    }

    /// Reject configurations whose closest-point parameters sit within
    /// `margin` of a region boundary; derivatives are discontinuous there.
    fn near_subcase_boundary(kind: PairKind, coords: &[Vector3<f64>], margin: f64) -> bool {
        match kind {
            PairKind::PointPoint => false,
            PairKind::PointEdge => {
                let u = coords[2] - coords[1];
                let t = u.dot(&(coords[0] - coords[1])) / u.norm_squared();
                (t - 0.0).abs() < margin || (t - 1.0).abs() < margin
            }
            PairKind::EdgeEdge => {
                let (s, t) = seg_seg_params(&coords[0], &coords[1], &coords[2], &coords[3]);
                // also reject near-parallel edges: interior branch is singular
                let n = (coords[1] - coords[0]).cross(&(coords[3] - coords[2]));
                [s, t]
                    .iter()
                    .any(|p| (p - 0.0).abs() < margin || (p - 1.0).abs() < margin)
                    || n.norm() < 1e-3
            }
            PairKind::PointTriangle => {
                // perturb and check that the region is stable
                let base = triangle_region(&coords[0], &coords[1], &coords[2], &coords[3]);
                let mut unstable = false;
                for c in 0..3 {
                    for dir in [-1.0, 1.0] {
                        let mut p = coords[0];
                        p[c] += dir * margin;
                        if triangle_region(&p, &coords[1], &coords[2], &coords[3]) != base {
                            unstable = true;
                        }
                    }
                }
                unstable
            }
        }
    }

    fn fd_check(kind: PairKind, coords: &[Vector3<f64>]) {
        let r = pair_distance(kind, coords).unwrap();
        let dof = r.dof();
        let e = 1e-6;
        for i in 0..dof {
            let mut cp = coords.to_vec();
            let mut cm = coords.to_vec();
            cp[i / 3][i % 3] += e;
            cm[i / 3][i % 3] -= e;
            let dp = pair_distance(kind, &cp).unwrap();
            let dm = pair_distance(kind, &cm).unwrap();
            let fd = (dp.value - dm.value) / (2.0 * e);
            assert_relative_eq!(r.gradient[i], fd, max_relative = 1e-4, epsilon = 1e-9);
            for j in 0..dof {
                let fd_h = (dp.gradient[j] - dm.gradient[j]) / (2.0 * e);
                assert_relative_eq!(r.hessian[(j, i)], fd_h, max_relative = 1e-3, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for kind in [
            PairKind::PointPoint,
            PairKind::PointEdge,
            PairKind::EdgeEdge,
            PairKind::PointTriangle,
        ] {
            let mut checked = 0;
            while checked < 1000 {
                let coords = rand_coords(kind, &mut rng);
                if pair_distance_value(kind, &coords)
                    .map(|(d, _)| d < 1e-3)
                    .unwrap_or(true)
                {
                    continue;
                }
                if near_subcase_boundary(kind, &coords, 1e-4) {
                    continue;
                }
                fd_check(kind, &coords);
                checked += 1;
            }
        }
    }

    #[test]
    fn rigid_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rot = nalgebra::Rotation3::from_euler_angles(0.3, -1.1, 2.0);
        let tr = v(0.4, -2.0, 1.7);
        for kind in [
            PairKind::PointPoint,
            PairKind::PointEdge,
            PairKind::EdgeEdge,
            PairKind::PointTriangle,
        ] {
            for _ in 0..200 {
                let coords = rand_coords(kind, &mut rng);
                let moved: Vec<_> = coords.iter().map(|p| rot * p + tr).collect();
                let (d0, _) = match pair_distance_value(kind, &coords) {
                    Ok(r) => r,
                    Err(_) => continue,
                };
                let (d1, _) = pair_distance_value(kind, &moved).unwrap();
                assert_relative_eq!(d0, d1, max_relative = 1e-12, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn swap_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..200 {
            let coords = rand_coords(PairKind::EdgeEdge, &mut rng);
            let swapped = vec![coords[2], coords[3], coords[0], coords[1]];
            let a = pair_distance(PairKind::EdgeEdge, &coords).unwrap();
            let b = pair_distance(PairKind::EdgeEdge, &swapped).unwrap();
            assert_relative_eq!(a.value, b.value, max_relative = 1e-12);
            // gradient blocks permute with the primitives
            for k in 0..4 {
                let m = (k + 2) % 4;
                for c in 0..3 {
                    assert_relative_eq!(
                        a.gradient[3 * k + c],
                        b.gradient[3 * m + c],
                        max_relative = 1e-12,
                        epsilon = 1e-15
                    );
                }
            }
        }
    }

    #[test]
    fn segment_intersection_predicate() {
        // crossing in a plane
        assert!(segments_intersect(
            &v(-1.0, 0.0, 0.0),
            &v(1.0, 0.0, 0.0),
            &v(0.0, -1.0, 0.0),
            &v(0.0, 1.0, 0.0),
            1e-9
        ));
        // parallel, 1 m apart
        assert!(!segments_intersect(
            &v(0.0, 0.0, 0.0),
            &v(1.0, 0.0, 0.0),
            &v(0.0, 1.0, 0.0),
            &v(1.0, 1.0, 0.0),
            1e-9
        ));
        // touching endpoints
        assert!(segments_intersect(
            &v(0.0, 0.0, 0.0),
            &v(1.0, 0.0, 0.0),
            &v(1.0, 0.0, 0.0),
            &v(2.0, 1.0, 0.0),
            1e-9
        ));
    }

    #[test]
    fn segment_triangle_predicate() {
        let (t0, t1, t2) = (v(0.0, 0.0, 0.0), v(1.0, 0.0, 0.0), v(0.0, 1.0, 0.0));
        // piercing the centroid perpendicular to the plane
        assert!(segment_triangle_intersect(
            &v(0.25, 0.25, -1.0),
            &v(0.25, 0.25, 1.0),
            &t0,
            &t1,
            &t2
        )
        .unwrap());
        // fully on one side
        assert!(!segment_triangle_intersect(
            &v(0.25, 0.25, 0.5),
            &v(0.25, 0.25, 1.0),
            &t0,
            &t1,
            &t2
        )
        .unwrap());
        // coplanar, outside the triangle
        assert!(!segment_triangle_intersect(
            &v(2.0, 2.0, 0.0),
            &v(3.0, 2.0, 0.0),
            &t0,
            &t1,
            &t2
        )
        .unwrap());
        // exhaustive-sampling oracle for the coplanar case: no sampled point
        // of the segment lies inside the triangle
        let (s0, s1) = (v(2.0, 2.0, 0.0), v(3.0, 2.0, 0.0));
        let n = 10_000; // 1e-4 resolution
        for k in 0..=n {
            let p = s0 + (s1 - s0) * (k as f64 / n as f64);
            let inside = p.x >= 0.0 && p.y >= 0.0 && p.x + p.y <= 1.0;
            assert!(!inside);
        }
    }
}
