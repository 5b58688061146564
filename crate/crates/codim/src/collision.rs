//! Broad-phase candidate generation via spatial hashing, narrow-phase
//! conservative step limiting (additive CCD), and exact intersection
//! counting used for verification.

use crate::contact::{BarrierParams, ContactSet, FilterTable};
use crate::mesh::{CodimMesh, MeshKind, PairKey, Primitive};
use crate::proximity::{self, PairKind};
use crate::{Result, SimError};
use nalgebra::Vector3;
use rayon::prelude::*;
use rustc_hash::FxHashMap;

/// Uniform spatial hash over primitive bounding boxes.
#[derive(Debug)]
pub struct SpatialHash {
    pub cell_size: f64,
    pub occupancy: FxHashMap<(i64, i64, i64), Vec<u32>>,
}

impl SpatialHash {
    fn cell_of(&self, p: &Vector3<f64>) -> (i64, i64, i64) {
        (
            (p.x / self.cell_size).floor() as i64,
            (p.y / self.cell_size).floor() as i64,
            (p.z / self.cell_size).floor() as i64,
        )
    }
}

#[derive(Clone, Copy, Debug)]
struct Aabb {
    lo: Vector3<f64>,
    hi: Vector3<f64>,
}

impl Aabb {
    fn of(points: impl IntoIterator<Item = Vector3<f64>>) -> Self {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for p in points {
            lo = lo.inf(&p);
            hi = hi.sup(&p);
        }
        Aabb { lo, hi }
    }

    fn inflate(mut self, by: f64) -> Self {
        self.lo -= Vector3::repeat(by);
        self.hi += Vector3::repeat(by);
        self
    }

    fn overlaps(&self, other: &Aabb) -> bool {
        (0..3).all(|c| self.lo[c] <= other.hi[c] && self.hi[c] >= other.lo[c])
    }
}

fn swept_box(
    prim: &Primitive,
    x: &[Vector3<f64>],
    disp: Option<&[Vector3<f64>]>,
    inflate: f64,
) -> Aabb {
    let points = prim.vertices().iter().flat_map(|&v| {
        let a = x[v as usize];
        let b = match disp {
            Some(d) => a + d[v as usize],
            None => a,
        };
        [a, b]
    });
    Aabb::of(points).inflate(inflate)
}

fn mean_edge_length(mesh: &CodimMesh) -> f64 {
    if mesh.edges.is_empty() {
        return 1.0;
    }
    let total: f64 = mesh
        .edges
        .iter()
        .map(|e| {
            (mesh.reference_positions[e[0] as usize] - mesh.reference_positions[e[1] as usize])
                .norm()
        })
        .sum();
    total / mesh.edges.len() as f64
}

fn stencil_kind_compatible(a: &Primitive, b: &Primitive) -> bool {
    matches!(
        (a, b),
        (Primitive::Vertex(_), Primitive::Vertex(_))
            | (Primitive::Vertex(_), Primitive::Edge(_))
            | (Primitive::Edge(_), Primitive::Vertex(_))
            | (Primitive::Edge(_), Primitive::Edge(_))
            | (Primitive::Vertex(_), Primitive::Triangle(_))
            | (Primitive::Triangle(_), Primitive::Vertex(_))
    )
}

/// Superset of all non-vertex-sharing stencil pairs whose swept, inflated
/// bounding boxes overlap. Boxes are inflated by half the inflation so that
/// any pair closer than `inflation` along the motion is included.
/// Deterministic order (sorted by pair key).
pub fn broadphase(
    mesh: &CodimMesh,
    x_start: &[Vector3<f64>],
    displacements: Option<&[Vector3<f64>]>,
    inflation: f64,
) -> Vec<PairKey> {
    let prims = mesh.primitives();
    let half = 0.5 * inflation;
    let boxes: Vec<Aabb> = prims
        .par_iter()
        .map(|p| swept_box(p, x_start, displacements, half))
        .collect();

    let cell_size = inflation.max(mean_edge_length(mesh));
    let mut hash = SpatialHash {
        cell_size,
        occupancy: FxHashMap::default(),
    };
    for (i, b) in boxes.iter().enumerate() {
        let lo = hash.cell_of(&b.lo);
        let hi = hash.cell_of(&b.hi);
        for cx in lo.0..=hi.0 {
            for cy in lo.1..=hi.1 {
                for cz in lo.2..=hi.2 {
                    hash.occupancy
                        .entry((cx, cy, cz))
                        .or_default()
                        .push(i as u32);
                }
            }
        }
    }

    let cells: Vec<&Vec<u32>> = hash.occupancy.values().collect();
    let mut pairs: Vec<PairKey> = cells
        .par_iter()
        .flat_map_iter(|cell| {
            let mut local = Vec::new();
            for (k, &i) in cell.iter().enumerate() {
                for &j in &cell[k + 1..] {
                    let (pa, pb) = (&prims[i as usize], &prims[j as usize]);
                    if !stencil_kind_compatible(pa, pb)
                        || pa.shares_vertex(pb)
                        || !boxes[i as usize].overlaps(&boxes[j as usize])
                    {
                        continue;
                    }
                    local.push(PairKey::new(*pa, *pb));
                }
            }
            local
        })
        .collect();
    pairs.par_sort_unstable();
    pairs.dedup();
    pairs
}

/// Primitive pairs near each other in the reference configuration
/// (zero-displacement broadphase).
pub fn reference_near_pairs(mesh: &CodimMesh, inflation: f64) -> Vec<PairKey> {
    broadphase(mesh, &mesh.reference_positions, None, inflation)
}

/// A conservative-advancement query for one stencil.
#[derive(Clone, Debug)]
pub struct CcdQuery {
    pub kind: PairKind,
    pub start: Vec<Vector3<f64>>,
    pub displacement: Vec<Vector3<f64>>,
    /// Separation that must never be reached (eta of the pair).
    pub offset: f64,
    /// Fraction of the initial gap preserved along the advancement.
    pub slack: f64,
}

const ACCD_MAX_ITERS: usize = 10_000;

/// Largest verified step fraction t in (0, 1] such that the stencil keeps a
/// gap above `slack * (d(0) - offset)` along the advancement. Never returns
/// a step reaching the offset itself.
pub fn accd_max_step(q: &CcdQuery) -> Result<f64> {
    let nv = q.kind.vertex_count();
    debug_assert_eq!(q.start.len(), nv);
    debug_assert_eq!(q.displacement.len(), nv);
    // side split: first primitive's vertex count
    let split = match q.kind {
        PairKind::PointPoint | PairKind::PointEdge | PairKind::PointTriangle => 1,
        PairKind::EdgeEdge => 2,
    };

    // remove common motion; it cannot change distances
    let mean: Vector3<f64> = q.displacement.iter().sum::<Vector3<f64>>() / nv as f64;
    let rel: Vec<Vector3<f64>> = q.displacement.iter().map(|d| d - mean).collect();
    let max_a = rel[..split].iter().map(|d| d.norm()).fold(0.0, f64::max);
    let max_b = rel[split..].iter().map(|d| d.norm()).fold(0.0, f64::max);
    let closing_bound = max_a + max_b;

    let (d0, _) = proximity::pair_distance_value(q.kind, &q.start)?;
    let gap0 = d0 - q.offset;
    if gap0 <= 0.0 {
        return Err(SimError::InfeasibleStart(gap0));
    }
    if closing_bound == 0.0 {
        return Ok(1.0);
    }
    let reserve = q.slack * gap0;

    let mut pos = q.start.clone();
    let mut t = 0.0;
    let mut step = (1.0 - q.slack) * gap0 / closing_bound;
    for _ in 0..ACCD_MAX_ITERS {
        for (p, d) in pos.iter_mut().zip(rel.iter()) {
            *p += d * step;
        }
        let (d, _) = proximity::pair_distance_value(q.kind, &pos)?;
        if t > 0.0 && (d - q.offset) < reserve {
            break;
        }
        t += step;
        if t > 1.0 {
            return Ok(1.0);
        }
        step = (1.0 - q.slack) * (d - q.offset) / closing_bound;
    }
    Ok(t)
}

/// Default ACCD slack.
pub const ACCD_SLACK: f64 = 0.1;

/// Largest step fraction along `p` that keeps every admissible broadphase
/// candidate above its own hard offset. Culled-mode pairs are excluded,
/// which is what permits tunneling in that baseline.
pub fn scene_max_step(
    mesh: &CodimMesh,
    x: &[Vector3<f64>],
    p: &[Vector3<f64>],
    table: &FilterTable,
    params: &BarrierParams,
    set: &ContactSet,
) -> Result<f64> {
    let candidates = broadphase(mesh, x, Some(p), params.h);
    let results: Vec<Result<f64>> = candidates
        .par_iter()
        .map(|pair| {
            if !set.admissible(pair) {
                return Ok(1.0);
            }
            let (_, eta_eff) = crate::contact::effective_activation(pair, table, params);
            let (kind, coords, idx, count) = mesh.stencil_coords(pair, x)?;
            let disp: Vec<Vector3<f64>> = idx[..count].iter().map(|&i| p[i as usize]).collect();
            let q = CcdQuery {
                kind,
                start: coords,
                displacement: disp,
                offset: eta_eff,
                slack: ACCD_SLACK,
            };
            accd_max_step(&q)
        })
        .collect();
    let mut t = 1.0f64;
    for r in results {
        t = t.min(r?);
    }
    Ok(t)
}

/// Exact instantaneous intersection count: rods count non-adjacent segment
/// pairs at distance below 1e-12; shells count edge-triangle crossings
/// between non-adjacent primitives. A spatial hash prefilters pairs; the
/// per-pair test is exact, so the count equals the brute-force one.
pub fn intersection_count(mesh: &CodimMesh, x: &[Vector3<f64>]) -> usize {
    let scale = mean_edge_length(mesh);
    match mesh.kind {
        MeshKind::Rod => {
            let pairs = broadphase(mesh, x, None, 1e-6 * scale);
            pairs
                .par_iter()
                .filter(|pair| {
                    if let (Primitive::Edge(a), Primitive::Edge(b)) = (&pair.0, &pair.1) {
                        proximity::segments_intersect(
                            &x[a[0] as usize],
                            &x[a[1] as usize],
                            &x[b[0] as usize],
                            &x[b[1] as usize],
                            1e-12,
                        )
                    } else {
                        false
                    }
                })
                .count()
        }
        MeshKind::Shell => {
            // the stencil hash does not emit edge-triangle pairs; walk
            // triangles against edge boxes directly
            let tri_boxes: Vec<Aabb> = mesh
                .triangles
                .iter()
                .map(|t| Aabb::of(t.iter().map(|&v| x[v as usize])).inflate(1e-6 * scale))
                .collect();
            let edge_boxes: Vec<Aabb> = mesh
                .edges
                .iter()
                .map(|e| Aabb::of(e.iter().map(|&v| x[v as usize])).inflate(1e-6 * scale))
                .collect();
            mesh.edges
                .par_iter()
                .enumerate()
                .map(|(ei, e)| {
                    let mut count = 0;
                    for (ti, t) in mesh.triangles.iter().enumerate() {
                        if !edge_boxes[ei].overlaps(&tri_boxes[ti]) {
                            continue;
                        }
                        if t.contains(&e[0]) || t.contains(&e[1]) {
                            continue;
                        }
                        if proximity::segment_triangle_intersect(
                            &x[e[0] as usize],
                            &x[e[1] as usize],
                            &x[t[0] as usize],
                            &x[t[1] as usize],
                            &x[t[2] as usize],
                        )
                        .unwrap_or(false)
                        {
                            count += 1;
                        }
                    }
                    count
                })
                .sum()
        }
    }
}

/// Brute-force instantaneous intersection count (test oracle; quadratic).
pub fn intersection_count_brute(mesh: &CodimMesh, x: &[Vector3<f64>]) -> usize {
    match mesh.kind {
        MeshKind::Rod => {
            let mut count = 0;
            for i in 0..mesh.edges.len() {
                for j in (i + 1)..mesh.edges.len() {
                    let (a, b) = (mesh.edges[i], mesh.edges[j]);
                    if a.iter().any(|v| b.contains(v)) {
                        continue;
                    }
                    if proximity::segments_intersect(
                        &x[a[0] as usize],
                        &x[a[1] as usize],
                        &x[b[0] as usize],
                        &x[b[1] as usize],
                        1e-12,
                    ) {
                        count += 1;
                    }
                }
            }
            count
        }
        MeshKind::Shell => {
            let mut count = 0;
            for e in &mesh.edges {
                for t in &mesh.triangles {
                    if t.contains(&e[0]) || t.contains(&e[1]) {
                        continue;
                    }
                    if proximity::segment_triangle_intersect(
                        &x[e[0] as usize],
                        &x[e[1] as usize],
                        &x[t[0] as usize],
                        &x[t[1] as usize],
                        &x[t[2] as usize],
                    )
                    .unwrap_or(false)
                    {
                        count += 1;
                    }
                }
            }
            count
        }
    }
}

// ---------------------------------------------------------------------------
// Swept (between-frame) crossing detection. Instantaneous sampling cannot
// witness tunneling; these tests find the coplanarity roots of linearly
// interpolated trajectories and check proximity there.
// ---------------------------------------------------------------------------

/// Roots in [0, 1] of the cubic det(b(t)-a(t), c(t)-a(t), d(t)-a(t)) where
/// every point moves linearly. Found by sign-change bisection on a fine
/// partition.
#[allow(clippy::too_many_arguments)]
fn coplanarity_roots(
    a0: Vector3<f64>,
    a1: Vector3<f64>,
    b0: Vector3<f64>,
    b1: Vector3<f64>,
    c0: Vector3<f64>,
    c1: Vector3<f64>,
    d0: Vector3<f64>,
    d1: Vector3<f64>,
) -> Vec<f64> {
    let f = |t: f64| {
        let a = a0 + (a1 - a0) * t;
        let b = b0 + (b1 - b0) * t;
        let c = c0 + (c1 - c0) * t;
        let d = d0 + (d1 - d0) * t;
        (b - a).cross(&(c - a)).dot(&(d - a))
    };
    let mut knots = vec![0.0];
    for k in 1..=16 {
        knots.push(k as f64 / 16.0);
    }
    let mut roots = Vec::new();
    for w in knots.windows(2) {
        let (mut lo, mut hi) = (w[0], w[1]);
        let (flo, fhi) = (f(lo), f(hi));
        if flo == 0.0 {
            roots.push(lo);
            continue;
        }
        if flo.signum() == fhi.signum() {
            continue;
        }
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if f(mid).signum() == flo.signum() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        roots.push(0.5 * (lo + hi));
    }
    roots
}

/// Count topology-violating crossings between two frames under linear
/// interpolation: edge pairs whose segments pass through each other, plus
/// vertices passing through triangles on shells.
pub fn crossings_between(mesh: &CodimMesh, x_from: &[Vector3<f64>], x_to: &[Vector3<f64>]) -> usize {
    let scale = mean_edge_length(mesh);
    let tol = 1e-9 * scale;
    let disp: Vec<Vector3<f64>> = x_from
        .iter()
        .zip(x_to.iter())
        .map(|(a, b)| b - a)
        .collect();
    let candidates = broadphase(mesh, x_from, Some(&disp), 1e-6 * scale);
    let at = |v: u32, t: f64| x_from[v as usize] + disp[v as usize] * t;
    candidates
        .par_iter()
        .filter(|pair| match (&pair.0, &pair.1) {
            (Primitive::Edge(a), Primitive::Edge(b)) => {
                let roots = coplanarity_roots(
                    x_from[a[0] as usize],
                    x_to[a[0] as usize],
                    x_from[a[1] as usize],
                    x_to[a[1] as usize],
                    x_from[b[0] as usize],
                    x_to[b[0] as usize],
                    x_from[b[1] as usize],
                    x_to[b[1] as usize],
                );
                roots.iter().any(|&t| {
                    proximity::segments_intersect(
                        &at(a[0], t),
                        &at(a[1], t),
                        &at(b[0], t),
                        &at(b[1], t),
                        tol,
                    )
                })
            }
            (Primitive::Vertex(p), Primitive::Triangle(tri)) => {
                let roots = coplanarity_roots(
                    x_from[tri[0] as usize],
                    x_to[tri[0] as usize],
                    x_from[tri[1] as usize],
                    x_to[tri[1] as usize],
                    x_from[tri[2] as usize],
                    x_to[tri[2] as usize],
                    x_from[*p as usize],
                    x_to[*p as usize],
                );
                roots.iter().any(|&t| {
                    let coords = vec![at(*p, t), at(tri[0], t), at(tri[1], t), at(tri[2], t)];
                    proximity::pair_distance_value(PairKind::PointTriangle, &coords)
                        .map(|(d, _)| d < tol)
                        .unwrap_or(false)
                })
            }
            _ => false,
        })
        .count()
}

/// Minimum distance over admissible broadphase candidates within
/// `inflation`, or None when no candidate exists.
pub fn min_admissible_distance(
    mesh: &CodimMesh,
    x: &[Vector3<f64>],
    set: &ContactSet,
    inflation: f64,
) -> Option<f64> {
    let candidates = broadphase(mesh, x, None, inflation);
    let mut best: Option<f64> = None;
    for pair in &candidates {
        if !set.admissible(pair) {
            continue;
        }
        if let Ok((kind, coords, _, _)) = mesh.stencil_coords(pair, x) {
            if let Ok((d, _)) = proximity::pair_distance_value(kind, &coords) {
                best = Some(match best {
                    Some(b) => b.min(d),
                    None => d,
                });
            }
        }
    }
    best
}
