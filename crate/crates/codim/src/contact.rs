//! Barrier energies (plain, biphasic, filtered, double-filtered),
//! filter-table construction, contact-mode dispatch, and lagged friction.
//!
//! The filter table is the anti-locking device: in a precomputation pass,
//! every contact stencil that is both parametrically close (intrinsic
//! distance below `kappa * h`) and closer than the thickness `h` in the
//! reference configuration is recorded, and its barrier is rebuilt around
//! the smallest such reference distance of its connected component. Every
//! other pair keeps the full thickness activation, so the constitutive
//! thickness model is untouched away from the locking neighborhoods.

use crate::collision;
use crate::math::ElementBlock;
use crate::mesh::{CodimMesh, PairKey, Primitive};
use crate::proximity::{self};
use crate::{Result, SimError};
use nalgebra::{DVector, Matrix3x2, Vector3};
use rayon::prelude::*;
use rustc_hash::{FxHashMap, FxHashSet};

/// Thickness and barrier configuration shared by all pairs of a mesh.
#[derive(Clone, Copy, Debug)]
pub struct BarrierParams {
    /// Material thickness `h` (m); the unfiltered activation distance.
    pub h: f64,
    /// Hard-core offset (m); the barrier diverges at this distance.
    pub eta: f64,
    /// Barrier stiffness multiplier (N/m).
    pub stiffness: f64,
}

impl BarrierParams {
    pub fn new(h: f64, eta: f64, stiffness: f64) -> Result<Self> {
        if !(h > 0.0) || !(0.0..h).contains(&eta) || !(stiffness > 0.0) {
            return Err(SimError::Config(format!(
                "invalid barrier parameters: h={h}, eta={eta}, stiffness={stiffness}"
            )));
        }
        Ok(Self { h, eta, stiffness })
    }
}

/// Contact-processing mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ContactMode {
    /// Full-thickness barrier on every stencil.
    PlainBarrier,
    /// Stencils within the given parametric window are dropped entirely.
    Culled(u32),
    /// Filter-table substitution of activation distances.
    Filtered,
}

/// Log-barrier over the activation range: -(d-a)^2 ln(d/a) on 0 < d < a,
/// zero at and beyond a. C2 at the boundary of support.
pub fn barrier(d: f64, a: f64) -> Result<f64> {
    if d <= 0.0 {
        return Err(SimError::InfeasibleDistance {
            distance: d,
            bound: 0.0,
            pair: "barrier".into(),
        });
    }
    if d >= a {
        return Ok(0.0);
    }
    let r = d - a;
    Ok(-r * r * (d / a).ln())
}

/// Barrier value with first and second derivatives in d (for 0 < d).
pub fn barrier_derivs(d: f64, a: f64) -> (f64, f64, f64) {
    if d >= a {
        return (0.0, 0.0, 0.0);
    }
    let r = d - a;
    let l = (d / a).ln();
    let b = -r * r * l;
    let b1 = -2.0 * r * l - r * r / d;
    let b2 = -2.0 * l - 4.0 * r / d + r * r / (d * d);
    (b, b1, b2)
}

/// Biphasic barrier b(d - eta, a - eta): soft response on (eta, a),
/// divergence at the hard core d = eta.
pub fn barrier_biphasic(d: f64, a: f64, eta: f64) -> Result<f64> {
    if d <= eta {
        return Err(SimError::InfeasibleDistance {
            distance: d,
            bound: eta,
            pair: "barrier".into(),
        });
    }
    barrier(d - eta, a - eta)
}

/// Single-phase or biphasic operation of a filter table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FilterMode {
    SinglePhase,
    Biphasic,
}

/// Precomputed activation-distance substitutions: per-component smallest
/// reference stencil distance and the set of pairs it applies to.
#[derive(Clone, Debug)]
pub struct FilterTable {
    pub mode: FilterMode,
    /// Smallest filtered reference distance per connected component; `None`
    /// when the component has no filtered pairs.
    pub d_min: Vec<Option<f64>>,
    /// Filtered pairs mapped to their component id.
    pub filtered_pairs: FxHashMap<PairKey, u32>,
    /// Stencils within the parametric window (filtered or not).
    pub candidate_count: usize,
}

impl FilterTable {
    /// Empty table: nothing filtered (plain-barrier behavior).
    pub fn empty(components: usize, eta: f64) -> Self {
        FilterTable {
            mode: if eta > 0.0 {
                FilterMode::Biphasic
            } else {
                FilterMode::SinglePhase
            },
            d_min: vec![None; components],
            filtered_pairs: FxHashMap::default(),
            candidate_count: 0,
        }
    }

    pub fn filtered_count(&self) -> usize {
        self.filtered_pairs.len()
    }

    pub fn is_filtered(&self, pair: &PairKey) -> bool {
        self.filtered_pairs.contains_key(pair)
    }
}

/// Build the filter table: candidates are non-vertex-sharing stencils within
/// one connected component whose parametric distance is below `kappa * h`;
/// those with reference distance below `h` are filtered and define the
/// per-component minimum.
pub fn build_filter_table(
    mesh: &CodimMesh,
    params: &BarrierParams,
    kappa: f64,
) -> Result<FilterTable> {
    if kappa < 1.0 {
        return Err(SimError::Config(format!("kappa must be >= 1, got {kappa}")));
    }
    let radius = kappa * params.h;
    let balls = mesh.parametric_balls(radius);
    let within = |u: u32, v: u32| -> bool {
        balls[u as usize]
            .binary_search_by(|probe| probe.0.cmp(&v))
            .is_ok()
    };

    // Euclidean near pairs at the parametric radius form a superset of all
    // candidates, because intrinsic distance bounds Euclidean distance.
    let near = collision::reference_near_pairs(mesh, radius);

    let mut table = FilterTable::empty(mesh.component_count(), params.eta);
    for pair in near {
        let parametric = pair
            .0
            .vertices()
            .iter()
            .any(|&u| pair.1.vertices().iter().any(|&v| within(u, v)));
        if !parametric {
            continue;
        }
        table.candidate_count += 1;
        let refd = mesh.reference_distance(&pair.0, &pair.1)?;
        if refd == 0.0 {
            return Err(SimError::IntrinsicSelfIntersection(format!("{pair:?}")));
        }
        if refd < params.h {
            let comp = mesh.component_of(&pair.0);
            table.filtered_pairs.insert(pair, comp);
            let slot = &mut table.d_min[comp as usize];
            *slot = Some(match *slot {
                Some(cur) => cur.min(refd),
                None => refd,
            });
        }
    }
    Ok(table)
}

/// Effective (activation, core offset) of a pair: filtered pairs use their
/// component's d_min with a zero core; everything else keeps the full
/// thickness. Fixed for the whole simulation.
pub fn effective_activation(
    pair: &PairKey,
    table: &FilterTable,
    params: &BarrierParams,
) -> (f64, f64) {
    match table.filtered_pairs.get(pair) {
        Some(&comp) => (
            table.d_min[comp as usize].expect("filtered pair implies d_min"),
            0.0,
        ),
        None => (params.h, params.eta),
    }
}

/// Admissibility of a stencil under a contact mode, computed directly on
/// the mesh. Culled mode rejects pairs within the hop radius; barrier and
/// filtered modes keep every stencil.
pub fn contact_admissible(pair: &PairKey, mesh: &CodimMesh, mode: ContactMode) -> bool {
    match mode {
        ContactMode::PlainBarrier | ContactMode::Filtered => true,
        ContactMode::Culled(radius) => {
            hop_distance_within(mesh, &pair.0, &pair.1, radius).is_none()
        }
    }
}

/// Minimum hop count between vertices of the two primitives if it is at
/// most `limit`, else None. Truncated BFS.
fn hop_distance_within(
    mesh: &CodimMesh,
    p1: &Primitive,
    p2: &Primitive,
    limit: u32,
) -> Option<u32> {
    use std::collections::VecDeque;
    let targets: FxHashSet<u32> = p2.vertices().iter().copied().collect();
    if p1.vertices().iter().any(|v| targets.contains(v)) {
        return Some(0);
    }
    let mut depth: FxHashMap<u32, u32> = FxHashMap::default();
    let mut queue = VecDeque::new();
    for &s in p1.vertices() {
        depth.insert(s, 0);
        queue.push_back(s);
    }
    while let Some(v) = queue.pop_front() {
        let d = depth[&v];
        if d == limit {
            continue;
        }
        for &(nb, _) in mesh.adjacency_of(v) {
            if let std::collections::hash_map::Entry::Vacant(e) = depth.entry(nb) {
                e.insert(d + 1);
                if targets.contains(&nb) {
                    return Some(d + 1);
                }
                queue.push_back(nb);
            }
        }
    }
    None
}

/// Mode dispatch with a precomputed cull set for hot loops.
#[derive(Clone, Debug)]
pub struct ContactSet {
    pub mode: ContactMode,
    culled_vertex_pairs: Option<FxHashSet<u64>>,
}

fn pack(u: u32, v: u32) -> u64 {
    let (a, b) = if u < v { (u, v) } else { (v, u) };
    ((a as u64) << 32) | b as u64
}

impl ContactSet {
    pub fn new(mesh: &CodimMesh, mode: ContactMode) -> Self {
        let culled_vertex_pairs = match mode {
            ContactMode::Culled(radius) => {
                let balls = mesh.hop_balls(radius);
                let mut set = FxHashSet::default();
                for (u, ball) in balls.iter().enumerate() {
                    for &v in ball {
                        set.insert(pack(u as u32, v));
                    }
                }
                Some(set)
            }
            _ => None,
        };
        ContactSet {
            mode,
            culled_vertex_pairs,
        }
    }

    pub fn admissible(&self, pair: &PairKey) -> bool {
        match &self.culled_vertex_pairs {
            None => true,
            Some(set) => !pair.0.vertices().iter().any(|&u| {
                pair.1
                    .vertices()
                    .iter()
                    .any(|&v| set.contains(&pack(u, v)))
            }),
        }
    }
}

/// One active pair's barrier contribution.
fn eval_pair(
    mesh: &CodimMesh,
    x: &[Vector3<f64>],
    pair: &PairKey,
    a_eff: f64,
    eta_eff: f64,
    stiffness: f64,
    project: bool,
) -> Result<Option<(f64, ElementBlock)>> {
    let (kind, coords, verts, count) = mesh.stencil_coords(pair, x)?;
    let (d, _) = proximity::pair_distance_value(kind, &coords)?;
    if d >= a_eff {
        return Ok(None);
    }
    if d <= eta_eff {
        return Err(SimError::InfeasibleDistance {
            distance: d,
            bound: eta_eff,
            pair: format!("{pair:?}"),
        });
    }
    let dist = proximity::pair_distance(kind, &coords)?;
    let (b, b1, b2) = barrier_derivs(d - eta_eff, a_eff - eta_eff);
    let mut block = ElementBlock::new(verts, count);
    block.grad = dist.gradient * (stiffness * b1);
    block.hess = dist.gradient * dist.gradient.transpose() * (stiffness * b2)
        + dist.hessian * (stiffness * b1);
    if project {
        block.project_psd();
    }
    Ok(Some((stiffness * b, block)))
}

const CHUNK: usize = 16 * 1024;

/// Chunked parallel evaluation of all admissible active pairs; the sink is
/// called sequentially in pair order, so accumulation is deterministic.
pub fn for_each_contact_block<F: FnMut(f64, ElementBlock)>(
    mesh: &CodimMesh,
    x: &[Vector3<f64>],
    pairs: &[PairKey],
    table: &FilterTable,
    params: &BarrierParams,
    set: &ContactSet,
    project: bool,
    mut sink: F,
) -> Result<()> {
    for chunk in pairs.chunks(CHUNK) {
        let results: Vec<Result<Option<(f64, ElementBlock)>>> = chunk
            .par_iter()
            .map(|pair| {
                if !set.admissible(pair) {
                    return Ok(None);
                }
                let (a_eff, eta_eff) = effective_activation(pair, table, params);
                eval_pair(mesh, x, pair, a_eff, eta_eff, params.stiffness, project)
            })
            .collect();
        for r in results {
            if let Some((e, blk)) = r? {
                sink(e, blk);
            }
        }
    }
    Ok(())
}

/// Total barrier energy with assembled gradient and per-pair Hessian blocks
/// (raw, unprojected). Pairs at or beyond their activation contribute
/// exactly zero and are omitted from the block list.
pub fn contact_energy(
    mesh: &CodimMesh,
    x: &[Vector3<f64>],
    pairs: &[PairKey],
    table: &FilterTable,
    params: &BarrierParams,
    set: &ContactSet,
) -> Result<(f64, DVector<f64>, Vec<ElementBlock>)> {
    let mut energy = 0.0;
    let mut grad = DVector::zeros(3 * mesh.vertex_count());
    let mut blocks = Vec::new();
    for_each_contact_block(mesh, x, pairs, table, params, set, false, |e, blk| {
        energy += e;
        scatter_gradient(&mut grad, &blk);
        blocks.push(blk);
    })?;
    Ok((energy, grad, blocks))
}

/// Barrier energy only (for line-search evaluations).
pub fn contact_energy_value(
    mesh: &CodimMesh,
    x: &[Vector3<f64>],
    pairs: &[PairKey],
    table: &FilterTable,
    params: &BarrierParams,
    set: &ContactSet,
) -> Result<f64> {
    let mut energy = 0.0;
    for chunk in pairs.chunks(CHUNK) {
        let results: Vec<Result<f64>> = chunk
            .par_iter()
            .map(|pair| {
                if !set.admissible(pair) {
                    return Ok(0.0);
                }
                let (a_eff, eta_eff) = effective_activation(pair, table, params);
                let (kind, coords, _, _) = mesh.stencil_coords(pair, x)?;
                let (d, _) = proximity::pair_distance_value(kind, &coords)?;
                if d >= a_eff {
                    return Ok(0.0);
                }
                if d <= eta_eff {
                    return Err(SimError::InfeasibleDistance {
                        distance: d,
                        bound: eta_eff,
                        pair: format!("{pair:?}"),
                    });
                }
                Ok(params.stiffness * barrier(d - eta_eff, a_eff - eta_eff)?)
            })
            .collect();
        for r in results {
            energy += r?;
        }
    }
    Ok(energy)
}

pub fn scatter_gradient(grad: &mut DVector<f64>, blk: &ElementBlock) {
    for k in 0..blk.vertex_count {
        let v = blk.verts[k] as usize;
        for c in 0..3 {
            grad[3 * v + c] += blk.grad[3 * k + c];
        }
    }
}

// ---------------------------------------------------------------------------
// Lagged friction
// ---------------------------------------------------------------------------

/// Friction configuration.
#[derive(Clone, Copy, Debug)]
pub struct FrictionParams {
    /// Coulomb coefficient.
    pub mu: f64,
    /// Relative-velocity threshold (m/s) of the smoothing mollifier.
    pub epsv: f64,
}

/// Contact pair with cached normal force, closest-point weights and tangent
/// frame, frozen from a previous iterate.
#[derive(Clone, Debug)]
pub struct LaggedPair {
    pub pair: PairKey,
    pub verts: [u32; 4],
    pub vertex_count: usize,
    /// Signed closest-point weights (positive on the first primitive).
    pub weights: [f64; 4],
    /// Lagged normal force magnitude (N).
    pub lambda: f64,
    /// Tangent frame columns, orthonormal to the lagged contact normal.
    pub basis: Matrix3x2<f64>,
    /// Positions when the lag was taken.
    pub x0: [Vector3<f64>; 4],
}

fn tangent_basis(normal: &Vector3<f64>) -> Matrix3x2<f64> {
    let mut axis = Vector3::zeros();
    let a = normal.x.abs();
    let b = normal.y.abs();
    let c = normal.z.abs();
    if a <= b && a <= c {
        axis.x = 1.0;
    } else if b <= c {
        axis.y = 1.0;
    } else {
        axis.z = 1.0;
    }
    let t1 = axis.cross(normal).normalize();
    let t2 = normal.cross(&t1);
    Matrix3x2::from_columns(&[t1, t2])
}

/// Capture the lagged contact set at the current positions: every
/// admissible pair inside its activation range, with its current normal
/// force and tangent frame.
pub fn build_lagged_pairs(
    mesh: &CodimMesh,
    x: &[Vector3<f64>],
    pairs: &[PairKey],
    table: &FilterTable,
    params: &BarrierParams,
    set: &ContactSet,
) -> Result<Vec<LaggedPair>> {
    let mut out = Vec::new();
    for pair in pairs {
        if !set.admissible(pair) {
            continue;
        }
        let (a_eff, eta_eff) = effective_activation(pair, table, params);
        let (kind, coords, verts, count) = mesh.stencil_coords(pair, x)?;
        let (d, _) = proximity::pair_distance_value(kind, &coords)?;
        if d >= a_eff || d <= eta_eff {
            continue;
        }
        let (_, b1, _) = barrier_derivs(d - eta_eff, a_eff - eta_eff);
        let lambda = -params.stiffness * b1;
        if lambda <= 0.0 {
            continue;
        }
        let (weights, normal) = proximity::closest_weights(kind, &coords)?;
        if normal.norm_squared() == 0.0 {
            continue;
        }
        let mut x0 = [Vector3::zeros(); 4];
        for (k, slot) in x0.iter_mut().enumerate().take(count) {
            *slot = x[verts[k] as usize];
        }
        out.push(LaggedPair {
            pair: *pair,
            verts,
            vertex_count: count,
            weights,
            lambda,
            basis: tangent_basis(&normal),
            x0,
        });
    }
    Ok(out)
}

/// Smoothed absolute value of the lagged friction model: returns
/// (f0, g, dg/dy) with g(y) = f0'(y)/y and threshold `e`.
fn mollifier(y: f64, e: f64) -> (f64, f64, f64) {
    if y < e {
        let f0 = -y * y * y / (3.0 * e * e) + y * y / e + e / 3.0;
        let g = -y / (e * e) + 2.0 / e;
        (f0, g, -1.0 / (e * e))
    } else {
        (y, 1.0 / y, -1.0 / (y * y))
    }
}

/// Dissipative friction potential with gradient and raw Hessian blocks.
/// Per pair the tangential force magnitude is bounded by `mu * lambda`.
pub fn friction_force(
    x: &[Vector3<f64>],
    lagged: &[LaggedPair],
    mu: f64,
    epsv: f64,
    dt: f64,
) -> Result<(f64, DVector<f64>, Vec<ElementBlock>)> {
    let n = x.len();
    let mut energy = 0.0;
    let mut grad = DVector::zeros(3 * n);
    let mut blocks = Vec::new();
    if mu == 0.0 || lagged.is_empty() {
        return Ok((energy, grad, blocks));
    }
    let e = epsv * dt;
    for lp in lagged {
        // relative tangential displacement since the lag was taken
        let mut rel = Vector3::zeros();
        for k in 0..lp.vertex_count {
            let v = lp.verts[k] as usize;
            rel += (x[v] - lp.x0[k]) * lp.weights[k];
        }
        let z = lp.basis.transpose() * rel; // 2-vector
        let y = z.norm();
        let (f0, g, dg) = mollifier(y, e);
        let scale = mu * lp.lambda;
        energy += scale * f0;

        // dD/dz = scale * g * z ; d2D/dz2 = scale * (g I + dg/y z z^T)
        let dz = z * (scale * g);
        let hz = if y > 0.0 {
            nalgebra::Matrix2::identity() * (scale * g) + z * z.transpose() * (scale * dg / y)
        } else {
            nalgebra::Matrix2::identity() * (scale * g)
        };
        let force3 = lp.basis * dz; // 3-vector at the contact point
        let h3 = lp.basis * hz * lp.basis.transpose(); // 3x3

        let mut blk = ElementBlock::new(lp.verts, lp.vertex_count);
        for k in 0..lp.vertex_count {
            let contrib = force3 * lp.weights[k];
            for c in 0..3 {
                blk.grad[3 * k + c] = contrib[c];
            }
            for l in 0..lp.vertex_count {
                let m = h3 * (lp.weights[k] * lp.weights[l]);
                for r in 0..3 {
                    for c in 0..3 {
                        blk.hess[(3 * k + r, 3 * l + c)] = m[(r, c)];
                    }
                }
            }
        }
        scatter_gradient(&mut grad, &blk);
        blocks.push(blk);
    }
    Ok((energy, grad, blocks))
}
