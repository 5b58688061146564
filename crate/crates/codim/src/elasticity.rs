//! Constitutive energies for rods (stretch, bend) and shells (Neo-Hookean
//! membrane, dihedral hinge bending), plus thickness-aware lumped mass.
//!
//! Rod bending, membrane and hinge energies are differentiated with
//! [`crate::math::Dual2`]; stretch derivatives are closed-form.

use crate::math::{dcross, ddot, dnorm, dvec3_var, Dual2, ElementBlock};
use crate::mesh::{CodimMesh, MeshKind};
use crate::{Result, SimError};
use nalgebra::{DVector, Matrix2, Matrix3, Vector3};
use rayon::prelude::*;

/// Rod material: circular cross section of radius h/2.
#[derive(Clone, Copy, Debug)]
pub struct RodMaterial {
    pub youngs_modulus: f64,
    pub density: f64,
    pub radius: f64,
}

/// Shell material: plane-stress isotropic sheet of the given thickness.
#[derive(Clone, Copy, Debug)]
pub struct ShellMaterial {
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
    pub density: f64,
    pub thickness: f64,
}

#[derive(Clone, Copy, Debug)]
pub enum Material {
    Rod(RodMaterial),
    Shell(ShellMaterial),
}

impl Material {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            Material::Rod(m) => m.youngs_modulus > 0.0 && m.density > 0.0 && m.radius > 0.0,
            Material::Shell(m) => {
                m.youngs_modulus > 0.0
                    && (0.0..0.5).contains(&m.poisson_ratio)
                    && m.density > 0.0
                    && m.thickness > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(SimError::Config(format!("invalid material {self:?}")))
        }
    }
}

/// Plane-stress Lame parameters from (E, nu).
fn lame_plane_stress(e: f64, nu: f64) -> (f64, f64) {
    (e / (2.0 * (1.0 + nu)), e * nu / (1.0 - nu * nu))
}

#[derive(Clone, Debug)]
struct StretchElement {
    i: u32,
    j: u32,
    rest_len: f64,
    /// EA (N).
    k: f64,
}

#[derive(Clone, Debug)]
struct BendElement {
    prev: u32,
    mid: u32,
    next: u32,
    /// Reference Voronoi length (m).
    voronoi: f64,
    /// E I (N m^2).
    stiffness: f64,
}

#[derive(Clone, Debug)]
struct MembraneElement {
    v: [u32; 3],
    /// Inverse reference shape matrix (2x2).
    bm: Matrix2<f64>,
    rest_area: f64,
    mu: f64,
    lambda: f64,
    thickness: f64,
}

#[derive(Clone, Debug)]
struct HingeElement {
    /// [edge0, edge1, opposite_a, opposite_b]
    v: [u32; 4],
    rest_angle: f64,
    /// k_b * |e| / h_e (J).
    factor: f64,
}

/// Cached per-element data for one mesh + material.
#[derive(Clone, Debug)]
pub struct ElasticModel {
    stretch: Vec<StretchElement>,
    bend: Vec<BendElement>,
    membrane: Vec<MembraneElement>,
    hinge: Vec<HingeElement>,
}

impl ElasticModel {
    pub fn new(mesh: &CodimMesh, material: &Material) -> Result<Self> {
        material.validate()?;
        match (mesh.kind, material) {
            (MeshKind::Rod, Material::Rod(m)) => Self::rod(mesh, m),
            (MeshKind::Shell, Material::Shell(m)) => Self::shell(mesh, m),
            _ => Err(SimError::Config(
                "material kind does not match mesh kind".into(),
            )),
        }
    }

    fn rod(mesh: &CodimMesh, m: &RodMaterial) -> Result<Self> {
        let area = std::f64::consts::PI * m.radius * m.radius;
        let inertia = std::f64::consts::PI * m.radius.powi(4) / 4.0;
        let mut stretch = Vec::with_capacity(mesh.edges.len());
        for e in &mesh.edges {
            let rest = (mesh.reference_positions[e[0] as usize]
                - mesh.reference_positions[e[1] as usize])
                .norm();
            if rest == 0.0 {
                return Err(SimError::DegeneratePrimitive(format!(
                    "zero-length reference edge {e:?}"
                )));
            }
            stretch.push(StretchElement {
                i: e[0],
                j: e[1],
                rest_len: rest,
                k: m.youngs_modulus * area,
            });
        }
        // bend elements at every vertex with exactly two incident edges
        let mut bend = Vec::new();
        for v in 0..mesh.vertex_count() as u32 {
            let adj = mesh.adjacency_of(v);
            if adj.len() != 2 {
                continue;
            }
            let (a, la) = adj[0];
            let (b, lb) = adj[1];
            bend.push(BendElement {
                prev: a,
                mid: v,
                next: b,
                voronoi: 0.5 * (la + lb),
                stiffness: m.youngs_modulus * inertia,
            });
        }
        Ok(ElasticModel {
            stretch,
            bend,
            membrane: Vec::new(),
            hinge: Vec::new(),
        })
    }

    fn shell(mesh: &CodimMesh, m: &ShellMaterial) -> Result<Self> {
        let (mu, lambda) = lame_plane_stress(m.youngs_modulus, m.poisson_ratio);
        let xr = &mesh.reference_positions;
        let mut membrane = Vec::with_capacity(mesh.triangles.len());
        let mut tri_area = Vec::with_capacity(mesh.triangles.len());
        for (ti, t) in mesh.triangles.iter().enumerate() {
            let u = xr[t[1] as usize] - xr[t[0] as usize];
            let w = xr[t[2] as usize] - xr[t[0] as usize];
            let n = u.cross(&w);
            let area = 0.5 * n.norm();
            if area == 0.0 {
                return Err(SimError::InvertedElement(ti));
            }
            tri_area.push(area);
            let e1 = u.normalize();
            let e2 = (w - e1 * w.dot(&e1)).normalize();
            let dm = Matrix2::new(u.norm(), w.dot(&e1), 0.0, w.dot(&e2));
            let bm = dm.try_inverse().ok_or(SimError::InvertedElement(ti))?;
            membrane.push(MembraneElement {
                v: *t,
                bm,
                rest_area: area,
                mu,
                lambda,
                thickness: m.thickness,
            });
        }
        // hinge constant from plate theory
        let kb = m.youngs_modulus * m.thickness.powi(3)
            / (24.0 * (1.0 - m.poisson_ratio * m.poisson_ratio));
        // areas of the two triangles incident to each interior edge
        let mut area_of: rustc_hash::FxHashMap<[u32; 3], f64> = rustc_hash::FxHashMap::default();
        for (t, a) in mesh.triangles.iter().zip(tri_area.iter()) {
            let mut key = *t;
            key.sort_unstable();
            area_of.insert(key, *a);
        }
        let mut hinge = Vec::new();
        for hv in mesh.interior_hinges()? {
            let [e0, e1, oa, ob] = hv;
            let rest_edge = (xr[e0 as usize] - xr[e1 as usize]).norm();
            let mut ka = [e0, e1, oa];
            ka.sort_unstable();
            let mut kb2 = [e0, e1, ob];
            kb2.sort_unstable();
            let a1 = area_of[&ka];
            let a2 = area_of[&kb2];
            let height = (a1 + a2) / (3.0 * rest_edge);
            let rest_angle = dihedral_angle(
                &xr[e0 as usize],
                &xr[e1 as usize],
                &xr[oa as usize],
                &xr[ob as usize],
            )?;
            hinge.push(HingeElement {
                v: hv,
                rest_angle,
                factor: kb * rest_edge / height,
            });
        }
        Ok(ElasticModel {
            stretch: Vec::new(),
            bend: Vec::new(),
            membrane,
            hinge,
        })
    }

    pub fn energy(&self, x: &[Vector3<f64>]) -> Result<f64> {
        let mut total = 0.0;
        for e in &self.stretch {
            total += stretch_energy_value(e, x);
        }
        for e in &self.bend {
            total += bend_element(e, x)?.0;
        }
        for e in &self.membrane {
            total += membrane_element(e, x)?.0;
        }
        for e in &self.hinge {
            total += hinge_element(e, x)?.0;
        }
        Ok(total)
    }

    /// Deterministic chunked assembly; blocks arrive in element order.
    pub fn for_each_block<F: FnMut(f64, ElementBlock)>(
        &self,
        x: &[Vector3<f64>],
        project: bool,
        mut sink: F,
    ) -> Result<()> {
        const CHUNK: usize = 16 * 1024;
        for chunk in self.stretch.chunks(CHUNK) {
            let blocks: Vec<(f64, ElementBlock)> = chunk
                .par_iter()
                .map(|e| stretch_element(e, x, project))
                .collect();
            for (en, blk) in blocks {
                sink(en, blk);
            }
        }
        macro_rules! run {
            ($list:expr, $f:ident) => {
                for chunk in $list.chunks(CHUNK) {
                    let blocks: Vec<Result<(f64, ElementBlock)>> = chunk
                        .par_iter()
                        .map(|e| {
                            let (en, mut blk) = $f(e, x)?;
                            if project {
                                blk.project_psd();
                            }
                            Ok((en, blk))
                        })
                        .collect();
                    for r in blocks {
                        let (en, blk) = r?;
                        sink(en, blk);
                    }
                }
            };
        }
        run!(self.bend, bend_element);
        run!(self.membrane, membrane_element);
        run!(self.hinge, hinge_element);
        Ok(())
    }

    pub fn assemble(&self, x: &[Vector3<f64>]) -> Result<(f64, DVector<f64>, Vec<ElementBlock>)> {
        let mut energy = 0.0;
        let mut grad = DVector::zeros(3 * x.len());
        let mut blocks = Vec::new();
        self.for_each_block(x, false, |e, blk| {
            energy += e;
            crate::contact::scatter_gradient(&mut grad, &blk);
            blocks.push(blk);
        })?;
        Ok((energy, grad, blocks))
    }
}

fn stretch_energy_value(e: &StretchElement, x: &[Vector3<f64>]) -> f64 {
    let l = (x[e.j as usize] - x[e.i as usize]).norm();
    let strain = l / e.rest_len - 1.0;
    0.5 * e.k * strain * strain * e.rest_len
}

fn stretch_element(e: &StretchElement, x: &[Vector3<f64>], project: bool) -> (f64, ElementBlock) {
    let diff = x[e.j as usize] - x[e.i as usize];
    let l = diff.norm();
    let u = diff / l;
    let strain = l / e.rest_len - 1.0;
    let energy = 0.5 * e.k * strain * strain * e.rest_len;
    let de_dl = e.k * strain;
    let d2e_dl2 = e.k / e.rest_len;

    let mut blk = ElementBlock::new([e.i, e.j, 0, 0], 2);
    for c in 0..3 {
        blk.grad[c] = -de_dl * u[c];
        blk.grad[3 + c] = de_dl * u[c];
    }
    let uut = u * u.transpose();
    let h_jj = uut * d2e_dl2 + (Matrix3::identity() - uut) * (de_dl / l);
    for r in 0..3 {
        for c in 0..3 {
            blk.hess[(r, c)] = h_jj[(r, c)];
            blk.hess[(3 + r, 3 + c)] = h_jj[(r, c)];
            blk.hess[(r, 3 + c)] = -h_jj[(r, c)];
            blk.hess[(3 + r, c)] = -h_jj[(r, c)];
        }
    }
    if project {
        blk.project_psd();
    }
    (energy, blk)
}

fn dual_block<const N: usize>(verts: [u32; 4], count: usize, e: &Dual2<N>) -> ElementBlock {
    let mut blk = ElementBlock::new(verts, count);
    let h = e.hessian();
    for i in 0..N {
        blk.grad[i] = e.g[i];
        for j in 0..N {
            blk.hess[(i, j)] = h[(i, j)];
        }
    }
    blk
}

/// Discrete curvature-binormal bending at a 2-edge vertex.
fn bend_element(e: &BendElement, x: &[Vector3<f64>]) -> Result<(f64, ElementBlock)> {
    let p0 = dvec3_var::<9>(&x[e.prev as usize], 0);
    let p1 = dvec3_var::<9>(&x[e.mid as usize], 1);
    let p2 = dvec3_var::<9>(&x[e.next as usize], 2);
    let e1 = crate::math::dsub(&p1, &p0);
    let e2 = crate::math::dsub(&p2, &p1);
    let denom = dnorm(&e1) * dnorm(&e2) + ddot(&e1, &e2);
    let scale = (x[e.prev as usize] - x[e.mid as usize]).norm_squared();
    if denom.v <= 1e-14 * scale.max(1e-300) {
        return Err(SimError::SingularBend(e.mid as usize));
    }
    let cr = dcross(&e1, &e2);
    let kb2 = crate::math::dnorm_sq(&cr) * (Dual2::constant(4.0) / (denom * denom));
    let energy = kb2 * (e.stiffness / (2.0 * e.voronoi));
    Ok((energy.v, dual_block([e.prev, e.mid, e.next, 0], 3, &energy)))
}

/// Thickness-scaled Neo-Hookean membrane on the reference tangent frame.
fn membrane_element(e: &MembraneElement, x: &[Vector3<f64>]) -> Result<(f64, ElementBlock)> {
    let p0 = dvec3_var::<9>(&x[e.v[0] as usize], 0);
    let p1 = dvec3_var::<9>(&x[e.v[1] as usize], 1);
    let p2 = dvec3_var::<9>(&x[e.v[2] as usize], 2);
    let d1 = crate::math::dsub(&p1, &p0);
    let d2 = crate::math::dsub(&p2, &p0);
    // F = [d1 d2] * Bm, 3x2, columns f1 f2
    let b = &e.bm;
    let f1 = [
        d1[0] * b[(0, 0)] + d2[0] * b[(1, 0)],
        d1[1] * b[(0, 0)] + d2[1] * b[(1, 0)],
        d1[2] * b[(0, 0)] + d2[2] * b[(1, 0)],
    ];
    let f2 = [
        d1[0] * b[(0, 1)] + d2[0] * b[(1, 1)],
        d1[1] * b[(0, 1)] + d2[1] * b[(1, 1)],
        d1[2] * b[(0, 1)] + d2[2] * b[(1, 1)],
    ];
    let c11 = ddot(&f1, &f1);
    let c22 = ddot(&f2, &f2);
    let c12 = ddot(&f1, &f2);
    let det = c11 * c22 - c12 * c12;
    if det.v <= 0.0 {
        return Err(SimError::InvertedElement(e.v[0] as usize));
    }
    let log_det = det.ln();
    let trace = c11 + c22;
    // psi = mu/2 (tr - 2 - ln det) + lambda/8 (ln det)^2, with J^2 = det
    let psi = (trace - 2.0 - log_det) * (e.mu * 0.5) + log_det * log_det * (e.lambda / 8.0);
    let energy = psi * (e.thickness * e.rest_area);
    Ok((energy.v, dual_block([e.v[0], e.v[1], e.v[2], 0], 3, &energy)))
}

/// Interior dihedral angle of a hinge; pi when flat.
fn dihedral_angle(
    e0: &Vector3<f64>,
    e1: &Vector3<f64>,
    oa: &Vector3<f64>,
    ob: &Vector3<f64>,
) -> Result<f64> {
    let ev = e1 - e0;
    let n1 = ev.cross(&(oa - e0));
    let n2 = (ob - e0).cross(&ev);
    if n1.norm_squared() == 0.0 || n2.norm_squared() == 0.0 {
        return Err(SimError::DegeneratePrimitive("zero-area hinge face".into()));
    }
    let sin = n1.cross(&n2).dot(&ev.normalize());
    let cos = n1.dot(&n2);
    Ok(std::f64::consts::PI - sin.atan2(cos))
}

fn hinge_element(e: &HingeElement, x: &[Vector3<f64>]) -> Result<(f64, ElementBlock)> {
    let [i0, i1, ia, ib] = e.v;
    let p0 = dvec3_var::<12>(&x[i0 as usize], 0);
    let p1 = dvec3_var::<12>(&x[i1 as usize], 1);
    let pa = dvec3_var::<12>(&x[ia as usize], 2);
    let pb = dvec3_var::<12>(&x[ib as usize], 3);
    let ev = crate::math::dsub(&p1, &p0);
    let n1 = dcross(&ev, &crate::math::dsub(&pa, &p0));
    let n2 = dcross(&crate::math::dsub(&pb, &p0), &ev);
    let n1sq = crate::math::dnorm_sq(&n1);
    let n2sq = crate::math::dnorm_sq(&n2);
    if n1sq.v == 0.0 || n2sq.v == 0.0 {
        return Err(SimError::DegeneratePrimitive("zero-area hinge face".into()));
    }
    let elen = dnorm(&ev);
    let sin = ddot(&dcross(&n1, &n2), &ev) / elen;
    let cos = ddot(&n1, &n2);
    let theta = -(sin.atan2(cos)) + std::f64::consts::PI;
    let dev = theta - e.rest_angle;
    let energy = dev * dev * e.factor;
    Ok((energy.v, dual_block(e.v, 4, &energy)))
}

// ---------------------------------------------------------------------------
// Spec-level free functions
// ---------------------------------------------------------------------------

pub fn rod_stretch(
    x: &[Vector3<f64>],
    mesh: &CodimMesh,
    mat: &RodMaterial,
) -> Result<(f64, DVector<f64>, Vec<ElementBlock>)> {
    let model = ElasticModel::rod(mesh, mat)?;
    let mut energy = 0.0;
    let mut grad = DVector::zeros(3 * x.len());
    let mut blocks = Vec::new();
    for e in &model.stretch {
        let (en, blk) = stretch_element(e, x, false);
        energy += en;
        crate::contact::scatter_gradient(&mut grad, &blk);
        blocks.push(blk);
    }
    Ok((energy, grad, blocks))
}

pub fn rod_bend(
    x: &[Vector3<f64>],
    mesh: &CodimMesh,
    mat: &RodMaterial,
) -> Result<(f64, DVector<f64>, Vec<ElementBlock>)> {
    let model = ElasticModel::rod(mesh, mat)?;
    let mut energy = 0.0;
    let mut grad = DVector::zeros(3 * x.len());
    let mut blocks = Vec::new();
    for e in &model.bend {
        let (en, blk) = bend_element(e, x)?;
        energy += en;
        crate::contact::scatter_gradient(&mut grad, &blk);
        blocks.push(blk);
    }
    Ok((energy, grad, blocks))
}

pub fn shell_membrane(
    x: &[Vector3<f64>],
    mesh: &CodimMesh,
    mat: &ShellMaterial,
) -> Result<(f64, DVector<f64>, Vec<ElementBlock>)> {
    let model = ElasticModel::shell(mesh, mat)?;
    let mut energy = 0.0;
    let mut grad = DVector::zeros(3 * x.len());
    let mut blocks = Vec::new();
    for e in &model.membrane {
        let (en, blk) = membrane_element(e, x)?;
        energy += en;
        crate::contact::scatter_gradient(&mut grad, &blk);
        blocks.push(blk);
    }
    Ok((energy, grad, blocks))
}

pub fn shell_bend(
    x: &[Vector3<f64>],
    mesh: &CodimMesh,
    mat: &ShellMaterial,
) -> Result<(f64, DVector<f64>, Vec<ElementBlock>)> {
    let model = ElasticModel::shell(mesh, mat)?;
    let mut energy = 0.0;
    let mut grad = DVector::zeros(3 * x.len());
    let mut blocks = Vec::new();
    for e in &model.hinge {
        let (en, blk) = hinge_element(e, x)?;
        energy += en;
        crate::contact::scatter_gradient(&mut grad, &blk);
        blocks.push(blk);
    }
    Ok((energy, grad, blocks))
}

/// Per-vertex lumped masses from thickness and density: rods spread
/// rho*pi*r^2 over half-lengths of incident edges, shells spread
/// rho*h over one third of incident triangle areas.
pub fn lumped_mass(mesh: &CodimMesh, material: &Material) -> Result<Vec<f64>> {
    material.validate()?;
    let mut mass = vec![0.0; mesh.vertex_count()];
    match (mesh.kind, material) {
        (MeshKind::Rod, Material::Rod(m)) => {
            let line_density = m.density * std::f64::consts::PI * m.radius * m.radius;
            for e in &mesh.edges {
                let len = (mesh.reference_positions[e[0] as usize]
                    - mesh.reference_positions[e[1] as usize])
                    .norm();
                mass[e[0] as usize] += 0.5 * line_density * len;
                mass[e[1] as usize] += 0.5 * line_density * len;
            }
        }
        (MeshKind::Shell, Material::Shell(m)) => {
            let area_density = m.density * m.thickness;
            for t in &mesh.triangles {
                let u = mesh.reference_positions[t[1] as usize]
                    - mesh.reference_positions[t[0] as usize];
                let w = mesh.reference_positions[t[2] as usize]
                    - mesh.reference_positions[t[0] as usize];
                let area = 0.5 * u.cross(&w).norm();
                for &v in t {
                    mass[v as usize] += area_density * area / 3.0;
                }
            }
        }
        _ => {
            return Err(SimError::Config(
                "material kind does not match mesh kind".into(),
            ))
        }
    }
    Ok(mass)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::straight_polyline;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rod_mat() -> RodMaterial {
        RodMaterial {
            youngs_modulus: 1.0 / std::f64::consts::PI, // E A = 1 N at r = 1
            density: 1000.0,
            radius: 1.0,
        }
    }

    fn shell_mat() -> ShellMaterial {
        ShellMaterial {
            youngs_modulus: 0.8e6,
            poisson_ratio: 0.3,
            density: 500.0,
            thickness: 1e-3,
        }
    }

    fn grid_shell(nx: usize, ny: usize, spacing: f64) -> CodimMesh {
        let mut verts = Vec::new();
        for j in 0..=ny {
            for i in 0..=nx {
                verts.push(Vector3::new(i as f64 * spacing, j as f64 * spacing, 0.0));
            }
        }
        let at = |i: usize, j: usize| (j * (nx + 1) + i) as u32;
        let mut tris = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                tris.push([at(i, j), at(i + 1, j), at(i + 1, j + 1)]);
                tris.push([at(i, j), at(i + 1, j + 1), at(i, j + 1)]);
            }
        }
        CodimMesh::shell(verts, tris).unwrap()
    }

    #[test]
    fn stretch_rest_and_elongation() {
        let mesh = straight_polyline(5, 1.0);
        let (e0, g0, _) = rod_stretch(&mesh.reference_positions, &mesh, &rod_mat()).unwrap();
        assert_eq!(e0, 0.0);
        assert_eq!(g0.amax(), 0.0);
        // uniform 1% elongation: 0.5 * 1 N * (0.01)^2 * 1 m per edge
        let x: Vec<_> = mesh
            .reference_positions
            .iter()
            .map(|p| Vector3::new(p.x * 1.01, p.y, p.z))
            .collect();
        let (e1, _, _) = rod_stretch(&x, &mesh, &rod_mat()).unwrap();
        assert_relative_eq!(e1, 5.0 * 5e-5, max_relative = 1e-10);
    }

    #[test]
    fn bend_straight_and_right_angle() {
        let mesh = straight_polyline(2, 1.0);
        let (e0, _, _) = rod_bend(&mesh.reference_positions, &mesh, &rod_mat()).unwrap();
        assert_eq!(e0, 0.0);
        // right angle with unit edges: |kb| = 2
        let x = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(1.0, 1.0, 0.0),
        ];
        let (e1, _, _) = rod_bend(&x, &mesh, &rod_mat()).unwrap();
        let stiffness = rod_mat().youngs_modulus * std::f64::consts::PI / 4.0;
        // E = B |kb|^2 / (2 l) with |kb|^2 = 4, l = 1
        assert_relative_eq!(e1, stiffness * 4.0 / 2.0, max_relative = 1e-12);
    }

    #[test]
    fn bend_rejects_antiparallel() {
        let mesh = straight_polyline(2, 1.0);
        let x = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 0.0, 0.0),
        ];
        assert!(matches!(
            rod_bend(&x, &mesh, &rod_mat()),
            Err(SimError::SingularBend(_))
        ));
    }

    #[test]
    fn bend_rotation_invariance() {
        let mesh = straight_polyline(2, 1.0);
        let x = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(1.0, 1.0, 0.0),
        ];
        let rot = nalgebra::Rotation3::from_euler_angles(0.2, 1.4, -0.6);
        let moved: Vec<_> = x.iter().map(|p| rot * p).collect();
        let a = rod_bend(&x, &mesh, &rod_mat()).unwrap().0;
        let b = rod_bend(&moved, &mesh, &rod_mat()).unwrap().0;
        assert_relative_eq!(a, b, max_relative = 1e-12);
    }

    #[test]
    fn membrane_rest_and_rigid_motion() {
        let mesh = grid_shell(3, 3, 0.1);
        let (e0, g0, _) = shell_membrane(&mesh.reference_positions, &mesh, &shell_mat()).unwrap();
        assert!(e0.abs() < 1e-10);
        assert!(g0.amax() < 1e-12);
        let rot = nalgebra::Rotation3::from_euler_angles(0.4, -0.2, 1.1);
        let tr = Vector3::new(0.3, -0.5, 0.2);
        let x: Vec<_> = mesh
            .reference_positions
            .iter()
            .map(|p| rot * p + tr)
            .collect();
        let (e1, _, _) = shell_membrane(&x, &mesh, &shell_mat()).unwrap();
        assert!(e1.abs() < 1e-10);
    }

    #[test]
    fn membrane_equibiaxial_matches_scalar_formula() {
        let mesh = grid_shell(2, 2, 0.1);
        let s = 1.07;
        let x: Vec<_> = mesh
            .reference_positions
            .iter()
            .map(|p| Vector3::new(p.x * s, p.y * s, 0.0))
            .collect();
        let (e, _, _) = shell_membrane(&x, &mesh, &shell_mat()).unwrap();
        let m = shell_mat();
        let (mu, lambda) = lame_plane_stress(m.youngs_modulus, m.poisson_ratio);
        // F = s I: tr = 2 s^2, ln J = 2 ln s
        let lnj = 2.0 * s.ln();
        let psi = mu / 2.0 * (2.0 * s * s - 2.0 - 2.0 * lnj) + lambda / 2.0 * lnj * lnj;
        let total_area = 0.2 * 0.2;
        assert_relative_eq!(e, psi * m.thickness * total_area, max_relative = 1e-10);
    }

    #[test]
    fn hinge_rest_flat_and_fold() {
        let verts = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.5, 1.0, 0.0),
            Vector3::new(0.5, -1.0, 0.0),
        ];
        let mesh = CodimMesh::shell(verts, vec![[0, 1, 2], [0, 3, 1]]).unwrap();
        let m = shell_mat();
        let (e0, g0, _) = shell_bend(&mesh.reference_positions, &mesh, &m).unwrap();
        assert!(e0.abs() < 1e-10);
        assert!(g0.amax() < 1e-12);

        // fold the second flap up to a dihedral of pi/2
        let x = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.5, 1.0, 0.0),
            Vector3::new(0.5, 0.0, 1.0),
        ];
        let (e1, _, _) = shell_bend(&x, &mesh, &m).unwrap();
        let kb = m.youngs_modulus * m.thickness.powi(3)
            / (24.0 * (1.0 - m.poisson_ratio * m.poisson_ratio));
        let edge_len = 1.0;
        let height = (0.5 + 0.5) / (3.0 * edge_len);
        let expect = kb * (std::f64::consts::FRAC_PI_2).powi(2) * edge_len / height;
        assert_relative_eq!(e1, expect, max_relative = 1e-10);
    }

    #[test]
    fn lumped_mass_rod_and_shell() {
        // rho = 1000, r = 1e-3, two incident edges of 0.01 m
        let mesh = straight_polyline(2, 0.01);
        let mat = Material::Rod(RodMaterial {
            youngs_modulus: 1e6,
            density: 1000.0,
            radius: 1e-3,
        });
        let mass = lumped_mass(&mesh, &mat).unwrap();
        assert_relative_eq!(mass[1], 3.14159e-5, max_relative = 1e-4);
        // boundary vertex has one incident edge: half the interior mass
        assert_relative_eq!(mass[0], mass[1] / 2.0, max_relative = 1e-12);
        // totals are exact
        let total: f64 = mass.iter().sum();
        let expect = 1000.0 * std::f64::consts::PI * 1e-6 * 0.02;
        assert_relative_eq!(total, expect, max_relative = 1e-12);

        let grid = grid_shell(4, 4, 0.05);
        let smat = Material::Shell(shell_mat());
        let smass = lumped_mass(&grid, &smat).unwrap();
        let stotal: f64 = smass.iter().sum();
        assert_relative_eq!(stotal, 500.0 * 1e-3 * 0.2 * 0.2, max_relative = 1e-12);
    }

    /// Shared FD harness for all elastic energies.
    fn fd_check(
        x: &[Vector3<f64>],
        grad: &DVector<f64>,
        mut eval: impl FnMut(&[Vector3<f64>]) -> f64,
    ) {
        let e = 1e-6;
        for dof in 0..3 * x.len() {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[dof / 3][dof % 3] += e;
            xm[dof / 3][dof % 3] -= e;
            let fd = (eval(&xp) - eval(&xm)) / (2.0 * e);
            assert_relative_eq!(grad[dof], fd, max_relative = 1e-4, epsilon = 1e-8);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let mesh = straight_polyline(6, 0.3);
        let mat = rod_mat();
        for _ in 0..20 {
            let x: Vec<Vector3<f64>> = mesh
                .reference_positions
                .iter()
                .map(|p| {
                    p + Vector3::new(
                        rng.gen_range(-0.05..0.05),
                        rng.gen_range(-0.05..0.05),
                        rng.gen_range(-0.05..0.05),
                    )
                })
                .collect();
            let (_, gs, _) = rod_stretch(&x, &mesh, &mat).unwrap();
            fd_check(&x, &gs, |y| rod_stretch(y, &mesh, &mat).unwrap().0);
            let (_, gb, _) = rod_bend(&x, &mesh, &mat).unwrap();
            fd_check(&x, &gb, |y| rod_bend(y, &mesh, &mat).unwrap().0);
        }

        let grid = grid_shell(2, 2, 0.2);
        let smat = shell_mat();
        for _ in 0..10 {
            let x: Vec<Vector3<f64>> = grid
                .reference_positions
                .iter()
                .map(|p| {
                    p + Vector3::new(
                        rng.gen_range(-0.02..0.02),
                        rng.gen_range(-0.02..0.02),
                        rng.gen_range(-0.02..0.02),
                    )
                })
                .collect();
            let (_, gm, _) = shell_membrane(&x, &grid, &smat).unwrap();
            fd_check(&x, &gm, |y| shell_membrane(y, &grid, &smat).unwrap().0);
            let (_, gh, _) = shell_bend(&x, &grid, &smat).unwrap();
            fd_check(&x, &gh, |y| shell_bend(y, &grid, &smat).unwrap().0);
        }
    }

    #[test]
    fn energies_invariant_under_rigid_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let mesh = straight_polyline(6, 0.3);
        let mat = rod_mat();
        let grid = grid_shell(2, 2, 0.2);
        let smat = shell_mat();
        let rot = nalgebra::Rotation3::from_euler_angles(0.7, 0.3, -0.9);
        let tr = Vector3::new(1.0, -2.0, 0.5);
        for _ in 0..20 {
            let x: Vec<Vector3<f64>> = mesh
                .reference_positions
                .iter()
                .map(|p| {
                    p + Vector3::new(
                        rng.gen_range(-0.05..0.05),
                        rng.gen_range(-0.05..0.05),
                        rng.gen_range(-0.05..0.05),
                    )
                })
                .collect();
            let moved: Vec<_> = x.iter().map(|p| rot * p + tr).collect();
            let a = rod_stretch(&x, &mesh, &mat).unwrap().0;
            let b = rod_stretch(&moved, &mesh, &mat).unwrap().0;
            assert_relative_eq!(a, b, max_relative = 1e-10, epsilon = 1e-18);
            let a = rod_bend(&x, &mesh, &mat).unwrap().0;
            let b = rod_bend(&moved, &mesh, &mat).unwrap().0;
            assert_relative_eq!(a, b, max_relative = 1e-10, epsilon = 1e-18);
        }
        for _ in 0..10 {
            let x: Vec<Vector3<f64>> = grid
                .reference_positions
                .iter()
                .map(|p| {
                    p + Vector3::new(
                        rng.gen_range(-0.02..0.02),
                        rng.gen_range(-0.02..0.02),
                        rng.gen_range(-0.02..0.02),
                    )
                })
                .collect();
            let moved: Vec<_> = x.iter().map(|p| rot * p + tr).collect();
            let a = shell_membrane(&x, &grid, &smat).unwrap().0;
            let b = shell_membrane(&moved, &grid, &smat).unwrap().0;
            assert_relative_eq!(a, b, max_relative = 1e-10, epsilon = 1e-18);
            let a = shell_bend(&x, &grid, &smat).unwrap().0;
            let b = shell_bend(&moved, &grid, &smat).unwrap().0;
            assert_relative_eq!(a, b, max_relative = 1e-10, epsilon = 1e-18);
        }
    }

    #[test]
    fn projected_blocks_are_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let mesh = straight_polyline(6, 0.3);
        let model = ElasticModel::new(&mesh, &Material::Rod(rod_mat())).unwrap();
        for _ in 0..20 {
            let x: Vec<Vector3<f64>> = mesh
                .reference_positions
                .iter()
                .map(|p| {
                    p + Vector3::new(
                        rng.gen_range(-0.1..0.1),
                        rng.gen_range(-0.1..0.1),
                        rng.gen_range(-0.1..0.1),
                    )
                })
                .collect();
            model
                .for_each_block(&x, true, |_, blk| {
                    let n = blk.dof();
                    let m = nalgebra::DMatrix::from_fn(n, n, |i, j| blk.hess[(i, j)]);
                    let eig = nalgebra::SymmetricEigen::new(m);
                    assert!(eig.eigenvalues.iter().all(|&v| v >= -1e-10));
                })
                .unwrap();
        }
    }
}
