//! Reference/deformed mesh representation, topology queries, connected
//! components, and parametric (intrinsic) distances between primitives.
//!
//! A [`CodimMesh`] is immutable after construction; all queries are
//! read-only. Rod meshes are polylines (vertices + edges); shell meshes are
//! triangulations whose edge list is derived from the triangles.

use crate::proximity::{self, PairKind};
use crate::{Result, SimError};
use nalgebra::Vector3;
use std::collections::BinaryHeap;
use std::io::{BufRead, Write};

/// Rod (1D midline) or shell (2D midsurface).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeshKind {
    Rod,
    Shell,
}

/// A mesh primitive with sorted vertex indices, so that pair hashing is
/// orientation-independent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Primitive {
    Vertex(u32),
    Edge([u32; 2]),
    Triangle([u32; 3]),
}

impl Primitive {
    pub fn vertex(i: u32) -> Self {
        Primitive::Vertex(i)
    }

    pub fn edge(a: u32, b: u32) -> Self {
        let mut v = [a, b];
        v.sort_unstable();
        Primitive::Edge(v)
    }

    pub fn triangle(a: u32, b: u32, c: u32) -> Self {
        let mut v = [a, b, c];
        v.sort_unstable();
        Primitive::Triangle(v)
    }

    pub fn vertices(&self) -> &[u32] {
        match self {
            Primitive::Vertex(v) => std::slice::from_ref(v),
            Primitive::Edge(v) => v,
            Primitive::Triangle(v) => v,
        }
    }

    pub fn shares_vertex(&self, other: &Primitive) -> bool {
        self.vertices()
            .iter()
            .any(|v| other.vertices().contains(v))
    }
}

/// Normalized unordered primitive pair usable as a hash/sort key.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PairKey(pub Primitive, pub Primitive);

impl PairKey {
    pub fn new(a: Primitive, b: Primitive) -> Self {
        if a <= b {
            PairKey(a, b)
        } else {
            PairKey(b, a)
        }
    }
}

/// Contact stencil of a normalized pair: kind plus the stencil vertex order
/// expected by [`proximity::pair_distance`].
pub fn stencil_of(pair: &PairKey) -> Result<(PairKind, [u32; 4], usize)> {
    match (&pair.0, &pair.1) {
        (Primitive::Vertex(a), Primitive::Vertex(b)) => {
            Ok((PairKind::PointPoint, [*a, *b, 0, 0], 2))
        }
        (Primitive::Vertex(p), Primitive::Edge(e)) => {
            Ok((PairKind::PointEdge, [*p, e[0], e[1], 0], 3))
        }
        (Primitive::Edge(a), Primitive::Edge(b)) => {
            Ok((PairKind::EdgeEdge, [a[0], a[1], b[0], b[1]], 4))
        }
        (Primitive::Vertex(p), Primitive::Triangle(t)) => {
            Ok((PairKind::PointTriangle, [*p, t[0], t[1], t[2]], 4))
        }
        (a, b) => Err(SimError::InvalidPrimitive(format!(
            "({a:?}, {b:?}) is not a contact stencil"
        ))),
    }
}

/// Polyline or triangle mesh with reference and deformed configurations.
#[derive(Clone, Debug)]
pub struct CodimMesh {
    pub kind: MeshKind,
    pub reference_positions: Vec<Vector3<f64>>,
    pub deformed_positions: Vec<Vector3<f64>>,
    pub edges: Vec<[u32; 2]>,
    pub triangles: Vec<[u32; 3]>,
    pub component_id: Vec<u32>,
    /// Per-vertex adjacency: (neighbor, reference edge length).
    adjacency: Vec<Vec<(u32, f64)>>,
}

impl CodimMesh {
    /// Build a rod mesh (polylines) from vertices and edges.
    pub fn rod(reference: Vec<Vector3<f64>>, edges: Vec<[u32; 2]>) -> Result<Self> {
        Self::build(MeshKind::Rod, reference, edges, Vec::new())
    }

    /// Build a shell mesh from vertices and triangles; the edge list is the
    /// deduplicated set of triangle edges.
    pub fn shell(reference: Vec<Vector3<f64>>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        let mut edges: Vec<[u32; 2]> = Vec::with_capacity(triangles.len() * 3);
        for t in &triangles {
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                let mut e = [a, b];
                e.sort_unstable();
                edges.push(e);
            }
        }
        edges.sort_unstable();
        edges.dedup();
        Self::build(MeshKind::Shell, reference, edges, triangles)
    }

    fn build(
        kind: MeshKind,
        reference: Vec<Vector3<f64>>,
        edges: Vec<[u32; 2]>,
        triangles: Vec<[u32; 3]>,
    ) -> Result<Self> {
        let n = reference.len();
        for e in &edges {
            if e[0] as usize >= n || e[1] as usize >= n {
                return Err(SimError::InvalidMesh(format!("edge {e:?} out of bounds")));
            }
            if e[0] == e[1] {
                return Err(SimError::InvalidMesh(format!("degenerate edge {e:?}")));
            }
        }
        for t in &triangles {
            if t.iter().any(|&v| v as usize >= n) {
                return Err(SimError::InvalidMesh(format!(
                    "triangle {t:?} out of bounds"
                )));
            }
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                return Err(SimError::InvalidMesh(format!("degenerate triangle {t:?}")));
            }
        }
        if kind == MeshKind::Rod && !triangles.is_empty() {
            return Err(SimError::InvalidMesh("rod mesh with triangles".into()));
        }

        let mut adjacency = vec![Vec::new(); n];
        for e in &edges {
            let len = (reference[e[0] as usize] - reference[e[1] as usize]).norm();
            adjacency[e[0] as usize].push((e[1], len));
            adjacency[e[1] as usize].push((e[0], len));
        }
        for adj in adjacency.iter_mut() {
            adj.sort_unstable_by(|a, b| a.0.cmp(&b.0));
        }

        let mut mesh = CodimMesh {
            kind,
            deformed_positions: reference.clone(),
            reference_positions: reference,
            edges,
            triangles,
            component_id: Vec::new(),
            adjacency,
        };
        mesh.component_id = connected_components(&mesh);
        Ok(mesh)
    }

    pub fn vertex_count(&self) -> usize {
        self.reference_positions.len()
    }

    pub fn component_count(&self) -> usize {
        self.component_id
            .iter()
            .map(|&c| c as usize + 1)
            .max()
            .unwrap_or(0)
    }

    /// Component of a primitive (all its vertices share one by
    /// connectivity).
    pub fn component_of(&self, p: &Primitive) -> u32 {
        self.component_id[p.vertices()[0] as usize]
    }

    /// All primitives of the mesh in stencil-relevant kinds, deterministic
    /// order: vertices, then edges, then triangles.
    pub fn primitives(&self) -> Vec<Primitive> {
        let mut out =
            Vec::with_capacity(self.vertex_count() + self.edges.len() + self.triangles.len());
        for i in 0..self.vertex_count() as u32 {
            out.push(Primitive::Vertex(i));
        }
        for e in &self.edges {
            out.push(Primitive::edge(e[0], e[1]));
        }
        for t in &self.triangles {
            out.push(Primitive::triangle(t[0], t[1], t[2]));
        }
        out
    }

    /// Gather stencil coordinates for a pair from any position buffer.
    pub fn stencil_coords(
        &self,
        pair: &PairKey,
        x: &[Vector3<f64>],
    ) -> Result<(PairKind, Vec<Vector3<f64>>, [u32; 4], usize)> {
        let (kind, idx, count) = stencil_of(pair)?;
        let coords = idx[..count].iter().map(|&i| x[i as usize]).collect();
        Ok((kind, coords, idx, count))
    }

    /// Minimum intrinsic path length between any vertex of `p1` and any
    /// vertex of `p2` over the reference mesh. Rods measure arc length along
    /// the polyline; shells use graph geodesics over reference edge lengths.
    /// Primitives sharing a vertex return 0; different components return
    /// infinity.
    pub fn parametric_distance(&self, p1: &Primitive, p2: &Primitive) -> Result<f64> {
        for p in [p1, p2] {
            for &v in p.vertices() {
                if v as usize >= self.vertex_count() {
                    return Err(SimError::InvalidPrimitive(format!(
                        "vertex {v} out of bounds"
                    )));
                }
            }
        }
        if p1.shares_vertex(p2) {
            return Ok(0.0);
        }
        if self.component_of(p1) != self.component_of(p2) {
            return Ok(f64::INFINITY);
        }
        // multi-source Dijkstra from p1's vertices until all of p2's settle
        let targets: Vec<u32> = p2.vertices().to_vec();
        let mut dist = vec![f64::INFINITY; self.vertex_count()];
        let mut heap = BinaryHeap::new();
        for &s in p1.vertices() {
            dist[s as usize] = 0.0;
            heap.push(HeapEntry { d: 0.0, v: s });
        }
        let mut best = f64::INFINITY;
        while let Some(HeapEntry { d, v }) = heap.pop() {
            if d > dist[v as usize] {
                continue;
            }
            if targets.contains(&v) {
                best = best.min(d);
            }
            if d >= best {
                continue;
            }
            for &(nb, len) in &self.adjacency[v as usize] {
                let nd = d + len;
                if nd < dist[nb as usize] {
                    dist[nb as usize] = nd;
                    heap.push(HeapEntry { d: nd, v: nb });
                }
            }
        }
        Ok(best)
    }

    /// Euclidean primitive-pair distance on the reference configuration.
    /// Pairs sharing a vertex are not contact stencils.
    pub fn reference_distance(&self, p1: &Primitive, p2: &Primitive) -> Result<f64> {
        if p1.shares_vertex(p2) {
            return Err(SimError::SharedVertexPair);
        }
        let pair = PairKey::new(*p1, *p2);
        let (kind, coords, _, _) = self.stencil_coords(&pair, &self.reference_positions)?;
        Ok(proximity::pair_distance_value(kind, &coords)?.0)
    }

    /// Vertices within `radius` intrinsic distance of each vertex
    /// (truncated Dijkstra), excluding the vertex itself.
    pub fn parametric_balls(&self, radius: f64) -> Vec<Vec<(u32, f64)>> {
        let n = self.vertex_count();
        let mut out = vec![Vec::new(); n];
        let mut dist = vec![f64::INFINITY; n];
        let mut touched: Vec<u32> = Vec::new();
        for s in 0..n as u32 {
            let mut heap = BinaryHeap::new();
            dist[s as usize] = 0.0;
            touched.push(s);
            heap.push(HeapEntry { d: 0.0, v: s });
            while let Some(HeapEntry { d, v }) = heap.pop() {
                if d > dist[v as usize] {
                    continue;
                }
                if v != s {
                    out[s as usize].push((v, d));
                }
                for &(nb, len) in &self.adjacency[v as usize] {
                    let nd = d + len;
                    if nd < radius && nd < dist[nb as usize] {
                        dist[nb as usize] = nd;
                        touched.push(nb);
                        heap.push(HeapEntry { d: nd, v: nb });
                    }
                }
            }
            for &t in &touched {
                dist[t as usize] = f64::INFINITY;
            }
            touched.clear();
            out[s as usize].sort_unstable_by(|a, b| a.0.cmp(&b.0));
        }
        out
    }

    /// Vertices within `hops` graph hops of each vertex (truncated BFS),
    /// excluding the vertex itself.
    pub fn hop_balls(&self, hops: u32) -> Vec<Vec<u32>> {
        let n = self.vertex_count();
        let mut out = vec![Vec::new(); n];
        let mut depth = vec![u32::MAX; n];
        let mut touched: Vec<u32> = Vec::new();
        let mut queue = std::collections::VecDeque::new();
        for s in 0..n as u32 {
            depth[s as usize] = 0;
            touched.push(s);
            queue.push_back(s);
            while let Some(v) = queue.pop_front() {
                let d = depth[v as usize];
                if v != s {
                    out[s as usize].push(v);
                }
                if d == hops {
                    continue;
                }
                for &(nb, _) in &self.adjacency[v as usize] {
                    if depth[nb as usize] == u32::MAX {
                        depth[nb as usize] = d + 1;
                        touched.push(nb);
                        queue.push_back(nb);
                    }
                }
            }
            for &t in &touched {
                depth[t as usize] = u32::MAX;
            }
            touched.clear();
            out[s as usize].sort_unstable();
        }
        out
    }

    /// Neighbors of a vertex with reference edge lengths.
    pub fn adjacency_of(&self, v: u32) -> &[(u32, f64)] {
        &self.adjacency[v as usize]
    }

    /// Interior hinges of a shell: [e0, e1, opposite_a, opposite_b] per
    /// manifold interior edge.
    pub fn interior_hinges(&self) -> Result<Vec<[u32; 4]>> {
        let mut opposite: std::collections::BTreeMap<[u32; 2], Vec<u32>> =
            std::collections::BTreeMap::new();
        for t in &self.triangles {
            for (a, b, c) in [(t[0], t[1], t[2]), (t[1], t[2], t[0]), (t[2], t[0], t[1])] {
                let mut e = [a, b];
                e.sort_unstable();
                opposite.entry(e).or_default().push(c);
            }
        }
        let mut hinges = Vec::new();
        for (e, opp) in opposite {
            match opp.len() {
                1 => {}
                2 => hinges.push([e[0], e[1], opp[0], opp[1]]),
                _ => return Err(SimError::NonManifoldEdge(e[0] as usize, e[1] as usize)),
            }
        }
        Ok(hinges)
    }
}

#[derive(PartialEq)]
struct HeapEntry {
    d: f64,
    v: u32,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // min-heap on distance
        other
            .d
            .partial_cmp(&self.d)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| other.v.cmp(&self.v))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Per-vertex component labels: maximal edge-connected sets, labeled by
/// contiguous integers from 0 in order of the smallest contained vertex.
pub fn connected_components(mesh: &CodimMesh) -> Vec<u32> {
    let n = mesh.vertex_count();
    let mut label = vec![u32::MAX; n];
    let mut next = 0u32;
    let mut stack = Vec::new();
    for s in 0..n {
        if label[s] != u32::MAX {
            continue;
        }
        label[s] = next;
        stack.push(s as u32);
        while let Some(v) = stack.pop() {
            for &(nb, _) in &mesh.adjacency[v as usize] {
                if label[nb as usize] == u32::MAX {
                    label[nb as usize] = next;
                    stack.push(nb);
                }
            }
        }
        next += 1;
    }
    label
}

/// Load geometry from a Wavefront OBJ file: `v` records for vertices, `l`
/// records for polylines (rods), `f` records for triangles (shells).
pub fn load_obj(path: &std::path::Path) -> Result<CodimMesh> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut vertices: Vec<Vector3<f64>> = Vec::new();
    let mut edges: Vec<[u32; 2]> = Vec::new();
    let mut triangles: Vec<[u32; 3]> = Vec::new();

    let parse_index = |tok: &str, nverts: usize| -> Result<u32> {
        let first = tok.split('/').next().unwrap_or(tok);
        let idx: i64 = first
            .parse()
            .map_err(|_| SimError::InvalidMesh(format!("bad index `{tok}`")))?;
        if idx < 1 || idx as usize > nverts {
            return Err(SimError::InvalidMesh(format!("index {idx} out of range")));
        }
        Ok((idx - 1) as u32)
    };

    for line in reader.lines() {
        let line = line?;
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("v") => {
                let mut c = [0.0f64; 3];
                for v in c.iter_mut() {
                    *v = toks
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| SimError::InvalidMesh("bad vertex record".into()))?;
                }
                vertices.push(Vector3::new(c[0], c[1], c[2]));
            }
            Some("l") => {
                let idx: Vec<u32> = toks
                    .map(|t| parse_index(t, vertices.len()))
                    .collect::<Result<_>>()?;
                if idx.len() < 2 {
                    return Err(SimError::InvalidMesh("polyline with < 2 vertices".into()));
                }
                for w in idx.windows(2) {
                    edges.push([w[0], w[1]]);
                }
            }
            Some("f") => {
                let idx: Vec<u32> = toks
                    .map(|t| parse_index(t, vertices.len()))
                    .collect::<Result<_>>()?;
                if idx.len() != 3 {
                    return Err(SimError::InvalidMesh(
                        "only triangle faces are supported".into(),
                    ));
                }
                triangles.push([idx[0], idx[1], idx[2]]);
            }
            _ => {}
        }
    }

    match (edges.is_empty(), triangles.is_empty()) {
        (false, true) => CodimMesh::rod(vertices, edges),
        (true, false) => CodimMesh::shell(vertices, triangles),
        (false, false) => Err(SimError::InvalidMesh(
            "OBJ mixes polylines and faces".into(),
        )),
        (true, true) => Err(SimError::InvalidMesh("OBJ has no l or f records".into())),
    }
}

/// Write positions plus the mesh topology as OBJ (lines for rods, faces for
/// shells).
pub fn write_obj<W: Write>(w: &mut W, mesh: &CodimMesh, x: &[Vector3<f64>]) -> std::io::Result<()> {
    for p in x {
        writeln!(w, "v {} {} {}", p.x, p.y, p.z)?;
    }
    match mesh.kind {
        MeshKind::Rod => {
            for e in &mesh.edges {
                writeln!(w, "l {} {}", e[0] + 1, e[1] + 1)?;
            }
        }
        MeshKind::Shell => {
            for t in &mesh.triangles {
                writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
            }
        }
    }
    Ok(())
}

/// Uniform straight polyline along +x with `segments` edges of length
/// `segment_len`.
pub fn straight_polyline(segments: usize, segment_len: f64) -> CodimMesh {
    let verts: Vec<_> = (0..=segments)
        .map(|i| Vector3::new(i as f64 * segment_len, 0.0, 0.0))
        .collect();
    let edges: Vec<_> = (0..segments as u32).map(|i| [i, i + 1]).collect();
    CodimMesh::rod(verts, edges).expect("straight polyline is valid")
}
