//! Triangulated-mesh representation: construction, manifold validation and
//! vertex normals.
//!
//! A [`SemiRegularMesh`] stores vertex coordinates, oriented triangles and a
//! per-vertex 1-ring adjacency list in *fan order*: consecutive neighbors
//! always share a triangle with the center vertex, walking counter-clockwise
//! (as seen from outside) for consistently oriented closed meshes. That
//! deterministic cyclic structure is what the neighbor-ordering stage builds
//! on.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

#[allow(unused_imports)]
use num_traits::Float;

use crate::geom::{self, Vec3};

/// Errors raised while building a mesh or querying vertex geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshError {
    /// The vertex list was empty.
    EmptyMesh,
    /// A triangle references a vertex index outside `[0, n_vertices)`.
    OutOfRangeIndex { triangle: usize, index: usize },
    /// A triangle repeats one of its vertices.
    DegenerateTriangle { triangle: usize },
    /// An edge is shared by more than two triangles.
    NonManifoldEdge { a: usize, b: usize },
    /// An interior edge is traversed twice in the same direction.
    InconsistentOrientation { a: usize, b: usize },
    /// The triangles around a vertex do not form a single fan.
    NonManifoldVertex { vertex: usize },
    /// Incident triangle normals cancel exactly, or the vertex has no
    /// incident triangle.
    ZeroNormal { vertex: usize },
}

impl fmt::Display for MeshError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MeshError::EmptyMesh => write!(f, "mesh has no vertices"),
            MeshError::OutOfRangeIndex { triangle, index } => {
                write!(f, "triangle {triangle} references out-of-range vertex {index}")
            }
            MeshError::DegenerateTriangle { triangle } => {
                write!(f, "triangle {triangle} repeats a vertex")
            }
            MeshError::NonManifoldEdge { a, b } => {
                write!(f, "edge ({a}, {b}) belongs to more than two triangles")
            }
            MeshError::InconsistentOrientation { a, b } => {
                write!(f, "edge ({a}, {b}) is traversed twice in the same direction")
            }
            MeshError::NonManifoldVertex { vertex } => {
                write!(f, "triangles around vertex {vertex} do not form a single fan")
            }
            MeshError::ZeroNormal { vertex } => {
                write!(f, "incident triangle normals cancel at vertex {vertex}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for MeshError {}

/// Connectivity summary produced by [`SemiRegularMesh::validate`].
///
/// Validation never fails; it reports what it found.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationReport {
    /// Every edge belongs to one or two triangles.
    pub is_manifold: bool,
    /// Every interior edge is traversed once in each direction.
    pub is_consistently_oriented: bool,
    /// Count of vertices per valence.
    pub valence_histogram: BTreeMap<usize, usize>,
    /// Edges that belong to exactly one triangle.
    pub boundary_edge_count: usize,
    /// `V - E + F`; 2 for a closed genus-0 mesh.
    pub euler_characteristic: i64,
}

/// An oriented triangulated mesh with fan-ordered vertex adjacency.
///
/// Immutable after construction; safe to share across concurrent readers.
#[derive(Debug, Clone)]
pub struct SemiRegularMesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[usize; 3]>,
    adjacency: Vec<Vec<usize>>,
    incident: Vec<Vec<usize>>,
    boundary_vertex: Vec<bool>,
    level_hint: Option<usize>,
}

impl SemiRegularMesh {
    /// Builds a mesh from raw vertices and index triples, deriving the
    /// fan-ordered adjacency from triangle winding.
    pub fn build(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        if vertices.is_empty() {
            return Err(MeshError::EmptyMesh);
        }
        let n = vertices.len();
        for (t, tri) in triangles.iter().enumerate() {
            for &i in tri {
                if i >= n {
                    return Err(MeshError::OutOfRangeIndex { triangle: t, index: i });
                }
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(MeshError::DegenerateTriangle { triangle: t });
            }
        }

        // Undirected edge incidence: reject edges in more than two triangles
        // before looking at orientation so that duplicated faces surface as
        // the non-manifold edge they create.
        let mut edge_faces: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for tri in &triangles {
            for e in 0..3 {
                let a = tri[e];
                let b = tri[(e + 1) % 3];
                let key = (a.min(b), a.max(b));
                let count = edge_faces.entry(key).or_insert(0);
                *count += 1;
                if *count > 2 {
                    return Err(MeshError::NonManifoldEdge { a: key.0, b: key.1 });
                }
            }
        }

        // Directed edges: an interior edge must appear once per direction.
        let mut directed: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for tri in &triangles {
            for e in 0..3 {
                let a = tri[e];
                let b = tri[(e + 1) % 3];
                let count = directed.entry((a, b)).or_insert(0);
                *count += 1;
                if *count > 1 {
                    return Err(MeshError::InconsistentOrientation { a, b });
                }
            }
        }

        // Per-vertex wedges: triangle (i, a, b) contributes the fan step
        // a -> b around i. Following the steps yields the counter-clockwise
        // fan (for outward-oriented meshes).
        let mut incident: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut wedges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
        for (t, tri) in triangles.iter().enumerate() {
            for c in 0..3 {
                let i = tri[c];
                let a = tri[(c + 1) % 3];
                let b = tri[(c + 2) % 3];
                incident[i].push(t);
                wedges[i].push((a, b));
            }
        }

        let mut adjacency: Vec<Vec<usize>> = Vec::with_capacity(n);
        let mut boundary_vertex = vec![false; n];
        for i in 0..n {
            let (fan, on_boundary) = build_fan(i, &wedges[i])?;
            boundary_vertex[i] = on_boundary;
            adjacency.push(fan);
        }

        Ok(Self {
            vertices,
            triangles,
            adjacency,
            incident,
            boundary_vertex,
            level_hint: None,
        })
    }

    /// Same as [`build`](Self::build) with a subdivision-level annotation.
    pub fn build_with_level(
        vertices: Vec<Vec3>,
        triangles: Vec<[usize; 3]>,
        level: usize,
    ) -> Result<Self, MeshError> {
        let mut mesh = Self::build(vertices, triangles)?;
        mesh.level_hint = Some(level);
        Ok(mesh)
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn vertex(&self, i: usize) -> Vec3 {
        self.vertices[i]
    }

    /// 1-ring neighbors of `i` in fan order. For interior vertices the list
    /// is cyclic; for boundary vertices it runs from one boundary edge to
    /// the other.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn valence(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    /// Indices of the triangles incident to `i` (unordered).
    pub fn incident_triangles(&self, i: usize) -> &[usize] {
        &self.incident[i]
    }

    /// True when the fan around `i` does not close into a cycle.
    pub fn is_boundary_vertex(&self, i: usize) -> bool {
        self.boundary_vertex[i]
    }

    pub fn level_hint(&self) -> Option<usize> {
        self.level_hint
    }

    /// Undirected edges as `(min, max)` pairs in ascending order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut set: Vec<(usize, usize)> = Vec::new();
        for tri in &self.triangles {
            for e in 0..3 {
                let a = tri[e];
                let b = tri[(e + 1) % 3];
                set.push((a.min(b), a.max(b)));
            }
        }
        set.sort_unstable();
        set.dedup();
        set
    }

    /// True when `a` and `b` sit next to each other in the fan around `i`
    /// (equivalently: they share a triangle with `i`).
    pub fn fan_adjacent(&self, i: usize, a: usize, b: usize) -> bool {
        let fan = &self.adjacency[i];
        let m = fan.len();
        if m < 2 {
            return false;
        }
        for s in 0..m {
            let t = (s + 1) % m;
            // The wrap-around pair only counts for interior (cyclic) fans.
            if t == 0 && self.boundary_vertex[i] {
                continue;
            }
            let (u, v) = (fan[s], fan[t]);
            if (u == a && v == b) || (u == b && v == a) {
                return true;
            }
        }
        false
    }

    /// Area-weighted unit vertex normal, oriented by triangle winding.
    pub fn vertex_normal(&self, i: usize) -> Result<Vec3, MeshError> {
        let mut sum = [0.0f64; 3];
        let mut weight = 0.0f64;
        for &t in &self.incident[i] {
            let [a, b, c] = self.triangles[t];
            let n = geom::cross(
                geom::sub(self.vertices[b], self.vertices[a]),
                geom::sub(self.vertices[c], self.vertices[a]),
            );
            // |n| is twice the triangle area, so summing raw cross products
            // already area-weights the average.
            sum = geom::add(sum, n);
            weight += geom::norm(n);
        }
        if weight == 0.0 || geom::norm(sum) <= 1e-12 * weight {
            return Err(MeshError::ZeroNormal { vertex: i });
        }
        Ok(geom::normalize(sum).ok_or(MeshError::ZeroNormal { vertex: i })?)
    }

    /// Computes the connectivity report (see [`ValidationReport`]).
    pub fn validate(&self) -> ValidationReport {
        let mut undirected: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut directed: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for tri in &self.triangles {
            for e in 0..3 {
                let a = tri[e];
                let b = tri[(e + 1) % 3];
                *undirected.entry((a.min(b), a.max(b))).or_insert(0) += 1;
                *directed.entry((a, b)).or_insert(0) += 1;
            }
        }
        let is_manifold = undirected.values().all(|&c| c == 1 || c == 2);
        let is_consistently_oriented = directed.values().all(|&c| c == 1)
            && undirected.iter().all(|(&(a, b), &c)| {
                c == 1 || (directed.contains_key(&(a, b)) && directed.contains_key(&(b, a)))
            });
        let boundary_edge_count = undirected.values().filter(|&&c| c == 1).count();
        let mut valence_histogram = BTreeMap::new();
        for fan in &self.adjacency {
            *valence_histogram.entry(fan.len()).or_insert(0) += 1;
        }
        let v = self.vertices.len() as i64;
        let e = undirected.len() as i64;
        let f = self.triangles.len() as i64;
        ValidationReport {
            is_manifold,
            is_consistently_oriented,
            valence_histogram,
            boundary_edge_count,
            euler_characteristic: v - e + f,
        }
    }
}

/// Orders the wedges around a vertex into a single fan.
///
/// Returns the neighbor sequence and whether the fan is open (boundary).
fn build_fan(vertex: usize, wedges: &[(usize, usize)]) -> Result<(Vec<usize>, bool), MeshError> {
    if wedges.is_empty() {
        return Ok((Vec::new(), false));
    }
    // successor[a] = b for each wedge a -> b; duplicates were already
    // rejected by the directed-edge check (a repeated wedge start around a
    // vertex implies a repeated directed edge (vertex, a) elsewhere, and a
    // repeated wedge here means edge (vertex, a) is in two same-side faces).
    let mut successor: BTreeMap<usize, usize> = BTreeMap::new();
    let mut has_predecessor: BTreeMap<usize, bool> = BTreeMap::new();
    for &(a, b) in wedges {
        if successor.insert(a, b).is_some() {
            return Err(MeshError::NonManifoldVertex { vertex });
        }
        has_predecessor.entry(a).or_insert(false);
        *has_predecessor.entry(b).or_insert(false) = true;
    }

    let starts: Vec<usize> = successor
        .keys()
        .filter(|k| !has_predecessor[k])
        .copied()
        .collect();

    let (start, expected_len, boundary) = if starts.is_empty() {
        // Closed fan: every neighbor has in- and out-degree 1. Start at the
        // smallest index for determinism.
        let n_neighbors = has_predecessor.len();
        if n_neighbors != wedges.len() {
            return Err(MeshError::NonManifoldVertex { vertex });
        }
        (*successor.keys().next().unwrap(), n_neighbors, false)
    } else if starts.len() == 1 {
        (starts[0], has_predecessor.len(), true)
    } else {
        return Err(MeshError::NonManifoldVertex { vertex });
    };

    let mut fan = Vec::with_capacity(expected_len);
    let mut cur = start;
    for _ in 0..expected_len {
        fan.push(cur);
        match successor.get(&cur) {
            Some(&next) => cur = next,
            None => break,
        }
    }
    if fan.len() != expected_len || (!boundary && cur != start) {
        return Err(MeshError::NonManifoldVertex { vertex });
    }
    // A closed walk that returned early to the start without visiting every
    // neighbor is two fans glued at the vertex.
    let mut sorted = fan.clone();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != fan.len() {
        return Err(MeshError::NonManifoldVertex { vertex });
    }
    Ok((fan, boundary))
}

/// The regular icosahedron with unit-length vertices, outward orientation.
///
/// Vertices follow the cyclic `(0, ±1, ±phi)` construction, normalized.
pub fn icosahedron() -> SemiRegularMesh {
    let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
    let raw: [Vec3; 12] = [
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ];
    let vertices: Vec<Vec3> = raw
        .iter()
        .map(|&v| geom::normalize(v).expect("icosahedron vertex is nonzero"))
        .collect();
    let triangles: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    SemiRegularMesh::build_with_level(vertices, triangles, 0)
        .expect("the regular icosahedron is a valid closed mesh")
}
