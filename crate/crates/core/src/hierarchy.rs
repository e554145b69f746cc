//! Midpoint subdivision and the coarse-to-fine mesh hierarchy.
//!
//! Each subdivision step splits every triangle `(v0, v1, v2)` into the four
//! triangles `(v0, w2, w1)`, `(v1, w0, w2)`, `(v2, w1, w0)`, `(w0, w1, w2)`,
//! where `w0`, `w1`, `w2` are the midpoints of the edges opposite `v0`, `v1`,
//! `v2`. Original vertices keep their indices and coordinates, so the
//! vertices of level `j` are exactly the first vertices of level `j + 1`.
//! Pooling neighborhoods are derived from that embedding: a coarse vertex
//! together with its 1-ring at the next finer level.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::geom;
use crate::mesh::{MeshError, SemiRegularMesh};

/// Placement rule for the midpoint vertices created by subdivision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeometryMode {
    /// New vertices sit at the Euclidean edge midpoints.
    FlatMidpoint,
    /// New vertices are edge midpoints re-normalized onto the unit sphere.
    SphereProjected,
}

impl fmt::Display for GeometryMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GeometryMode::FlatMidpoint => write!(f, "flat-midpoint"),
            GeometryMode::SphereProjected => write!(f, "sphere-projected"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HierarchyError {
    /// A level index or level pair fell outside the hierarchy.
    LevelOutOfRange { level: usize, depth: usize },
    /// Vertex index outside the level it was addressed in.
    VertexOutOfRange { vertex: usize, level: usize },
    /// Pooling stride other than 2 or 4.
    BadStride { stride: usize },
    /// A mesh stack handed to `from_levels` is not a subdivision hierarchy.
    NotSubdivisionStructured { level: usize, detail: &'static str },
    Mesh(MeshError),
}

impl fmt::Display for HierarchyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HierarchyError::LevelOutOfRange { level, depth } => {
                write!(f, "level {level} out of range for hierarchy of depth {depth}")
            }
            HierarchyError::VertexOutOfRange { vertex, level } => {
                write!(f, "vertex {vertex} out of range at level {level}")
            }
            HierarchyError::BadStride { stride } => {
                write!(f, "pooling stride {stride} unsupported (expected 2 or 4)")
            }
            HierarchyError::NotSubdivisionStructured { level, detail } => {
                write!(f, "level {level} is not a midpoint subdivision of its parent: {detail}")
            }
            HierarchyError::Mesh(e) => write!(f, "{e}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for HierarchyError {}

impl From<MeshError> for HierarchyError {
    fn from(e: MeshError) -> Self {
        HierarchyError::Mesh(e)
    }
}

/// A coarse-to-fine stack of subdivision meshes.
///
/// `levels[0]` is the coarsest mesh; `levels[j + 1]` refines `levels[j]`.
/// Immutable after construction.
#[derive(Debug, Clone)]
pub struct MeshHierarchy {
    levels: Vec<SemiRegularMesh>,
    /// For level `j >= 1`: `midpoint_parents[j - 1][m]` are the two coarse
    /// endpoints of the edge whose midpoint became vertex `V_(j-1) + m`.
    midpoint_parents: Vec<Vec<[usize; 2]>>,
    geometry_mode: GeometryMode,
}

impl MeshHierarchy {
    /// Number of subdivision steps (`levels().len() - 1`).
    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn levels(&self) -> &[SemiRegularMesh] {
        &self.levels
    }

    pub fn level(&self, j: usize) -> &SemiRegularMesh {
        &self.levels[j]
    }

    pub fn geometry_mode(&self) -> GeometryMode {
        self.geometry_mode
    }

    /// Parent map for the new vertices of level `j` (requires `j >= 1`).
    pub fn midpoint_parents(&self, j: usize) -> &[[usize; 2]] {
        &self.midpoint_parents[j - 1]
    }

    /// The pooling neighborhood of coarse vertex `i` at level `j`.
    ///
    /// Stride 2 gathers `i` and its 1-ring one level finer; stride 4 gathers
    /// `i` with its 1- and 2-ring two levels finer. Members are sorted and
    /// duplicate-free.
    pub fn pool_neighborhood(
        &self,
        level: usize,
        vertex: usize,
        stride: usize,
    ) -> Result<PoolNeighborhood, HierarchyError> {
        let hops = match stride {
            2 => 1usize,
            4 => 2usize,
            _ => return Err(HierarchyError::BadStride { stride }),
        };
        if level + hops > self.depth() {
            return Err(HierarchyError::LevelOutOfRange { level, depth: self.depth() });
        }
        if vertex >= self.levels[level].n_vertices() {
            return Err(HierarchyError::VertexOutOfRange { vertex, level });
        }
        let fine = &self.levels[level + hops];
        let mut members = vec![vertex];
        let mut frontier = vec![vertex];
        for _ in 0..hops {
            let mut next = Vec::new();
            for &v in &frontier {
                for &n in fine.neighbors(v) {
                    if !members.contains(&n) {
                        members.push(n);
                        next.push(n);
                    }
                }
            }
            frontier = next;
        }
        members.sort_unstable();
        Ok(PoolNeighborhood { center: vertex, members })
    }

    /// Rebuilds a hierarchy from an already-subdivided mesh stack, checking
    /// the subdivision structure and recovering the midpoint parent maps.
    pub fn from_levels(
        levels: Vec<SemiRegularMesh>,
        geometry_mode: GeometryMode,
    ) -> Result<Self, HierarchyError> {
        if levels.is_empty() {
            return Err(HierarchyError::LevelOutOfRange { level: 0, depth: 0 });
        }
        let mut midpoint_parents = Vec::with_capacity(levels.len() - 1);
        for j in 1..levels.len() {
            let coarse = &levels[j - 1];
            let fine = &levels[j];
            let nc = coarse.n_vertices();
            if fine.n_triangles() != 4 * coarse.n_triangles() {
                return Err(HierarchyError::NotSubdivisionStructured {
                    level: j,
                    detail: "face count is not four times the coarser level",
                });
            }
            let coarse_edges = coarse.edges();
            if fine.n_vertices() != nc + coarse_edges.len() {
                return Err(HierarchyError::NotSubdivisionStructured {
                    level: j,
                    detail: "vertex count is not V + E of the coarser level",
                });
            }
            for i in 0..nc {
                if coarse.vertex(i) != fine.vertex(i) {
                    return Err(HierarchyError::NotSubdivisionStructured {
                        level: j,
                        detail: "coarse vertex coordinates are not a prefix of the finer level",
                    });
                }
                if fine.neighbors(i).iter().any(|&n| n < nc) {
                    return Err(HierarchyError::NotSubdivisionStructured {
                        level: j,
                        detail: "an original vertex kept an original neighbor",
                    });
                }
            }
            // Each new vertex must sit on exactly one coarse edge: its two
            // coarse neighbors are the edge endpoints, and every coarse edge
            // is consumed exactly once.
            let mut parents = Vec::with_capacity(fine.n_vertices() - nc);
            let mut seen: BTreeMap<(usize, usize), usize> = BTreeMap::new();
            for v in nc..fine.n_vertices() {
                let old: Vec<usize> =
                    fine.neighbors(v).iter().copied().filter(|&n| n < nc).collect();
                if old.len() != 2 {
                    return Err(HierarchyError::NotSubdivisionStructured {
                        level: j,
                        detail: "a new vertex does not have exactly two coarse neighbors",
                    });
                }
                let (a, b) = (old[0].min(old[1]), old[0].max(old[1]));
                if seen.insert((a, b), v).is_some() {
                    return Err(HierarchyError::NotSubdivisionStructured {
                        level: j,
                        detail: "two new vertices share the same coarse edge",
                    });
                }
                parents.push([a, b]);
            }
            if seen.len() != coarse_edges.len()
                || !coarse_edges.iter().all(|e| seen.contains_key(e))
            {
                return Err(HierarchyError::NotSubdivisionStructured {
                    level: j,
                    detail: "midpoints do not cover the coarse edge set",
                });
            }
            midpoint_parents.push(parents);
        }
        Ok(Self { levels, midpoint_parents, geometry_mode })
    }
}

/// A coarse vertex together with the finer vertices it pools over.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolNeighborhood {
    pub center: usize,
    /// Sorted, duplicate-free; always contains `center`.
    pub members: Vec<usize>,
}

/// One midpoint-subdivision step.
///
/// Returns the refined mesh and, for each new vertex `V + m`, the coarse
/// edge endpoints it bisects (midpoints are appended in ascending
/// `(min-endpoint, max-endpoint)` edge order).
pub fn subdivide(
    mesh: &SemiRegularMesh,
    mode: GeometryMode,
) -> Result<(SemiRegularMesh, Vec<[usize; 2]>), MeshError> {
    let base = mesh.n_vertices();
    let edges = mesh.edges();
    let mut vertices = mesh.vertices().to_vec();
    vertices.reserve(edges.len());
    let mut midpoint_index: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut parents = Vec::with_capacity(edges.len());
    for (rank, &(a, b)) in edges.iter().enumerate() {
        let mid = geom::midpoint(mesh.vertex(a), mesh.vertex(b));
        let placed = match mode {
            GeometryMode::FlatMidpoint => mid,
            GeometryMode::SphereProjected => geom::normalize(mid).unwrap_or(mid),
        };
        vertices.push(placed);
        midpoint_index.insert((a, b), base + rank);
        parents.push([a, b]);
    }

    let mid = |a: usize, b: usize| midpoint_index[&(a.min(b), a.max(b))];
    let mut triangles = Vec::with_capacity(4 * mesh.n_triangles());
    for &[v0, v1, v2] in mesh.triangles() {
        let w0 = mid(v1, v2);
        let w1 = mid(v2, v0);
        let w2 = mid(v0, v1);
        triangles.push([v0, w2, w1]);
        triangles.push([v1, w0, w2]);
        triangles.push([v2, w1, w0]);
        triangles.push([w0, w1, w2]);
    }

    let level = mesh.level_hint().map(|l| l + 1).unwrap_or(1);
    let refined = SemiRegularMesh::build_with_level(vertices, triangles, level)?;
    Ok((refined, parents))
}

/// Applies [`subdivide`] `depth` times starting from `base`.
pub fn build_hierarchy(
    base: SemiRegularMesh,
    depth: usize,
    mode: GeometryMode,
) -> Result<MeshHierarchy, MeshError> {
    let mut levels = Vec::with_capacity(depth + 1);
    let mut midpoint_parents = Vec::with_capacity(depth);
    levels.push(base);
    for _ in 0..depth {
        let (next, parents) = subdivide(levels.last().unwrap(), mode)?;
        levels.push(next);
        midpoint_parents.push(parents);
    }
    Ok(MeshHierarchy { levels, midpoint_parents, geometry_mode: mode })
}

/// The unit icosphere hierarchy: a regular icosahedron subdivided `depth`
/// times with sphere projection. Deterministic vertex order.
pub fn icosphere(depth: usize) -> MeshHierarchy {
    build_hierarchy(crate::mesh::icosahedron(), depth, GeometryMode::SphereProjected)
        .expect("icosphere subdivision preserves validity")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::icosahedron;
    use alloc::collections::BTreeSet;

    fn single_triangle() -> SemiRegularMesh {
        SemiRegularMesh::build(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2]],
        )
        .unwrap()
    }

    #[test]
    fn icosahedron_subdivision_counts() {
        let (fine, parents) = subdivide(&icosahedron(), GeometryMode::SphereProjected).unwrap();
        assert_eq!(fine.n_vertices(), 42);
        assert_eq!(fine.edges().len(), 120);
        assert_eq!(fine.n_triangles(), 80);
        assert_eq!(parents.len(), 30);
    }

    #[test]
    fn single_triangle_subdivides_per_scheme() {
        let (fine, _) = subdivide(&single_triangle(), GeometryMode::FlatMidpoint).unwrap();
        assert_eq!(fine.n_vertices(), 6);
        assert_eq!(fine.n_triangles(), 4);
    }

    #[test]
    fn icosphere_vertex_counts_match_closed_form() {
        // Oracle: iterate V' = V + E from (V, E) = (12, 30), which closes to
        // 10 * 4^j + 2 for the icosahedron.
        let hier = icosphere(4);
        let mut v = 12usize;
        let mut e = 30usize;
        for (j, level) in hier.levels().iter().enumerate() {
            assert_eq!(level.n_vertices(), v, "level {j}");
            assert_eq!(level.n_vertices(), 10 * 4usize.pow(j as u32) + 2);
            let f = level.n_triangles();
            assert_eq!(f, 20 * 4usize.pow(j as u32));
            // Advance the recurrence: E' = 2E + 3F.
            let e_next = 2 * e + 3 * f;
            v += e;
            e = e_next;
        }
    }

    #[test]
    fn triangle_hierarchy_vertex_counts() {
        let hier =
            build_hierarchy(single_triangle(), 2, GeometryMode::FlatMidpoint).unwrap();
        let counts: Vec<usize> = hier.levels().iter().map(|m| m.n_vertices()).collect();
        assert_eq!(counts, vec![3, 6, 15]);
    }

    #[test]
    fn depth_zero_is_identity() {
        let hier = build_hierarchy(icosahedron(), 0, GeometryMode::FlatMidpoint).unwrap();
        assert_eq!(hier.levels().len(), 1);
        assert_eq!(hier.depth(), 0);
    }

    #[test]
    fn sphere_projection_puts_vertices_on_unit_sphere() {
        let hier = icosphere(2);
        assert_eq!(hier.level(2).n_vertices(), 162);
        for v in hier.level(2).vertices() {
            assert!((geom::norm(*v) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn icosphere_valence_histogram() {
        let hier = icosphere(3);
        let report = hier.level(3).validate();
        assert_eq!(report.valence_histogram.get(&5), Some(&12));
        assert_eq!(report.valence_histogram.get(&6), Some(&630));
        assert_eq!(hier.level(3).n_vertices(), 642);
    }

    #[test]
    fn prefix_embedding_is_bit_exact() {
        for mode in [GeometryMode::FlatMidpoint, GeometryMode::SphereProjected] {
            let hier = build_hierarchy(icosahedron(), 3, mode).unwrap();
            for j in 0..hier.depth() {
                let coarse = hier.level(j);
                let fine = hier.level(j + 1);
                for i in 0..coarse.n_vertices() {
                    assert_eq!(coarse.vertex(i), fine.vertex(i));
                }
            }
        }
    }

    #[test]
    fn old_vertices_only_touch_new_vertices() {
        let hier = icosphere(3);
        for j in 0..hier.depth() {
            let nc = hier.level(j).n_vertices();
            let fine = hier.level(j + 1);
            for i in 0..nc {
                assert!(fine.neighbors(i).iter().all(|&n| n >= nc), "level {j} vertex {i}");
            }
        }
    }

    #[test]
    fn midpoint_parents_cover_coarse_edges_once() {
        let hier = icosphere(2);
        for j in 1..=hier.depth() {
            let coarse_edges: BTreeSet<(usize, usize)> =
                hier.level(j - 1).edges().into_iter().collect();
            let parents = hier.midpoint_parents(j);
            assert_eq!(parents.len(), coarse_edges.len());
            let seen: BTreeSet<(usize, usize)> =
                parents.iter().map(|p| (p[0], p[1])).collect();
            assert_eq!(seen, coarse_edges);
        }
    }

    #[test]
    fn pool_neighborhood_sizes_follow_valence() {
        let hier = icosphere(2);
        // The original 12 vertices keep valence 5 at every level.
        for i in 0..12 {
            let hood = hier.pool_neighborhood(0, i, 2).unwrap();
            assert_eq!(hood.members.len(), 6);
            assert!(hood.members.contains(&i));
        }
        // Any midpoint vertex has valence 6 one level finer.
        for i in 12..42 {
            let hood = hier.pool_neighborhood(1, i, 2).unwrap();
            assert_eq!(hood.members.len(), 7);
        }
    }

    #[test]
    fn pool_stride_four_spans_two_levels() {
        let hier = icosphere(2);
        let hood = hier.pool_neighborhood(0, 0, 4).unwrap();
        // 1- and 2-ring at level 2 around a valence-5 vertex: 5 + 10 + center.
        assert_eq!(hood.members.len(), 16);
        assert!(hood.members.contains(&0));
    }

    #[test]
    fn pool_at_finest_level_is_out_of_range() {
        let hier = icosphere(1);
        let err = hier.pool_neighborhood(1, 0, 2).unwrap_err();
        assert!(matches!(err, HierarchyError::LevelOutOfRange { .. }));
        let err = hier.pool_neighborhood(0, 0, 4).unwrap_err();
        assert!(matches!(err, HierarchyError::LevelOutOfRange { .. }));
    }

    #[test]
    fn stride_two_neighborhoods_cover_the_fine_level() {
        let hier = icosphere(2);
        for j in 0..hier.depth() {
            let fine_n = hier.level(j + 1).n_vertices();
            let mut covered = vec![false; fine_n];
            for i in 0..hier.level(j).n_vertices() {
                for m in hier.pool_neighborhood(j, i, 2).unwrap().members {
                    covered[m] = true;
                }
            }
            assert!(covered.iter().all(|&c| c), "level {j} not covered");
        }
    }

    #[test]
    fn from_levels_roundtrip_and_rejection() {
        let hier = icosphere(2);
        let rebuilt =
            MeshHierarchy::from_levels(hier.levels().to_vec(), GeometryMode::SphereProjected)
                .unwrap();
        assert_eq!(rebuilt.depth(), 2);
        for j in 1..=2 {
            assert_eq!(rebuilt.midpoint_parents(j), hier.midpoint_parents(j));
        }
        // A stack that skips a level is rejected.
        let bad = vec![hier.level(0).clone(), hier.level(2).clone()];
        let err = MeshHierarchy::from_levels(bad, GeometryMode::SphereProjected).unwrap_err();
        assert!(matches!(err, HierarchyError::NotSubdivisionStructured { .. }));
    }
}
