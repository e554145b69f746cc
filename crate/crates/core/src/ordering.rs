//! Tangent-plane neighbor ordering and gather tables.
//!
//! Ring convolution needs a deterministic neighbor order at every vertex.
//! A least-squares sphere through the vertex and its 1-ring supplies a
//! tangent plane; neighbors are projected into that plane and sorted
//! clockwise, starting from the neighbor whose projection is angularly
//! closest to the plane's x-axis. The per-vertex orders are assembled into a
//! [`GatherTable`], the index structure that turns ring convolution into a
//! matrix product.
//!
//! Conventions (the construction leaves these free, so they are pinned here):
//!
//! - The tangent x-axis is the projection of global +X (global +Y when the
//!   normal is within ~8 degrees of ±X). This fixed reference makes learned
//!   filter orientations reproducible across runs and platforms.
//! - "Clockwise" means decreasing `atan2` angle, viewed from outside along
//!   the outward normal.
//! - All ties break toward the smaller vertex index.
//! - Rings beyond the first are sorted by (ring, clockwise angle from the
//!   x-axis, vertex index) and padded per ring to `6 * ring` slots.

use alloc::vec::Vec;
use core::fmt;

#[allow(unused_imports)]
use num_traits::Float;

use crate::geom::{self, Vec3};
use crate::mesh::{MeshError, SemiRegularMesh};

/// Sentinel marking a padded slot in a gather-table row.
pub const SENTINEL: i32 = -1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrderingError {
    /// A sphere fit needs at least three neighbor points.
    TooFewNeighbors { found: usize },
    /// A neighbor projected onto the tangent plane collapsed to the origin,
    /// leaving its angle undefined.
    ZeroProjection { vertex: usize, neighbor: usize },
    /// A ring holds more vertices than its `6 * ring` slots.
    RingOverflow { vertex: usize, ring: usize, size: usize },
    /// Ring order `k` must be at least 1.
    InvalidRingOrder { k: usize },
    Mesh(MeshError),
}

impl fmt::Display for OrderingError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OrderingError::TooFewNeighbors { found } => {
                write!(f, "sphere fit needs at least 3 neighbors, found {found}")
            }
            OrderingError::ZeroProjection { vertex, neighbor } => {
                write!(f, "neighbor {neighbor} of vertex {vertex} projects onto the tangent origin")
            }
            OrderingError::RingOverflow { vertex, ring, size } => {
                write!(f, "ring {ring} of vertex {vertex} has {size} vertices (> {} slots)", 6 * ring)
            }
            OrderingError::InvalidRingOrder { k } => write!(f, "ring order {k} must be >= 1"),
            OrderingError::Mesh(e) => write!(f, "{e}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for OrderingError {}

impl From<MeshError> for OrderingError {
    fn from(e: MeshError) -> Self {
        OrderingError::Mesh(e)
    }
}

/// Result of [`fit_sphere`]: either a proper sphere or a plane fallback for
/// (near-)coplanar neighborhoods.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SphereFit {
    Sphere { center: Vec3, radius: f64 },
    Plane,
}

/// Orthonormal frame of the tangent plane at a vertex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentFrame {
    pub origin: Vec3,
    pub normal: Vec3,
    pub x_axis: Vec3,
    pub y_axis: Vec3,
    pub sphere_center: Option<Vec3>,
    pub sphere_radius: Option<f64>,
    /// True when the neighborhood was too flat for a sphere fit.
    pub degenerate_plane: bool,
}

/// Least-squares sphere constrained to pass exactly through `center`.
///
/// Substituting the constraint `|center - c|^2 = r^2` into the algebraic
/// sphere residual reduces the fit to a 3x3 linear system in the center.
/// Returns [`SphereFit::Plane`] when the system is rank-deficient or the
/// fitted radius exceeds `1e6` times the largest pairwise neighbor distance.
pub fn fit_sphere(center: Vec3, neighbors: &[Vec3]) -> Result<SphereFit, OrderingError> {
    if neighbors.len() < 3 {
        return Err(OrderingError::TooFewNeighbors { found: neighbors.len() });
    }
    // With q = p - center and c = center + c', each neighbor contributes the
    // linear equation q . c' = |q|^2 / 2.
    let mut m = [[0.0f64; 3]; 3];
    let mut b = [0.0f64; 3];
    for &p in neighbors {
        let q = geom::sub(p, center);
        let rhs = 0.5 * geom::dot(q, q);
        for r in 0..3 {
            for c in 0..3 {
                m[r][c] += q[r] * q[c];
            }
            b[r] += q[r] * rhs;
        }
    }

    let offset = match solve3(m, b) {
        Some(x) => x,
        None => return Ok(SphereFit::Plane),
    };
    let radius = geom::norm(offset);

    let mut max_pair = 0.0f64;
    for i in 0..neighbors.len() {
        for j in (i + 1)..neighbors.len() {
            max_pair = max_pair.max(geom::distance(neighbors[i], neighbors[j]));
        }
    }
    if !(radius.is_finite()) || radius > 1e6 * max_pair || radius == 0.0 {
        return Ok(SphereFit::Plane);
    }
    Ok(SphereFit::Sphere { center: geom::add(center, offset), radius })
}

/// Gaussian elimination with partial pivoting on a 3x3 system.
/// Returns `None` when a pivot falls below the rank tolerance.
fn solve3(mut m: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    let mut scale = 0.0f64;
    for r in 0..3 {
        for c in 0..3 {
            scale = scale.max(m[r][c].abs());
        }
    }
    if scale == 0.0 {
        return None;
    }
    let tol = 1e-12 * scale;
    for col in 0..3 {
        let pivot_row = (col..3)
            .max_by(|&a, &b| m[a][col].abs().partial_cmp(&m[b][col].abs()).unwrap())
            .unwrap();
        if m[pivot_row][col].abs() <= tol {
            return None;
        }
        m.swap(col, pivot_row);
        b.swap(col, pivot_row);
        for row in (col + 1)..3 {
            let f = m[row][col] / m[col][col];
            for c in col..3 {
                m[row][c] -= f * m[col][c];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0f64; 3];
    for row in (0..3).rev() {
        let mut acc = b[row];
        for c in (row + 1)..3 {
            acc -= m[row][c] * x[c];
        }
        x[row] = acc / m[row][row];
    }
    Some(x)
}

/// Builds the tangent frame at vertex `i` from the sphere fit to its 1-ring.
///
/// The normal is the outward sphere direction (sign-matched to the winding
/// normal); in plane mode it is the winding normal itself. The x-axis is the
/// projection of global +X (or +Y near ±X) onto the tangent plane.
pub fn tangent_frame(mesh: &SemiRegularMesh, i: usize) -> Result<TangentFrame, OrderingError> {
    let origin = mesh.vertex(i);
    let neighbor_points: Vec<Vec3> =
        mesh.neighbors(i).iter().map(|&n| mesh.vertex(n)).collect();
    let fit = fit_sphere(origin, &neighbor_points)?;

    let (normal, sphere_center, sphere_radius, degenerate_plane) = match fit {
        SphereFit::Sphere { center, radius } => {
            let mut n = geom::scale(geom::sub(origin, center), 1.0 / radius);
            // The sphere does not know inside from outside; the winding
            // normal disambiguates when available.
            if let Ok(vn) = mesh.vertex_normal(i) {
                if geom::dot(n, vn) < 0.0 {
                    n = geom::scale(n, -1.0);
                }
            }
            (n, Some(center), Some(radius), false)
        }
        SphereFit::Plane => {
            let n = mesh.vertex_normal(i)?;
            (n, None, None, true)
        }
    };

    let reference = if geom::dot([1.0, 0.0, 0.0], normal).abs() > 0.99 {
        [0.0, 1.0, 0.0]
    } else {
        [1.0, 0.0, 0.0]
    };
    let in_plane = geom::sub(reference, geom::scale(normal, geom::dot(reference, normal)));
    let x_axis = geom::normalize(in_plane)
        .expect("reference direction is at least 8 degrees away from the normal");
    let y_axis = geom::cross(normal, x_axis);

    Ok(TangentFrame {
        origin,
        normal,
        x_axis,
        y_axis,
        sphere_center,
        sphere_radius,
        degenerate_plane,
    })
}

/// Tangent-plane angle of `point` around the frame origin, in `(-pi, pi]`.
fn tangent_angle(frame: &TangentFrame, vertex: usize, neighbor: usize, point: Vec3)
    -> Result<f64, OrderingError>
{
    let d = geom::sub(point, frame.origin);
    let proj = geom::sub(d, geom::scale(frame.normal, geom::dot(d, frame.normal)));
    let len = geom::norm(proj);
    if len <= 1e-12 * geom::norm(d) || geom::norm(d) == 0.0 {
        return Err(OrderingError::ZeroProjection { vertex, neighbor });
    }
    Ok(geom::dot(proj, frame.y_axis).atan2(geom::dot(proj, frame.x_axis)))
}

/// Clockwise distance from `from` down to `to` in `[0, tau)`.
fn clockwise_delta(from: f64, to: f64) -> f64 {
    let tau = core::f64::consts::TAU;
    let mut d = (from - to) % tau;
    if d < 0.0 {
        d += tau;
    }
    d
}

fn order_ring_with_frame(
    mesh: &SemiRegularMesh,
    i: usize,
    frame: &TangentFrame,
) -> Result<Vec<usize>, OrderingError> {
    let mut angled: Vec<(f64, usize)> = Vec::with_capacity(mesh.valence(i));
    for &n in mesh.neighbors(i) {
        angled.push((tangent_angle(frame, i, n, mesh.vertex(n))?, n));
    }
    // First slot: angularly closest to the +x axis, smaller index on ties.
    let &(start_theta, start) = angled
        .iter()
        .min_by(|a, b| {
            (a.0.abs(), a.1)
                .partial_cmp(&(b.0.abs(), b.1))
                .expect("angles are finite")
        })
        .expect("valence >= 3 checked by the sphere fit");
    let mut rest: Vec<(f64, usize)> = angled.into_iter().filter(|&(_, n)| n != start).collect();
    rest.sort_by(|a, b| {
        (clockwise_delta(start_theta, a.0), a.1)
            .partial_cmp(&(clockwise_delta(start_theta, b.0), b.1))
            .expect("angles are finite")
    });
    let mut ordered = Vec::with_capacity(rest.len() + 1);
    ordered.push(start);
    ordered.extend(rest.into_iter().map(|(_, n)| n));

    if cfg!(debug_assertions) && ordered.len() >= 3 {
        let pairs = if mesh.is_boundary_vertex(i) { ordered.len() - 1 } else { ordered.len() };
        for s in 0..pairs {
            let a = ordered[s];
            let b = ordered[(s + 1) % ordered.len()];
            debug_assert!(
                mesh.fan_adjacent(i, a, b),
                "ordered ring of vertex {i} breaks fan adjacency between {a} and {b}"
            );
        }
    }
    Ok(ordered)
}

/// The 1-ring of vertex `i`, ordered clockwise in the tangent plane starting
/// at the neighbor closest to the x-axis.
pub fn order_one_ring(mesh: &SemiRegularMesh, i: usize) -> Result<Vec<usize>, OrderingError> {
    let frame = tangent_frame(mesh, i)?;
    order_ring_with_frame(mesh, i, &frame)
}

/// Per-vertex ordered support indices for k-ring convolution.
///
/// Row `i` holds `support_size = 3k(k+1) + 1` entries: the vertex itself,
/// the ordered 1-ring (6 slots), then each further ring in `6 * ring` slots.
/// Missing neighbors are [`SENTINEL`]; convolution treats them as zeros.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GatherTable {
    k: usize,
    support_size: usize,
    n_vertices: usize,
    rows: Vec<i32>,
}

impl GatherTable {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn support_size(&self) -> usize {
        self.support_size
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    /// Raw row of `i`, sentinel slots included.
    pub fn row(&self, i: usize) -> &[i32] {
        &self.rows[i * self.support_size..(i + 1) * self.support_size]
    }

    /// Entry `j` of row `i`, `None` for padded slots.
    pub fn entry(&self, i: usize, j: usize) -> Option<usize> {
        let e = self.rows[i * self.support_size + j];
        (e != SENTINEL).then_some(e as usize)
    }

    pub fn flat(&self) -> &[i32] {
        &self.rows
    }

    /// Rebuilds a table from its serialized parts, checking shape and range.
    pub fn from_parts(
        k: usize,
        n_vertices: usize,
        rows: Vec<i32>,
    ) -> Result<Self, OrderingError> {
        if k < 1 {
            return Err(OrderingError::InvalidRingOrder { k });
        }
        let support_size = support_size(k);
        if rows.len() != n_vertices * support_size
            || rows
                .iter()
                .any(|&e| e != SENTINEL && (e < 0 || e as usize >= n_vertices))
        {
            return Err(OrderingError::RingOverflow { vertex: 0, ring: k, size: rows.len() });
        }
        Ok(Self { k, support_size, n_vertices, rows })
    }
}

/// `3k(k+1) + 1`: the number of support slots (and filter taps) of a k-ring.
pub fn support_size(k: usize) -> usize {
    3 * k * (k + 1) + 1
}

/// Builds the gather table of ring order `k` for every vertex of `mesh`.
pub fn build_gather_table(mesh: &SemiRegularMesh, k: usize) -> Result<GatherTable, OrderingError> {
    if k < 1 {
        return Err(OrderingError::InvalidRingOrder { k });
    }
    let width = support_size(k);
    let n = mesh.n_vertices();
    let mut rows = Vec::with_capacity(n * width);
    for i in 0..n {
        let frame = tangent_frame(mesh, i)?;
        let mut row: Vec<i32> = Vec::with_capacity(width);
        row.push(i as i32);

        let ring1 = order_ring_with_frame(mesh, i, &frame)?;
        if ring1.len() > 6 {
            return Err(OrderingError::RingOverflow { vertex: i, ring: 1, size: ring1.len() });
        }
        row.extend(ring1.iter().map(|&v| v as i32));
        row.resize(1 + 6, SENTINEL);

        if k >= 2 {
            let rings = bfs_rings(mesh, i, k);
            for (r, ring) in rings.iter().enumerate().skip(2) {
                let slots = 6 * r;
                if ring.len() > slots {
                    return Err(OrderingError::RingOverflow { vertex: i, ring: r, size: ring.len() });
                }
                let mut keyed: Vec<(f64, usize)> = Vec::with_capacity(ring.len());
                for &v in ring {
                    let theta = tangent_angle(&frame, i, v, mesh.vertex(v))?;
                    keyed.push((clockwise_delta(0.0, theta), v));
                }
                keyed.sort_by(|a, b| a.partial_cmp(b).expect("angles are finite"));
                let before = row.len();
                row.extend(keyed.into_iter().map(|(_, v)| v as i32));
                row.resize(before + slots, SENTINEL);
            }
        }
        debug_assert_eq!(row.len(), width);
        rows.extend_from_slice(&row);
    }
    Ok(GatherTable { k, support_size: width, n_vertices: n, rows })
}

/// Vertices grouped by graph distance from `center`: `rings[r]` holds the
/// vertices at distance exactly `r`, for `r = 0..=k`.
fn bfs_rings(mesh: &SemiRegularMesh, center: usize, k: usize) -> Vec<Vec<usize>> {
    let mut dist = alloc::vec![usize::MAX; mesh.n_vertices()];
    dist[center] = 0;
    let mut rings: Vec<Vec<usize>> = alloc::vec![Vec::new(); k + 1];
    rings[0].push(center);
    let mut frontier = alloc::vec![center];
    for r in 1..=k {
        let mut next = Vec::new();
        for &v in &frontier {
            for &n in mesh.neighbors(v) {
                if dist[n] == usize::MAX {
                    dist[n] = r;
                    next.push(n);
                }
            }
        }
        next.sort_unstable();
        rings[r] = next.clone();
        frontier = next;
    }
    rings
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::icosphere;
    use crate::mesh::SemiRegularMesh;
    use alloc::collections::BTreeSet;
    use alloc::vec;

    fn flat_hex_patch() -> SemiRegularMesh {
        let mut vertices = vec![[0.0, 0.0, 0.0]];
        for k in 0..6 {
            let a = core::f64::consts::FRAC_PI_3 * k as f64;
            vertices.push([a.cos(), a.sin(), 0.0]);
        }
        let triangles = (0..6).map(|k| [0, 1 + k, 1 + (k + 1) % 6]).collect();
        SemiRegularMesh::build(vertices, triangles).unwrap()
    }

    /// Rodrigues rotation of `v` about the unit `axis` by `angle`.
    fn rotate(axis: Vec3, angle: f64, v: Vec3) -> Vec3 {
        let (s, c) = angle.sin_cos();
        let cross = geom::cross(axis, v);
        let dot = geom::dot(axis, v);
        [
            v[0] * c + cross[0] * s + axis[0] * dot * (1.0 - c),
            v[1] * c + cross[1] * s + axis[1] * dot * (1.0 - c),
            v[2] * c + cross[2] * s + axis[2] * dot * (1.0 - c),
        ]
    }

    fn cyclically_equal(a: &[usize], b: &[usize]) -> bool {
        if a.len() != b.len() || a.is_empty() {
            return a.len() == b.len();
        }
        (0..a.len()).any(|shift| (0..a.len()).all(|i| a[(i + shift) % a.len()] == b[i]))
    }

    #[test]
    fn sphere_fit_recovers_unit_sphere() {
        let center = [0.0, 0.0, 1.0];
        let polar = 0.6f64;
        let neighbors: Vec<Vec3> = (0..5)
            .map(|k| {
                let az = core::f64::consts::TAU * k as f64 / 5.0;
                [polar.sin() * az.cos(), polar.sin() * az.sin(), polar.cos()]
            })
            .collect();
        match fit_sphere(center, &neighbors).unwrap() {
            SphereFit::Sphere { center: c, radius } => {
                assert!(geom::norm(c) < 1e-8, "center {c:?}");
                assert!((radius - 1.0).abs() < 1e-8);
                // Residuals: every input point must sit on the fitted sphere.
                for p in neighbors.iter().chain([&center]) {
                    assert!((geom::distance(*p, c) - radius).abs() < 1e-8);
                }
            }
            SphereFit::Plane => panic!("expected a sphere"),
        }
    }

    #[test]
    fn coplanar_neighbors_fall_back_to_plane() {
        let neighbors: Vec<Vec3> = (0..6)
            .map(|k| {
                let a = core::f64::consts::FRAC_PI_3 * k as f64;
                [a.cos(), a.sin(), 0.0]
            })
            .collect();
        assert_eq!(fit_sphere([0.0, 0.0, 0.0], &neighbors).unwrap(), SphereFit::Plane);
    }

    #[test]
    fn two_neighbors_are_too_few() {
        let err = fit_sphere([0.0; 3], &[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]).unwrap_err();
        assert_eq!(err, OrderingError::TooFewNeighbors { found: 2 });
    }

    #[test]
    fn flat_patch_frame_is_global_axes() {
        let mesh = flat_hex_patch();
        let frame = tangent_frame(&mesh, 0).unwrap();
        assert!(frame.degenerate_plane);
        assert!(geom::norm(geom::sub(frame.normal, [0.0, 0.0, 1.0])) < 1e-12);
        assert!(geom::norm(geom::sub(frame.x_axis, [1.0, 0.0, 0.0])) < 1e-12);
        assert!(geom::norm(geom::sub(frame.y_axis, [0.0, 1.0, 0.0])) < 1e-12);
    }

    #[test]
    fn frames_are_orthonormal_and_sphere_consistent() {
        let hier = icosphere(1);
        let mesh = hier.level(1);
        for i in 0..mesh.n_vertices() {
            let f = tangent_frame(mesh, i).unwrap();
            for (a, b) in [
                (f.x_axis, f.y_axis),
                (f.x_axis, f.normal),
                (f.y_axis, f.normal),
            ] {
                assert!(geom::dot(a, b).abs() < 1e-10);
            }
            for v in [f.x_axis, f.y_axis, f.normal] {
                assert!((geom::norm(v) - 1.0).abs() < 1e-10);
            }
            if let (Some(c), Some(r)) = (f.sphere_center, f.sphere_radius) {
                assert!((geom::distance(f.origin, c) - r).abs() < 1e-8 * r);
            }
        }
    }

    #[test]
    fn icosphere_pole_normal_is_radial() {
        let hier = icosphere(1);
        let mesh = hier.level(1);
        // The base vertex nearest +Z (from the normalized (0, +-1, +-phi) set).
        let i = (0..12)
            .max_by(|&a, &b| mesh.vertex(a)[2].partial_cmp(&mesh.vertex(b)[2]).unwrap())
            .unwrap();
        let f = tangent_frame(mesh, i).unwrap();
        let radial = geom::normalize(mesh.vertex(i)).unwrap();
        assert!(geom::norm(geom::sub(f.normal, radial)) < 1e-6);
    }

    #[test]
    fn flat_hex_order_is_clockwise_from_x_axis() {
        let mesh = flat_hex_patch();
        // Neighbors 1..=6 sit at angles 0, 60, ..., 300 degrees.
        let ordered = order_one_ring(&mesh, 0).unwrap();
        assert_eq!(ordered, vec![1, 6, 5, 4, 3, 2]);
    }

    #[test]
    fn rigid_rotation_preserves_cyclic_order() {
        let mesh = flat_hex_patch();
        let before = order_one_ring(&mesh, 0).unwrap();
        let axis = [0.0, 0.0, 1.0];
        let rotated: Vec<Vec3> = mesh
            .vertices()
            .iter()
            .map(|&v| rotate(axis, 40f64.to_radians(), v))
            .collect();
        let rotated_mesh =
            SemiRegularMesh::build(rotated, mesh.triangles().to_vec()).unwrap();
        let after = order_one_ring(&rotated_mesh, 0).unwrap();
        assert!(cyclically_equal(&before, &after), "{before:?} vs {after:?}");
    }

    #[test]
    fn ordered_ring_is_adjacency_permutation_with_fan_property() {
        let hier = icosphere(2);
        let mesh = hier.level(2);
        for i in 0..mesh.n_vertices() {
            let ordered = order_one_ring(mesh, i).unwrap();
            let as_set: BTreeSet<usize> = ordered.iter().copied().collect();
            let adj_set: BTreeSet<usize> = mesh.neighbors(i).iter().copied().collect();
            assert_eq!(as_set, adj_set, "vertex {i}");
            for s in 0..ordered.len() {
                let a = ordered[s];
                let b = ordered[(s + 1) % ordered.len()];
                assert!(mesh.fan_adjacent(i, a, b), "vertex {i}: {a} and {b}");
            }
        }
    }

    #[test]
    fn support_size_formula() {
        assert_eq!(
            (1..=4).map(support_size).collect::<Vec<_>>(),
            vec![7, 19, 37, 61]
        );
    }

    #[test]
    fn gather_table_k1_padding_matches_valence() {
        let hier = icosphere(2);
        let table = build_gather_table(hier.level(2), 1).unwrap();
        assert_eq!(table.support_size(), 7);
        assert_eq!(table.n_vertices(), 162);
        let mut padded_rows = 0;
        for i in 0..table.n_vertices() {
            let row = table.row(i);
            assert_eq!(row[0] as usize, i);
            let sentinels = row.iter().filter(|&&e| e == SENTINEL).count();
            if sentinels > 0 {
                assert_eq!(sentinels, 1);
                assert_eq!(row[6], SENTINEL, "padding sits in the last 1-ring slot");
                padded_rows += 1;
            }
        }
        assert_eq!(padded_rows, 12, "exactly the valence-5 vertices are padded");
    }

    #[test]
    fn gather_table_k2_matches_bfs() {
        let hier = icosphere(2);
        let mesh = hier.level(2);
        let table = build_gather_table(mesh, 2).unwrap();
        assert_eq!(table.support_size(), 19);
        for i in 0..mesh.n_vertices() {
            let rings = bfs_rings(mesh, i, 2);
            let row = table.row(i);
            let ring2: BTreeSet<usize> = row[7..19]
                .iter()
                .filter(|&&e| e != SENTINEL)
                .map(|&e| e as usize)
                .collect();
            let expected: BTreeSet<usize> = rings[2].iter().copied().collect();
            assert_eq!(ring2, expected, "vertex {i}");
            // Interior valence-6 vertices fill all 12 ring-2 slots.
            if mesh.valence(i) == 6 && rings[2].len() == 12 {
                assert!(row.iter().all(|&e| e != SENTINEL));
            }
        }
    }

    #[test]
    fn gather_rows_have_distinct_entries_within_distance() {
        let hier = icosphere(1);
        let mesh = hier.level(1);
        let table = build_gather_table(mesh, 3).unwrap();
        assert_eq!(table.support_size(), 37);
        for i in 0..mesh.n_vertices() {
            let rings = bfs_rings(mesh, i, 3);
            let entries: Vec<usize> = (0..table.support_size())
                .filter_map(|j| table.entry(i, j))
                .collect();
            let set: BTreeSet<usize> = entries.iter().copied().collect();
            assert_eq!(set.len(), entries.len(), "duplicates in row {i}");
            let within: BTreeSet<usize> = rings.iter().flatten().copied().collect();
            assert!(entries.iter().all(|e| within.contains(e)));
        }
    }

    #[test]
    fn invalid_ring_order_is_rejected() {
        let hier = icosphere(0);
        assert_eq!(
            build_gather_table(hier.level(0), 0).unwrap_err(),
            OrderingError::InvalidRingOrder { k: 0 }
        );
    }
}
