use std::cell::Cell;

use log::warn;
use thiserror::Error;

use super::bvh::Bvh;
use super::Vec3;

/// Ray parameters at or below this are treated as self-intersections.
const RAY_T_MIN: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum MeshError {
    #[error("triangle {triangle} references vertex {index} but the mesh has {count} vertices")]
    IndexOutOfRange {
        triangle: usize,
        index: usize,
        count: usize,
    },
    #[error("vertex {0} has a non-finite coordinate")]
    NonFinite(usize),
    #[error("mesh has no triangles")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub distance: f64,
    pub triangle_id: usize,
    pub point: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosestPoint {
    pub point: Vec3,
    pub distance: f64,
    pub triangle_id: usize,
    /// Outward face normal of `triangle_id` (counter-clockwise winding).
    pub normal: Vec3,
}

/// Indexed triangle mesh with per-vertex normals and a BVH for queries.
///
/// Vertex positions may be replaced through [`TriMesh::set_vertices`]; the
/// triangle list is fixed after construction.
#[derive(Debug, Clone)]
pub struct TriMesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[usize; 3]>,
    vertex_normals: Vec<Vec3>,
    face_normals: Vec<Vec3>,
    bvh: Bvh,
}

impl TriMesh {
    /// Validates indices and drops zero-area triangles (with a warning).
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        let count = vertices.len();
        if let Some(i) = vertices.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(MeshError::NonFinite(i));
        }
        for (ti, t) in triangles.iter().enumerate() {
            if let Some(&index) = t.iter().find(|&&i| i >= count) {
                return Err(MeshError::IndexOutOfRange {
                    triangle: ti,
                    index,
                    count,
                });
            }
        }
        let before = triangles.len();
        let triangles: Vec<[usize; 3]> = triangles
            .into_iter()
            .filter(|t| !is_degenerate(&vertices, t))
            .collect();
        if triangles.len() < before {
            warn!(
                "dropped {} degenerate triangle(s) of {}",
                before - triangles.len(),
                before
            );
        }
        if triangles.is_empty() {
            return Err(MeshError::Empty);
        }
        let bvh = Bvh::build(&vertices, &triangles);
        let mut mesh = Self {
            vertex_normals: Vec::new(),
            face_normals: Vec::new(),
            vertices,
            triangles,
            bvh,
        };
        mesh.recompute_normals();
        Ok(mesh)
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn vertex_normals(&self) -> &[Vec3] {
        &self.vertex_normals
    }

    pub fn face_normal(&self, triangle_id: usize) -> Vec3 {
        self.face_normals[triangle_id]
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    /// Replace all vertex positions, then refresh normals and BVH bounds.
    ///
    /// # Panics
    /// If `positions` has a different length than the current vertex list.
    pub fn set_vertices(&mut self, positions: &[Vec3]) {
        assert_eq!(positions.len(), self.vertices.len());
        self.vertices.copy_from_slice(positions);
        self.recompute_normals();
        self.bvh.refit(&self.vertices, &self.triangles);
    }

    fn recompute_normals(&mut self) {
        let mut acc = vec![Vec3::zeros(); self.vertices.len()];
        self.face_normals = self
            .triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| self.vertices[i]);
                let n = (b - a).cross(&(c - a));
                for &i in t {
                    acc[i] += n;
                }
                n.try_normalize(0.0).unwrap_or_else(Vec3::z)
            })
            .collect();
        self.vertex_normals = acc
            .into_iter()
            .map(|n| n.try_normalize(0.0).unwrap_or_else(Vec3::z))
            .collect();
    }

    fn corners(&self, triangle_id: usize) -> [Vec3; 3] {
        self.triangles[triangle_id].map(|i| self.vertices[i])
    }

    /// Nearest intersection with `t ∈ (0, max_dist]`; ties go to the lowest
    /// triangle id.
    pub fn ray_cast(&self, origin: &Vec3, dir: &Vec3, max_dist: f64) -> Option<RayHit> {
        let best: Cell<Option<(f64, usize)>> = Cell::new(None);
        self.bvh.traverse_ordered(
            |b| b.ray_entry(origin, dir, max_dist),
            |t| {
                if let Some(d) = ray_triangle(origin, dir, &self.corners(t)) {
                    if d <= max_dist && better(d, t, best.get()) {
                        best.set(Some((d, t)));
                    }
                }
            },
            |entry| best.get().is_none_or(|(d, _)| entry <= d),
        );
        best.get().map(|(distance, triangle_id)| RayHit {
            distance,
            triangle_id,
            point: origin + dir * distance,
        })
    }

    /// Linear-scan reference for [`ray_cast`](Self::ray_cast).
    pub fn ray_cast_brute(&self, origin: &Vec3, dir: &Vec3, max_dist: f64) -> Option<RayHit> {
        let mut best: Option<(f64, usize)> = None;
        for t in 0..self.triangles.len() {
            if let Some(d) = ray_triangle(origin, dir, &self.corners(t)) {
                if d <= max_dist && better(d, t, best) {
                    best = Some((d, t));
                }
            }
        }
        best.map(|(distance, triangle_id)| RayHit {
            distance,
            triangle_id,
            point: origin + dir * distance,
        })
    }

    /// True if any triangle intersects the ray within `(0, max_dist]`.
    pub fn occluded(&self, origin: &Vec3, dir: &Vec3, max_dist: f64) -> bool {
        if max_dist <= 0.0 {
            return false;
        }
        let hit = Cell::new(false);
        self.bvh.traverse(
            |b| !hit.get() && b.ray_entry(origin, dir, max_dist).is_some(),
            |t| {
                if !hit.get() {
                    hit.set(ray_triangle(origin, dir, &self.corners(t)).is_some_and(|d| d <= max_dist));
                }
            },
        );
        hit.get()
    }

    /// Linear-scan reference for [`occluded`](Self::occluded).
    pub fn occluded_brute(&self, origin: &Vec3, dir: &Vec3, max_dist: f64) -> bool {
        max_dist > 0.0
            && (0..self.triangles.len()).any(|t| {
                ray_triangle(origin, dir, &self.corners(t)).is_some_and(|d| d <= max_dist)
            })
    }

    /// Closest surface point; equal distances resolve to the lowest triangle id.
    pub fn closest_point(&self, query: &Vec3) -> ClosestPoint {
        let best: Cell<Option<(f64, usize, Vec3)>> = Cell::new(None);
        self.bvh.traverse_ordered(
            |b| Some(b.distance_squared(query)),
            |t| {
                let p = closest_on_triangle(query, &self.corners(t));
                let d2 = (query - p).norm_squared();
                if better(d2, t, best.get().map(|(d, i, _)| (d, i))) {
                    best.set(Some((d2, t, p)));
                }
            },
            |bound| best.get().is_none_or(|(d2, _, _)| bound <= d2),
        );
        self.finish_closest(query, best.get())
    }

    /// Linear-scan reference for [`closest_point`](Self::closest_point).
    pub fn closest_point_brute(&self, query: &Vec3) -> ClosestPoint {
        let mut best: Option<(f64, usize, Vec3)> = None;
        for t in 0..self.triangles.len() {
            let p = closest_on_triangle(query, &self.corners(t));
            let d2 = (query - p).norm_squared();
            if better(d2, t, best.map(|(d, i, _)| (d, i))) {
                best = Some((d2, t, p));
            }
        }
        self.finish_closest(query, best)
    }

    fn finish_closest(&self, query: &Vec3, best: Option<(f64, usize, Vec3)>) -> ClosestPoint {
        // Construction guarantees at least one triangle.
        let (_, triangle_id, point) = best.expect("mesh has triangles");
        ClosestPoint {
            point,
            distance: (query - point).norm(),
            triangle_id,
            normal: self.face_normals[triangle_id],
        }
    }

    pub fn bounds(&self) -> super::Aabb {
        let mut b = super::Aabb::empty();
        for v in &self.vertices {
            b.grow(v);
        }
        b
    }
}

fn better(d: f64, id: usize, best: Option<(f64, usize)>) -> bool {
    match best {
        None => true,
        Some((bd, bid)) => d < bd || (d == bd && id < bid),
    }
}

fn is_degenerate(vertices: &[Vec3], t: &[usize; 3]) -> bool {
    let [a, b, c] = t.map(|i| vertices[i]);
    let e1 = b - a;
    let e2 = c - a;
    let scale = e1.norm_squared().max(e2.norm_squared()).max((c - b).norm_squared());
    scale == 0.0 || e1.cross(&e2).norm() <= 1e-12 * scale
}

/// Möller–Trumbore, two-sided. Returns the ray parameter of the hit.
pub(crate) fn ray_triangle(origin: &Vec3, dir: &Vec3, tri: &[Vec3; 3]) -> Option<f64> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-18 {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - tri[0];
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&q) * inv;
    (t > RAY_T_MIN).then_some(t)
}

/// Closest point on a triangle (Voronoi-region walk).
pub(crate) fn closest_on_triangle(p: &Vec3, tri: &[Vec3; 3]) -> Vec3 {
    let [a, b, c] = *tri;
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::shapes;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn single_triangle() -> TriMesh {
        TriMesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap()
    }

    #[test]
    fn rejects_bad_indices() {
        let err = TriMesh::new(vec![Vec3::zeros(); 2], vec![[0, 1, 2]]).unwrap_err();
        assert!(matches!(err, MeshError::IndexOutOfRange { index: 2, .. }));
    }

    #[test]
    fn drops_degenerate_triangles() {
        let m = TriMesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
                Vec3::new(2.0, 0.0, 0.0),
            ],
            vec![[0, 1, 2], [0, 1, 3], [1, 1, 2]],
        )
        .unwrap();
        assert_eq!(m.triangles(), &[[0, 1, 2]]);
        for n in m.vertex_normals() {
            assert_relative_eq!(n.norm(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn ray_from_sphere_center_hits_radius() {
        let sphere = shapes::uv_sphere(1.0, 48, 24);
        let origin = Vec3::zeros();
        for dir in [Vec3::x(), -Vec3::z(), Vec3::new(1.0, 2.0, -0.5).normalize()] {
            let hit = sphere.ray_cast(&origin, &dir, 10.0).unwrap();
            // Chord sag of a 48x24 tessellation is under 1%.
            assert!((hit.distance - 1.0).abs() < 0.01, "{}", hit.distance);
        }
    }

    #[test]
    fn ray_pointing_away_misses() {
        let m = single_triangle();
        let origin = Vec3::new(0.25, 0.25, 1.0);
        assert!(m.ray_cast(&origin, &Vec3::z(), 10.0).is_none());
    }

    #[test]
    fn ray_beyond_max_dist_misses() {
        let m = single_triangle();
        let origin = Vec3::new(1.0 / 3.0, 1.0 / 3.0, 2.0);
        assert!(m.ray_cast(&origin, &-Vec3::z(), 1.0).is_none());
        let hit = m.ray_cast(&origin, &-Vec3::z(), 3.0).unwrap();
        assert_relative_eq!(hit.distance, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn closest_point_on_vertex() {
        let m = single_triangle();
        let cp = m.closest_point(&Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(cp.distance, 0.0);
        assert_eq!(cp.point, Vec3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn closest_point_tetrahedron_centroid() {
        let tet = shapes::unit_tetrahedron();
        let centroid = tet.vertices().iter().sum::<Vec3>() / 4.0;
        // Brute-force oracle: distance from the centroid to each face plane.
        let expected = tet
            .triangles()
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| tet.vertices()[i]);
                let n = (b - a).cross(&(c - a)).normalize();
                (centroid - a).dot(&n).abs()
            })
            .fold(f64::INFINITY, f64::min);
        let cp = tet.closest_point(&centroid);
        assert_relative_eq!(cp.distance, expected, epsilon = 1e-12);
        // Unit tetrahedron: the slanted face is nearest at 1/(4*sqrt(3)).
        assert_relative_eq!(expected, 0.25 / 3f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn closest_point_tie_goes_to_lowest_id() {
        // Two coplanar triangles sharing an edge; query above the shared edge.
        let m = TriMesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
                Vec3::new(1.0, 1.0, 0.0),
            ],
            vec![[1, 3, 2], [0, 1, 2]],
        )
        .unwrap();
        let cp = m.closest_point(&Vec3::new(0.5, 0.5, 1.0));
        assert_eq!(cp.triangle_id, 0);
        assert_relative_eq!(cp.distance, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn outward_normal_of_sphere() {
        let sphere = shapes::uv_sphere(1.0, 16, 8);
        let cp = sphere.closest_point(&Vec3::new(0.0, 0.0, 3.0));
        assert!(cp.normal.z > 0.9);
    }

    #[test]
    fn refit_follows_moved_vertices() {
        let mut m = single_triangle();
        let shifted: Vec<Vec3> = m.vertices().iter().map(|v| v + Vec3::new(0.0, 0.0, 5.0)).collect();
        m.set_vertices(&shifted);
        let hit = m.ray_cast(&Vec3::new(0.2, 0.2, 0.0), &Vec3::z(), 10.0).unwrap();
        assert_relative_eq!(hit.distance, 5.0, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn bvh_matches_brute_force(
            q in prop::array::uniform3(-2.0..2.0f64),
            d in prop::array::uniform3(-1.0..1.0f64),
        ) {
            let mesh = shapes::uv_sphere(1.0, 20, 10);
            let q = Vec3::new(q[0], q[1], q[2]);
            let fast = mesh.closest_point(&q);
            let slow = mesh.closest_point_brute(&q);
            prop_assert_eq!(fast, slow);
            // Closest distance never exceeds the distance to any vertex.
            for v in mesh.vertices() {
                prop_assert!(fast.distance <= (q - v).norm() + 1e-15);
            }
            if let Some(dir) = Vec3::new(d[0], d[1], d[2]).try_normalize(1e-6) {
                prop_assert_eq!(mesh.ray_cast(&q, &dir, 3.0), mesh.ray_cast_brute(&q, &dir, 3.0));
                prop_assert_eq!(mesh.occluded(&q, &dir, 1.5), mesh.occluded_brute(&q, &dir, 1.5));
            }
        }

        #[test]
        fn offset_ray_returns_to_its_triangle(tri in 0usize..200, eps in 1e-4..1e-2f64) {
            let mesh = shapes::uv_sphere(1.0, 20, 10);
            let tri = tri % mesh.triangles().len();
            let [a, b, c] = mesh.triangles()[tri].map(|i| mesh.vertices()[i]);
            let centroid = (a + b + c) / 3.0;
            let n = mesh.face_normal(tri);
            let hit = mesh.ray_cast(&(centroid + n * eps), &-n, 1.0).unwrap();
            prop_assert_eq!(hit.triangle_id, tri);
            prop_assert!((hit.distance - eps).abs() < 1e-12);
        }
    }
}
