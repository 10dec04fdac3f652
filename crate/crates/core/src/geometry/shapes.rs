//! Synthetic organ and test meshes.

use std::f64::consts::PI;

use super::{CenterlineSegment, OrganMesh, TriMesh, Vec3};

pub fn uv_sphere(radius: f64, slices: usize, stacks: usize) -> TriMesh {
    ellipsoid(Vec3::repeat(radius), slices, stacks)
}

/// Closed ellipsoid with outward winding.
pub fn ellipsoid(radii: Vec3, slices: usize, stacks: usize) -> TriMesh {
    let slices = slices.max(3);
    let stacks = stacks.max(2);
    let mut vertices = vec![Vec3::new(0.0, 0.0, radii.z)];
    for i in 1..stacks {
        let phi = PI * i as f64 / stacks as f64;
        for j in 0..slices {
            let theta = 2.0 * PI * j as f64 / slices as f64;
            vertices.push(Vec3::new(
                radii.x * phi.sin() * theta.cos(),
                radii.y * phi.sin() * theta.sin(),
                radii.z * phi.cos(),
            ));
        }
    }
    vertices.push(Vec3::new(0.0, 0.0, -radii.z));
    let bottom = vertices.len() - 1;
    let ring = |i: usize, j: usize| 1 + (i - 1) * slices + j % slices;
    let mut triangles = Vec::new();
    for j in 0..slices {
        triangles.push([0, ring(1, j), ring(1, j + 1)]);
    }
    for i in 1..stacks - 1 {
        for j in 0..slices {
            let (a, b) = (ring(i, j), ring(i, j + 1));
            let (c, d) = (ring(i + 1, j), ring(i + 1, j + 1));
            triangles.push([a, c, d]);
            triangles.push([a, d, b]);
        }
    }
    for j in 0..slices {
        triangles.push([bottom, ring(stacks - 1, j + 1), ring(stacks - 1, j)]);
    }
    TriMesh::new(vertices, triangles).expect("valid ellipsoid")
}

/// Tetrahedron on the unit axes, outward winding.
pub fn unit_tetrahedron() -> TriMesh {
    TriMesh::new(
        vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::z()],
        vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]],
    )
    .expect("valid tetrahedron")
}

/// Square in the z=0 plane, `n` cells per side, normals along `normal_sign`·z.
pub fn plane(half_size: f64, n: usize, normal_sign: f64) -> TriMesh {
    let n = n.max(1);
    let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
    for i in 0..=n {
        for j in 0..=n {
            vertices.push(Vec3::new(
                -half_size + 2.0 * half_size * j as f64 / n as f64,
                -half_size + 2.0 * half_size * i as f64 / n as f64,
                0.0,
            ));
        }
    }
    let id = |i: usize, j: usize| i * (n + 1) + j;
    let mut triangles = Vec::with_capacity(2 * n * n);
    for i in 0..n {
        for j in 0..n {
            let (a, b, c, d) = (id(i, j), id(i, j + 1), id(i + 1, j + 1), id(i + 1, j));
            if normal_sign >= 0.0 {
                triangles.push([a, b, c]);
                triangles.push([a, c, d]);
            } else {
                triangles.push([a, c, b]);
                triangles.push([a, d, c]);
            }
        }
    }
    TriMesh::new(vertices, triangles).expect("valid plane")
}

/// Open tube swept along a polyline. Each polyline edge becomes one
/// centerline segment; outward normals point away from the axis.
///
/// `rings` is the number of vertex rings along the whole length.
pub fn tube_along(centerline: &[Vec3], radius: f64, around: usize, rings: usize) -> OrganMesh {
    assert!(centerline.len() >= 2, "centerline needs two points");
    let around = around.max(3);
    let rings = rings.max(2);
    let mut cum = vec![0.0];
    for w in centerline.windows(2) {
        cum.push(cum.last().unwrap() + (w[1] - w[0]).norm());
    }
    let total = *cum.last().unwrap();

    // Frame transported along the polyline so rings do not twist.
    let first_t = (centerline[1] - centerline[0]).normalize();
    let seed = if first_t.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let mut normal = (seed - first_t * seed.dot(&first_t)).normalize();
    let mut prev_t = first_t;
    let mut frames = Vec::with_capacity(rings);
    let mut edge = 0usize;
    for r in 0..rings {
        let s = total * r as f64 / (rings - 1) as f64;
        while edge + 2 < cum.len() && s > cum[edge + 1] {
            edge += 1;
        }
        let a = centerline[edge];
        let b = centerline[edge + 1];
        let len = cum[edge + 1] - cum[edge];
        let u = ((s - cum[edge]) / len).clamp(0.0, 1.0);
        let center = a + (b - a) * u;
        // Blend tangents near interior joints for a smoother bend.
        let t = (b - a).normalize();
        if t != prev_t {
            let axis = prev_t.cross(&t);
            if let Some(axis) = axis.try_normalize(1e-12) {
                let angle = prev_t.dot(&t).clamp(-1.0, 1.0).acos();
                let rot = nalgebra::UnitQuaternion::from_axis_angle(
                    &nalgebra::Unit::new_unchecked(axis),
                    angle,
                );
                normal = rot * normal;
            }
            prev_t = t;
        }
        let binormal = t.cross(&normal);
        frames.push((center, normal, binormal, edge));
    }

    let mut vertices = Vec::with_capacity(rings * around);
    let mut owner = Vec::with_capacity(rings * around);
    for (center, n, b, edge) in &frames {
        for j in 0..around {
            let theta = 2.0 * PI * j as f64 / around as f64;
            vertices.push(center + (n * theta.cos() + b * theta.sin()) * radius);
            owner.push(*edge);
        }
    }
    let id = |r: usize, j: usize| r * around + j % around;
    let mut triangles = Vec::with_capacity(2 * (rings - 1) * around);
    for r in 0..rings - 1 {
        for j in 0..around {
            let (a, b, c, d) = (id(r, j), id(r, j + 1), id(r + 1, j + 1), id(r + 1, j));
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }
    let mesh = TriMesh::new(vertices, triangles).expect("valid tube");
    let segments = centerline
        .windows(2)
        .map(|w| CenterlineSegment::new(w[0], w[1]))
        .collect();
    OrganMesh::with_assignment(mesh, segments, &owner).expect("tube partition")
}

/// Straight tube along +z from the origin, split into `segments` pieces.
pub fn straight_tube(
    length: f64,
    radius: f64,
    around: usize,
    rings: usize,
    segments: usize,
) -> OrganMesh {
    let segments = segments.max(1);
    let pts: Vec<Vec3> = (0..=segments)
        .map(|i| Vec3::new(0.0, 0.0, length * i as f64 / segments as f64))
        .collect();
    tube_along(&pts, radius, around, rings)
}

/// Tube along +z that turns by `bend` radians towards +x over an arc of
/// `bend_radius`, followed by a second straight leg.
pub fn bent_tube(
    leg: f64,
    bend_radius: f64,
    bend: f64,
    radius: f64,
    around: usize,
    rings: usize,
) -> OrganMesh {
    let mut pts = vec![Vec3::zeros(), Vec3::new(0.0, 0.0, leg)];
    let arc_pieces = 8;
    let center = Vec3::new(bend_radius, 0.0, leg);
    for k in 1..=arc_pieces {
        let a = bend * k as f64 / arc_pieces as f64;
        pts.push(center + Vec3::new(-bend_radius * a.cos(), 0.0, bend_radius * a.sin()));
    }
    let end = *pts.last().unwrap();
    let dir = Vec3::new(bend.sin(), 0.0, bend.cos());
    pts.push(end + dir * leg);
    tube_along(&pts, radius, around, rings)
}

/// Ellipsoidal stand-in for a stomach with one centerline segment along x.
pub fn stomach(radii: Vec3, slices: usize, stacks: usize) -> OrganMesh {
    // Long axis on x: build around z, then swap.
    let base = ellipsoid(Vec3::new(radii.z, radii.y, radii.x), slices, stacks);
    let vertices: Vec<Vec3> = base.vertices().iter().map(|v| Vec3::new(v.z, v.y, -v.x)).collect();
    let mesh = TriMesh::new(vertices, base.triangles().to_vec()).expect("valid stomach");
    let seg = CenterlineSegment::new(Vec3::new(-radii.x, 0.0, 0.0), Vec3::new(radii.x, 0.0, 0.0));
    OrganMesh::with_nearest_segments(mesh, vec![seg]).expect("stomach partition")
}

/// Straight tube used by the coverage acceptance run: 20 cm long, 1.5 cm
/// radius, 32 x 80 = 2560 vertices.
pub fn fixture_tube() -> OrganMesh {
    straight_tube(0.20, 0.015, 32, 80, 4)
}

/// Bent tube with exactly 1000 vertices (25 around x 40 rings).
pub fn fixture_bent_tube() -> OrganMesh {
    bent_tube(0.06, 0.04, PI / 2.0, 0.012, 25, 40)
}

pub fn fixture_stomach() -> OrganMesh {
    stomach(Vec3::new(0.10, 0.06, 0.05), 40, 24)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tube_normals_point_outward() {
        let organ = straight_tube(0.1, 0.01, 12, 10, 2);
        for (v, n) in organ.mesh.vertices().iter().zip(organ.mesh.vertex_normals()) {
            let radial = Vec3::new(v.x, v.y, 0.0).normalize();
            assert!(radial.dot(n) > 0.9);
        }
    }

    #[test]
    fn bent_tube_fixture_has_1000_vertices() {
        let organ = fixture_bent_tube();
        assert_eq!(organ.mesh.vertex_count(), 1000);
        for (v, n) in organ.mesh.vertices().iter().zip(organ.mesh.vertex_normals()) {
            let (si, _) = organ.locate(v);
            let seg = &organ.segments()[si];
            let s = seg.project(v);
            let axis_pt = seg.start + (seg.end - seg.start) * s;
            assert!((v - axis_pt).normalize().dot(n) > 0.5);
        }
    }

    #[test]
    fn fixture_tube_size() {
        assert!(fixture_tube().mesh.vertex_count() >= 2000);
    }

    #[test]
    fn sphere_normals_outward() {
        let s = uv_sphere(2.0, 12, 6);
        for (v, n) in s.vertices().iter().zip(s.vertex_normals()) {
            assert!(v.normalize().dot(n) > 0.9);
        }
    }
}
