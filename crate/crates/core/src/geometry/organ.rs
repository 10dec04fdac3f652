use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{TriMesh, Vec3};

#[derive(Debug, Error, PartialEq)]
pub enum OrganError {
    #[error("segment {0} has coincident start and end points")]
    DegenerateSegment(usize),
    #[error("vertex {0} is not assigned to exactly one segment")]
    NotAPartition(usize),
    #[error("segment id {id} on vertex {vertex} but only {count} segments exist")]
    UnknownSegment { vertex: usize, id: usize, count: usize },
    #[error("organ has no centerline segments")]
    NoSegments,
}

/// One straight piece of the organ centerline and the mesh vertices it owns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterlineSegment {
    pub start: Vec3,
    pub end: Vec3,
    #[serde(default)]
    pub vertex_ids: Vec<usize>,
}

impl CenterlineSegment {
    pub fn new(start: Vec3, end: Vec3) -> Self {
        Self {
            start,
            end,
            vertex_ids: Vec::new(),
        }
    }

    pub fn length(&self) -> f64 {
        (self.end - self.start).norm()
    }

    /// Parameter in `[0, 1]` of the closest point on the segment.
    pub fn project(&self, p: &Vec3) -> f64 {
        let d = self.end - self.start;
        let l2 = d.norm_squared();
        if l2 == 0.0 {
            return 0.0;
        }
        ((p - self.start).dot(&d) / l2).clamp(0.0, 1.0)
    }

    pub fn distance_squared(&self, p: &Vec3) -> f64 {
        let s = self.project(p);
        (p - (self.start + (self.end - self.start) * s)).norm_squared()
    }
}

/// Organ surface at rest plus the centerline it is segmented along.
///
/// `mesh` holds the current (possibly deformed) positions; `rest` and
/// `rest_normals` are frozen at construction.
#[derive(Debug, Clone)]
pub struct OrganMesh {
    pub mesh: TriMesh,
    rest: Vec<Vec3>,
    rest_normals: Vec<Vec3>,
    segments: Vec<CenterlineSegment>,
    vertex_segment: Vec<usize>,
    centerline_coord: Vec<f64>,
    segment_offsets: Vec<f64>,
}

impl OrganMesh {
    /// Assigns each vertex to its nearest segment (lowest index on ties).
    pub fn with_nearest_segments(
        mesh: TriMesh,
        segments: Vec<CenterlineSegment>,
    ) -> Result<Self, OrganError> {
        if segments.is_empty() {
            return Err(OrganError::NoSegments);
        }
        let assignment: Vec<usize> = mesh
            .vertices()
            .iter()
            .map(|v| {
                let mut best = (f64::INFINITY, 0);
                for (i, s) in segments.iter().enumerate() {
                    let d = s.distance_squared(v);
                    if d < best.0 {
                        best = (d, i);
                    }
                }
                best.1
            })
            .collect();
        Self::with_assignment(mesh, segments, &assignment)
    }

    /// Uses an explicit per-vertex segment id (e.g. a PLY `segment` property).
    pub fn with_assignment(
        mesh: TriMesh,
        mut segments: Vec<CenterlineSegment>,
        assignment: &[usize],
    ) -> Result<Self, OrganError> {
        if segments.is_empty() {
            return Err(OrganError::NoSegments);
        }
        if assignment.len() != mesh.vertex_count() {
            return Err(OrganError::NotAPartition(assignment.len().min(mesh.vertex_count())));
        }
        for s in segments.iter_mut() {
            s.vertex_ids.clear();
        }
        for (v, &id) in assignment.iter().enumerate() {
            let count = segments.len();
            segments
                .get_mut(id)
                .ok_or(OrganError::UnknownSegment { vertex: v, id, count })?
                .vertex_ids
                .push(v);
        }
        Self::from_partition(mesh, segments)
    }

    /// Segments already carry `vertex_ids`; they must partition the vertices.
    pub fn from_partition(
        mesh: TriMesh,
        segments: Vec<CenterlineSegment>,
    ) -> Result<Self, OrganError> {
        if segments.is_empty() {
            return Err(OrganError::NoSegments);
        }
        if let Some(i) = segments.iter().position(|s| s.length() == 0.0) {
            return Err(OrganError::DegenerateSegment(i));
        }
        let n = mesh.vertex_count();
        let mut vertex_segment = vec![usize::MAX; n];
        for (si, s) in segments.iter().enumerate() {
            for &v in &s.vertex_ids {
                if v >= n || vertex_segment[v] != usize::MAX {
                    return Err(OrganError::NotAPartition(v));
                }
                vertex_segment[v] = si;
            }
        }
        if let Some(v) = vertex_segment.iter().position(|&s| s == usize::MAX) {
            return Err(OrganError::NotAPartition(v));
        }
        let mut segment_offsets = Vec::with_capacity(segments.len());
        let mut acc = 0.0;
        for s in &segments {
            segment_offsets.push(acc);
            acc += s.length();
        }
        let centerline_coord = mesh
            .vertices()
            .iter()
            .zip(&vertex_segment)
            .map(|(v, &si)| segment_offsets[si] + segments[si].project(v) * segments[si].length())
            .collect();
        Ok(Self {
            rest: mesh.vertices().to_vec(),
            rest_normals: mesh.vertex_normals().to_vec(),
            mesh,
            segments,
            vertex_segment,
            centerline_coord,
            segment_offsets,
        })
    }

    pub fn rest_positions(&self) -> &[Vec3] {
        &self.rest
    }

    pub fn rest_normals(&self) -> &[Vec3] {
        &self.rest_normals
    }

    pub fn segments(&self) -> &[CenterlineSegment] {
        &self.segments
    }

    pub fn vertex_segment(&self) -> &[usize] {
        &self.vertex_segment
    }

    /// Arc-length coordinate of every vertex along the centerline.
    pub fn centerline_coords(&self) -> &[f64] {
        &self.centerline_coord
    }

    pub fn centerline_length(&self) -> f64 {
        self.segments.iter().map(CenterlineSegment::length).sum()
    }

    /// Nearest segment index (lowest on ties) and arc-length coordinate of `p`.
    pub fn locate(&self, p: &Vec3) -> (usize, f64) {
        let mut best = (f64::INFINITY, 0usize);
        for (i, s) in self.segments.iter().enumerate() {
            let d = s.distance_squared(p);
            if d < best.0 {
                best = (d, i);
            }
        }
        let s = &self.segments[best.1];
        (best.1, self.segment_offsets[best.1] + s.project(p) * s.length())
    }

    /// Unclamped arc-length coordinate: negative before the first segment,
    /// beyond the total length after the last one.
    pub fn centerline_coord_unclamped(&self, p: &Vec3) -> f64 {
        let (i, s) = self.locate(p);
        let seg = &self.segments[i];
        let d = seg.end - seg.start;
        let raw = (p - seg.start).dot(&d) / d.norm_squared();
        if i == 0 && raw < 0.0 {
            return raw * seg.length();
        }
        if i + 1 == self.segments.len() && raw > 1.0 {
            return self.segment_offsets[i] + raw * seg.length();
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::shapes;

    #[test]
    fn tube_segments_partition_vertices() {
        let organ = shapes::straight_tube(0.1, 0.01, 16, 20, 4);
        let total: usize = organ.segments().iter().map(|s| s.vertex_ids.len()).sum();
        assert_eq!(total, organ.mesh.vertex_count());
        assert!((organ.centerline_length() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn rejects_zero_length_segment() {
        let organ = shapes::straight_tube(0.1, 0.01, 8, 4, 1);
        let seg = CenterlineSegment::new(Vec3::zeros(), Vec3::zeros());
        let err = OrganMesh::with_nearest_segments(organ.mesh.clone(), vec![seg]).unwrap_err();
        assert_eq!(err, OrganError::DegenerateSegment(0));
    }

    #[test]
    fn rejects_double_assignment() {
        let organ = shapes::straight_tube(0.1, 0.01, 8, 4, 1);
        let mut a = CenterlineSegment::new(Vec3::zeros(), Vec3::z() * 0.05);
        let mut b = CenterlineSegment::new(Vec3::z() * 0.05, Vec3::z() * 0.1);
        a.vertex_ids = (0..organ.mesh.vertex_count()).collect();
        b.vertex_ids = vec![0];
        assert!(matches!(
            OrganMesh::from_partition(organ.mesh.clone(), vec![a, b]),
            Err(OrganError::NotAPartition(0))
        ));
    }
}
