//! Capsule cameras, vertex visibility, coverage bookkeeping and the greedy
//! one-step-lookahead coverage planner.
//!
//! Camera frames look down +z with x to the right and y down, the usual
//! pinhole layout.

use std::f64::consts::PI;

use nalgebra::UnitQuaternion;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{resolve_contact, CapsuleParams, CapsuleState};
use crate::exec::Exec;
use crate::geometry::{pose, pose_serde, OrganMesh, RigidTransform, TriMesh, Vec3};

/// Bias subtracted from the camera-to-vertex distance in occlusion tests, m.
pub const OCCLUSION_EPS: f64 = 1e-4;

/// Coverage reward weight α.
pub const REWARD_ALPHA: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SensingError {
    #[error("rig has no cameras")]
    EmptyRig,
    #[error("camera {index}: {reason}")]
    InvalidCamera { index: usize, reason: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub skew: f64,
    pub k1: f64,
    pub k2: f64,
    pub width: u32,
    pub height: u32,
    /// Full cone angle around the optical axis, rad.
    pub fov: f64,
    /// m
    pub max_range: f64,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self {
            fx: 160.0,
            fy: 160.0,
            cx: 160.0,
            cy: 160.0,
            skew: 0.0,
            k1: 0.0,
            k2: 0.0,
            width: 320,
            height: 320,
            fov: 140.0_f64.to_radians(),
            max_range: 0.1,
        }
    }
}

impl CameraIntrinsics {
    fn validate(&self) -> Result<(), &'static str> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err("focal lengths must be positive");
        }
        if self.width == 0 || self.height == 0 {
            return Err("image size must be positive");
        }
        if !(self.fov > 0.0 && self.max_range > 0.0) {
            return Err("fov and max_range must be positive");
        }
        Ok(())
    }
}

/// Pixel coordinates of a camera-frame point, or `None` if it is behind the
/// camera or lands outside the image.
pub fn project(intr: &CameraIntrinsics, p: &Vec3) -> Option<(f64, f64)> {
    if p.z <= 0.0 {
        return None;
    }
    let (x, y) = (p.x / p.z, p.y / p.z);
    let r2 = x * x + y * y;
    let scale = 1.0 + intr.k1 * r2 + intr.k2 * r2 * r2;
    let (xd, yd) = (x * scale, y * scale);
    let u = intr.fx * xd + intr.skew * yd + intr.cx;
    let v = intr.fy * yd + intr.cy;
    let inside = u >= 0.0 && u < intr.width as f64 && v >= 0.0 && v < intr.height as f64;
    inside.then_some((u, v))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraMount {
    /// Camera pose in the capsule body frame.
    #[serde(with = "pose_serde")]
    pub mount: RigidTransform,
    #[serde(default)]
    pub intrinsics: CameraIntrinsics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<CameraMount>", into = "Vec<CameraMount>")]
pub struct CameraRig {
    cameras: Vec<CameraMount>,
}

impl TryFrom<Vec<CameraMount>> for CameraRig {
    type Error = SensingError;
    fn try_from(cameras: Vec<CameraMount>) -> Result<Self, SensingError> {
        CameraRig::new(cameras)
    }
}

impl From<CameraRig> for Vec<CameraMount> {
    fn from(r: CameraRig) -> Self {
        r.cameras
    }
}

/// Rotation taking camera +z onto `dir` (body frame).
fn looking(dir: Vec3) -> UnitQuaternion<f64> {
    UnitQuaternion::rotation_between(&Vec3::z(), &dir)
        .unwrap_or_else(|| UnitQuaternion::from_axis_angle(&Vec3::x_axis(), PI))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RigKind {
    Mono,
    Stereo,
    Dual,
    Panoramic,
}

impl CameraRig {
    pub fn new(cameras: Vec<CameraMount>) -> Result<Self, SensingError> {
        if cameras.is_empty() {
            return Err(SensingError::EmptyRig);
        }
        for (index, c) in cameras.iter().enumerate() {
            c.intrinsics
                .validate()
                .map_err(|reason| SensingError::InvalidCamera { index, reason })?;
        }
        Ok(Self { cameras })
    }

    /// Standard layouts for a capsule of the given size. Stereo uses a 4 mm
    /// baseline at the front; panoramic puts four side-looking cameras at
    /// 90° around the body.
    pub fn standard(kind: RigKind, capsule: &CapsuleParams, intrinsics: CameraIntrinsics) -> Self {
        let tip = 0.5 * capsule.length;
        let cam = |position: Vec3, dir: Vec3| CameraMount {
            mount: pose(position, looking(dir)),
            intrinsics,
        };
        let cameras = match kind {
            RigKind::Mono => vec![cam(Vec3::new(0.0, 0.0, tip), Vec3::z())],
            RigKind::Stereo => vec![
                cam(Vec3::new(-0.002, 0.0, tip), Vec3::z()),
                cam(Vec3::new(0.002, 0.0, tip), Vec3::z()),
            ],
            RigKind::Dual => vec![
                cam(Vec3::new(0.0, 0.0, tip), Vec3::z()),
                cam(Vec3::new(0.0, 0.0, -tip), -Vec3::z()),
            ],
            RigKind::Panoramic => [Vec3::x(), Vec3::y(), -Vec3::x(), -Vec3::y()]
                .into_iter()
                .map(|d| cam(d * capsule.radius, d))
                .collect(),
        };
        Self { cameras }
    }

    pub fn cameras(&self) -> &[CameraMount] {
        &self.cameras
    }
}

/// Geometric part of the visibility test (everything except occlusion).
/// Returns the camera origin, unit ray and distance when it passes.
fn in_view(
    world_from_cam: &RigidTransform,
    intr: &CameraIntrinsics,
    vertex: &Vec3,
) -> Option<(Vec3, Vec3, f64)> {
    let p = world_from_cam.inverse_transform_point(&(*vertex).into()).coords;
    let dist = p.norm();
    if p.z <= 0.0 || dist > intr.max_range {
        return None;
    }
    if (p.z / dist).clamp(-1.0, 1.0).acos() > 0.5 * intr.fov {
        return None;
    }
    project(intr, &p)?;
    let origin = world_from_cam.translation.vector;
    Some((origin, (vertex - origin) / dist, dist))
}

fn visible_with<F>(
    mesh: &TriMesh,
    capsule_pose: &RigidTransform,
    rig: &CameraRig,
    exec: Exec,
    occluded: F,
) -> Vec<usize>
where
    F: Fn(&TriMesh, &Vec3, &Vec3, f64) -> bool + Sync,
{
    let cams: Vec<(RigidTransform, CameraIntrinsics)> = rig
        .cameras
        .iter()
        .map(|c| (capsule_pose * c.mount, c.intrinsics))
        .collect();
    let vertices = mesh.vertices();
    let flags = exec.map_range(vertices.len(), |i| {
        cams.iter().any(|(t, intr)| {
            in_view(t, intr, &vertices[i]).is_some_and(|(o, d, dist)| {
                !occluded(mesh, &o, &d, dist - OCCLUSION_EPS)
            })
        })
    });
    flags
        .into_iter()
        .enumerate()
        .filter_map(|(i, v)| v.then_some(i))
        .collect()
}

/// Sorted ids of vertices seen by any camera of the rig.
pub fn visible_vertices(
    mesh: &TriMesh,
    capsule_pose: &RigidTransform,
    rig: &CameraRig,
    exec: Exec,
) -> Vec<usize> {
    visible_with(mesh, capsule_pose, rig, exec, |m, o, d, t| {
        t > 0.0 && m.occluded(o, d, t)
    })
}

/// Same as [`visible_vertices`] but every occlusion ray tests every triangle.
pub fn visible_vertices_brute(
    mesh: &TriMesh,
    capsule_pose: &RigidTransform,
    rig: &CameraRig,
) -> Vec<usize> {
    visible_with(mesh, capsule_pose, rig, Exec::Sequential, |m, o, d, t| {
        t > 0.0 && m.occluded_brute(o, d, t)
    })
}

/// Seen flags per vertex; flags are only ever set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoverageMap {
    seen: Vec<bool>,
    count: usize,
}

impl CoverageMap {
    pub fn new(total: usize) -> Self {
        Self {
            seen: vec![false; total],
            count: 0,
        }
    }

    pub fn total(&self) -> usize {
        self.seen.len()
    }

    pub fn covered(&self) -> usize {
        self.count
    }

    pub fn is_seen(&self, vertex: usize) -> bool {
        self.seen[vertex]
    }

    /// Number of ids in `ids` not seen before.
    pub fn count_new(&self, ids: &[usize]) -> usize {
        ids.iter().filter(|&&i| !self.seen[i]).count()
    }

    /// Marks `ids` seen; returns how many were new.
    pub fn mark(&mut self, ids: &[usize]) -> usize {
        let mut new = 0;
        for &i in ids {
            if !self.seen[i] {
                self.seen[i] = true;
                new += 1;
            }
        }
        self.count += new;
        new
    }

    pub fn fraction(&self) -> f64 {
        coverage_fraction(self.count, self.total())
    }
}

/// C = seen / total.
pub fn coverage_fraction(seen: usize, total: usize) -> f64 {
    debug_assert!(total > 0);
    seen as f64 / total as f64
}

/// r_t = α (C_t − C_prev).
pub fn coverage_reward(c_t: f64, c_prev: f64, alpha: f64) -> f64 {
    alpha * (c_t - c_prev)
}

/// Unit translations along ±x, ±y, ±z scaled by `step`, in that order.
pub fn axis_actions(step: f64) -> Vec<Vec3> {
    vec![
        Vec3::x() * step,
        -Vec3::x() * step,
        Vec3::y() * step,
        -Vec3::y() * step,
        Vec3::z() * step,
        -Vec3::z() * step,
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanChoice {
    /// Index into the action list.
    pub action: usize,
    pub new_vertices: usize,
    /// Visible set from the resulting pose.
    pub visible: Vec<usize>,
}

/// Whether the capsule may sit at `state`: no wall penetration and inside
/// the centerline's extent.
pub fn pose_admissible(state: &CapsuleState, organ: &OrganMesh) -> bool {
    let s = organ.centerline_coord_unclamped(&state.position());
    s >= 0.0
        && s <= organ.centerline_length()
        && resolve_contact(state, &organ.mesh, 0.0, 0.0).is_none()
}

/// One-step lookahead: translate a copy of the capsule by each action, count
/// newly covered vertices, keep the best. Ties (including all-zero) go to the
/// earliest admissible action. `None` if no action is admissible.
pub fn greedy_plan_step(
    organ: &OrganMesh,
    coverage: &CoverageMap,
    capsule: &CapsuleState,
    rig: &CameraRig,
    actions: &[Vec3],
    exec: Exec,
) -> Option<PlanChoice> {
    let candidates = exec.map_slice(actions, |a| {
        let mut next = *capsule;
        next.pose.translation.vector += a;
        if !pose_admissible(&next, organ) {
            return None;
        }
        let visible = visible_vertices(&organ.mesh, &next.pose, rig, Exec::Sequential);
        Some((coverage.count_new(&visible), visible))
    });
    let mut best: Option<PlanChoice> = None;
    for (action, c) in candidates.into_iter().enumerate() {
        let Some((new_vertices, visible)) = c else {
            continue;
        };
        if best.as_ref().is_none_or(|b| new_vertices > b.new_vertices) {
            best = Some(PlanChoice {
                action,
                new_vertices,
                visible,
            });
        }
    }
    best
}
