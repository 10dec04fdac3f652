use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use super::{rigid_align, KdTree, MetricsError};
use crate::exec::Exec;
use crate::geometry::{RigidTransform, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IcpOptions {
    pub max_iterations: usize,
    /// Stop when |ΔRMSE| between rounds falls below this, m.
    pub tolerance: f64,
    /// Reject correspondences further apart than this, m. With a gate the
    /// RMSE history is no longer guaranteed to be monotone.
    pub max_correspondence: Option<f64>,
}

impl Default for IcpOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            tolerance: 1e-8,
            max_correspondence: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpResult {
    pub transform: RigidTransform,
    pub rmse: f64,
    /// Correspondence rounds performed.
    pub iterations: usize,
    /// RMSE at the start of every round; the last entry equals `rmse`.
    pub history: Vec<f64>,
}

fn apply(t: &RigidTransform, p: &Vec3) -> Vec3 {
    t.transform_point(&Point3::from(*p)).coords
}

/// Point-to-point ICP registering `moving` onto `fixed`, starting from
/// `init`. Each round re-solves the alignment from the original moving cloud.
pub fn icp_align(
    moving: &[Vec3],
    fixed: &[Vec3],
    init: &RigidTransform,
    opts: &IcpOptions,
    exec: Exec,
) -> Result<IcpResult, MetricsError> {
    for cloud in [moving, fixed] {
        if cloud.len() < 3 {
            return Err(MetricsError::TooFew { needed: 3, got: cloud.len() });
        }
    }
    let tree = KdTree::new(fixed);
    let gate = opts.max_correspondence.map_or(f64::INFINITY, |d| d * d);
    let mut t = *init;
    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        let matches = exec.map_slice(moving, |p| tree.nearest(&apply(&t, p)).expect("fixed is non-empty"));
        let (mut src, mut dst, mut sum) = (Vec::new(), Vec::new(), 0.0);
        for (p, (j, d2)) in moving.iter().zip(&matches) {
            if *d2 <= gate {
                src.push(*p);
                dst.push(fixed[*j]);
                sum += d2;
            }
        }
        if src.is_empty() {
            return Err(MetricsError::Degenerate("no correspondences within the gate"));
        }
        let rmse = (sum / src.len() as f64).sqrt();
        let converged = rmse == 0.0 || history.last().is_some_and(|prev: &f64| (prev - rmse).abs() < opts.tolerance);
        history.push(rmse);
        if converged || iterations == opts.max_iterations {
            return Ok(IcpResult {
                transform: t,
                rmse,
                iterations: iterations.max(1),
                history,
            });
        }
        t = rigid_align(&src, &dst)?;
        iterations += 1;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CloudDistances {
    pub rmse: f64,
    /// Nearest-neighbour distance of every point of the first cloud.
    pub distances: Vec<f64>,
}

/// For each point of `a`, distance to its nearest neighbour in `b`. Not
/// symmetric.
pub fn cloud_to_cloud(a: &[Vec3], b: &[Vec3], exec: Exec) -> Result<CloudDistances, MetricsError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricsError::TooFew { needed: 1, got: 0 });
    }
    let tree = KdTree::new(b);
    let distances = exec.map_slice(a, |p| tree.nearest(p).expect("b is non-empty").1.sqrt());
    let rmse = (distances.iter().map(|d| d * d).sum::<f64>() / distances.len() as f64).sqrt();
    Ok(CloudDistances { rmse, distances })
}
