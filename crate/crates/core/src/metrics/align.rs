use nalgebra::{Matrix3, Rotation3, UnitQuaternion};

use super::MetricsError;
use crate::geometry::{pose, RigidTransform, Vec3};

/// Relative singular-value floor below which the cross-covariance is
/// treated as rank deficient.
const RANK_TOL: f64 = 1e-12;

fn centroid(points: &[Vec3]) -> Vec3 {
    points.iter().sum::<Vec3>() / points.len() as f64
}

struct Kabsch {
    rotation: Matrix3<f64>,
    source_mean: Vec3,
    target_mean: Vec3,
    /// Σ singular values with the reflection sign applied.
    trace: f64,
    source_spread: f64,
}

fn kabsch(source: &[Vec3], target: &[Vec3]) -> Result<Kabsch, MetricsError> {
    if source.len() != target.len() {
        return Err(MetricsError::LengthMismatch {
            pred: source.len(),
            gt: target.len(),
        });
    }
    if source.len() < 3 {
        return Err(MetricsError::TooFew {
            needed: 3,
            got: source.len(),
        });
    }
    let (ms, mt) = (centroid(source), centroid(target));
    let mut h = Matrix3::zeros();
    let mut spread = 0.0;
    for (s, t) in source.iter().zip(target) {
        let (a, b) = (s - ms, t - mt);
        h += a * b.transpose();
        spread += a.norm_squared();
    }
    let svd = h.svd(true, true);
    let mut sv = svd.singular_values;
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    // nalgebra does not promise ordering.
    let mut sorted = [sv[0], sv[1], sv[2]];
    sorted.sort_by(|a, b| b.total_cmp(a));
    if !(sorted[0] > 0.0) || sorted[1] <= RANK_TOL * sorted[0] {
        return Err(MetricsError::Degenerate("points are coincident or collinear"));
    }
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    // Flip the axis of the smallest singular value to exclude reflections.
    let smallest = (0..3).min_by(|&a, &b| sv[a].total_cmp(&sv[b])).unwrap();
    let mut diag = Matrix3::identity();
    diag[(smallest, smallest)] = d;
    sv[smallest] *= d;
    Ok(Kabsch {
        rotation: v * diag * u.transpose(),
        source_mean: ms,
        target_mean: mt,
        trace: sv.sum(),
        source_spread: spread,
    })
}

fn to_quat(r: Matrix3<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r))
}

/// Least-squares rigid transform T (no scale, det R = +1) minimising
/// Σ‖T(source_i) − target_i‖².
pub fn rigid_align(source: &[Vec3], target: &[Vec3]) -> Result<RigidTransform, MetricsError> {
    let k = kabsch(source, target)?;
    let rot = to_quat(k.rotation);
    Ok(pose(k.target_mean - rot * k.source_mean, rot))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub transform: RigidTransform,
    pub scale: f64,
}

impl Similarity {
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.transform.rotation * p * self.scale + self.transform.translation.vector
    }
}

/// Umeyama alignment with a uniform scale, for interop with tools that
/// evaluate monocular trajectories.
pub fn similarity_align(source: &[Vec3], target: &[Vec3]) -> Result<Similarity, MetricsError> {
    let k = kabsch(source, target)?;
    let scale = k.trace / k.source_spread;
    let rot = to_quat(k.rotation);
    Ok(Similarity {
        transform: pose(k.target_mean - rot * k.source_mean * scale, rot),
        scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(n: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect()
    }

    fn residual(t: &RigidTransform, a: &[Vec3], b: &[Vec3]) -> f64 {
        a.iter().zip(b).map(|(p, q)| (t * nalgebra::Point3::from(*p)).coords - q).map(|d| d.norm_squared()).sum()
    }

    #[test]
    fn identity_for_equal_clouds() {
        let pts = cloud(20, 1);
        let t = rigid_align(&pts, &pts).unwrap();
        assert!(crate::geometry::transform_distance(&t, &RigidTransform::identity()) < 1e-12);
    }

    #[test]
    fn recovers_inverse_of_known_motion() {
        let gt = cloud(50, 2);
        let motion = pose(
            Vec3::new(0.3, -1.2, 2.0),
            UnitQuaternion::from_scaled_axis(Vec3::new(0.4, -0.7, 1.1)),
        );
        let pred: Vec<Vec3> = gt.iter().map(|p| motion.transform_vector(p) + motion.translation.vector).collect();
        let t = rigid_align(&pred, &gt).unwrap();
        assert!(crate::geometry::transform_distance(&t, &motion.inverse()) < 1e-9);
    }

    #[test]
    fn mirror_has_no_reflection() {
        let gt = cloud(30, 3);
        let mirrored: Vec<Vec3> = gt.iter().map(|p| Vec3::new(-p.x, p.y, p.z)).collect();
        let t = rigid_align(&mirrored, &gt).unwrap();
        let r = t.rotation.to_rotation_matrix();
        assert_relative_eq!(r.matrix().determinant(), 1.0, epsilon = 1e-12);
        assert!(residual(&t, &mirrored, &gt) > 1e-3);
    }

    #[test]
    fn degenerate_inputs() {
        let line: Vec<Vec3> = (0..5).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        assert!(matches!(rigid_align(&line, &line), Err(MetricsError::Degenerate(_))));
        let same = vec![Vec3::new(1.0, 2.0, 3.0); 4];
        assert!(matches!(rigid_align(&same, &same), Err(MetricsError::Degenerate(_))));
        assert!(matches!(rigid_align(&cloud(3, 1), &cloud(4, 1)), Err(MetricsError::LengthMismatch { .. })));
    }

    #[test]
    fn planar_cloud_is_fine() {
        let gt: Vec<Vec3> = cloud(20, 4).iter().map(|p| Vec3::new(p.x, p.y, 0.0)).collect();
        let motion = pose(Vec3::new(0.1, 0.2, 0.3), UnitQuaternion::from_scaled_axis(Vec3::new(0.5, 0.1, -0.2)));
        let pred: Vec<Vec3> = gt.iter().map(|p| motion.transform_vector(p) + motion.translation.vector).collect();
        let t = rigid_align(&pred, &gt).unwrap();
        assert!(crate::geometry::transform_distance(&t, &motion.inverse()) < 1e-9);
    }

    #[test]
    fn similarity_recovers_scale() {
        let gt = cloud(40, 5);
        let rot = UnitQuaternion::from_scaled_axis(Vec3::new(-0.3, 0.2, 0.9));
        let pred: Vec<Vec3> = gt.iter().map(|p| rot * p * 0.5 + Vec3::new(1.0, 2.0, 3.0)).collect();
        let s = similarity_align(&pred, &gt).unwrap();
        assert_relative_eq!(s.scale, 2.0, epsilon = 1e-9);
        for (p, q) in pred.iter().zip(&gt) {
            assert_relative_eq!(s.apply(p), *q, epsilon = 1e-9);
        }
    }

    proptest! {
        #[test]
        fn residual_never_worse_than_identity(seed in 0u64..500, noise in 0.0..0.5f64) {
            let a = cloud(15, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
            let b: Vec<Vec3> = a.iter().map(|p| p * 1.1 + Vec3::new(rng.random_range(-noise..=noise), 0.2, -0.1)).collect();
            let t = rigid_align(&a, &b).unwrap();
            prop_assert!(residual(&t, &a, &b) <= residual(&RigidTransform::identity(), &a, &b) + 1e-12);
            prop_assert!((t.rotation.to_rotation_matrix().matrix().determinant() - 1.0).abs() < 1e-12);
        }
    }
}
