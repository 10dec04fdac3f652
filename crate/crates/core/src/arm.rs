//! Seven-joint manipulator carrying the external magnet.
//!
//! Link transforms follow the matrix
//!
//! ```text
//! [  cosθ        sinθ        0     −a      ]
//! [ −sinθ cosα   cosθ cosα   sinα  −d sinα ]
//! [  sinθ sinα  −cosθ sinα   cosα  −d cosα ]
//! [  0           0           0      1      ]
//! ```
//!
//! which is the inverse-style layout of classic DH; [`DhConvention::Standard`]
//! switches to the classic form. Inverse kinematics is damped least squares
//! on a numerical 6×7 Jacobian.

use nalgebra::{Matrix3, Matrix4, Matrix6, Rotation3, SMatrix, UnitQuaternion, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{PoseSpec, RigidTransform, Vec3};

pub const JOINTS: usize = 7;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ArmError {
    #[error("expected {expected} joint values, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("arm must have exactly 7 joints, got {0}")]
    JointCount(usize),
    #[error("joint {0} has min >= max or non-finite parameters")]
    InvalidJoint(usize),
    #[error("target unreachable: best residual {position_error:.3e} m / {rotation_error:.3e} rad after {iterations} iterations")]
    Unreachable {
        position_error: f64,
        rotation_error: f64,
        iterations: usize,
        best: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DhJoint {
    pub alpha: f64,
    pub a: f64,
    pub d: f64,
    #[serde(default)]
    pub theta_offset: f64,
    pub min: f64,
    pub max: f64,
}

impl DhJoint {
    pub fn clamp(&self, q: f64) -> f64 {
        q.clamp(self.min, self.max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DhConvention {
    #[default]
    Printed,
    Standard,
}

/// Homogeneous link transform for joint angle `theta` (offset added here).
pub fn dh_matrix(joint: &DhJoint, theta: f64, convention: DhConvention) -> Matrix4<f64> {
    let (st, ct) = (theta + joint.theta_offset).sin_cos();
    let (sa, ca) = joint.alpha.sin_cos();
    let (a, d) = (joint.a, joint.d);
    match convention {
        DhConvention::Printed => Matrix4::new(
            ct, st, 0.0, -a,
            -st * ca, ct * ca, sa, -d * sa,
            st * sa, -ct * sa, ca, -d * ca,
            0.0, 0.0, 0.0, 1.0,
        ),
        DhConvention::Standard => Matrix4::new(
            ct, -st * ca, st * sa, a * ct,
            st, ct * ca, -ct * sa, a * st,
            0.0, sa, ca, d,
            0.0, 0.0, 0.0, 1.0,
        ),
    }
}

fn to_transform(m: &Matrix4<f64>) -> RigidTransform {
    let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into();
    let rot = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
    crate::geometry::pose(Vec3::new(m[(0, 3)], m[(1, 3)], m[(2, 3)]), rot)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ArmFile", into = "ArmFile")]
pub struct ArmModel {
    pub base: RigidTransform,
    joints: Vec<DhJoint>,
    pub tool: RigidTransform,
    pub convention: DhConvention,
}

/// On-disk form: either a bare list of seven joints or an object with
/// `joints` plus optional `base`, `tool` and `convention`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum ArmFile {
    Table(Vec<DhJoint>),
    Full {
        joints: Vec<DhJoint>,
        #[serde(default)]
        base: PoseSpec,
        #[serde(default)]
        tool: PoseSpec,
        #[serde(default)]
        convention: DhConvention,
    },
}

impl TryFrom<ArmFile> for ArmModel {
    type Error = ArmError;
    fn try_from(f: ArmFile) -> Result<Self, ArmError> {
        match f {
            ArmFile::Table(joints) => ArmModel::new(joints),
            ArmFile::Full {
                joints,
                base,
                tool,
                convention,
            } => {
                let mut m = ArmModel::new(joints)?;
                m.base = base.into();
                m.tool = tool.into();
                m.convention = convention;
                Ok(m)
            }
        }
    }
}

impl From<ArmModel> for ArmFile {
    fn from(m: ArmModel) -> Self {
        ArmFile::Full {
            joints: m.joints,
            base: m.base.into(),
            tool: m.tool.into(),
            convention: m.convention,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IkOptions {
    pub damping: f64,
    pub position_tol: f64,
    pub rotation_tol: f64,
    pub max_iterations: usize,
    /// Largest per-iteration joint change, rad.
    pub max_step: f64,
    /// Extra solves from seeded configurations when the solve from `q_init`
    /// stalls in a local minimum; each gets `max_iterations`.
    pub restarts: usize,
    pub restart_seed: u64,
}

impl Default for IkOptions {
    fn default() -> Self {
        Self {
            damping: 0.05,
            position_tol: 1e-4,
            rotation_tol: 1e-3,
            max_iterations: 500,
            max_step: 0.3,
            restarts: 8,
            restart_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IkSolution {
    pub q: Vec<f64>,
    pub iterations: usize,
    pub position_error: f64,
    pub rotation_error: f64,
}

impl ArmModel {
    pub fn new(joints: Vec<DhJoint>) -> Result<Self, ArmError> {
        if joints.len() != JOINTS {
            return Err(ArmError::JointCount(joints.len()));
        }
        for (i, j) in joints.iter().enumerate() {
            let finite = [j.alpha, j.a, j.d, j.theta_offset, j.min, j.max]
                .iter()
                .all(|v| v.is_finite());
            if !finite || j.min >= j.max {
                return Err(ArmError::InvalidJoint(i));
            }
        }
        Ok(Self {
            base: RigidTransform::identity(),
            joints,
            tool: RigidTransform::identity(),
            convention: DhConvention::Printed,
        })
    }

    /// Seven-joint table with Franka-like link lengths and limits. It is a
    /// self-consistent test arm, not a model of the physical robot.
    pub fn fixture() -> Self {
        use std::f64::consts::FRAC_PI_2 as H;
        let rows = [
            (0.0, 0.0, 0.333, -2.8973, 2.8973),
            (-H, 0.0, 0.0, -1.7628, 1.7628),
            (H, 0.0, 0.316, -2.8973, 2.8973),
            (H, 0.0825, 0.0, -3.0718, -0.0698),
            (-H, -0.0825, 0.384, -2.8973, 2.8973),
            (H, 0.0, 0.0, -0.0175, 3.7525),
            (H, 0.088, 0.107, -2.8973, 2.8973),
        ];
        let joints = rows
            .iter()
            .map(|&(alpha, a, d, min, max)| DhJoint {
                alpha,
                a,
                d,
                theta_offset: 0.0,
                min,
                max,
            })
            .collect();
        let mut arm = Self::new(joints).expect("valid fixture");
        arm.tool = crate::geometry::translation(0.0, 0.0, 0.05);
        arm
    }

    pub fn joints(&self) -> &[DhJoint] {
        &self.joints
    }

    /// Midpoint of every joint range.
    pub fn home(&self) -> Vec<f64> {
        self.joints.iter().map(|j| 0.5 * (j.min + j.max)).collect()
    }

    pub fn clamp(&self, q: &mut [f64]) {
        for (v, j) in q.iter_mut().zip(&self.joints) {
            *v = j.clamp(*v);
        }
    }

    pub fn within_limits(&self, q: &[f64]) -> bool {
        q.len() == JOINTS && q.iter().zip(&self.joints).all(|(v, j)| *v >= j.min && *v <= j.max)
    }

    fn check(q: &[f64]) -> Result<(), ArmError> {
        if q.len() != JOINTS {
            return Err(ArmError::Dimension {
                expected: JOINTS,
                got: q.len(),
            });
        }
        Ok(())
    }

    /// base · A₁(q₀) ⋯ A₇(q₆) · tool as a 4×4 matrix.
    pub fn forward_kinematics_matrix(&self, q: &[f64]) -> Result<Matrix4<f64>, ArmError> {
        Self::check(q)?;
        let chain = self
            .joints
            .iter()
            .zip(q)
            .fold(self.base.to_homogeneous(), |acc, (j, &theta)| {
                acc * dh_matrix(j, theta, self.convention)
            });
        Ok(chain * self.tool.to_homogeneous())
    }

    pub fn forward_kinematics(&self, q: &[f64]) -> Result<RigidTransform, ArmError> {
        Ok(to_transform(&self.forward_kinematics_matrix(q)?))
    }

    /// Position error and rotation-vector error of `q` w.r.t. `target`.
    fn pose_error(&self, q: &[f64], target: &RigidTransform) -> Vector6<f64> {
        let m = self.forward_kinematics_matrix(q).expect("checked length");
        let p = Vec3::new(m[(0, 3)], m[(1, 3)], m[(2, 3)]);
        let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into();
        let target_r = target.rotation.to_rotation_matrix();
        let rot_err = (target_r * Rotation3::from_matrix_unchecked(r.transpose())).scaled_axis();
        let dp = target.translation.vector - p;
        Vector6::new(dp.x, dp.y, dp.z, rot_err.x, rot_err.y, rot_err.z)
    }

    /// Central-difference Jacobian of the end-point twist, 6×7.
    fn jacobian(&self, q: &[f64]) -> SMatrix<f64, 6, 7> {
        const H: f64 = 1e-6;
        let mut j = SMatrix::<f64, 6, 7>::zeros();
        let mut qp = q.to_vec();
        for k in 0..JOINTS {
            qp[k] = q[k] + H;
            let plus = self.forward_kinematics(&qp).expect("checked length");
            qp[k] = q[k] - H;
            let minus = self.forward_kinematics(&qp).expect("checked length");
            qp[k] = q[k];
            let dp = (plus.translation.vector - minus.translation.vector) / (2.0 * H);
            let dr = (plus.rotation * minus.rotation.inverse()).scaled_axis() / (2.0 * H);
            for r in 0..3 {
                j[(r, k)] = dp[r];
                j[(r + 3, k)] = dr[r];
            }
        }
        j
    }

    /// Damped-least-squares IK from `q_init`, then from up to
    /// `opts.restarts` configurations drawn uniformly within the limits by a
    /// generator seeded with `opts.restart_seed`. Every iterate is clamped to
    /// the joint limits, so a returned configuration always respects them.
    pub fn inverse_kinematics(
        &self,
        target: &RigidTransform,
        q_init: &[f64],
        opts: &IkOptions,
    ) -> Result<IkSolution, ArmError> {
        Self::check(q_init)?;
        let mut rng = ChaCha8Rng::seed_from_u64(opts.restart_seed);
        let mut seed = q_init.to_vec();
        let mut total = 0;
        let mut best: Option<(f64, f64, Vec<f64>)> = None;
        for _ in 0..=opts.restarts {
            match self.solve_from(target, &seed, opts) {
                Ok(mut sol) => {
                    sol.iterations += total;
                    return Ok(sol);
                }
                Err((pos, rot, q)) => {
                    if best.as_ref().is_none_or(|b| pos + rot < b.0 + b.1) {
                        best = Some((pos, rot, q));
                    }
                }
            }
            total += opts.max_iterations;
            seed = self.joints.iter().map(|j| rng.random_range(j.min..=j.max)).collect();
        }
        let (position_error, rotation_error, best) = best.expect("at least one attempt");
        Err(ArmError::Unreachable {
            position_error,
            rotation_error,
            iterations: total,
            best,
        })
    }

    fn solve_from(
        &self,
        target: &RigidTransform,
        q_init: &[f64],
        opts: &IkOptions,
    ) -> Result<IkSolution, (f64, f64, Vec<f64>)> {
        let mut q = q_init.to_vec();
        self.clamp(&mut q);
        let lambda2 = opts.damping * opts.damping;
        let mut best = (f64::INFINITY, f64::INFINITY, q.clone());
        'outer: for iter in 0..=opts.max_iterations {
            let e = self.pose_error(&q, target);
            let pos = e.fixed_rows::<3>(0).norm();
            let rot = e.fixed_rows::<3>(3).norm();
            if pos < opts.position_tol && rot < opts.rotation_tol {
                return Ok(IkSolution {
                    q,
                    iterations: iter,
                    position_error: pos,
                    rotation_error: rot,
                });
            }
            if pos + rot < best.0 + best.1 {
                best = (pos, rot, q.clone());
            }
            if iter == opts.max_iterations {
                break;
            }
            let mut j = self.jacobian(&q);
            // Joints resting on a limit that the step would push further out
            // are locked (their column zeroed) and the step re-solved.
            let mut dq;
            loop {
                let jjt: Matrix6<f64> = j * j.transpose() + Matrix6::identity() * lambda2;
                let Some(y) = jjt.cholesky().map(|c| c.solve(&e)) else {
                    break 'outer;
                };
                dq = j.transpose() * y;
                let mut locked = false;
                for k in 0..JOINTS {
                    let jt = &self.joints[k];
                    let pushing_out = (q[k] <= jt.min && dq[k] < 0.0) || (q[k] >= jt.max && dq[k] > 0.0);
                    if pushing_out && j.column(k).iter().any(|v| *v != 0.0) {
                        j.column_mut(k).fill(0.0);
                        locked = true;
                    }
                }
                if !locked {
                    break;
                }
            }
            let peak = dq.amax();
            if peak > opts.max_step {
                dq *= opts.max_step / peak;
            }
            for k in 0..JOINTS {
                q[k] = self.joints[k].clamp(q[k] + dq[k]);
            }
        }
        Err(best)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn zero_joint() -> DhJoint {
        DhJoint {
            alpha: 0.0,
            a: 0.0,
            d: 0.0,
            theta_offset: 0.0,
            min: -10.0,
            max: 10.0,
        }
    }

    fn random_q(arm: &ArmModel, rng: &mut impl Rng) -> Vec<f64> {
        arm.joints().iter().map(|j| rng.random_range(j.min..j.max)).collect()
    }

    #[test]
    fn zero_parameters_identity() {
        let m = dh_matrix(&zero_joint(), 0.0, DhConvention::Printed);
        assert_eq!(m, Matrix4::identity());
        let arm = ArmModel::new(vec![zero_joint(); 7]).unwrap();
        assert_eq!(arm.forward_kinematics_matrix(&[0.0; 7]).unwrap(), Matrix4::identity());
    }

    #[test]
    fn quarter_turn_block() {
        let m = dh_matrix(&zero_joint(), std::f64::consts::FRAC_PI_2, DhConvention::Printed);
        let block: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into();
        let expected = Matrix3::new(0.0, 1.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert_relative_eq!(block, expected, epsilon = 1e-15);
    }

    #[test]
    fn pure_rotation_chain() {
        let arm = ArmModel::new(vec![zero_joint(); 7]).unwrap();
        let q = [0.1, -0.2, 0.3, 0.05, -0.4, 0.25, 0.7];
        let m = arm.forward_kinematics_matrix(&q).unwrap();
        // Manual product: each link is a z-rotation by −θ in this convention.
        let total: f64 = q.iter().sum();
        let expected = nalgebra::Rotation3::from_axis_angle(&Vec3::z_axis(), -total);
        let block: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into();
        assert_relative_eq!(block, *expected.matrix(), epsilon = 1e-12);
        assert_eq!(m.fixed_view::<3, 1>(0, 3).norm(), 0.0);
    }

    #[test]
    fn fk_is_fold_of_link_matrices() {
        let arm = ArmModel::fixture();
        let q = [0.3, -0.5, 0.2, -1.5, 0.4, 1.2, -0.3];
        let mut manual = arm.base.to_homogeneous();
        for (j, &t) in arm.joints().iter().zip(&q) {
            manual *= dh_matrix(j, t, DhConvention::Printed);
        }
        manual *= arm.tool.to_homogeneous();
        let fk = arm.forward_kinematics_matrix(&q).unwrap();
        assert!((fk - manual).amax() < 1e-12);
    }

    #[test]
    fn dimension_error() {
        let arm = ArmModel::fixture();
        assert_eq!(
            arm.forward_kinematics(&[0.0; 6]),
            Err(ArmError::Dimension { expected: 7, got: 6 })
        );
    }

    #[test]
    fn wrong_joint_count() {
        assert_eq!(ArmModel::new(vec![zero_joint(); 6]), Err(ArmError::JointCount(6)));
    }

    #[test]
    fn ik_at_solution_is_immediate() {
        let arm = ArmModel::fixture();
        let q0 = arm.home();
        let target = arm.forward_kinematics(&q0).unwrap();
        let sol = arm.inverse_kinematics(&target, &q0, &IkOptions::default()).unwrap();
        assert!(sol.iterations <= 2);
    }

    #[test]
    fn ik_round_trip() {
        let arm = ArmModel::fixture();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let opts = IkOptions::default();
        for _ in 0..10 {
            let q0 = random_q(&arm, &mut rng);
            let target = arm.forward_kinematics(&q0).unwrap();
            let mut init: Vec<f64> = q0.iter().map(|v| v + rng.random_range(-0.2..0.2)).collect();
            arm.clamp(&mut init);
            let sol = arm.inverse_kinematics(&target, &init, &opts).unwrap();
            assert!(arm.within_limits(&sol.q));
            let got = arm.forward_kinematics(&sol.q).unwrap();
            assert!((got.translation.vector - target.translation.vector).norm() < opts.position_tol);
            assert!((got.rotation.inverse() * target.rotation).angle() < opts.rotation_tol);
        }
    }

    #[test]
    fn far_target_unreachable() {
        let arm = ArmModel::fixture();
        let target = crate::geometry::translation(10.0, 0.0, 0.0);
        let err = arm.inverse_kinematics(&target, &arm.home(), &IkOptions::default()).unwrap_err();
        match err {
            ArmError::Unreachable { position_error, best, .. } => {
                assert!(position_error > 8.0);
                assert!(arm.within_limits(&best));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn standard_convention_translation() {
        let j = DhJoint { a: 0.5, d: 0.2, ..zero_joint() };
        let m = dh_matrix(&j, 0.0, DhConvention::Standard);
        assert_eq!((m[(0, 3)], m[(2, 3)]), (0.5, 0.2));
    }

    #[test]
    fn json_table_and_object() {
        let table = serde_json::to_string(&vec![zero_joint(); 7]).unwrap();
        let arm: ArmModel = serde_json::from_str(&table).unwrap();
        assert_eq!(arm.joints().len(), 7);
        let full = serde_json::to_string(&ArmModel::fixture()).unwrap();
        let back: ArmModel = serde_json::from_str(&full).unwrap();
        assert_eq!(back.joints(), ArmModel::fixture().joints());
        assert!(serde_json::from_str::<ArmModel>(&serde_json::to_string(&vec![zero_joint(); 3]).unwrap()).is_err());
    }

    proptest! {
        #[test]
        fn rotation_blocks_orthonormal(seed in 0u64..1000) {
            let arm = ArmModel::fixture();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = random_q(&arm, &mut rng);
            let m = arm.forward_kinematics_matrix(&q).unwrap();
            let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into();
            prop_assert!((r.transpose() * r - Matrix3::identity()).amax() < 1e-10);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-10);
        }

        #[test]
        fn link_determinant_positive(theta in -4.0..4.0f64, alpha in -4.0..4.0f64, a in -1.0..1.0f64, d in -1.0..1.0f64) {
            let j = DhJoint { alpha, a, d, ..zero_joint() };
            for conv in [DhConvention::Printed, DhConvention::Standard] {
                let m = dh_matrix(&j, theta, conv);
                let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into();
                prop_assert!((r.determinant() - 1.0).abs() < 1e-12);
            }
        }
    }
}
