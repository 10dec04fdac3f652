use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix4, Quaternion, UnitQuaternion};

use super::{mean_std, rigid_align, MetricsError};
use crate::geometry::{pose, RigidTransform, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseSample {
    pub t: f64,
    pub pose: RigidTransform,
}

/// Timestamped poses with strictly increasing time.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    samples: Vec<PoseSample>,
}

impl Trajectory {
    pub fn new(samples: Vec<PoseSample>) -> Result<Self, MetricsError> {
        for (i, s) in samples.iter().enumerate() {
            let finite = s.t.is_finite()
                && s.pose.translation.vector.iter().all(|v| v.is_finite())
                && s.pose.rotation.coords.iter().all(|v| v.is_finite());
            if !finite {
                return Err(MetricsError::NonFinite(i));
            }
            if i > 0 && s.t <= samples[i - 1].t {
                return Err(MetricsError::NonMonotonicTime(i));
            }
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[PoseSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.samples.iter().map(|s| s.pose.translation.vector).collect()
    }

    /// Applies `t` on the left of every pose.
    pub fn transformed(&self, t: &RigidTransform) -> Self {
        Self {
            samples: self
                .samples
                .iter()
                .map(|s| PoseSample {
                    t: s.t,
                    pose: crate::geometry::compose(t, &s.pose),
                })
                .collect(),
        }
    }
}

/// Parses `t tx ty tz qx qy qz qw` lines; blank lines and `#` comments are
/// skipped.
pub fn parse_tum(text: &str) -> Result<Trajectory, MetricsError> {
    let mut samples = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| MetricsError::Parse {
                line: n + 1,
                msg: format!("{e}"),
            })?;
        if vals.len() != 8 {
            return Err(MetricsError::Parse {
                line: n + 1,
                msg: format!("expected 8 fields, found {}", vals.len()),
            });
        }
        let q = Quaternion::new(vals[7], vals[4], vals[5], vals[6]);
        if q.norm() == 0.0 {
            return Err(MetricsError::Parse {
                line: n + 1,
                msg: "zero quaternion".into(),
            });
        }
        samples.push(PoseSample {
            t: vals[0],
            pose: pose(
                Vec3::new(vals[1], vals[2], vals[3]),
                UnitQuaternion::new_normalize(q),
            ),
        });
    }
    Trajectory::new(samples)
}

pub fn read_tum(path: &Path) -> std::io::Result<Result<Trajectory, MetricsError>> {
    Ok(parse_tum(&std::fs::read_to_string(path)?))
}

/// One TUM line per sample, shortest round-trip float formatting.
pub fn tum_line(t: f64, pose: &RigidTransform) -> String {
    let p = pose.translation.vector;
    let q = pose.rotation;
    format!("{} {} {} {} {} {} {} {}\n", t, p.x, p.y, p.z, q.i, q.j, q.k, q.w)
}

pub fn to_tum_string(traj: &Trajectory) -> String {
    let mut out = String::new();
    for s in &traj.samples {
        let _ = write!(out, "{}", tum_line(s.t, &s.pose));
    }
    out
}

/// Pairs every ground-truth sample with the predicted sample nearest in time
/// (earlier on ties), dropping pairs further apart than `max_dt`. Returns
/// index-aligned trajectories.
pub fn associate(pred: &Trajectory, gt: &Trajectory, max_dt: f64) -> (Trajectory, Trajectory) {
    let (mut p_out, mut g_out) = (Vec::new(), Vec::new());
    let ps = pred.samples();
    if ps.is_empty() {
        return (Trajectory::default(), Trajectory::default());
    }
    let mut j = 0;
    let mut last_used: Option<usize> = None;
    for g in gt.samples() {
        while j + 1 < ps.len() && ps[j + 1].t <= g.t {
            j += 1;
        }
        let mut k = j;
        if j + 1 < ps.len() && (ps[j + 1].t - g.t).abs() < (g.t - ps[j].t).abs() {
            k = j + 1;
        }
        // Each predicted sample is used once so timestamps stay increasing.
        if (ps[k].t - g.t).abs() <= max_dt && last_used.is_none_or(|u| k > u) {
            p_out.push(ps[k]);
            g_out.push(*g);
            last_used = Some(k);
        }
    }
    (Trajectory { samples: p_out }, Trajectory { samples: g_out })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AteResult {
    pub errors: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// Transform applied to the prediction.
    pub alignment: RigidTransform,
}

fn check_lengths(pred: &Trajectory, gt: &Trajectory, needed: usize) -> Result<(), MetricsError> {
    if pred.len() != gt.len() {
        return Err(MetricsError::LengthMismatch {
            pred: pred.len(),
            gt: gt.len(),
        });
    }
    if pred.len() < needed {
        return Err(MetricsError::TooFew {
            needed,
            got: pred.len(),
        });
    }
    Ok(())
}

/// Absolute trajectory error after rigid alignment of predicted positions
/// onto ground truth.
pub fn ate(pred: &Trajectory, gt: &Trajectory) -> Result<AteResult, MetricsError> {
    check_lengths(pred, gt, 1)?;
    let (p, q) = (pred.positions(), gt.positions());
    let alignment = match rigid_align(&p, &q) {
        Ok(t) => t,
        // Fewer than three or collinear positions: translation-only fit.
        Err(MetricsError::Degenerate(_)) | Err(MetricsError::TooFew { .. }) => {
            let shift = (q.iter().sum::<Vec3>() - p.iter().sum::<Vec3>()) / p.len() as f64;
            crate::geometry::translation(shift.x, shift.y, shift.z)
        }
        Err(e) => return Err(e),
    };
    let errors: Vec<f64> = p
        .iter()
        .zip(&q)
        .map(|(a, b)| (alignment.transform_point(&(*a).into()).coords - b).norm())
        .collect();
    let (mean, std) = mean_std(&errors);
    Ok(AteResult {
        errors,
        mean,
        std,
        alignment,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RpeError {
    pub trans: f64,
    pub rot: f64,
}

/// Relative pose error of one consecutive pair:
/// R = (Q_i⁻¹ Q_{i+1})⁻¹ (P_i⁻¹ P_{i+1}) as 4×4 matrices.
pub fn rpe_pair(
    p_i: &RigidTransform,
    p_i1: &RigidTransform,
    q_i: &RigidTransform,
    q_i1: &RigidTransform,
) -> RpeError {
    let h = |t: &RigidTransform| -> Matrix4<f64> { t.to_homogeneous() };
    let inv = |m: Matrix4<f64>| m.try_inverse().expect("rigid transform is invertible");
    let rel_q = inv(h(q_i)) * h(q_i1);
    let rel_p = inv(h(p_i)) * h(p_i1);
    let r = inv(rel_q) * rel_p;
    let trans = (r[(0, 3)].powi(2) + r[(1, 3)].powi(2) + r[(2, 3)].powi(2)).sqrt();
    // arccos((tr R − 1) / 2), evaluated as atan2(sin, cos) so small angles
    // keep full precision.
    let c = 0.5 * (r[(0, 0)] + r[(1, 1)] + r[(2, 2)] - 1.0);
    let s = 0.5
        * ((r[(2, 1)] - r[(1, 2)]).powi(2) + (r[(0, 2)] - r[(2, 0)]).powi(2) + (r[(1, 0)] - r[(0, 1)]).powi(2)).sqrt();
    RpeError {
        trans,
        rot: s.atan2(c),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RpeStats {
    pub pairs: Vec<RpeError>,
    pub trans_mean: f64,
    pub trans_std: f64,
    pub rot_mean: f64,
    pub rot_std: f64,
}

pub fn rpe_sequence(pred: &Trajectory, gt: &Trajectory) -> Result<RpeStats, MetricsError> {
    check_lengths(pred, gt, 2)?;
    let (p, q) = (pred.samples(), gt.samples());
    let pairs: Vec<RpeError> = (0..p.len() - 1)
        .map(|i| rpe_pair(&p[i].pose, &p[i + 1].pose, &q[i].pose, &q[i + 1].pose))
        .collect();
    let (trans_mean, trans_std) = mean_std(&pairs.iter().map(|e| e.trans).collect::<Vec<_>>());
    let (rot_mean, rot_std) = mean_std(&pairs.iter().map(|e| e.rot).collect::<Vec<_>>());
    Ok(RpeStats {
        pairs,
        trans_mean,
        trans_std,
        rot_mean,
        rot_std,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::translation;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn random_pose(rng: &mut impl Rng, spread: f64) -> RigidTransform {
        pose(
            Vec3::new(
                rng.random_range(-spread..spread),
                rng.random_range(-spread..spread),
                rng.random_range(-spread..spread),
            ),
            UnitQuaternion::from_scaled_axis(Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )),
        )
    }

    fn random_traj(n: usize, seed: u64) -> Trajectory {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Trajectory::new(
            (0..n)
                .map(|i| PoseSample {
                    t: i as f64 * 0.1,
                    pose: random_pose(&mut rng, 1.0),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn tum_round_trip() {
        let traj = random_traj(10, 1);
        let back = parse_tum(&to_tum_string(&traj)).unwrap();
        assert_eq!(back.len(), 10);
        for (a, b) in traj.samples().iter().zip(back.samples()) {
            assert_eq!(a.t, b.t);
            assert!(crate::geometry::transform_distance(&a.pose, &b.pose) < 1e-15);
        }
    }

    #[test]
    fn tum_errors() {
        assert!(matches!(parse_tum("0 1 2 3\n"), Err(MetricsError::Parse { line: 1, .. })));
        assert!(matches!(parse_tum("# c\n0 0 0 0 0 0 0 1\nx 0 0 0 0 0 0 1"), Err(MetricsError::Parse { line: 3, .. })));
        assert!(matches!(
            parse_tum("1 0 0 0 0 0 0 1\n1 0 0 0 0 0 0 1\n"),
            Err(MetricsError::NonMonotonicTime(1))
        ));
        assert!(parse_tum("").unwrap().is_empty());
    }

    #[test]
    fn ate_zero_for_identical_and_offset() {
        let traj = random_traj(30, 2);
        assert!(ate(&traj, &traj).unwrap().mean < 1e-12);
        let shifted = traj.transformed(&translation(1.0, -2.0, 0.5));
        assert!(ate(&shifted, &traj).unwrap().mean < 1e-12);
    }

    #[test]
    fn ate_length_mismatch() {
        assert!(matches!(
            ate(&random_traj(3, 1), &random_traj(4, 1)),
            Err(MetricsError::LengthMismatch { pred: 3, gt: 4 })
        ));
    }

    #[test]
    fn ate_matches_noise_expectation() {
        // E‖n‖ for isotropic 3-d Gaussian noise is σ·2√2/√π.
        let sigma = 1e-3;
        let expected = sigma * 2.0 * (2.0 / std::f64::consts::PI).sqrt();
        let gt = random_traj(500, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = Normal::new(0.0, sigma).unwrap();
        let pred = Trajectory::new(
            gt.samples()
                .iter()
                .map(|s| {
                    let mut p = s.pose;
                    p.translation.vector += Vec3::new(n.sample(&mut rng), n.sample(&mut rng), n.sample(&mut rng));
                    PoseSample { t: s.t, pose: p }
                })
                .collect(),
        )
        .unwrap();
        let r = ate(&pred, &gt).unwrap();
        assert!((r.mean - expected).abs() < 0.2 * expected, "{} vs {}", r.mean, expected);
    }

    #[test]
    fn rpe_examples() {
        let id = RigidTransform::identity();
        let e = rpe_pair(&id, &translation(1.0, 0.0, 0.0), &id, &id);
        assert_eq!(e.trans, 1.0);
        assert_eq!(e.rot, 0.0);
        let a = random_pose(&mut ChaCha8Rng::seed_from_u64(5), 1.0);
        let step = translation(0.1, 0.2, 0.0);
        let same = rpe_pair(&a, &(a * step), &id, &step);
        assert!(same.trans < 1e-12 && same.rot < 1e-12);
        let turn = pose(Vec3::zeros(), UnitQuaternion::from_scaled_axis(Vec3::new(0.0, 0.3, 0.0)));
        assert_relative_eq!(rpe_pair(&id, &turn, &id, &id).rot, 0.3, epsilon = 1e-12);
        for angle in [1e-9, 1e-6, 3.1] {
            let turn = pose(Vec3::zeros(), UnitQuaternion::from_scaled_axis(Vec3::new(angle, 0.0, 0.0)));
            assert_relative_eq!(rpe_pair(&id, &turn, &id, &id).rot, angle, max_relative = 1e-9);
        }
    }

    #[test]
    fn rpe_sequence_examples() {
        let traj = random_traj(10, 6);
        let z = rpe_sequence(&traj, &traj).unwrap();
        assert!(z.trans_mean < 1e-12 && z.rot_mean < 1e-7 && z.trans_std < 1e-12);
        let two = random_traj(2, 7);
        let other = random_traj(2, 8);
        assert_eq!(rpe_sequence(&two, &other).unwrap().trans_std, 0.0);
        assert!(matches!(rpe_sequence(&two, &random_traj(3, 1)), Err(MetricsError::LengthMismatch { .. })));
        // Constant extra translation each step.
        let offset = translation(0.0, 0.0, 0.05);
        let gt = random_traj(8, 9);
        let mut acc = gt.samples()[0].pose;
        let mut pred = vec![PoseSample { t: 0.0, pose: acc }];
        for w in gt.samples().windows(2) {
            let rel = w[0].pose.inverse() * w[1].pose;
            acc = acc * rel * offset;
            pred.push(PoseSample { t: w[1].t, pose: acc });
        }
        let stats = rpe_sequence(&Trajectory::new(pred).unwrap(), &gt).unwrap();
        assert_relative_eq!(stats.trans_mean, 0.05, epsilon = 1e-9);
        assert!(stats.trans_std < 1e-9);
    }

    #[test]
    fn association_by_nearest_time() {
        let mk = |ts: &[f64]| {
            Trajectory::new(ts.iter().map(|&t| PoseSample { t, pose: translation(t, 0.0, 0.0) }).collect()).unwrap()
        };
        let pred = mk(&[0.0, 0.11, 0.19, 0.31, 0.5]);
        let gt = mk(&[0.0, 0.1, 0.2, 0.3, 0.4]);
        let (p, g) = associate(&pred, &gt, 0.02);
        assert_eq!(p.samples().iter().map(|s| s.t).collect::<Vec<_>>(), vec![0.0, 0.11, 0.19, 0.31]);
        assert_eq!(g.len(), 4);
    }

    proptest! {
        #[test]
        fn ate_invariant_to_global_motion(seed in 0u64..200) {
            let gt = random_traj(40, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
            let noisy = Trajectory::new(gt.samples().iter().map(|s| {
                let mut p = s.pose;
                p.translation.vector += Vec3::new(rng.random_range(-0.01..0.01), 0.0, rng.random_range(-0.01..0.01));
                PoseSample { t: s.t, pose: p }
            }).collect()).unwrap();
            let g = random_pose(&mut rng, 5.0);
            let a = ate(&noisy, &gt).unwrap();
            let b = ate(&noisy.transformed(&g), &gt).unwrap();
            prop_assert!((a.mean - b.mean).abs() < 1e-9);
        }

        #[test]
        fn rpe_invariant_to_independent_motions(seed in 0u64..200) {
            let p = random_traj(6, seed);
            let q = random_traj(6, seed + 500);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (gp, gq) = (random_pose(&mut rng, 3.0), random_pose(&mut rng, 3.0));
            let a = rpe_sequence(&p, &q).unwrap();
            let b = rpe_sequence(&p.transformed(&gp), &q.transformed(&gq)).unwrap();
            prop_assert!((a.trans_mean - b.trans_mean).abs() < 1e-9);
            prop_assert!((a.rot_mean - b.rot_mean).abs() < 1e-7);
            for e in &b.pairs {
                prop_assert!(e.rot >= 0.0 && e.rot <= std::f64::consts::PI);
            }
        }
    }
}
