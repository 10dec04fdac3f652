//! Point-dipole magnetostatics: field, torque and force between magnets.
//!
//! Forces are the gradient of `m · B` taken by central differences, so any
//! superposition of sources (a single arm-held magnet, an electromagnet array)
//! goes through the same code path.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec3;

/// Vacuum permeability μ0 in N/A².
pub const MU0: f64 = 4.0e-7 * std::f64::consts::PI;

/// Field evaluations closer than this to a source are refused.
pub const R_MIN: f64 = 1e-3;

/// Default central-difference step for [`dipole_force`], metres.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, Error, PartialEq)]
#[error("field evaluated {distance:.3e} m from a dipole (minimum {min:.1e} m)")]
pub struct SingularityError {
    pub distance: f64,
    pub min: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MagneticDipole {
    /// Moment in A·m².
    pub moment: Vec3,
    pub position: Vec3,
}

impl MagneticDipole {
    pub fn new(moment: Vec3, position: Vec3) -> Self {
        Self { moment, position }
    }
}

/// B = (μ0/4π) (1/r³) [3 (m·r̂) r̂ − m], in tesla.
pub fn dipole_field(source: &MagneticDipole, point: &Vec3) -> Result<Vec3, SingularityError> {
    let r = point - source.position;
    let dist = r.norm();
    if dist < R_MIN {
        return Err(SingularityError {
            distance: dist,
            min: R_MIN,
        });
    }
    let r_hat = r / dist;
    let k = MU0 / (4.0 * std::f64::consts::PI) / (dist * dist * dist);
    Ok((r_hat * (3.0 * source.moment.dot(&r_hat)) - source.moment) * k)
}

/// Superposed field of several dipoles.
pub fn total_field(sources: &[MagneticDipole], point: &Vec3) -> Result<Vec3, SingularityError> {
    sources
        .iter()
        .try_fold(Vec3::zeros(), |acc, s| Ok(acc + dipole_field(s, point)?))
}

/// N = m × B.
pub fn dipole_torque(moment: &Vec3, field: &Vec3) -> Vec3 {
    moment.cross(field)
}

/// F = ∇(m · B) at `target.position`, by central differences with step `h`.
pub fn dipole_force<F>(target: &MagneticDipole, field_fn: F, h: f64) -> Result<Vec3, SingularityError>
where
    F: Fn(&Vec3) -> Result<Vec3, SingularityError>,
{
    let mut grad = Vec3::zeros();
    for k in 0..3 {
        let mut dp = Vec3::zeros();
        dp[k] = h;
        let plus = target.moment.dot(&field_fn(&(target.position + dp))?);
        let minus = target.moment.dot(&field_fn(&(target.position - dp))?);
        grad[k] = (plus - minus) / (2.0 * h);
    }
    Ok(grad)
}

/// Force and torque on `target` from every dipole in `sources`.
pub fn interaction(
    target: &MagneticDipole,
    sources: &[MagneticDipole],
    h: f64,
) -> Result<(Vec3, Vec3), SingularityError> {
    let b = total_field(sources, &target.position)?;
    let force = dipole_force(target, |p| total_field(sources, p), h)?;
    Ok((force, dipole_torque(&target.moment, &b)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Closed-form force on dipole `m2` at `r` (relative to `m1`) from `m1`.
    fn analytic_force(m1: &Vec3, m2: &Vec3, r: &Vec3) -> Vec3 {
        let d = r.norm();
        let u = r / d;
        let k = 3.0 * MU0 / (4.0 * std::f64::consts::PI * d.powi(4));
        (m2 * m1.dot(&u) + m1 * m2.dot(&u) + u * m1.dot(m2) - u * (5.0 * m1.dot(&u) * m2.dot(&u))) * k
    }

    #[test]
    fn on_axis_field() {
        let s = MagneticDipole::new(Vec3::z(), Vec3::zeros());
        let b = dipole_field(&s, &Vec3::z()).unwrap();
        assert_relative_eq!(b, Vec3::new(0.0, 0.0, 2e-7), epsilon = 1e-22);
    }

    #[test]
    fn equatorial_field() {
        let s = MagneticDipole::new(Vec3::z(), Vec3::zeros());
        let b = dipole_field(&s, &Vec3::x()).unwrap();
        assert_relative_eq!(b, Vec3::new(0.0, 0.0, -1e-7), epsilon = 1e-22);
    }

    #[test]
    fn zero_moment_zero_field() {
        let s = MagneticDipole::new(Vec3::zeros(), Vec3::zeros());
        assert_eq!(dipole_field(&s, &Vec3::new(0.3, -1.0, 2.0)).unwrap(), Vec3::zeros());
    }

    #[test]
    fn singular_inside_guard() {
        let s = MagneticDipole::new(Vec3::z(), Vec3::zeros());
        assert!(dipole_field(&s, &Vec3::new(0.0, 0.0, 5e-4)).is_err());
    }

    #[test]
    fn torque_examples() {
        assert_eq!(dipole_torque(&Vec3::z(), &(Vec3::z() * 3.0)), Vec3::zeros());
        assert_eq!(dipole_torque(&Vec3::z(), &Vec3::y()), Vec3::new(-1.0, 0.0, 0.0));
    }

    #[test]
    fn uniform_field_no_force() {
        let t = MagneticDipole::new(Vec3::new(0.3, 0.1, 1.0), Vec3::zeros());
        let f = dipole_force(&t, |_| Ok(Vec3::new(1e-3, 2e-3, 0.0)), DEFAULT_FD_STEP).unwrap();
        assert!(f.norm() < 1e-12);
    }

    #[test]
    fn coaxial_unit_dipoles_attract() {
        let a = MagneticDipole::new(Vec3::z(), Vec3::zeros());
        let b = MagneticDipole::new(Vec3::z(), Vec3::z());
        let f = dipole_force(&b, |p| dipole_field(&a, p), DEFAULT_FD_STEP).unwrap();
        // 3 μ0 m² / (2π r⁴) = 6e-7 N towards the source.
        assert!(f.z < 0.0);
        assert_relative_eq!(f.norm(), 6e-7, max_relative = 1e-3);
    }

    #[test]
    fn superposition() {
        let a = MagneticDipole::new(Vec3::new(0.0, 1.0, 2.0), Vec3::zeros());
        let b = MagneticDipole::new(Vec3::new(-1.0, 0.5, 0.0), Vec3::new(0.2, 0.0, 0.0));
        let p = Vec3::new(0.5, 0.7, -0.3);
        let sum = dipole_field(&a, &p).unwrap() + dipole_field(&b, &p).unwrap();
        assert_eq!(total_field(&[a, b], &p).unwrap(), sum);
    }

    proptest! {
        #[test]
        fn finite_difference_matches_closed_form(
            m1 in prop::array::uniform3(-1.0..1.0f64),
            m2 in prop::array::uniform3(-1.0..1.0f64),
            dir in prop::array::uniform3(-1.0..1.0f64),
            dist in 0.02..1.0f64,
        ) {
            let (m1, m2) = (Vec3::from(m1), Vec3::from(m2));
            prop_assume!(m1.norm() > 0.1 && m2.norm() > 0.1);
            let Some(u) = Vec3::from(dir).try_normalize(1e-3) else { return Ok(()) };
            let r = u * dist;
            let src = MagneticDipole::new(m1, Vec3::zeros());
            let tgt = MagneticDipole::new(m2, r);
            let fd = dipole_force(&tgt, |p| dipole_field(&src, p), DEFAULT_FD_STEP).unwrap();
            let exact = analytic_force(&m1, &m2, &r);
            let scale = 3.0 * MU0 / (4.0 * std::f64::consts::PI * dist.powi(4)) * m1.norm() * m2.norm();
            prop_assert!((fd - exact).norm() <= 1e-3 * scale, "fd {fd:?} exact {exact:?}");
        }

        #[test]
        fn inverse_cube_falloff(m in prop::array::uniform3(-2.0..2.0f64), r in 0.01..5.0f64) {
            let s = MagneticDipole::new(Vec3::from(m), Vec3::zeros());
            let near = dipole_field(&s, &(Vec3::z() * r)).unwrap().norm();
            let far = dipole_field(&s, &(Vec3::z() * 2.0 * r)).unwrap().norm();
            prop_assert!((near / 8.0 - far).abs() <= 1e-12 * near);
        }

        #[test]
        fn linear_in_moment(m in prop::array::uniform3(-2.0..2.0f64), k in -5.0..5.0f64) {
            let p = Vec3::new(0.3, -0.2, 0.4);
            let s1 = MagneticDipole::new(Vec3::from(m), Vec3::zeros());
            let sk = MagneticDipole::new(Vec3::from(m) * k, Vec3::zeros());
            let b1 = dipole_field(&s1, &p).unwrap();
            let bk = dipole_field(&sk, &p).unwrap();
            prop_assert!((b1 * k - bk).norm() <= 1e-12 * (b1.norm() * k.abs() + 1e-30));
        }

        #[test]
        fn torque_bounded(m in prop::array::uniform3(-2.0..2.0f64), b in prop::array::uniform3(-2.0..2.0f64)) {
            let (m, b) = (Vec3::from(m), Vec3::from(b));
            prop_assert!(dipole_torque(&m, &b).norm() <= m.norm() * b.norm() + 1e-12);
        }
    }
}
