//! Frictional resistance of the intestinal wall on the capsule.
//!
//! Two views are provided: the component model (Coulomb, environmental
//! resistance from hoop stress, visco-adhesive mucus drag) and the fitted
//! piecewise-logarithmic total-friction curve used in the dynamics loop.

mod fit;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec3;

pub use fit::{fit_friction_params, FitError, FitOptions, FitResult};

/// Speeds at or below this are treated as rest, m/s.
pub const V_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("log argument b·x + c = {0} is not positive")]
pub struct DomainError(pub f64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogBase {
    #[default]
    Natural,
    Ten,
}

impl LogBase {
    pub fn ln_factor(self) -> f64 {
        match self {
            LogBase::Natural => 1.0,
            LogBase::Ten => 1.0 / std::f64::consts::LN_10,
        }
    }
}

/// Parameters of `f(x) = C` for `x ≤ 1`, `a·log(b·x + c) + C` for `x > 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    #[serde(rename = "C")]
    pub offset: f64,
    #[serde(default)]
    pub log_base: LogBase,
}

impl CurveParams {
    /// Fitted values: a = 55.04, b = 0.23, c = 1.04, C = 100.
    pub const REFERENCE: CurveParams = CurveParams {
        a: 55.04,
        b: 0.23,
        c: 1.04,
        offset: 100.0,
        log_base: LogBase::Natural,
    };
}

impl Default for CurveParams {
    fn default() -> Self {
        Self::REFERENCE
    }
}

/// Piecewise total-friction magnitude at speed `x` (curve units).
pub fn total_friction_curve(x: f64, p: &CurveParams) -> Result<f64, DomainError> {
    if x <= 1.0 {
        return Ok(p.offset);
    }
    let arg = p.b * x + p.c;
    if arg <= 0.0 {
        return Err(DomainError(arg));
    }
    Ok(p.a * arg.ln() * p.log_base.ln_factor() + p.offset)
}

/// Units the curve was fitted in, as multiples of SI.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurveUnits {
    /// Newtons per curve force unit (mN → 1e-3).
    pub force_to_si: f64,
    /// Metres per second per curve velocity unit (mm/s → 1e-3).
    pub velocity_to_si: f64,
}

impl Default for CurveUnits {
    fn default() -> Self {
        Self {
            force_to_si: 1e-3,
            velocity_to_si: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrictionMode {
    /// Fitted total-friction curve with stiction below the constant branch.
    #[default]
    Curve,
    /// Sum of the Coulomb, environmental and visco-adhesive components.
    Components,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrictionParams {
    pub mode: FrictionMode,
    /// Coulomb coefficient μ_c.
    pub coulomb: f64,
    /// Mucus viscosity γ, N·s/m.
    pub viscosity: f64,
    pub curve: CurveParams,
    pub units: CurveUnits,
    /// Environmental resistance inputs for the component model.
    pub pressure: f64,
    pub contact_area: f64,
    pub skew_angle: f64,
}

impl Default for FrictionParams {
    fn default() -> Self {
        Self {
            mode: FrictionMode::Curve,
            coulomb: 0.08,
            viscosity: 0.05,
            curve: CurveParams::REFERENCE,
            units: CurveUnits::default(),
            pressure: 0.0,
            contact_area: 1e-4,
            skew_angle: 0.0,
        }
    }
}

impl FrictionParams {
    /// Curve value at speed `speed` (m/s) in newtons.
    pub fn curve_si(&self, speed: f64) -> Result<f64, DomainError> {
        Ok(total_friction_curve(speed / self.units.velocity_to_si, &self.curve)? * self.units.force_to_si)
    }

    /// Static threshold: the constant branch, in newtons.
    pub fn static_threshold_si(&self) -> f64 {
        self.curve.offset * self.units.force_to_si
    }
}

/// Contact description used by the environmental resistance term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactFrame {
    /// Normal force on the capsule, N.
    pub normal_force: Vec3,
    /// Contact surface normal scaled by contact area, m².
    pub surface: Vec3,
    /// Skew-force angle θ in [0, π/2].
    pub skew_angle: f64,
    /// Pressure on the contact surface, Pa.
    pub pressure: f64,
}

/// f_c = −μ_c ‖N‖ v̂, zero at rest.
pub fn coulomb_friction(mu_c: f64, normal: &Vec3, velocity: &Vec3) -> Vec3 {
    let speed = velocity.norm();
    if speed <= V_EPS {
        return Vec3::zeros();
    }
    -velocity / speed * (mu_c * normal.norm())
}

/// f_e = P ‖S‖ sin θ, applied along −v̂ by the caller.
pub fn environmental_resistance(frame: &ContactFrame) -> f64 {
    frame.pressure * frame.surface.norm() * frame.skew_angle.sin()
}

/// f_v = −γ v.
pub fn visco_adhesive(gamma: f64, velocity: &Vec3) -> Vec3 {
    -velocity * gamma
}

/// Sum of the three components for a moving capsule.
pub fn component_friction(mu_c: f64, gamma: f64, frame: &ContactFrame, velocity: &Vec3) -> Vec3 {
    let speed = velocity.norm();
    let d_f = if speed > V_EPS { -velocity / speed } else { Vec3::zeros() };
    coulomb_friction(mu_c, &frame.normal_force, velocity)
        + d_f * environmental_resistance(frame)
        + visco_adhesive(gamma, velocity)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const P: CurveParams = CurveParams::REFERENCE;

    #[test]
    fn curve_examples() {
        assert_eq!(total_friction_curve(0.5, &P).unwrap(), 100.0);
        assert_eq!(total_friction_curve(1.0, &P).unwrap(), 100.0);
        let at2 = 55.04 * (0.23f64 * 2.0 + 1.04).ln() + 100.0;
        assert_relative_eq!(total_friction_curve(2.0, &P).unwrap(), at2, epsilon = 1e-12);
        assert!((at2 - 122.32).abs() < 0.01);
        let at10 = 55.04 * 3.34f64.ln() + 100.0;
        assert_relative_eq!(total_friction_curve(10.0, &P).unwrap(), at10, epsilon = 1e-12);
        assert!((at10 - 166.38).abs() < 0.01);
    }

    #[test]
    fn discontinuity_at_one() {
        let just_above = total_friction_curve(1.0 + 1e-12, &P).unwrap();
        let jump = just_above - total_friction_curve(1.0, &P).unwrap();
        assert_relative_eq!(jump, 55.04 * 1.27f64.ln(), epsilon = 1e-9);
        assert!((jump - 13.16).abs() < 0.01);
    }

    #[test]
    fn domain_error() {
        let p = CurveParams { b: -1.0, ..P };
        assert!(total_friction_curve(5.0, &p).is_err());
    }

    #[test]
    fn log_ten_option() {
        let p = CurveParams { log_base: LogBase::Ten, ..P };
        let v = total_friction_curve(10.0, &p).unwrap();
        assert_relative_eq!(v, 55.04 * 3.34f64.log10() + 100.0, epsilon = 1e-12);
    }

    #[test]
    fn coulomb_examples() {
        assert_eq!(coulomb_friction(0.3, &Vec3::zeros(), &Vec3::x()), Vec3::zeros());
        let f = coulomb_friction(0.3, &Vec3::new(0.0, 0.1, 0.0), &Vec3::x());
        assert_relative_eq!(f, Vec3::new(-0.03, 0.0, 0.0), epsilon = 1e-15);
        assert_eq!(coulomb_friction(0.3, &Vec3::y(), &Vec3::zeros()), Vec3::zeros());
    }

    #[test]
    fn environmental_examples() {
        let frame = |p: f64, theta: f64| ContactFrame {
            normal_force: Vec3::zeros(),
            surface: Vec3::z() * 1e-4,
            skew_angle: theta,
            pressure: p,
        };
        assert_eq!(environmental_resistance(&frame(1000.0, 0.0)), 0.0);
        assert_relative_eq!(
            environmental_resistance(&frame(1000.0, std::f64::consts::FRAC_PI_2)),
            0.1,
            epsilon = 1e-15
        );
        let one = environmental_resistance(&frame(700.0, 0.4));
        assert_relative_eq!(environmental_resistance(&frame(1400.0, 0.4)), 2.0 * one, epsilon = 1e-15);
    }

    #[test]
    fn visco_examples() {
        assert_eq!(visco_adhesive(0.1, &Vec3::zeros()), Vec3::zeros());
        assert_relative_eq!(
            visco_adhesive(0.1, &Vec3::new(0.02, 0.0, 0.0)),
            Vec3::new(-0.002, 0.0, 0.0),
            epsilon = 1e-16
        );
    }

    proptest! {
        #[test]
        fn curve_monotone_above_one(x in 1.0001..500.0f64, dx in 0.0..50.0f64) {
            let lo = total_friction_curve(x, &P).unwrap();
            let hi = total_friction_curve(x + dx, &P).unwrap();
            prop_assert!(hi >= lo);
        }

        #[test]
        fn components_oppose_motion(
            v in prop::array::uniform3(-0.1..0.1f64),
            n in prop::array::uniform3(-1.0..1.0f64),
            theta in 0.0..std::f64::consts::FRAC_PI_2,
            pressure in 0.0..5000.0f64,
        ) {
            let v = Vec3::from(v);
            let frame = ContactFrame {
                normal_force: Vec3::from(n),
                surface: Vec3::z() * 1e-4,
                skew_angle: theta,
                pressure,
            };
            let f = component_friction(0.08, 0.05, &frame, &v);
            prop_assert!(f.dot(&v) <= 0.0);
            prop_assert!(visco_adhesive(0.05, &v).dot(&v) <= 0.0);
        }
    }
}
