//! Rigid-body capsule integration: semi-implicit Euler over magnetic,
//! contact, friction, peristaltic and (optional) gravity forces.

use nalgebra::UnitQuaternion;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::friction::{self, ContactFrame, DomainError, FrictionMode, FrictionParams, V_EPS};
use crate::geometry::{OrganMesh, RigidTransform, TriMesh, Vec3};
use crate::magnetics::{self, MagneticDipole, SingularityError};
use crate::tissue::{self, PeristalsisParams, WallContact};

/// Points sampled along the capsule axis when looking for wall contact.
const AXIS_SAMPLES: usize = 5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("capsule speed {speed:.3} m/s exceeds {limit} m/s; reduce dt or stiffness")]
    Instability { speed: f64, limit: f64 },
    #[error(transparent)]
    Singularity(#[from] SingularityError),
    #[error(transparent)]
    FrictionDomain(#[from] DomainError),
    #[error("dt must be in (0, {max}], got {dt}")]
    TimeStep { dt: f64, max: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CapsuleParams {
    /// kg
    pub mass: f64,
    /// Principal moments about body x, y, z; kg·m².
    pub inertia: Vec3,
    /// Embedded magnet moment in the body frame, A·m².
    pub dipole: Vec3,
    /// m
    pub radius: f64,
    /// Overall length including the hemispherical caps, m.
    pub length: f64,
}

impl CapsuleParams {
    /// Solid-cylinder inertia for the given mass and size, axis along z.
    pub fn cylinder_inertia(mass: f64, radius: f64, length: f64) -> Vec3 {
        let transverse = mass * (3.0 * radius * radius + length * length) / 12.0;
        Vec3::new(transverse, transverse, 0.5 * mass * radius * radius)
    }

    /// Half-length of the axis segment whose radius-r sweep is the capsule.
    pub fn half_axis(&self) -> f64 {
        (0.5 * self.length - self.radius).max(0.0)
    }
}

impl Default for CapsuleParams {
    fn default() -> Self {
        let (mass, radius, length) = (0.005, 0.0055, 0.026);
        Self {
            mass,
            inertia: Self::cylinder_inertia(mass, radius, length),
            dipole: Vec3::new(0.0, 0.0, 1.26e-2),
            radius,
            length,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapsuleState {
    pub pose: RigidTransform,
    pub velocity: Vec3,
    /// World frame, rad/s.
    pub angular_velocity: Vec3,
    pub params: CapsuleParams,
}

impl CapsuleState {
    pub fn at_rest(pose: RigidTransform, params: CapsuleParams) -> Self {
        Self {
            pose,
            velocity: Vec3::zeros(),
            angular_velocity: Vec3::zeros(),
            params,
        }
    }

    pub fn position(&self) -> Vec3 {
        self.pose.translation.vector
    }

    /// Body z axis in world coordinates.
    pub fn axis(&self) -> Vec3 {
        self.pose.rotation * Vec3::z()
    }

    pub fn dipole(&self) -> MagneticDipole {
        MagneticDipole::new(self.pose.rotation * self.params.dipole, self.position())
    }

    pub fn kinetic_energy(&self) -> f64 {
        let w_body = self.pose.rotation.inverse() * self.angular_velocity;
        0.5 * self.params.mass * self.velocity.norm_squared()
            + 0.5 * w_body.component_mul(&self.params.inertia).dot(&w_body)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsParams {
    /// Largest accepted time step, s.
    pub dt_max: f64,
    /// Penalty stiffness k_c, N/m.
    pub contact_stiffness: f64,
    /// Penalty damping c_c, N·s/m.
    pub contact_damping: f64,
    /// Rotational damping, N·m·s.
    pub rotational_damping: f64,
    /// Speed above which a step is rejected, m/s.
    pub max_speed: f64,
    /// Gravitational acceleration; `None` disables gravity.
    pub gravity: Option<Vec3>,
    /// Finite-difference step for the magnetic force, m.
    pub fd_step: f64,
}

impl Default for DynamicsParams {
    fn default() -> Self {
        Self {
            dt_max: 1e-3,
            contact_stiffness: 500.0,
            contact_damping: 1.0,
            rotational_damping: 1e-5,
            max_speed: 1.0,
            gravity: None,
            fd_step: magnetics::DEFAULT_FD_STEP,
        }
    }
}

/// Deepest penetration found along the capsule axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contact {
    /// Penalty force on the capsule, N.
    pub normal_force: Vec3,
    /// Unit normal pointing from the wall into the lumen.
    pub normal: Vec3,
    pub depth: f64,
    pub wall_point: Vec3,
    pub triangle_id: usize,
}

/// Penalty contact between the capsule and the lumen wall. The wall's
/// outward normals point away from the lumen, so the inward normal is their
/// negation. Returns `None` when nothing penetrates.
pub fn resolve_contact(
    capsule: &CapsuleState,
    mesh: &TriMesh,
    stiffness: f64,
    damping: f64,
) -> Option<Contact> {
    if mesh.triangles().is_empty() {
        return None;
    }
    let c = capsule.position();
    let axis = capsule.axis() * capsule.params.half_axis();
    let r = capsule.params.radius;
    let mut deepest: Option<Contact> = None;
    for k in 0..AXIS_SAMPLES {
        let s = 2.0 * k as f64 / (AXIS_SAMPLES - 1) as f64 - 1.0;
        let p = c + axis * s;
        let cp = mesh.closest_point(&p);
        let inward = -cp.normal;
        let offset = p - cp.point;
        let side = if offset.dot(&inward) >= 0.0 { 1.0 } else { -1.0 };
        let depth = r - side * cp.distance;
        if depth <= 0.0 {
            continue;
        }
        let normal = if cp.distance > 1e-12 {
            offset * (side / cp.distance)
        } else {
            inward
        };
        if deepest.is_none_or(|d| depth > d.depth) {
            let magnitude =
                (stiffness * depth - damping * capsule.velocity.dot(&normal)).max(0.0);
            deepest = Some(Contact {
                normal_force: normal * magnitude,
                normal,
                depth,
                wall_point: cp.point,
                triangle_id: cp.triangle_id,
            });
        }
    }
    deepest
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ForceBreakdown {
    pub magnetic: Vec3,
    pub friction: Vec3,
    pub peristalsis: Vec3,
    pub contact: Vec3,
    pub gravity: Vec3,
}

impl ForceBreakdown {
    pub fn total(&self) -> Vec3 {
        self.magnetic + self.friction + self.peristalsis + self.contact + self.gravity
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    /// Time at the end of the step, s.
    pub t: f64,
    pub net_force: Vec3,
    pub net_torque: Vec3,
    pub contact: bool,
    pub penetration: f64,
    pub forces: ForceBreakdown,
    /// Reaction on the wall, fed to the deformation model.
    #[serde(skip)]
    pub wall_contact: Option<WallContact>,
}

/// Everything the capsule interacts with during one step.
#[derive(Debug, Clone, Copy)]
pub struct World<'a> {
    pub organ: Option<&'a OrganMesh>,
    pub magnets: &'a [MagneticDipole],
    pub friction: &'a FrictionParams,
    /// Peristalsis parameters and the current MMC contraction strength.
    pub peristalsis: Option<(&'a PeristalsisParams, f64)>,
    pub params: &'a DynamicsParams,
}

fn friction_force(
    params: &FrictionParams,
    contact: &Contact,
    velocity: &Vec3,
    applied: &Vec3,
    mass: f64,
    dt: f64,
) -> Result<Vec3, DomainError> {
    let n = contact.normal;
    let u_t = velocity - n * velocity.dot(&n);
    let f_t = applied - n * applied.dot(&n);
    let speed = u_t.norm();
    match params.mode {
        FrictionMode::Components => {
            let frame = ContactFrame {
                normal_force: contact.normal_force,
                surface: n * params.contact_area,
                skew_angle: params.skew_angle,
                pressure: params.pressure,
            };
            Ok(friction::component_friction(params.coulomb, params.viscosity, &frame, &u_t))
        }
        FrictionMode::Curve if speed <= V_EPS => {
            // Stiction: cancel the tangential load up to the static threshold.
            let threshold = params.static_threshold_si();
            let load = f_t.norm();
            Ok(if load <= threshold {
                -f_t
            } else {
                -f_t * (threshold / load)
            })
        }
        FrictionMode::Curve => {
            let magnitude = params.curve_si(speed)?;
            let momentum = u_t * mass + f_t * dt;
            // Stop rather than reverse the tangential motion within one step.
            Ok(if magnitude * dt >= momentum.norm() {
                -momentum / dt
            } else {
                -u_t / speed * magnitude
            })
        }
    }
}

/// Advance `state` by `dt` starting at time `t`. On error the state is left
/// untouched.
pub fn step(state: &mut CapsuleState, world: &World, t: f64, dt: f64) -> Result<StepReport, DynamicsError> {
    let p = world.params;
    if !(dt > 0.0 && dt <= p.dt_max) {
        return Err(DynamicsError::TimeStep { dt, max: p.dt_max });
    }
    let m = state.params.mass;
    let dipole = state.dipole();

    let mut forces = ForceBreakdown::default();
    let mut magnetic_torque = Vec3::zeros();
    if !world.magnets.is_empty() {
        let (f, tau) = magnetics::interaction(&dipole, world.magnets, p.fd_step)?;
        forces.magnetic = f;
        magnetic_torque = tau;
    }
    if let Some(g) = p.gravity {
        forces.gravity = g * m;
    }
    if let (Some(organ), Some((params, strength))) = (world.organ, world.peristalsis) {
        let (seg, _) = organ.locate(&state.position());
        if let Ok(dir) = tissue::segment_direction(&organ.segments()[seg]) {
            forces.peristalsis = tissue::peristaltic_force(&dir, params, &state.velocity, strength);
        }
    }

    let contact = world
        .organ
        .and_then(|o| resolve_contact(state, &o.mesh, p.contact_stiffness, p.contact_damping));
    let mut wall_contact = None;
    if let Some(c) = &contact {
        forces.contact = c.normal_force;
        let applied = forces.magnetic + forces.gravity + forces.peristalsis + forces.contact;
        forces.friction = friction_force(world.friction, c, &state.velocity, &applied, m, dt)?;
        wall_contact = Some(WallContact {
            point: c.wall_point,
            force: -c.normal_force,
        });
    }

    let net_force = forces.total();
    let velocity = state.velocity + net_force / m * dt;
    let speed = velocity.norm();
    if !(speed <= p.max_speed) {
        return Err(DynamicsError::Instability {
            speed,
            limit: p.max_speed,
        });
    }

    let net_torque = magnetic_torque - state.angular_velocity * p.rotational_damping;
    let rot = state.pose.rotation;
    let w_body = rot.inverse() * state.angular_velocity;
    let tau_body = rot.inverse() * net_torque;
    let w_body = w_body + tau_body.component_div(&state.params.inertia) * dt;
    let angular_velocity = rot * w_body;
    let mut rotation = UnitQuaternion::from_scaled_axis(angular_velocity * dt) * rot;
    rotation.renormalize();

    state.velocity = velocity;
    state.angular_velocity = angular_velocity;
    state.pose.translation.vector += velocity * dt;
    state.pose.rotation = rotation;

    Ok(StepReport {
        t: t + dt,
        net_force,
        net_torque,
        contact: contact.is_some(),
        penetration: contact.map_or(0.0, |c| c.depth),
        forces,
        wall_contact,
    })
}
