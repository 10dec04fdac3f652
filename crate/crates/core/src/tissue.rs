//! Organ wall response: attenuated contact deformation with spring return and
//! damping, peristaltic propulsion along centerline segments, the migrating
//! motor complex (MMC) phase cycle, and the sine wave moving the wall.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Exec;
use crate::geometry::{CenterlineSegment, OrganMesh, Vec3};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum TissueError {
    #[error("segment start and end coincide")]
    DegenerateSegment,
    #[error("vertex {vertex} displaced {displacement:.4} m (limit {limit} m)")]
    Instability {
        vertex: usize,
        displacement: f64,
        limit: f64,
    },
    #[error("invalid MMC schedule: {0}")]
    Schedule(String),
}

/// F_v = F / (d² + 1).
pub fn attenuated_force(force: &Vec3, distance: f64) -> Vec3 {
    force / (distance * distance + 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeformationParams {
    /// Spring return factor k_s, 1/s².
    pub spring: f64,
    /// Velocity damping μ, 1/s.
    pub damping: f64,
    /// Only vertices within this distance of the contact are loaded, m.
    pub radius: f64,
    /// Displacement beyond which a step is reported unstable, m.
    pub max_displacement: f64,
}

impl Default for DeformationParams {
    fn default() -> Self {
        Self {
            spring: 50.0,
            damping: 5.0,
            radius: 0.02,
            max_displacement: 0.05,
        }
    }
}

/// Force the capsule exerts on the wall at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WallContact {
    pub point: Vec3,
    pub force: Vec3,
}

/// Per-vertex displacement and velocity of the simplified deformation model.
/// Vertex mass is 1.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationState {
    pub displacement: Vec<Vec3>,
    pub velocity: Vec<Vec3>,
    pub params: DeformationParams,
}

impl DeformationState {
    pub fn new(vertex_count: usize, params: DeformationParams) -> Self {
        Self {
            displacement: vec![Vec3::zeros(); vertex_count],
            velocity: vec![Vec3::zeros(); vertex_count],
            params,
        }
    }

    pub fn is_at_rest(&self) -> bool {
        self.displacement.iter().all(|d| *d == Vec3::zeros())
            && self.velocity.iter().all(|v| *v == Vec3::zeros())
    }

    pub fn max_displacement(&self) -> f64 {
        self.displacement.iter().map(|d| d.norm()).fold(0.0, f64::max)
    }
}

/// One deformation update. For each vertex:
/// `v += (F_v − k_s·x)·dt`, then `v *= 1 − μ·dt`, then `x += v·dt`, where
/// `F_v` is the attenuated contact force if the vertex lies within the
/// loading radius of the contact point (`positions` are the current vertex
/// positions used for that distance).
pub fn deform_step(
    state: &mut DeformationState,
    positions: &[Vec3],
    contact: Option<&WallContact>,
    dt: f64,
    exec: Exec,
) -> Result<(), TissueError> {
    debug_assert!(dt > 0.0);
    let p = state.params;
    let DeformationState {
        displacement,
        velocity,
        ..
    } = state;
    let mut pairs: Vec<(Vec3, Vec3)> = displacement
        .iter()
        .copied()
        .zip(velocity.iter().copied())
        .collect();
    exec.for_each_mut(&mut pairs, |i, (x, v)| {
        let mut f = -*x * p.spring;
        if let Some(c) = contact {
            let d = (positions[i] - c.point).norm();
            if d <= p.radius {
                f += attenuated_force(&c.force, d);
            }
        }
        let v_new = (*v + f * dt) * (1.0 - p.damping * dt);
        *x += v_new * dt;
        *v = v_new;
    });
    for (i, (x, v)) in pairs.into_iter().enumerate() {
        displacement[i] = x;
        velocity[i] = v;
    }
    if let Some((vertex, d)) = displacement
        .iter()
        .map(|d| d.norm())
        .enumerate()
        .find(|(_, d)| *d > p.max_displacement || !d.is_finite())
    {
        return Err(TissueError::Instability {
            vertex,
            displacement: d,
            limit: p.max_displacement,
        });
    }
    Ok(())
}

/// Unit propagation direction of a centerline segment.
pub fn segment_direction(seg: &CenterlineSegment) -> Result<Vec3, TissueError> {
    let d = seg.end - seg.start;
    let n = d.norm();
    if n == 0.0 {
        return Err(TissueError::DegenerateSegment);
    }
    Ok(d / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PeristalsisParams {
    /// Scale α from segment direction to propagation velocity, m/s.
    pub alpha: f64,
    /// Coupling β between velocity mismatch and force, kg/s.
    pub beta: f64,
    /// Radial wall-wave amplitude, m.
    pub wave_amplitude: f64,
    /// Spatial frequency of the wall wave along the centerline, 1/m.
    pub wave_frequency: f64,
    /// Wave propagation speed along the centerline, m/s.
    pub wave_speed: f64,
}

impl Default for PeristalsisParams {
    fn default() -> Self {
        Self {
            // About 1.5 cm/min.
            alpha: 2.5e-4,
            beta: 0.05,
            wave_amplitude: 1.0e-3,
            wave_frequency: 20.0,
            wave_speed: 2.5e-4,
        }
    }
}

/// F_p = β·strength·(α·dir − u).
pub fn peristaltic_force(
    seg_dir: &Vec3,
    params: &PeristalsisParams,
    capsule_velocity: &Vec3,
    phase_strength: f64,
) -> Vec3 {
    let v_p = seg_dir * params.alpha;
    (v_p - capsule_velocity) * (params.beta * phase_strength)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MmcPhaseId {
    I,
    II,
    III,
    IV,
}

impl MmcPhaseId {
    pub const ORDER: [MmcPhaseId; 4] = [MmcPhaseId::I, MmcPhaseId::II, MmcPhaseId::III, MmcPhaseId::IV];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MmcPhase {
    pub phase: MmcPhaseId,
    pub duration_min: f64,
    pub strength: f64,
}

/// The four-phase migrating motor complex cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<MmcPhase>", into = "Vec<MmcPhase>")]
pub struct MmcSchedule {
    phases: Vec<MmcPhase>,
}

impl Default for MmcSchedule {
    /// 100-minute cycle: 50 / 25 / 7.5 / 17.5 min at strengths 0 / 0.5 / 1 / 0.1.
    fn default() -> Self {
        Self::new(&[(50.0, 0.0), (25.0, 0.5), (7.5, 1.0), (17.5, 0.1)]).expect("valid default")
    }
}

impl MmcSchedule {
    /// `(duration_min, strength)` for phases I..IV in order.
    pub fn new(phases: &[(f64, f64)]) -> Result<Self, TissueError> {
        let phases: Vec<MmcPhase> = phases
            .iter()
            .zip(MmcPhaseId::ORDER)
            .map(|(&(duration_min, strength), phase)| MmcPhase {
                phase,
                duration_min,
                strength,
            })
            .collect();
        Self::try_from(phases)
    }

    pub fn phases(&self) -> &[MmcPhase] {
        &self.phases
    }

    pub fn cycle_seconds(&self) -> f64 {
        self.phases.iter().map(|p| p.duration_min).sum::<f64>() * 60.0
    }
}

impl TryFrom<Vec<MmcPhase>> for MmcSchedule {
    type Error = TissueError;

    fn try_from(phases: Vec<MmcPhase>) -> Result<Self, Self::Error> {
        if phases.len() != 4 {
            return Err(TissueError::Schedule(format!("expected 4 phases, got {}", phases.len())));
        }
        for (p, expected) in phases.iter().zip(MmcPhaseId::ORDER) {
            if p.phase != expected {
                return Err(TissueError::Schedule("phases must be ordered I, II, III, IV".into()));
            }
            if !(p.duration_min > 0.0) || !p.duration_min.is_finite() {
                return Err(TissueError::Schedule(format!("phase {:?} duration must be > 0", p.phase)));
            }
            if !(0.0..=1.0).contains(&p.strength) {
                return Err(TissueError::Schedule(format!("phase {:?} strength outside [0, 1]", p.phase)));
            }
        }
        Ok(Self { phases })
    }
}

impl From<MmcSchedule> for Vec<MmcPhase> {
    fn from(s: MmcSchedule) -> Self {
        s.phases
    }
}

/// Phase containing `t` seconds (taken modulo the cycle). A boundary instant
/// belongs to the later phase.
pub fn mmc_phase(schedule: &MmcSchedule, t: f64) -> (MmcPhaseId, f64) {
    let cycle = schedule.cycle_seconds();
    let tau = t.rem_euclid(cycle);
    let mut end = 0.0;
    for p in &schedule.phases {
        end += p.duration_min * 60.0;
        if tau < end {
            return (p.phase, p.strength);
        }
    }
    let first = schedule.phases[0];
    (first.phase, first.strength)
}

/// Radial wall displacement, positive towards the lumen (along the inward
/// normal): `A·strength·sin(2π f s − 2π f c t)`.
pub fn wall_wave_displacement(
    inward_normal: &Vec3,
    centerline_coord: f64,
    t: f64,
    params: &PeristalsisParams,
    strength: f64,
) -> Vec3 {
    let phase = 2.0 * PI * params.wave_frequency * centerline_coord
        - 2.0 * PI * (params.wave_frequency * params.wave_speed) * t;
    inward_normal * (params.wave_amplitude * strength * phase.sin())
}

/// Deformed vertex positions: rest + contact displacement + wall wave.
pub fn deformed_positions(
    organ: &OrganMesh,
    deformation: &DeformationState,
    wave: Option<(&PeristalsisParams, f64, f64)>,
    exec: Exec,
) -> Vec<Vec3> {
    let rest = organ.rest_positions();
    let normals = organ.rest_normals();
    let coords = organ.centerline_coords();
    exec.map_range(rest.len(), |i| {
        let mut p = rest[i] + deformation.displacement[i];
        if let Some((params, t, strength)) = wave {
            p += wall_wave_displacement(&-normals[i], coords[i], t, params, strength);
        }
        p
    })
}
