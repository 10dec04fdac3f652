use std::fmt::Write as _;

use nalgebra::{Quaternion, UnitQuaternion};
use serde::{Deserialize, Serialize};

use super::command::{Command, CommandOutcome, LoggedCommand};
use super::config::{ArmSource, ControllerConfig, GreedyConfig, LoadedScenario, RigConfig, FIXTURE_PREFIX};
use super::ScenarioError;
use crate::arm::{ArmModel, IkOptions};
use crate::dynamics::{self, CapsuleState, ForceBreakdown, StepReport, World};
use crate::exec::Exec;
use crate::geometry::{io, pose, shapes, CenterlineSegment, OrganMesh, PoseSpec, RigidTransform, Vec3};
use crate::magnetics::MagneticDipole;
use crate::metrics::tum_line;
use crate::sensing::{self, CameraRig, CoverageMap, PlanChoice, REWARD_ALPHA};
use crate::tissue::{self, DeformationState, MmcPhaseId};

pub const COVERAGE_HEADER: &str = "t,covered_count,total,C\n";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MagnetState {
    /// Moment in the magnet frame.
    pub moment: Vec3,
    pub pose: RigidTransform,
    pub arm_mounted: bool,
}

impl MagnetState {
    pub fn dipole(&self) -> MagneticDipole {
        MagneticDipole::new(self.pose.rotation * self.moment, self.pose.translation.vector)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct ArmRuntime {
    model: ArmModel,
    q_init: Vec<f64>,
    q: Vec<f64>,
    ik: IkOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimStatus {
    Running,
    Paused,
}

/// Snapshot broadcast to observers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFrame {
    pub step: u64,
    pub t: f64,
    pub status: SimStatus,
    pub capsule: PoseSpec,
    pub velocity: Vec3,
    pub angular_velocity: Vec3,
    #[serde(rename = "C")]
    pub coverage: f64,
    pub covered: usize,
    pub total: usize,
    pub forces: ForceBreakdown,
    pub net_force: Vec3,
    pub contact: bool,
    pub penetration: f64,
    pub magnets: Vec<PoseSpec>,
    pub arm_q: Option<Vec<f64>>,
    pub mmc_phase: MmcPhaseId,
    pub mmc_strength: f64,
}

/// Text logs accumulated over the current episode.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLogs {
    pub trajectory: String,
    pub coverage_csv: String,
    pub reports: String,
    /// Every command applied this session, one JSON object per line. Not
    /// cleared by `reset`.
    pub commands: String,
}

fn organ_from_config(sc: &LoadedScenario) -> Result<OrganMesh, ScenarioError> {
    let cfg = &sc.config;
    if let Some(name) = cfg.mesh.strip_prefix(FIXTURE_PREFIX) {
        return match name {
            "tube" => Ok(shapes::fixture_tube()),
            "bent_tube" => Ok(shapes::fixture_bent_tube()),
            "stomach" => Ok(shapes::fixture_stomach()),
            other => Err(ScenarioError::Validation {
                field: "mesh".into(),
                reason: format!("unknown fixture {other:?}"),
            }),
        };
    }
    let loaded = io::load_mesh(&sc.resolve(&cfg.mesh))?;
    let segments: Option<Vec<CenterlineSegment>> = match &cfg.segments {
        Some(path) => {
            let full = sc.resolve(path);
            let text = std::fs::read_to_string(&full).map_err(|e| ScenarioError::Io {
                path: full.clone(),
                message: e.to_string(),
            })?;
            Some(serde_json::from_str(&text).map_err(|e| ScenarioError::Parse {
                line: e.line(),
                column: e.column(),
                msg: format!("{}: {e}", full.display()),
            })?)
        }
        None => None,
    };
    let organ = match (segments, loaded.segment_ids) {
        (Some(segs), _) if !segs.is_empty() && segs.iter().all(|s| !s.vertex_ids.is_empty()) => {
            OrganMesh::from_partition(loaded.mesh, segs)?
        }
        (Some(segs), Some(ids)) => OrganMesh::with_assignment(loaded.mesh, segs, &ids)?,
        (Some(segs), None) => OrganMesh::with_nearest_segments(loaded.mesh, segs)?,
        (None, Some(_)) => {
            return Err(ScenarioError::Validation {
                field: "segments".into(),
                reason: "mesh carries segment ids but no segment file is given".into(),
            })
        }
        (None, None) => {
            // One segment through the bounding box along its longest axis.
            let b = loaded.mesh.bounds();
            let axis = (b.max - b.min).imax();
            let center = (b.max + b.min) * 0.5;
            let (mut start, mut end) = (center, center);
            start[axis] = b.min[axis];
            end[axis] = b.max[axis];
            OrganMesh::with_nearest_segments(loaded.mesh, vec![CenterlineSegment::new(start, end)])?
        }
    };
    Ok(organ)
}

fn arm_from_config(sc: &LoadedScenario) -> Result<Option<ArmRuntime>, ScenarioError> {
    let Some(arm) = &sc.config.arm else {
        return Ok(None);
    };
    let model = match &arm.model {
        ArmSource::Inline(m) => m.clone(),
        ArmSource::Named(name) if name == "fixture" => ArmModel::fixture(),
        ArmSource::Named(path) => {
            let full = sc.resolve(path);
            let text = std::fs::read_to_string(&full).map_err(|e| ScenarioError::Io {
                path: full.clone(),
                message: e.to_string(),
            })?;
            serde_json::from_str(&text).map_err(|e| ScenarioError::Parse {
                line: e.line(),
                column: e.column(),
                msg: format!("{}: {e}", full.display()),
            })?
        }
    };
    let q_init = arm.q_init.clone().unwrap_or_else(|| model.home());
    if !model.within_limits(&q_init) {
        return Err(ScenarioError::Validation {
            field: "arm.q_init".into(),
            reason: "outside joint limits".into(),
        });
    }
    Ok(Some(ArmRuntime {
        model,
        q: q_init.clone(),
        q_init,
        ik: arm.ik,
    }))
}

/// The whole simulated world; `step` is its only physics mutator.
#[derive(Debug, Clone)]
pub struct Simulation {
    scenario: LoadedScenario,
    organ: OrganMesh,
    deformation: DeformationState,
    capsule: CapsuleState,
    initial_capsule: CapsuleState,
    magnets: Vec<MagnetState>,
    initial_magnets: Vec<MagnetState>,
    arm: Option<ArmRuntime>,
    rig: CameraRig,
    coverage: CoverageMap,
    last_coverage: f64,
    reward_sum: f64,
    step_index: u64,
    paused: bool,
    last_report: Option<StepReport>,
    wave_was_active: bool,
    mesh_dirty: bool,
    exec: Exec,
    logs: RunLogs,
}

impl Simulation {
    pub fn new(scenario: LoadedScenario, exec: Exec) -> Result<Self, ScenarioError> {
        scenario.config.validate()?;
        let cfg = &scenario.config;
        let organ = organ_from_config(&scenario)?;
        let arm = arm_from_config(&scenario)?;

        let capsule_pose = match cfg.initial_pose {
            Some(p) => p.into(),
            None => {
                let seg = &organ.segments()[0];
                let dir = tissue::segment_direction(seg)?;
                let rot = UnitQuaternion::rotation_between(&Vec3::z(), &dir)
                    .unwrap_or_else(|| UnitQuaternion::from_axis_angle(&Vec3::x_axis(), std::f64::consts::PI));
                pose(seg.start + dir * cfg.capsule.length, rot)
            }
        };
        let capsule = CapsuleState::at_rest(capsule_pose, cfg.capsule);

        let mut magnets = Vec::with_capacity(cfg.magnets.len());
        for m in &cfg.magnets {
            let pose = match (&arm, m.arm_mounted) {
                (Some(a), true) => a.model.forward_kinematics(&a.q)?,
                _ => m.pose.into(),
            };
            magnets.push(MagnetState {
                moment: m.moment,
                pose,
                arm_mounted: m.arm_mounted,
            });
        }

        let rig = match &cfg.camera.rig {
            RigConfig::Standard(kind) => CameraRig::standard(*kind, &cfg.capsule, cfg.camera.intrinsics),
            RigConfig::Custom(cams) => CameraRig::new(cams.clone())?,
        };
        let n = organ.mesh.vertex_count();
        let mut sim = Self {
            deformation: DeformationState::new(n, cfg.deformation),
            organ,
            capsule,
            initial_capsule: capsule,
            initial_magnets: magnets.clone(),
            magnets,
            arm,
            rig,
            coverage: CoverageMap::new(n),
            last_coverage: 0.0,
            reward_sum: 0.0,
            step_index: 0,
            paused: false,
            last_report: None,
            wave_was_active: false,
            mesh_dirty: false,
            exec,
            logs: RunLogs::default(),
            scenario,
        };
        sim.logs.coverage_csv.push_str(COVERAGE_HEADER);
        Ok(sim)
    }

    pub fn scenario(&self) -> &LoadedScenario {
        &self.scenario
    }

    pub fn organ(&self) -> &OrganMesh {
        &self.organ
    }

    pub fn capsule(&self) -> &CapsuleState {
        &self.capsule
    }

    pub fn magnets(&self) -> &[MagnetState] {
        &self.magnets
    }

    pub fn arm_q(&self) -> Option<&[f64]> {
        self.arm.as_ref().map(|a| a.q.as_slice())
    }

    pub fn rig(&self) -> &CameraRig {
        &self.rig
    }

    pub fn coverage(&self) -> &CoverageMap {
        &self.coverage
    }

    pub fn reward_sum(&self) -> f64 {
        self.reward_sum
    }

    pub fn logs(&self) -> &RunLogs {
        &self.logs
    }

    pub fn step_index(&self) -> u64 {
        self.step_index
    }

    pub fn is_paused(&self) -> bool {
        self.paused
    }

    /// Length of one step: the integrator dt, or the planner step time under
    /// the greedy controller.
    pub fn step_length(&self) -> f64 {
        match &self.scenario.config.controller {
            ControllerConfig::Greedy(g) => g.step_time,
            _ => self.scenario.config.dt,
        }
    }

    /// Simulated time, computed from the step counter so it carries no
    /// accumulated rounding.
    pub fn time(&self) -> f64 {
        self.step_index as f64 * self.step_length()
    }

    fn mmc(&self, t: f64) -> (MmcPhaseId, f64) {
        let p = &self.scenario.config.peristalsis;
        let (phase, strength) = tissue::mmc_phase(&p.schedule, t + p.time_offset);
        (phase, if p.enabled { strength } else { 0.0 })
    }

    pub fn dipoles(&self) -> Vec<MagneticDipole> {
        self.magnets.iter().map(MagnetState::dipole).collect()
    }

    /// Restores the initial state and clears the episode logs.
    pub fn reset(&mut self) {
        self.capsule = self.initial_capsule;
        self.magnets = self.initial_magnets.clone();
        if let Some(a) = &mut self.arm {
            a.q = a.q_init.clone();
        }
        self.deformation = DeformationState::new(self.organ.mesh.vertex_count(), self.scenario.config.deformation);
        let rest = self.organ.rest_positions().to_vec();
        self.organ.mesh.set_vertices(&rest);
        self.coverage = CoverageMap::new(self.organ.mesh.vertex_count());
        self.last_coverage = 0.0;
        self.reward_sum = 0.0;
        self.step_index = 0;
        self.last_report = None;
        self.wave_was_active = false;
        self.mesh_dirty = false;
        let commands = std::mem::take(&mut self.logs.commands);
        self.logs = RunLogs {
            commands,
            coverage_csv: COVERAGE_HEADER.to_string(),
            ..RunLogs::default()
        };
    }

    /// Applies an operator command between steps and appends it to the
    /// command log, whether or not it is accepted.
    pub fn apply_command(&mut self, cmd: &Command) -> CommandOutcome {
        let entry = LoggedCommand {
            step: self.step_index,
            command: cmd.clone(),
        };
        self.logs.commands.push_str(&serde_json::to_string(&entry).expect("command serialises"));
        self.logs.commands.push('\n');
        let outcome = self.execute(cmd);
        if let CommandOutcome::Rejected(reason) = &outcome {
            log::info!("command rejected: {reason}");
        }
        outcome
    }

    fn execute(&mut self, cmd: &Command) -> CommandOutcome {
        match cmd {
            Command::Pause => self.paused = true,
            Command::Resume => self.paused = false,
            Command::Reset => self.reset(),
            Command::SetRate { hz } => {
                if !(hz.is_finite() && *hz > 0.0) {
                    return CommandOutcome::Rejected(format!("rate {hz} Hz must be positive"));
                }
            }
            Command::MagnetDelta {
                magnet,
                dx,
                dy,
                dz,
                droll,
                dpitch,
                dyaw,
            } => {
                let lim = self.scenario.config.limits;
                let t = [*dx, *dy, *dz];
                let r = [*droll, *dpitch, *dyaw];
                if t.iter().chain(&r).any(|v| !v.is_finite()) {
                    return CommandOutcome::Rejected("non-finite delta".into());
                }
                if let Some(v) = t.iter().find(|v| v.abs() > lim.max_translation) {
                    return CommandOutcome::Rejected(format!(
                        "translation {v} m exceeds the {} m per-message limit",
                        lim.max_translation
                    ));
                }
                if let Some(v) = r.iter().find(|v| v.abs() > lim.max_rotation) {
                    return CommandOutcome::Rejected(format!(
                        "rotation {v} rad exceeds the {} rad per-message limit",
                        lim.max_rotation
                    ));
                }
                let Some(current) = self.magnets.get(*magnet).map(|m| m.pose) else {
                    return CommandOutcome::Rejected(format!("no magnet {magnet}"));
                };
                let mut target = current;
                target.translation.vector += Vec3::new(*dx, *dy, *dz);
                target.rotation = UnitQuaternion::from_euler_angles(*droll, *dpitch, *dyaw) * current.rotation;
                return self.move_magnet(*magnet, target);
            }
            Command::SetMagnetPose {
                magnet,
                position,
                orientation,
            } => {
                if *magnet >= self.magnets.len() {
                    return CommandOutcome::Rejected(format!("no magnet {magnet}"));
                }
                let [x, y, z, w] = orientation.unwrap_or([0.0, 0.0, 0.0, 1.0]);
                let q = Quaternion::new(w, x, y, z);
                if !(q.norm() > 0.0) || !position.iter().all(|v| v.is_finite()) {
                    return CommandOutcome::Rejected("invalid pose".into());
                }
                return self.move_magnet(*magnet, pose(*position, UnitQuaternion::new_normalize(q)));
            }
        }
        CommandOutcome::Applied
    }

    fn move_magnet(&mut self, index: usize, target: RigidTransform) -> CommandOutcome {
        let magnet = &mut self.magnets[index];
        if !magnet.arm_mounted {
            magnet.pose = target;
            return CommandOutcome::Applied;
        }
        let arm = self.arm.as_mut().expect("validated: arm-mounted magnet has an arm");
        match arm.model.inverse_kinematics(&target, &arm.q, &arm.ik) {
            Ok(sol) => {
                magnet.pose = arm.model.forward_kinematics(&sol.q).expect("7 joints");
                arm.q = sol.q;
                CommandOutcome::Applied
            }
            Err(e) => CommandOutcome::Rejected(e.to_string()),
        }
    }

    /// Marks what the cameras see now; appends a coverage row.
    pub fn update_coverage(&mut self) {
        let visible = sensing::visible_vertices(&self.organ.mesh, &self.capsule.pose, &self.rig, self.exec);
        self.record_coverage(&visible);
    }

    fn record_coverage(&mut self, visible: &[usize]) {
        self.coverage.mark(visible);
        let c = self.coverage.fraction();
        self.reward_sum += sensing::coverage_reward(c, self.last_coverage, REWARD_ALPHA);
        self.last_coverage = c;
        let _ = writeln!(
            self.logs.coverage_csv,
            "{},{},{},{}",
            self.time(),
            self.coverage.covered(),
            self.coverage.total(),
            c
        );
    }

    fn log_step(&mut self, report: Option<&StepReport>) {
        if !self.step_index.is_multiple_of(self.scenario.config.output.log_every) {
            return;
        }
        self.logs.trajectory.push_str(&tum_line(self.time(), &self.capsule.pose));
        if let Some(r) = report {
            self.logs.reports.push_str(&serde_json::to_string(r).expect("report serialises"));
            self.logs.reports.push('\n');
        }
    }

    /// One physics step. Does nothing while paused.
    pub fn step(&mut self) -> Result<Option<StepReport>, ScenarioError> {
        if self.paused {
            return Ok(None);
        }
        let cfg = &self.scenario.config;
        let (dt, t) = (cfg.dt, self.time());
        let (_, strength) = self.mmc(t);
        let dipoles = self.dipoles();
        let peri = &cfg.peristalsis;
        let world = World {
            organ: Some(&self.organ),
            magnets: &dipoles,
            friction: &cfg.friction,
            peristalsis: peri.enabled.then_some((&peri.params, strength)),
            params: &cfg.dynamics,
        };
        let report = dynamics::step(&mut self.capsule, &world, t, dt).map_err(|e| ScenarioError::Step {
            step: self.step_index,
            source: e.into(),
        })?;

        if report.wall_contact.is_some() || self.mesh_dirty || !self.deformation.is_at_rest() {
            tissue::deform_step(
                &mut self.deformation,
                self.organ.mesh.vertices(),
                report.wall_contact.as_ref(),
                dt,
                self.exec,
            )
            .map_err(|e| ScenarioError::Step {
                step: self.step_index,
                source: e.into(),
            })?;
            self.mesh_dirty = true;
        }
        let wave_active = peri.enabled && strength > 0.0 && peri.params.wave_amplitude > 0.0;
        if self.mesh_dirty || wave_active || self.wave_was_active {
            let wave = wave_active.then_some((&peri.params, t + dt, strength));
            let positions = tissue::deformed_positions(&self.organ, &self.deformation, wave, self.exec);
            self.organ.mesh.set_vertices(&positions);
            self.mesh_dirty = false;
        }
        self.wave_was_active = wave_active;

        self.step_index += 1;
        self.log_step(Some(&report));
        if self.step_index.is_multiple_of(self.scenario.config.camera.coverage_every) {
            self.update_coverage();
        }
        self.last_report = Some(report);
        Ok(Some(report))
    }

    /// One kinematic planner step. `None` when no action is admissible.
    pub fn greedy_step(&mut self, cfg: &GreedyConfig) -> Option<PlanChoice> {
        let actions = sensing::axis_actions(cfg.step);
        let choice = sensing::greedy_plan_step(&self.organ, &self.coverage, &self.capsule, &self.rig, &actions, self.exec)?;
        self.capsule.pose.translation.vector += actions[choice.action];
        self.capsule.velocity = Vec3::zeros();
        self.capsule.angular_velocity = Vec3::zeros();
        self.step_index += 1;
        self.record_coverage(&choice.visible);
        self.log_step(None);
        Some(choice)
    }

    pub fn state_frame(&self) -> StateFrame {
        let (mmc_phase, mmc_strength) = self.mmc(self.time());
        let r = self.last_report;
        StateFrame {
            step: self.step_index,
            t: self.time(),
            status: if self.paused { SimStatus::Paused } else { SimStatus::Running },
            capsule: self.capsule.pose.into(),
            velocity: self.capsule.velocity,
            angular_velocity: self.capsule.angular_velocity,
            coverage: self.coverage.fraction(),
            covered: self.coverage.covered(),
            total: self.coverage.total(),
            forces: r.map_or_else(ForceBreakdown::default, |r| r.forces),
            net_force: r.map_or_else(Vec3::zeros, |r| r.net_force),
            contact: r.is_some_and(|r| r.contact),
            penetration: r.map_or(0.0, |r| r.penetration),
            magnets: self.magnets.iter().map(|m| m.pose.into()).collect(),
            arm_q: self.arm.as_ref().map(|a| a.q.clone()),
            mmc_phase,
            mmc_strength,
        }
    }
}
