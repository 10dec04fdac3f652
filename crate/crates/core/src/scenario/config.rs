use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::command::{CommandLimits, TimedCommand};
use super::ScenarioError;
use crate::arm::{ArmModel, IkOptions};
use crate::dynamics::{CapsuleParams, DynamicsParams};
use crate::friction::FrictionParams;
use crate::geometry::{PoseSpec, Vec3};
use crate::sensing::{CameraIntrinsics, CameraMount, RigKind};
use crate::tissue::{DeformationParams, MmcSchedule, PeristalsisParams};

/// Mesh strings with this prefix name a built-in organ instead of a file.
pub const FIXTURE_PREFIX: &str = "fixture:";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// OBJ/PLY path or `fixture:tube`, `fixture:bent_tube`, `fixture:stomach`.
    pub mesh: String,
    /// JSON list of `{start, end[, vertex_ids]}` centerline segments.
    #[serde(default)]
    pub segments: Option<String>,
    #[serde(default)]
    pub capsule: CapsuleParams,
    /// Defaults to one capsule length along the first segment, axis aligned
    /// with it.
    #[serde(default)]
    pub initial_pose: Option<PoseSpec>,
    #[serde(default)]
    pub magnets: Vec<MagnetConfig>,
    #[serde(default)]
    pub arm: Option<ArmConfig>,
    #[serde(default)]
    pub friction: FrictionParams,
    #[serde(default)]
    pub deformation: DeformationParams,
    #[serde(default)]
    pub peristalsis: PeristalsisConfig,
    #[serde(default)]
    pub camera: CameraConfig,
    #[serde(default)]
    pub dynamics: DynamicsParams,
    /// Integrator step, s.
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Episode length, s.
    #[serde(default = "default_duration")]
    pub duration: f64,
    /// Seeds stochastic extras only; the physics is seed-free.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub controller: ControllerConfig,
    #[serde(default)]
    pub limits: CommandLimits,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_dt() -> f64 {
    1e-3
}

fn default_duration() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MagnetConfig {
    /// Moment in the magnet's own frame, A·m².
    #[serde(default = "default_actuator_moment")]
    pub moment: Vec3,
    /// Ignored when `arm_mounted`; the pose then follows the arm.
    #[serde(default)]
    pub pose: PoseSpec,
    #[serde(default)]
    pub arm_mounted: bool,
}

fn default_actuator_moment() -> Vec3 {
    Vec3::new(0.0, 0.0, 10.0)
}

/// Arm description: `"fixture"`, a JSON file path, or an inline table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ArmSource {
    Named(String),
    Inline(ArmModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmConfig {
    pub model: ArmSource,
    /// Initial joint angles; mid-range when absent.
    #[serde(default)]
    pub q_init: Option<Vec<f64>>,
    #[serde(default)]
    pub ik: IkOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PeristalsisConfig {
    pub enabled: bool,
    pub params: PeristalsisParams,
    pub schedule: MmcSchedule,
    /// Added to simulation time when looking up the MMC phase, s.
    pub time_offset: f64,
}

impl Default for PeristalsisConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            params: PeristalsisParams::default(),
            schedule: MmcSchedule::default(),
            time_offset: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RigConfig {
    Standard(RigKind),
    Custom(Vec<CameraMount>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraConfig {
    pub rig: RigConfig,
    /// Used by the standard rigs.
    pub intrinsics: CameraIntrinsics,
    /// Coverage is refreshed every this many physics steps.
    pub coverage_every: u64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            rig: RigConfig::Standard(RigKind::Dual),
            intrinsics: CameraIntrinsics::default(),
            coverage_every: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GreedyConfig {
    /// Translation per action, m.
    pub step: f64,
    pub max_steps: u64,
    /// Simulated time per planner step, s.
    pub step_time: f64,
    /// Stop once coverage reaches this fraction.
    pub target: f64,
}

impl Default for GreedyConfig {
    fn default() -> Self {
        Self {
            step: 0.005,
            max_steps: 2000,
            step_time: 0.025,
            target: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControllerConfig {
    /// Commands applied before the first step starting at or after `t`.
    Scripted {
        #[serde(default)]
        commands: Vec<TimedCommand>,
    },
    /// Kinematic one-step-lookahead coverage planner.
    Greedy(GreedyConfig),
    /// Replay of a recorded teleoperation command log (JSON lines).
    Teleop { command_log: String },
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig::Scripted { commands: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: String,
    pub trajectory: String,
    pub coverage: String,
    pub reports: String,
    pub record: String,
    /// Trajectory and step-report lines are written every this many steps.
    pub log_every: u64,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: "out".into(),
            trajectory: "trajectory.txt".into(),
            coverage: "coverage.csv".into(),
            reports: "steps.jsonl".into(),
            record: "record.json".into(),
            log_every: 1,
        }
    }
}

fn invalid(field: &str, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation {
        field: field.into(),
        reason: reason.into(),
    }
}

fn finite(field: &str, v: &Vec3) -> Result<(), ScenarioError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(invalid(field, "must be finite"))
    }
}

impl ScenarioConfig {
    pub fn minimal(mesh: impl Into<String>) -> Self {
        serde_json::from_value(serde_json::json!({ "mesh": mesh.into() })).expect("defaults are valid")
    }

    /// Parses and validates without touching the file system.
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let cfg: ScenarioConfig = serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
            line: e.line(),
            column: e.column(),
            msg: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// SHA-256 of the canonical (key-sorted, compact) JSON form.
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serialises");
        let digest = Sha256::digest(value.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn steps(&self) -> u64 {
        (self.duration / self.dt + 1e-9).floor() as u64
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.mesh.is_empty() {
            return Err(invalid("mesh", "must not be empty"));
        }
        if let Some(name) = self.mesh.strip_prefix(FIXTURE_PREFIX) {
            if !["tube", "bent_tube", "stomach"].contains(&name) {
                return Err(invalid("mesh", format!("unknown fixture {name:?}")));
            }
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(invalid("dt", "must be positive"));
        }
        if self.dt > self.dynamics.dt_max {
            return Err(invalid("dt", format!("exceeds dynamics.dt_max = {}", self.dynamics.dt_max)));
        }
        if !(self.duration >= 0.0) || !self.duration.is_finite() {
            return Err(invalid("duration", "must be non-negative"));
        }
        let c = &self.capsule;
        if !(c.mass > 0.0) {
            return Err(invalid("capsule.mass", "must be positive"));
        }
        if !c.inertia.iter().all(|&i| i > 0.0) {
            return Err(invalid("capsule.inertia", "must be positive"));
        }
        if !(c.radius > 0.0 && c.length >= 2.0 * c.radius) {
            return Err(invalid("capsule.length", "must be at least twice the radius"));
        }
        finite("capsule.dipole", &c.dipole)?;
        for (i, m) in self.magnets.iter().enumerate() {
            finite(&format!("magnets[{i}].moment"), &m.moment)?;
            finite(&format!("magnets[{i}].pose"), &m.pose.position)?;
            if m.arm_mounted && self.arm.is_none() {
                return Err(invalid(&format!("magnets[{i}].arm_mounted"), "requires an arm section"));
            }
        }
        if self.magnets.iter().filter(|m| m.arm_mounted).count() > 1 {
            return Err(invalid("magnets", "at most one magnet can be arm-mounted"));
        }
        if let Some(arm) = &self.arm {
            if let Some(q) = &arm.q_init {
                if q.len() != crate::arm::JOINTS {
                    return Err(invalid("arm.q_init", "needs 7 joint angles"));
                }
            }
        }
        let d = &self.deformation;
        if d.spring < 0.0 || d.damping < 0.0 || d.radius < 0.0 || !(d.max_displacement > 0.0) {
            return Err(invalid("deformation", "parameters must be non-negative"));
        }
        let p = &self.peristalsis.params;
        if p.alpha < 0.0 || p.beta < 0.0 {
            return Err(invalid("peristalsis.params", "alpha and beta must be non-negative"));
        }
        if self.camera.coverage_every == 0 {
            return Err(invalid("camera.coverage_every", "must be at least 1"));
        }
        if self.output.log_every == 0 {
            return Err(invalid("output.log_every", "must be at least 1"));
        }
        if let ControllerConfig::Greedy(g) = &self.controller {
            if !(g.step > 0.0 && g.step_time > 0.0) {
                return Err(invalid("controller.step", "step and step_time must be positive"));
            }
        }
        Ok(())
    }
}

/// A validated config together with the directory relative paths resolve
/// against.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedScenario {
    pub config: ScenarioConfig,
    pub base_dir: PathBuf,
}

impl LoadedScenario {
    pub fn in_dir(config: ScenarioConfig, base_dir: impl Into<PathBuf>) -> Self {
        Self {
            config,
            base_dir: base_dir.into(),
        }
    }

    pub fn resolve(&self, path: &str) -> PathBuf {
        let p = Path::new(path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_path(&self, file: &str) -> PathBuf {
        self.resolve(&self.config.output.dir).join(file)
    }

    fn require(&self, field: &str, path: &str) -> Result<(), ScenarioError> {
        let full = self.resolve(path);
        if full.is_file() {
            Ok(())
        } else {
            Err(ScenarioError::MissingFile {
                field: field.into(),
                path: full,
            })
        }
    }

    /// Every referenced input file must exist.
    pub fn check_files(&self) -> Result<(), ScenarioError> {
        let c = &self.config;
        if !c.mesh.starts_with(FIXTURE_PREFIX) {
            self.require("mesh", &c.mesh)?;
        }
        if let Some(s) = &c.segments {
            self.require("segments", s)?;
        }
        if let Some(ArmConfig {
            model: ArmSource::Named(name),
            ..
        }) = &c.arm
        {
            if name != "fixture" {
                self.require("arm.model", name)?;
            }
        }
        if let ControllerConfig::Teleop { command_log } = &c.controller {
            self.require("controller.command_log", command_log)?;
        }
        Ok(())
    }
}

/// Reads, validates and checks the files referenced by a scenario.
pub fn load_scenario(path: &Path) -> Result<LoadedScenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => ScenarioError::MissingFile {
            field: "config".into(),
            path: path.to_path_buf(),
        },
        _ => ScenarioError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        },
    })?;
    let config = ScenarioConfig::from_json(&text)?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let loaded = LoadedScenario { config, base_dir };
    loaded.check_files()?;
    Ok(loaded)
}
