use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::command::{parse_command_log, LoggedCommand, TimedCommand};
use super::config::{ControllerConfig, LoadedScenario};
use super::sim::Simulation;
use super::ScenarioError;
use crate::exec::Exec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Ran for the configured episode length.
    EpisodeEnd,
    TargetCoverage,
    MaxSteps,
    NoAdmissibleAction,
    /// Paused with no further command to resume it.
    Paused,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub controller: String,
    pub trajectory_path: PathBuf,
    pub coverage_path: PathBuf,
    pub reports_path: PathBuf,
    pub wall_clock_s: f64,
    pub steps: u64,
    pub final_time: f64,
    pub stop_reason: StopReason,
    pub coverage_initial: f64,
    pub coverage_final: f64,
    pub reward_sum: f64,
}

fn controller_name(c: &ControllerConfig) -> &'static str {
    match c {
        ControllerConfig::Scripted { .. } => "scripted",
        ControllerConfig::Greedy(_) => "greedy",
        ControllerConfig::Teleop { .. } => "teleop",
    }
}

fn run_scripted(sim: &mut Simulation, commands: &[TimedCommand]) -> Result<StopReason, ScenarioError> {
    let mut pending: Vec<&TimedCommand> = commands.iter().collect();
    pending.sort_by(|a, b| a.t.total_cmp(&b.t));
    let mut next = 0;
    let steps = sim.scenario().config.steps();
    let eps = 1e-9 * sim.step_length();
    while sim.step_index() < steps {
        let t = sim.time();
        while next < pending.len() && pending[next].t <= t + eps {
            sim.apply_command(&pending[next].command);
            next += 1;
        }
        // Scripted time only moves with steps, so a pause consumes the
        // following commands immediately until one resumes.
        while sim.is_paused() {
            let Some(c) = pending.get(next) else {
                return Ok(StopReason::Paused);
            };
            sim.apply_command(&c.command);
            next += 1;
        }
        sim.step()?;
    }
    Ok(StopReason::EpisodeEnd)
}

fn run_greedy(sim: &mut Simulation) -> StopReason {
    let ControllerConfig::Greedy(g) = sim.scenario().config.controller.clone() else {
        unreachable!("called for the greedy controller");
    };
    loop {
        if sim.coverage().fraction() >= g.target {
            return StopReason::TargetCoverage;
        }
        if sim.step_index() >= g.max_steps {
            return StopReason::MaxSteps;
        }
        if sim.greedy_step(&g).is_none() {
            return StopReason::NoAdmissibleAction;
        }
    }
}

/// Re-applies a recorded command log: entries are applied before the step
/// whose index they were logged at, in log order, then the episode runs to
/// its end.
pub fn replay(sim: &mut Simulation, log: &[LoggedCommand]) -> Result<StopReason, ScenarioError> {
    let steps = sim.scenario().config.steps();
    let mut next = 0;
    loop {
        while next < log.len() && log[next].step == sim.step_index() {
            sim.apply_command(&log[next].command);
            next += 1;
        }
        if sim.is_paused() || sim.step_index() >= steps {
            match log.get(next) {
                None if sim.is_paused() => return Ok(StopReason::Paused),
                None => return Ok(StopReason::EpisodeEnd),
                Some(e) => {
                    return Err(ScenarioError::CommandLog {
                        line: next + 1,
                        msg: format!(
                            "entry for step {} unreachable: simulation is idle at step {}",
                            e.step,
                            sim.step_index()
                        ),
                    })
                }
            }
        }
        if let Some(e) = log.get(next) {
            if e.step < sim.step_index() {
                return Err(ScenarioError::CommandLog {
                    line: next + 1,
                    msg: format!("entry for step {} is behind step {}", e.step, sim.step_index()),
                });
            }
        }
        sim.step()?;
    }
}

fn read_command_log(path: &Path) -> Result<Vec<LoggedCommand>, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    parse_command_log(&text).map_err(|(line, e)| ScenarioError::CommandLog {
        line,
        msg: e.to_string(),
    })
}

/// Runs the configured controller to completion in memory.
pub fn run_episode(sim: &mut Simulation) -> Result<StopReason, ScenarioError> {
    match sim.scenario().config.controller.clone() {
        ControllerConfig::Scripted { commands } => run_scripted(sim, &commands),
        ControllerConfig::Greedy(_) => Ok(run_greedy(sim)),
        ControllerConfig::Teleop { command_log } => {
            let log = read_command_log(&sim.scenario().resolve(&command_log))?;
            replay(sim, &log)
        }
    }
}

fn write(path: &Path, text: &str) -> Result<(), ScenarioError> {
    std::fs::write(path, text).map_err(|e| ScenarioError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Writes the trajectory, coverage CSV, step reports and `record` itself into
/// the output directory.
pub fn write_outputs(sim: &Simulation, record: &RunRecord) -> Result<PathBuf, ScenarioError> {
    let sc = sim.scenario();
    let dir = sc.resolve(&sc.config.output.dir);
    std::fs::create_dir_all(&dir).map_err(|e| ScenarioError::Io {
        path: dir.clone(),
        message: e.to_string(),
    })?;
    let logs = sim.logs();
    write(&record.trajectory_path, &logs.trajectory)?;
    write(&record.coverage_path, &logs.coverage_csv)?;
    write(&record.reports_path, &logs.reports)?;
    let record_path = sc.output_path(&sc.config.output.record);
    let json = serde_json::to_string_pretty(record).expect("record serialises");
    write(&record_path, &(json + "\n"))?;
    Ok(record_path)
}

/// Builds the world, runs the configured controller and writes all outputs.
pub fn run_simulation(scenario: &LoadedScenario, exec: Exec) -> Result<RunRecord, ScenarioError> {
    let start = Instant::now();
    let mut sim = Simulation::new(scenario.clone(), exec)?;
    let coverage_initial = sim.coverage().fraction();
    let stop_reason = run_episode(&mut sim)?;
    let cfg = &scenario.config;
    let record = RunRecord {
        config_hash: cfg.hash(),
        controller: controller_name(&cfg.controller).into(),
        trajectory_path: scenario.output_path(&cfg.output.trajectory),
        coverage_path: scenario.output_path(&cfg.output.coverage),
        reports_path: scenario.output_path(&cfg.output.reports),
        wall_clock_s: start.elapsed().as_secs_f64(),
        steps: sim.step_index(),
        final_time: sim.time(),
        stop_reason,
        coverage_initial,
        coverage_final: sim.coverage().fraction(),
        reward_sum: sim.reward_sum(),
    };
    write_outputs(&sim, &record)?;
    log::info!(
        "{} run: {} steps, C = {:.4}, {:?}",
        record.controller,
        record.steps,
        record.coverage_final,
        stop_reason
    );
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::command::Command;
    use crate::scenario::config::ScenarioConfig;

    fn scenario(dir: &Path, json: serde_json::Value) -> LoadedScenario {
        let cfg = ScenarioConfig::from_json(&json.to_string()).unwrap();
        LoadedScenario::in_dir(cfg, dir)
    }

    #[test]
    fn zero_length_episode() {
        let tmp = tempfile::tempdir().unwrap();
        let sc = scenario(tmp.path(), serde_json::json!({"mesh": "fixture:tube", "duration": 0.0}));
        let rec = run_simulation(&sc, Exec::default()).unwrap();
        assert_eq!(rec.steps, 0);
        assert_eq!(std::fs::read_to_string(&rec.trajectory_path).unwrap(), "");
        assert_eq!(std::fs::read_to_string(&rec.reports_path).unwrap(), "");
        assert_eq!(std::fs::read_to_string(&rec.coverage_path).unwrap(), "t,covered_count,total,C\n");
        let text = std::fs::read_to_string(tmp.path().join("out/record.json")).unwrap();
        let back: RunRecord = serde_json::from_str(&text).unwrap();
        assert_eq!(back.config_hash, sc.config.hash());
    }

    #[test]
    fn scripted_commands_apply_at_their_time() {
        let tmp = tempfile::tempdir().unwrap();
        let sc = scenario(
            tmp.path(),
            serde_json::json!({
                "mesh": "fixture:tube",
                "duration": 0.01,
                "magnets": [{"pose": {"position": [0.0, 0.0, 0.2]}}],
                "controller": {"type": "scripted", "commands": [
                    {"t": 0.005, "command": {"cmd": "magnet_delta", "dz": -0.001}},
                    {"t": 0.0, "command": {"cmd": "magnet_delta", "dx": 0.001}},
                ]},
            }),
        );
        let mut sim = Simulation::new(sc, Exec::default()).unwrap();
        assert_eq!(run_episode(&mut sim).unwrap(), StopReason::EpisodeEnd);
        let log = parse_command_log(&sim.logs().commands).unwrap();
        assert_eq!(log.iter().map(|e| e.step).collect::<Vec<_>>(), vec![0, 5]);
        let p = sim.magnets()[0].pose.translation.vector;
        assert!((p - crate::geometry::Vec3::new(0.001, 0.0, 0.199)).norm() < 1e-15);
    }

    #[test]
    fn scripted_pause_without_resume_stops() {
        let tmp = tempfile::tempdir().unwrap();
        let sc = scenario(
            tmp.path(),
            serde_json::json!({
                "mesh": "fixture:tube",
                "duration": 0.01,
                "controller": {"type": "scripted", "commands": [{"t": 0.003, "command": {"cmd": "pause"}}]},
            }),
        );
        let mut sim = Simulation::new(sc, Exec::default()).unwrap();
        assert_eq!(run_episode(&mut sim).unwrap(), StopReason::Paused);
        assert_eq!(sim.step_index(), 3);
    }

    #[test]
    fn replay_reproduces_interactive_session() {
        let tmp = tempfile::tempdir().unwrap();
        let sc = scenario(
            tmp.path(),
            serde_json::json!({
                "mesh": "fixture:tube",
                "duration": 0.05,
                "magnets": [{"pose": {"position": [0.0, 0.0, 0.15]}}],
            }),
        );
        let mut live = Simulation::new(sc.clone(), Exec::default()).unwrap();
        for k in 0..50 {
            if k == 7 {
                live.apply_command(&Command::delta(0.002, 0.0, -0.003));
            }
            if k == 20 {
                live.apply_command(&Command::Pause);
                live.apply_command(&Command::delta(0.0, 0.001, 0.0));
                live.apply_command(&Command::Resume);
            }
            if k == 30 {
                live.apply_command(&Command::Reset);
            }
            live.step().unwrap();
        }
        while live.step_index() < sc.config.steps() {
            live.step().unwrap();
        }
        let log = parse_command_log(&live.logs().commands).unwrap();
        let mut again = Simulation::new(sc, Exec::default()).unwrap();
        assert_eq!(replay(&mut again, &log).unwrap(), StopReason::EpisodeEnd);
        assert_eq!(again.logs().trajectory, live.logs().trajectory);
        assert_eq!(again.logs().commands, live.logs().commands);
    }

    #[test]
    fn replay_rejects_unreachable_entries() {
        let tmp = tempfile::tempdir().unwrap();
        let sc = scenario(tmp.path(), serde_json::json!({"mesh": "fixture:tube", "duration": 0.002}));
        let mut sim = Simulation::new(sc, Exec::default()).unwrap();
        let log = vec![LoggedCommand {
            step: 10,
            command: Command::Pause,
        }];
        assert!(matches!(replay(&mut sim, &log), Err(ScenarioError::CommandLog { line: 1, .. })));
    }
}
