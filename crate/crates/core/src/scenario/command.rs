use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;

/// Operator command, shared by scripted runs, the live service and replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case", deny_unknown_fields)]
pub enum Command {
    /// Relative magnet motion in the world frame: metres and radians
    /// (roll about x, pitch about y, yaw about z).
    MagnetDelta {
        #[serde(default)]
        magnet: usize,
        #[serde(default)]
        dx: f64,
        #[serde(default)]
        dy: f64,
        #[serde(default)]
        dz: f64,
        #[serde(default)]
        droll: f64,
        #[serde(default)]
        dpitch: f64,
        #[serde(default)]
        dyaw: f64,
    },
    SetMagnetPose {
        #[serde(default)]
        magnet: usize,
        position: Vec3,
        /// `[x, y, z, w]`; identity when absent.
        #[serde(default)]
        orientation: Option<[f64; 4]>,
    },
    Pause,
    Resume,
    Reset,
    /// State broadcast rate of the live service, Hz.
    SetRate { hz: f64 },
}

impl Command {
    pub fn delta(dx: f64, dy: f64, dz: f64) -> Self {
        Command::MagnetDelta {
            magnet: 0,
            dx,
            dy,
            dz,
            droll: 0.0,
            dpitch: 0.0,
            dyaw: 0.0,
        }
    }
}

/// Per-message bounds on `magnet_delta`, checked per component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CommandLimits {
    /// m
    pub max_translation: f64,
    /// rad
    pub max_rotation: f64,
}

impl Default for CommandLimits {
    fn default() -> Self {
        Self {
            max_translation: 0.005,
            max_rotation: 0.1,
        }
    }
}

/// Scripted command applied before the first step starting at or after `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimedCommand {
    pub t: f64,
    pub command: Command,
}

/// One command-log line: the step counter when the command was applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoggedCommand {
    pub step: u64,
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CommandOutcome {
    Applied,
    Rejected(String),
}

/// Parses a JSON-lines command log; blank lines are skipped.
pub fn parse_command_log(text: &str) -> Result<Vec<LoggedCommand>, (usize, serde_json::Error)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| (i + 1, e)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_format() {
        let c: Command = serde_json::from_str(r#"{"cmd":"magnet_delta","dx":0.001}"#).unwrap();
        assert_eq!(c, Command::delta(0.001, 0.0, 0.0));
        let p: Command = serde_json::from_str(r#"{"cmd":"pause"}"#).unwrap();
        assert_eq!(p, Command::Pause);
        let r: Command = serde_json::from_str(r#"{"cmd":"set_rate","hz":30}"#).unwrap();
        assert_eq!(r, Command::SetRate { hz: 30.0 });
        assert!(serde_json::from_str::<Command>(r#"{"cmd":"warp"}"#).is_err());
        assert!(serde_json::from_str::<Command>(r#"{"cmd":"magnet_delta","dq":1}"#).is_err());
        let s = serde_json::to_string(&Command::Reset).unwrap();
        assert_eq!(s, r#"{"cmd":"reset"}"#);
    }

    #[test]
    fn log_round_trip() {
        let entries = vec![
            LoggedCommand { step: 0, command: Command::delta(0.0, 0.001, 0.0) },
            LoggedCommand { step: 12, command: Command::Pause },
        ];
        let text: String = entries.iter().map(|e| serde_json::to_string(e).unwrap() + "\n").collect();
        assert_eq!(parse_command_log(&format!("{text}\n")).unwrap(), entries);
        assert_eq!(parse_command_log("{}\n").unwrap_err().0, 1);
    }
}
