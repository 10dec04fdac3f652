//! The simulation thread: the only owner of the [`Simulation`].

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use capsim_core::scenario::{Command, CommandOutcome, LoggedCommand, Simulation};
use tokio::sync::{broadcast, mpsc, watch};

use crate::queue::DropOldest;
use crate::wire::ServerMessage;

pub const MIN_RATE_HZ: f64 = 10.0;
pub const MAX_RATE_HZ: f64 = 100.0;

pub type ClientId = u64;

#[derive(Debug)]
pub struct Inbound {
    pub client: ClientId,
    pub command: Command,
}

/// Logs published for the HTTP endpoints at every broadcast tick.
#[derive(Debug, Clone, Default)]
pub struct Snapshot {
    pub coverage_csv: Arc<str>,
    pub trajectory: Arc<str>,
}

/// Per-client channels for messages addressed to one client only.
pub type Direct = Arc<Mutex<HashMap<ClientId, mpsc::UnboundedSender<String>>>>;

pub struct Stepper {
    pub sim: Simulation,
    pub queue: Arc<DropOldest<Inbound>>,
    pub frames: broadcast::Sender<Arc<str>>,
    pub direct: Direct,
    pub snapshot: watch::Sender<Snapshot>,
    pub stop: Arc<AtomicBool>,
    pub steps_per_second: f64,
    pub rate_hz: f64,
    pub command_log: Option<BufWriter<File>>,
}

fn clamp_rate(hz: f64) -> f64 {
    hz.clamp(MIN_RATE_HZ, MAX_RATE_HZ)
}

impl Stepper {
    fn reply(&self, client: ClientId, msg: &ServerMessage) {
        if let Some(tx) = self.direct.lock().expect("client map").get(&client) {
            let _ = tx.send(msg.to_json());
        }
    }

    fn publish(&self) {
        let frame: Arc<str> = ServerMessage::State(self.sim.state_frame()).to_json().into();
        let _ = self.frames.send(frame);
        let logs = self.sim.logs();
        self.snapshot.send_replace(Snapshot {
            coverage_csv: logs.coverage_csv.as_str().into(),
            trajectory: logs.trajectory.as_str().into(),
        });
    }

    fn apply(&mut self, client: Option<ClientId>, command: &Command) {
        if let Some(log) = &mut self.command_log {
            let entry = LoggedCommand {
                step: self.sim.step_index(),
                command: command.clone(),
            };
            let line = serde_json::to_string(&entry).expect("command serialises");
            if let Err(e) = writeln!(log, "{line}").and_then(|_| log.flush()) {
                log::error!("command log: {e}");
            }
        }
        let outcome = self.sim.apply_command(command);
        match (outcome, client) {
            (CommandOutcome::Rejected(reason), Some(c)) => self.reply(c, &ServerMessage::error(reason)),
            (CommandOutcome::Applied, _) => {
                if let Command::SetRate { hz } = command {
                    self.rate_hz = clamp_rate(*hz);
                }
            }
            _ => {}
        }
    }

    /// Runs until `stop` is set and hands the simulation back.
    pub fn run(mut self) -> Simulation {
        let steps = self.sim.scenario().config.steps();
        let step_period = Duration::from_secs_f64(1.0 / self.steps_per_second);
        let mut next_step = Instant::now();
        let mut next_frame = Instant::now();
        while !self.stop.load(Ordering::Acquire) {
            for inbound in self.queue.drain() {
                self.apply(Some(inbound.client), &inbound.command);
            }

            let now = Instant::now();
            if self.sim.is_paused() || self.sim.step_index() >= steps {
                next_step = now;
            } else if now >= next_step {
                if let Err(e) = self.sim.step() {
                    log::error!("{e}");
                    let _ = self.frames.send(ServerMessage::error(e.to_string()).to_json().into());
                    self.apply(None, &Command::Pause);
                }
                next_step += step_period;
                // Fall behind by at most a quarter second rather than burst.
                if now.saturating_duration_since(next_step) > Duration::from_millis(250) {
                    next_step = now;
                }
            }
            if self.sim.step_index() >= steps && !self.sim.is_paused() {
                self.apply(None, &Command::Pause);
            }

            let now = Instant::now();
            if now >= next_frame {
                self.publish();
                next_frame = now + Duration::from_secs_f64(1.0 / self.rate_hz);
            }
            let wake = if self.sim.is_paused() || self.sim.step_index() >= steps {
                next_frame
            } else {
                next_step.min(next_frame)
            };
            let idle = wake.saturating_duration_since(Instant::now());
            if !idle.is_zero() {
                self.queue.wait(idle);
            }
        }
        self.publish();
        self.sim
    }
}
