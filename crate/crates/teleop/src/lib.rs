//! Live teleoperation service: one simulation thread, a WebSocket for state
//! frames and commands, and HTTP endpoints for the scenario and logs.
//!
//! Routes:
//! - `GET /ws`: `{"type":"state",...}` frames out, `{"type":"cmd",...}` in,
//!   `{"type":"error","reason":...}` to the sender of a bad or rejected command.
//! - `GET /scenario`: the active scenario config as JSON.
//! - `GET /coverage`: coverage CSV so far.
//! - `GET /trajectory`: TUM trajectory log so far.

mod queue;
mod stepper;
pub mod wire;

use std::collections::HashMap;
use std::fs::File;
use std::io::BufWriter;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::http::header;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use capsim_core::scenario::{write_outputs, LoadedScenario, RunRecord, ScenarioError, Simulation, StopReason};
use capsim_core::Exec;
use futures::{SinkExt, StreamExt};
use thiserror::Error;
use tokio::sync::{broadcast, mpsc, oneshot, watch};

pub use queue::DropOldest;
pub use stepper::{MAX_RATE_HZ, MIN_RATE_HZ};
use stepper::{ClientId, Direct, Inbound, Snapshot, Stepper};
use wire::{parse_client_message, ClientMessage, ServerMessage};

#[derive(Debug, Error)]
pub enum TeleopError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("server: {0}")]
    Server(std::io::Error),
    #[error("simulation thread panicked")]
    Stepper,
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub bind: SocketAddr,
    /// Simulation steps per wall-clock second; `None` runs in real time
    /// (`1 / dt`).
    pub steps_per_second: Option<f64>,
    /// Initial state broadcast rate, clamped to 10..=100 Hz.
    pub rate_hz: f64,
    pub queue_capacity: usize,
    /// JSONL command log; defaults to `commands.jsonl` in the output dir.
    pub command_log: Option<PathBuf>,
    /// Write trajectory, coverage, step reports and record on shutdown.
    pub write_outputs: bool,
    pub exec: Exec,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], 8765)),
            steps_per_second: None,
            rate_hz: 20.0,
            queue_capacity: 256,
            command_log: None,
            write_outputs: true,
            exec: Exec::default(),
        }
    }
}

#[derive(Clone)]
struct AppState {
    scenario_json: Arc<str>,
    queue: Arc<DropOldest<Inbound>>,
    frames: broadcast::Sender<Arc<str>>,
    direct: Direct,
    snapshot: watch::Receiver<Snapshot>,
    next_client: Arc<AtomicU64>,
}

/// A running service. Dropping it without [`Session::shutdown`] leaves the
/// threads running until the process exits.
pub struct Session {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    queue: Arc<DropOldest<Inbound>>,
    shutdown_tx: oneshot::Sender<()>,
    server: tokio::task::JoinHandle<std::io::Result<()>>,
    stepper: std::thread::JoinHandle<Simulation>,
    command_log: PathBuf,
    write_outputs: bool,
    started: Instant,
}

/// What a session leaves behind.
#[derive(Debug)]
pub struct SessionSummary {
    pub simulation: Simulation,
    pub command_log: PathBuf,
    pub record: Option<RunRecord>,
}

/// Builds the world, binds `opts.bind` and starts serving.
pub async fn start(scenario: LoadedScenario, opts: ServeOptions) -> Result<Session, TeleopError> {
    let sim = Simulation::new(scenario.clone(), opts.exec)?;
    let listener = tokio::net::TcpListener::bind(opts.bind)
        .await
        .map_err(|source| TeleopError::Bind { addr: opts.bind, source })?;
    let addr = listener.local_addr().map_err(TeleopError::Server)?;

    let command_log = opts
        .command_log
        .clone()
        .unwrap_or_else(|| scenario.output_path("commands.jsonl"));
    if let Some(dir) = command_log.parent() {
        std::fs::create_dir_all(dir).map_err(|source| TeleopError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    let log_file = File::create(&command_log).map_err(|source| TeleopError::Io {
        path: command_log.clone(),
        source,
    })?;

    let queue = Arc::new(DropOldest::new(opts.queue_capacity.max(1)));
    let (frames, _) = broadcast::channel(64);
    let direct: Direct = Arc::new(Mutex::new(HashMap::new()));
    let (snapshot_tx, snapshot_rx) = watch::channel(Snapshot::default());
    let stop = Arc::new(AtomicBool::new(false));

    let steps_per_second = opts
        .steps_per_second
        .filter(|s| s.is_finite() && *s > 0.0)
        .unwrap_or(1.0 / scenario.config.dt);
    let stepper = Stepper {
        sim,
        queue: queue.clone(),
        frames: frames.clone(),
        direct: direct.clone(),
        snapshot: snapshot_tx,
        stop: stop.clone(),
        steps_per_second,
        rate_hz: opts.rate_hz.clamp(MIN_RATE_HZ, MAX_RATE_HZ),
        command_log: Some(BufWriter::new(log_file)),
    };
    let stepper = std::thread::Builder::new()
        .name("capsim-stepper".into())
        .spawn(move || stepper.run())
        .map_err(TeleopError::Server)?;

    let app = AppState {
        scenario_json: scenario.config.to_json().into(),
        queue: queue.clone(),
        frames,
        direct,
        snapshot: snapshot_rx,
        next_client: Arc::new(AtomicU64::new(0)),
    };
    let router = Router::new()
        .route("/ws", get(ws_upgrade))
        .route("/scenario", get(get_scenario))
        .route("/coverage", get(get_coverage))
        .route("/trajectory", get(get_trajectory))
        .with_state(app);
    let (shutdown_tx, shutdown_rx) = oneshot::channel::<()>();
    let server = tokio::spawn(async move {
        axum::serve(listener, router)
            .with_graceful_shutdown(async {
                let _ = shutdown_rx.await;
            })
            .await
    });
    log::info!("serving on {addr}, {steps_per_second} steps/s, command log {}", command_log.display());
    Ok(Session {
        addr,
        stop,
        queue,
        shutdown_tx,
        server,
        stepper,
        command_log,
        write_outputs: opts.write_outputs,
        started: Instant::now(),
    })
}

impl Session {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops the server and the simulation thread, then writes outputs.
    pub async fn shutdown(self) -> Result<SessionSummary, TeleopError> {
        let _ = self.shutdown_tx.send(());
        self.stop.store(true, Ordering::Release);
        self.queue.wake();
        let stepper = self.stepper;
        let simulation = tokio::task::spawn_blocking(move || stepper.join())
            .await
            .map_err(|_| TeleopError::Stepper)?
            .map_err(|_| TeleopError::Stepper)?;
        // Open WebSockets keep graceful shutdown waiting; they are dropped with
        // the task.
        self.server.abort();
        let record = if self.write_outputs {
            let sc = simulation.scenario();
            let cfg = &sc.config;
            let record = RunRecord {
                config_hash: cfg.hash(),
                controller: "teleop".into(),
                trajectory_path: sc.output_path(&cfg.output.trajectory),
                coverage_path: sc.output_path(&cfg.output.coverage),
                reports_path: sc.output_path(&cfg.output.reports),
                wall_clock_s: self.started.elapsed().as_secs_f64(),
                steps: simulation.step_index(),
                final_time: simulation.time(),
                stop_reason: if simulation.step_index() >= cfg.steps() {
                    StopReason::EpisodeEnd
                } else {
                    StopReason::Paused
                },
                coverage_initial: 0.0,
                coverage_final: simulation.coverage().fraction(),
                reward_sum: simulation.reward_sum(),
            };
            write_outputs(&simulation, &record)?;
            Some(record)
        } else {
            None
        };
        Ok(SessionSummary {
            simulation,
            command_log: self.command_log,
            record,
        })
    }
}

async fn get_scenario(State(app): State<AppState>) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], app.scenario_json.to_string()).into_response()
}

async fn get_coverage(State(app): State<AppState>) -> Response {
    let csv = app.snapshot.borrow().coverage_csv.to_string();
    ([(header::CONTENT_TYPE, "text/csv")], csv).into_response()
}

async fn get_trajectory(State(app): State<AppState>) -> Response {
    let text = app.snapshot.borrow().trajectory.to_string();
    ([(header::CONTENT_TYPE, "text/plain")], text).into_response()
}

async fn ws_upgrade(ws: WebSocketUpgrade, State(app): State<AppState>) -> Response {
    ws.on_upgrade(move |socket| client(socket, app))
}

async fn client(socket: WebSocket, app: AppState) {
    let id: ClientId = app.next_client.fetch_add(1, Ordering::Relaxed);
    let (direct_tx, mut direct_rx) = mpsc::unbounded_channel::<String>();
    app.direct.lock().expect("client map").insert(id, direct_tx.clone());
    let mut frames = app.frames.subscribe();
    let (mut sink, mut stream) = socket.split();

    let writer = async move {
        loop {
            let text = tokio::select! {
                f = frames.recv() => match f {
                    Ok(f) => f.to_string(),
                    Err(broadcast::error::RecvError::Lagged(_)) => continue,
                    Err(broadcast::error::RecvError::Closed) => break,
                },
                d = direct_rx.recv() => match d {
                    Some(d) => d,
                    None => break,
                },
            };
            if sink.send(Message::Text(text.into())).await.is_err() {
                break;
            }
        }
    };
    let queue = app.queue.clone();
    let direct = app.direct.clone();
    let reader = async move {
        while let Some(Ok(msg)) = stream.next().await {
            let text = match msg {
                Message::Text(t) => t,
                Message::Close(_) => break,
                _ => continue,
            };
            match parse_client_message(text.as_str()) {
                Ok(ClientMessage::Cmd(command)) => {
                    if let Some(dropped) = queue.push(Inbound { client: id, command }) {
                        let notice = ServerMessage::error("command queue full: oldest command dropped").to_json();
                        if let Some(tx) = direct.lock().expect("client map").get(&dropped.client) {
                            let _ = tx.send(notice);
                        }
                    }
                }
                Err(reason) => {
                    let _ = direct_tx.send(ServerMessage::error(reason).to_json());
                }
            }
        }
    };
    tokio::select! {
        _ = writer => {}
        _ = reader => {}
    }
    app.direct.lock().expect("client map").remove(&id);
}
