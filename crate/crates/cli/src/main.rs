//! `capsim`: simulate, evaluate, fit-friction, coverage-report, serve.
//!
//! Exit codes: 0 success, 1 invalid input (usage, config, missing or
//! malformed files), 2 failure while running.

mod commands;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "capsim", version, about = "Magnetic capsule endoscope simulator")]
struct Cli {
    /// Run the data-parallel kernels on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ControllerArg {
    Scripted,
    Greedy,
    Teleop,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Run a scenario and write trajectory, coverage and step-report logs.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Override the controller named in the config.
        #[arg(long, value_enum)]
        controller: Option<ControllerArg>,
        /// Command log to replay with `--controller teleop`.
        #[arg(long)]
        command_log: Option<PathBuf>,
        /// Output directory, overriding `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// ATE and RPE of a predicted TUM trajectory against ground truth, and
    /// optionally cloud-to-cloud distance between two PLY clouds.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Largest timestamp gap when pairing samples, s.
        #[arg(long, default_value_t = 0.02)]
        max_dt: f64,
        #[arg(long, requires = "gt_cloud")]
        pred_cloud: Option<PathBuf>,
        #[arg(long, requires = "pred_cloud")]
        gt_cloud: Option<PathBuf>,
        /// Register the predicted cloud onto ground truth with ICP first.
        #[arg(long, requires = "pred_cloud")]
        icp: bool,
        /// PLY of the predicted cloud with per-point `c2c_dist`.
        #[arg(long, requires = "pred_cloud")]
        heatmap: Option<PathBuf>,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the piecewise-log friction curve to `velocity,force` CSV samples.
    FitFriction {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarise a coverage CSV, or recompute coverage of a trajectory in a
    /// scenario's organ.
    CoverageReport {
        #[arg(long, conflicts_with_all = ["config", "trajectory"])]
        coverage: Option<PathBuf>,
        #[arg(long, requires = "trajectory")]
        config: Option<PathBuf>,
        #[arg(long, requires = "config")]
        trajectory: Option<PathBuf>,
        /// Where to write the recomputed coverage CSV.
        #[arg(long, requires = "config")]
        csv_out: Option<PathBuf>,
    },
    /// Serve a scenario for live teleoperation until interrupted.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8765")]
        bind: SocketAddr,
        /// Simulation steps per wall-clock second (default: real time).
        #[arg(long)]
        steps_per_second: Option<f64>,
        /// State broadcast rate, Hz (10 to 100).
        #[arg(long, default_value_t = 20.0)]
        rate: f64,
        #[arg(long)]
        command_log: Option<PathBuf>,
    },
}

/// Error with the exit code it maps to.
#[derive(Debug)]
pub enum CliError {
    Invalid(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Invalid(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CAPSIM_LOG_LEVEL", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let exec = if cli.sequential {
        capsim_core::Exec::Sequential
    } else {
        capsim_core::Exec::default()
    };
    let result = match cli.command {
        Cmd::Simulate {
            config,
            controller,
            command_log,
            out,
        } => commands::simulate(&config, controller, command_log, out, exec),
        Cmd::Evaluate {
            pred,
            gt,
            max_dt,
            pred_cloud,
            gt_cloud,
            icp,
            heatmap,
            out,
        } => commands::evaluate(commands::EvaluateArgs {
            pred,
            gt,
            max_dt,
            clouds: pred_cloud.zip(gt_cloud),
            icp,
            heatmap,
            out,
            exec,
        }),
        Cmd::FitFriction { data, out } => commands::fit_friction(&data, out),
        Cmd::CoverageReport {
            coverage,
            config,
            trajectory,
            csv_out,
        } => match (coverage, config.zip(trajectory)) {
            (Some(csv), None) => commands::coverage_summary(&csv),
            (None, Some((config, trajectory))) => commands::coverage_recompute(&config, &trajectory, csv_out, exec),
            _ => Err(CliError::Invalid(
                "coverage-report needs --coverage, or --config with --trajectory".into(),
            )),
        },
        Cmd::Serve {
            config,
            bind,
            steps_per_second,
            rate,
            command_log,
        } => commands::serve(&config, bind, steps_per_second, rate, command_log, exec),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
