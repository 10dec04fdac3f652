use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use capsim_core::friction::{fit_friction_params, FitError, FitOptions};
use capsim_core::geometry::io::{read_ply, write_ply_points, MeshIoError};
use capsim_core::geometry::{RigidTransform, Vec3};
use capsim_core::metrics::{
    associate, ate, cloud_to_cloud, icp_align, read_tum, rpe_sequence, IcpOptions, MetricsError, Trajectory,
};
use capsim_core::scenario::{
    load_scenario, run_simulation, ControllerConfig, GreedyConfig, LoadedScenario, ScenarioError, Simulation,
    COVERAGE_HEADER,
};
use capsim_core::sensing::{coverage_reward, visible_vertices, CoverageMap, REWARD_ALPHA};
use capsim_core::Exec;
use serde_json::json;

use crate::{CliError, ControllerArg};

fn scenario_err(e: ScenarioError) -> CliError {
    if e.is_validation() {
        CliError::Invalid(e.to_string())
    } else {
        CliError::Runtime(e.to_string())
    }
}

fn metrics_err(e: MetricsError) -> CliError {
    match e {
        MetricsError::Degenerate(_) => CliError::Runtime(e.to_string()),
        _ => CliError::Invalid(e.to_string()),
    }
}

fn absolute(p: &Path) -> Result<String, CliError> {
    std::path::absolute(p)
        .map(|a| a.to_string_lossy().into_owned())
        .map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))
}

fn emit(value: &serde_json::Value, out: Option<&Path>) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("json value serialises") + "\n";
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load(config: &Path) -> Result<LoadedScenario, CliError> {
    load_scenario(config).map_err(scenario_err)
}

pub fn simulate(
    config: &Path,
    controller: Option<ControllerArg>,
    command_log: Option<PathBuf>,
    out: Option<PathBuf>,
    exec: Exec,
) -> Result<(), CliError> {
    let mut sc = load(config)?;
    let current = sc.config.controller.clone();
    let log = command_log.as_deref().map(absolute).transpose()?;
    sc.config.controller = match (controller, current) {
        (Some(ControllerArg::Scripted), c @ ControllerConfig::Scripted { .. }) => c,
        (Some(ControllerArg::Scripted), _) => ControllerConfig::Scripted { commands: Vec::new() },
        (Some(ControllerArg::Greedy), c @ ControllerConfig::Greedy(_)) => c,
        (Some(ControllerArg::Greedy), _) => ControllerConfig::Greedy(GreedyConfig::default()),
        (Some(ControllerArg::Teleop) | None, ControllerConfig::Teleop { command_log }) => ControllerConfig::Teleop {
            command_log: log.unwrap_or(command_log),
        },
        (Some(ControllerArg::Teleop), _) => ControllerConfig::Teleop {
            command_log: log.ok_or_else(|| CliError::Invalid("--controller teleop needs --command-log".into()))?,
        },
        (None, c) => c,
    };
    if let Some(dir) = out {
        sc.config.output.dir = absolute(&dir)?;
    }
    sc.config.validate().map_err(scenario_err)?;
    sc.check_files().map_err(scenario_err)?;
    let record = run_simulation(&sc, exec).map_err(scenario_err)?;
    emit(&serde_json::to_value(&record).expect("record serialises"), None)
}

fn read_trajectory(role: &str, path: &Path) -> Result<Trajectory, CliError> {
    match read_tum(path) {
        Ok(Ok(t)) => Ok(t),
        Ok(Err(e)) => Err(CliError::Invalid(format!("{role} {}: {e}", path.display()))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(CliError::Invalid(format!(
            "{role}: file not found: {}",
            path.display()
        ))),
        Err(e) => Err(CliError::Runtime(format!("{role} {}: {e}", path.display()))),
    }
}

fn read_cloud(role: &str, path: &Path) -> Result<Vec<Vec3>, CliError> {
    match read_ply(path) {
        Ok(ply) => Ok(ply.vertices),
        Err(e @ MeshIoError::Io { .. }) => match &e {
            MeshIoError::Io { source, .. } if source.kind() != std::io::ErrorKind::NotFound => {
                Err(CliError::Runtime(format!("{role}: {e}")))
            }
            _ => Err(CliError::Invalid(format!("{role}: {e}"))),
        },
        Err(e) => Err(CliError::Invalid(format!("{role} {}: {e}", path.display()))),
    }
}

pub struct EvaluateArgs {
    pub pred: PathBuf,
    pub gt: PathBuf,
    pub max_dt: f64,
    pub clouds: Option<(PathBuf, PathBuf)>,
    pub icp: bool,
    pub heatmap: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub exec: Exec,
}

pub fn evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    let pred = read_trajectory("pred", &args.pred)?;
    let gt = read_trajectory("gt", &args.gt)?;
    let (p, g) = associate(&pred, &gt, args.max_dt);
    let a = ate(&p, &g).map_err(metrics_err)?;
    let r = rpe_sequence(&p, &g).map_err(metrics_err)?;
    let mut report = json!({
        "pairs": p.len(),
        "ate_mean": a.mean,
        "ate_std": a.std,
        "rpe_trans_mean": r.trans_mean,
        "rpe_trans_std": r.trans_std,
        "rpe_rot_mean": r.rot_mean,
        "rpe_rot_std": r.rot_std,
    });

    if let Some((pred_cloud, gt_cloud)) = &args.clouds {
        let mut moving = read_cloud("pred-cloud", pred_cloud)?;
        let fixed = read_cloud("gt-cloud", gt_cloud)?;
        if args.icp {
            let reg = icp_align(&moving, &fixed, &RigidTransform::identity(), &IcpOptions::default(), args.exec)
                .map_err(metrics_err)?;
            moving = moving
                .iter()
                .map(|p| reg.transform.transform_point(&(*p).into()).coords)
                .collect();
            report["icp_rmse"] = json!(reg.rmse);
            report["icp_iterations"] = json!(reg.iterations);
        }
        let c2c = cloud_to_cloud(&moving, &fixed, args.exec).map_err(metrics_err)?;
        report["c2c_rmse"] = json!(c2c.rmse);
        if let Some(path) = &args.heatmap {
            write_ply_points(path, &moving, Some(("c2c_dist", &c2c.distances)))
                .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        }
    }
    emit(&report, args.out.as_deref())
}

fn csv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>, CliError> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(io) if io.kind() == std::io::ErrorKind::NotFound => {
                CliError::Invalid(format!("file not found: {}", path.display()))
            }
            _ => CliError::Runtime(format!("{}: {e}", path.display())),
        })
}

/// Numeric rows of a CSV; a non-numeric first row is taken as a header.
fn numeric_rows(path: &Path, columns: usize) -> Result<Vec<(u64, Vec<f64>)>, CliError> {
    let mut rows = Vec::new();
    for (i, record) in csv_reader(path)?.records().enumerate() {
        let record = record.map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
        let line = record.position().map_or(i as u64 + 1, |p| p.line());
        let parsed: Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(v) if v.len() >= columns => rows.push((line, v)),
            Err(_) if i == 0 => continue,
            _ => {
                return Err(CliError::Invalid(format!(
                    "{} line {line}: expected {columns} numeric columns",
                    path.display()
                )))
            }
        }
    }
    Ok(rows)
}

pub fn fit_friction(data: &Path, out: Option<PathBuf>) -> Result<(), CliError> {
    let samples: Vec<(f64, f64)> = numeric_rows(data, 2)?.into_iter().map(|(_, v)| (v[0], v[1])).collect();
    let fit = fit_friction_params(&samples, &FitOptions::default()).map_err(|e| match e {
        FitError::InsufficientData { .. } | FitError::NonFinite(_) => CliError::Invalid(e.to_string()),
        _ => CliError::Runtime(e.to_string()),
    })?;
    emit(&serde_json::to_value(fit).expect("fit serialises"), out.as_deref())
}

/// Reward and monotonicity summary over coverage rows `(t, covered, total, C)`,
/// with coverage starting from zero.
fn summarise(rows: &[(f64, usize, usize, f64)]) -> serde_json::Value {
    let mut prev = 0.0;
    let mut reward_sum = 0.0;
    let mut monotone = true;
    for &(_, _, _, c) in rows {
        monotone &= c >= prev;
        reward_sum += coverage_reward(c, prev, REWARD_ALPHA);
        prev = c;
    }
    let last = rows.last().copied().unwrap_or((0.0, 0, 0, 0.0));
    json!({
        "rows": rows.len(),
        "t_final": last.0,
        "covered_final": last.1,
        "total": last.2,
        "coverage_final": last.3,
        "monotone": monotone,
        "alpha": REWARD_ALPHA,
        "reward_sum": reward_sum,
    })
}

pub fn coverage_summary(csv: &Path) -> Result<(), CliError> {
    let rows: Vec<(f64, usize, usize, f64)> = numeric_rows(csv, 4)?
        .into_iter()
        .map(|(_, v)| (v[0], v[1] as usize, v[2] as usize, v[3]))
        .collect();
    emit(&summarise(&rows), None)
}

pub fn coverage_recompute(
    config: &Path,
    trajectory: &Path,
    csv_out: Option<PathBuf>,
    exec: Exec,
) -> Result<(), CliError> {
    let sc = load(config)?;
    let sim = Simulation::new(sc, exec).map_err(scenario_err)?;
    let traj = read_trajectory("trajectory", trajectory)?;
    let mesh = &sim.organ().mesh;
    let mut map = CoverageMap::new(mesh.vertex_count());
    let mut csv = String::from(COVERAGE_HEADER);
    let mut rows = Vec::with_capacity(traj.len());
    for s in traj.samples() {
        map.mark(&visible_vertices(mesh, &s.pose, sim.rig(), exec));
        let row = (s.t, map.covered(), map.total(), map.fraction());
        csv.push_str(&format!("{},{},{},{}\n", row.0, row.1, row.2, row.3));
        rows.push(row);
    }
    if let Some(path) = &csv_out {
        std::fs::write(path, &csv).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    }
    emit(&summarise(&rows), None)
}

pub fn serve(
    config: &Path,
    bind: SocketAddr,
    steps_per_second: Option<f64>,
    rate: f64,
    command_log: Option<PathBuf>,
    exec: Exec,
) -> Result<(), CliError> {
    let sc = load(config)?;
    let opts = capsim_teleop::ServeOptions {
        bind,
        steps_per_second,
        rate_hz: rate,
        command_log,
        exec,
        ..Default::default()
    };
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    runtime.block_on(async move {
        let session = capsim_teleop::start(sc, opts).await.map_err(|e| match e {
            capsim_teleop::TeleopError::Scenario(e) => scenario_err(e),
            e => CliError::Runtime(e.to_string()),
        })?;
        eprintln!("listening on ws://{}/ws (Ctrl-C to stop)", session.local_addr());
        tokio::signal::ctrl_c()
            .await
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        let summary = session.shutdown().await.map_err(|e| CliError::Runtime(e.to_string()))?;
        eprintln!("command log: {}", summary.command_log.display());
        match summary.record {
            Some(r) => emit(&serde_json::to_value(&r).expect("record serialises"), None),
            None => Ok(()),
        }
    })
}
