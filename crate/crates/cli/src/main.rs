//! Command-line driver: map building, planning, evaluation and export.

mod config;

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use uneven_planner::frontend::{make_initial_guess, search, write_path_csv, FrontendError};
use uneven_planner::optimizer::{
    alm_solve, audit, trajectory_metrics, write_samples_csv, AuditReport, PlanResult, TrajectoryMetrics,
    TrajectorySE2, AUDIT_OVERSAMPLE,
};
use uneven_planner::pointcloud::{CloudError, CloudFormat, PointCloud};
use uneven_planner::terrain_map::{BuildStats, FitParams, GridSpec, SE2State, TerrainGrid};

use config::RunConfig;

const EXIT_IO: u8 = 1;
const EXIT_EMPTY_CLOUD: u8 = 2;
const EXIT_NO_PATH: u8 = 3;
const EXIT_NOT_CONVERGED: u8 = 4;
const EXIT_USAGE: u8 = 64;
const THREADS_ENV: &str = "UNEVEN_PLANNER_THREADS";

#[derive(Debug, Parser)]
#[command(name = "uneven-planner", version, about = "Trajectory planning for car-like robots on uneven terrain")]
struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the terrain pose mapping on an SE(2) grid from a point cloud.
    BuildMap(BuildMapArgs),
    /// Search and optimize a trajectory between two poses.
    Plan(PlanArgs),
    /// Audit a trajectory and report length and curvature metrics.
    Eval(EvalArgs),
    /// Write a trajectory sampled at a fixed rate as CSV.
    ExportSamples(ExportArgs),
}

#[derive(Debug, Args)]
struct BuildMapArgs {
    /// Point cloud (.xyz/.txt, .pcd or .csv).
    #[arg(long)]
    cloud: PathBuf,
    /// Output grid file; build parameters go to `<out>.json`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    res: Option<f64>,
    #[arg(long)]
    theta_bins: Option<usize>,
    /// `x_min,y_min,x_max,y_max`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    bounds: Option<Vec<f64>>,
    #[arg(long)]
    n_iter: Option<usize>,
    /// `e_x,e_y,e_z`.
    #[arg(long, value_delimiter = ',')]
    semi_axes: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
struct PlannerOverrides {
    #[arg(long)]
    v_max: Option<f64>,
    #[arg(long)]
    a_mlon: Option<f64>,
    #[arg(long)]
    a_mlat: Option<f64>,
    #[arg(long)]
    delta_max: Option<f64>,
    #[arg(long)]
    c_min: Option<f64>,
    #[arg(long)]
    sigma_max: Option<f64>,
    #[arg(long)]
    rho_t: Option<f64>,
    #[arg(long)]
    rho_ter: Option<f64>,
    /// Constraint stamps per xy piece.
    #[arg(long)]
    samples_per_piece: Option<usize>,
    /// θ pieces per xy piece.
    #[arg(long)]
    theta_split: Option<usize>,
    #[arg(long)]
    max_outer: Option<usize>,
}

#[derive(Debug, Args)]
struct PlanArgs {
    #[arg(long)]
    grid: PathBuf,
    /// `x,y,theta`.
    #[arg(long, value_parser = parse_pose, allow_hyphen_values = true)]
    start: SE2State,
    /// `x,y,theta`.
    #[arg(long, value_parser = parse_pose, allow_hyphen_values = true)]
    goal: SE2State,
    /// Plan result JSON.
    #[arg(long)]
    out: PathBuf,
    /// Sampled trajectory CSV; defaults to the output path with a `.csv` extension.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Front-end path CSV.
    #[arg(long)]
    path_csv: Option<PathBuf>,
    #[arg(long)]
    piece_length: Option<f64>,
    #[arg(long)]
    v_init: Option<f64>,
    #[arg(long)]
    max_expansions: Option<usize>,
    #[arg(long)]
    rate: Option<f64>,
    #[command(flatten)]
    planner: PlannerOverrides,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    grid: PathBuf,
    /// Plan result JSON, or a bare trajectory JSON.
    #[arg(long)]
    trajectory: PathBuf,
    /// Report JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Rate of the chord sums, Hz.
    #[arg(long)]
    rate: Option<f64>,
    #[command(flatten)]
    planner: PlannerOverrides,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[arg(long)]
    grid: PathBuf,
    #[arg(long)]
    trajectory: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    rate: Option<f64>,
}

/// Errors in arguments or configuration values.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(e: impl fmt::Display) -> anyhow::Error {
    UsageError(e.to_string()).into()
}

fn parse_pose(s: &str) -> Result<SE2State, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| format!("invalid number `{t}` in pose `{s}`")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [x, y, theta] if v.iter().all(|c| c.is_finite()) => Ok(SE2State::new(x, y, theta)),
        _ => Err(format!("pose `{s}` must be three finite numbers x,y,theta")),
    }
}

/// Error chain joined by `: `, skipping causes already quoted by their parent.
fn describe(err: &anyhow::Error) -> String {
    let mut text = String::new();
    for cause in err.chain() {
        let part = cause.to_string();
        if !text.contains(&part) {
            if !text.is_empty() {
                text.push_str(": ");
            }
            text.push_str(&part);
        }
    }
    text
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if let Some(CloudError::EmptyCloud) = cause.downcast_ref::<CloudError>() {
            return EXIT_EMPTY_CLOUD;
        }
        if let Some(e) = cause.downcast_ref::<FrontendError>() {
            return match e {
                FrontendError::NoPath { .. } | FrontendError::StartOrGoalInvalid { .. } => EXIT_NO_PATH,
                FrontendError::DegeneratePath => EXIT_USAGE,
            };
        }
    }
    EXIT_IO
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    configure_threads()?;
    let mut cfg = match RunConfig::load(cli.config.as_deref()) {
        Ok(cfg) => cfg,
        Err(e) if e.root_cause().is::<std::io::Error>() => return Err(e),
        Err(e) => return Err(usage(format!("{e:#}"))),
    };
    match cli.command {
        Command::BuildMap(args) => build_map(args, cfg),
        Command::Plan(args) => {
            apply_planner(&mut cfg, &args.planner);
            plan(args, cfg)
        }
        Command::Eval(args) => {
            apply_planner(&mut cfg, &args.planner);
            eval(args, cfg)
        }
        Command::ExportSamples(args) => export(args, cfg),
    }
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| usage(format!("{THREADS_ENV} must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .context("configuring worker threads")
}

fn validated(cfg: &RunConfig) -> Result<()> {
    cfg.validate().map_err(|e| usage(format!("invalid configuration: {e:#}")))
}

fn apply_planner(cfg: &mut RunConfig, o: &PlannerOverrides) {
    let p = &mut cfg.planner;
    let set = |dst: &mut f64, src: Option<f64>| {
        if let Some(v) = src {
            *dst = v;
        }
    };
    set(&mut p.v_max, o.v_max);
    set(&mut p.a_mlon, o.a_mlon);
    set(&mut p.a_mlat, o.a_mlat);
    set(&mut p.delta_max, o.delta_max);
    set(&mut p.c_min, o.c_min);
    set(&mut p.sigma_max, o.sigma_max);
    set(&mut p.rho_t, o.rho_t);
    set(&mut p.rho_ter, o.rho_ter);
    if let Some(v) = o.samples_per_piece {
        p.samples_per_piece = v;
    }
    if let Some(v) = o.theta_split {
        p.theta_split = v;
    }
    if let Some(v) = o.max_outer {
        p.alm.max_outer = v;
    }
}

/// `<path>.json`, keeping the original extension.
fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = OsString::from(path.as_os_str());
    s.push(".json");
    PathBuf::from(s)
}

#[derive(Debug, Serialize, Deserialize)]
struct BuildSidecar {
    cloud: PathBuf,
    points: usize,
    grid: GridSpec,
    fit: FitParams,
    stats: BuildStats,
}

fn build_map(args: BuildMapArgs, mut cfg: RunConfig) -> Result<u8> {
    let m = &mut cfg.map;
    if let Some(v) = args.res {
        m.resolution = v;
    }
    if let Some(v) = args.theta_bins {
        m.theta_bins = v;
    }
    if let Some(v) = args.n_iter {
        m.n_iter = v;
    }
    if let Some(v) = &args.bounds {
        m.bounds = Some(v[..].try_into().map_err(|_| usage("--bounds takes x_min,y_min,x_max,y_max"))?);
    }
    if let Some(v) = &args.semi_axes {
        m.semi_axes = v[..].try_into().map_err(|_| usage("--semi-axes takes e_x,e_y,e_z"))?;
    }
    validated(&cfg)?;

    let cloud = PointCloud::load(&args.cloud, CloudFormat::from_path(&args.cloud))
        .with_context(|| format!("loading {}", args.cloud.display()))?;
    let (min, max) = match cfg.map.bounds {
        Some([x0, y0, x1, y1]) => ([x0, y0], [x1, y1]),
        None => cloud.xy_extent(),
    };
    if !(min[0] < max[0] && min[1] < max[1]) {
        return Err(usage(format!("grid bounds {min:?}..{max:?} are empty; pass --bounds")));
    }
    let spec = GridSpec::covering(min, max, cfg.map.resolution, cfg.map.theta_bins);
    let fit = cfg.map.fit_params();
    let started = Instant::now();
    let grid = TerrainGrid::build(&cloud, spec, &fit).map_err(usage)?;
    let elapsed = started.elapsed().as_secs_f64();
    grid.write(&args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;
    let stats = grid.stats();
    let sidecar = BuildSidecar {
        cloud: args.cloud.clone(),
        points: cloud.len(),
        grid: spec,
        fit,
        stats,
    };
    let side = sidecar_path(&args.out);
    std::fs::write(&side, serde_json::to_string_pretty(&sidecar)?)
        .with_context(|| format!("writing {}", side.display()))?;
    println!("cells: {}", stats.cells);
    println!("invalid cells: {}", stats.invalid_cells);
    println!("dims: {} x {} x {}", spec.dims[0], spec.dims[1], spec.dims[2]);
    println!("build time: {elapsed:.3} s");
    Ok(0)
}

fn read_grid(path: &Path) -> Result<TerrainGrid> {
    TerrainGrid::read(path).with_context(|| format!("reading grid {}", path.display()))
}

fn plan(args: PlanArgs, mut cfg: RunConfig) -> Result<u8> {
    if let Some(v) = args.piece_length {
        cfg.frontend.piece_length = v;
    }
    if let Some(v) = args.v_init {
        cfg.frontend.v_init = Some(v);
    }
    if let Some(v) = args.max_expansions {
        cfg.frontend.max_expansions = v;
    }
    if let Some(v) = args.rate {
        cfg.export.sample_rate_hz = v;
    }
    validated(&cfg)?;
    let grid = read_grid(&args.grid)?;
    let planner = &cfg.planner;

    let started = Instant::now();
    let path = search(&grid, args.start, args.goal, &planner.search_params(cfg.frontend.max_expansions))?;
    let search_time = started.elapsed().as_secs_f64();
    if let Some(p) = &args.path_csv {
        write_path_csv(p, &path).with_context(|| format!("writing {}", p.display()))?;
    }
    let guess = make_initial_guess(&path, &planner.guess_params(cfg.frontend.piece_length, cfg.frontend.v_init))?;
    let result = alm_solve(&guess, &grid, planner).map_err(|e| anyhow!("optimization failed: {e}"))?;

    std::fs::write(&args.out, result.to_json()).with_context(|| format!("writing {}", args.out.display()))?;
    let csv = args.csv.clone().unwrap_or_else(|| args.out.with_extension("csv"));
    write_samples_csv(&csv, &result.trajectory, &grid, planner, cfg.export.sample_rate_hz)
        .map_err(|e| anyhow!("writing {}: {e}", csv.display()))?;

    let d = &result.diagnostics;
    let c = &result.cost;
    println!("converged: {}", d.converged);
    println!("pieces: {}  front-end states: {}", guess.pieces(), path.len());
    println!("duration T_s: {:.4} s", c.duration);
    println!(
        "cost: total {:.6}  jerk {:.6}  sigma {:.6} (integral {:.6})  time {:.6}",
        c.total, c.jerk, c.sigma_term, c.sigma_integral, c.time_term
    );
    println!(
        "solver: {} outer / {} inner iterations, rho {:.1e}, stamp violation {:.3e}, gradient {:.3e}",
        d.outer_iterations, d.inner_iterations, d.final_rho, d.stamp_violation, d.inner_gradient
    );
    print_audit(&result.audit);
    println!("search time: {search_time:.3} s  optimization time: {:.3} s", d.wall_time);
    Ok(if d.converged { 0 } else { EXIT_NOT_CONVERGED })
}

fn print_audit(a: &AuditReport) {
    println!(
        "audit ({} samples, {}x): max violation {:.3e}, failed samples {}",
        a.samples, a.oversample, a.max_violation, a.failed_samples
    );
    for c in &a.constraints {
        println!("  {:<20} max {:>12.4e} at t = {:.4} s (bound {:.4})", c.name, c.max, c.argmax_t, c.bound);
    }
}

/// Accepts either a full plan result or a bare trajectory.
fn read_trajectory(path: &Path) -> Result<(TrajectorySE2, Option<PlanResult>)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if let Ok(result) = PlanResult::from_json(&text) {
        return Ok((result.trajectory.clone(), Some(result)));
    }
    let traj: TrajectorySE2 =
        serde_json::from_str(&text).with_context(|| format!("parsing trajectory {}", path.display()))?;
    Ok((traj, None))
}

#[derive(Debug, Serialize, Deserialize)]
struct EvalReport {
    audit: AuditReport,
    metrics: TrajectoryMetrics,
    /// Whether the stored plan diagnostics agree with this audit within 10%.
    matches_plan: Option<bool>,
}

fn within_ten_percent(a: f64, b: f64) -> bool {
    (a - b).abs() <= 0.1 * a.abs().max(b.abs()) + 1e-12
}

fn matches_plan(report: &AuditReport, stored: &PlanResult) -> bool {
    let s = &stored.audit;
    within_ten_percent(report.duration, stored.cost.duration)
        && within_ten_percent(report.jerk_integral, s.jerk_integral)
        && within_ten_percent(report.max_violation, s.max_violation)
        && report
            .constraints
            .iter()
            .zip(&s.constraints)
            .all(|(a, b)| a.name == b.name && within_ten_percent(a.max, b.max))
}

fn eval(args: EvalArgs, mut cfg: RunConfig) -> Result<u8> {
    if let Some(v) = args.rate {
        cfg.export.metrics_rate_hz = v;
    }
    validated(&cfg)?;
    let grid = read_grid(&args.grid)?;
    let (traj, stored) = read_trajectory(&args.trajectory)?;
    let planner = &cfg.planner;
    let reported = stored.as_ref().map(|r| r.diagnostics.stamp_violation);
    let report = audit(&traj, &grid, planner, AUDIT_OVERSAMPLE, reported);
    let metrics = trajectory_metrics(&traj, &grid, planner, cfg.export.metrics_rate_hz)
        .map_err(|e| anyhow!("trajectory cannot be evaluated on this grid: {e}"))?;
    let matches = stored.as_ref().map(|s| matches_plan(&report, s));

    print_audit(&report);
    println!("within margin: {}", report.within_margin(1e-3, 0.005));
    println!("duration: {:.4} s", metrics.duration);
    println!("length 2D: {:.3} m", metrics.length_2d);
    println!("length 3D: {:.3} m", metrics.length_3d);
    println!("mean curvature: {:.4} 1/m", metrics.mean_curvature);
    println!("max v_x: {:.4} m/s", metrics.max_v_x);
    if let Some(m) = matches {
        println!("matches plan diagnostics: {m}");
    }
    if let Some(out) = &args.out {
        let r = EvalReport {
            audit: report,
            metrics,
            matches_plan: matches,
        };
        std::fs::write(out, serde_json::to_string_pretty(&r)?).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(0)
}

fn export(args: ExportArgs, mut cfg: RunConfig) -> Result<u8> {
    if let Some(v) = args.rate {
        cfg.export.sample_rate_hz = v;
    }
    validated(&cfg)?;
    let grid = read_grid(&args.grid)?;
    let (traj, _) = read_trajectory(&args.trajectory)?;
    let rows = write_samples_csv(&args.out, &traj, &grid, &cfg.planner, cfg.export.sample_rate_hz)
        .map_err(|e| anyhow!("writing {}: {e}", args.out.display()))?;
    println!("wrote {rows} samples to {}", args.out.display());
    Ok(0)
}
