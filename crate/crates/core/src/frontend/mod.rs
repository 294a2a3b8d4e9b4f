//! Coarse path search and initial guesses for the trajectory optimizer.
//!
//! The search is a forward-only hybrid A* over constant-curvature arcs with
//! a Dubins heuristic, trying an analytic Dubins connection to the goal at
//! every expansion.

mod dubins;

use std::cmp::Ordering;
use std::f64::consts::{PI, TAU};
use std::collections::{BinaryHeap, HashSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dubins::{DubinsPath, Segment};

use crate::spline::BoundaryCondition;
use crate::terrain_map::{wrap_angle, SE2State, TerrainGrid};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FrontendError {
    #[error("no traversable path found after {expansions} expansions")]
    NoPath { expansions: usize },
    #[error("{which} state is outside the map or not traversable")]
    StartOrGoalInvalid { which: &'static str },
    #[error("path has zero length")]
    DegeneratePath,
}

/// Limits that decide where the robot may stand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Traversability {
    /// Minimum `cos ξ` (body axis tilt).
    pub c_min: f64,
    /// Maximum surface variation.
    pub sigma_max: f64,
}

impl Traversability {
    pub fn admits(&self, grid: &TerrainGrid, s: SE2State) -> bool {
        match grid.query(s.x, s.y, s.theta) {
            Ok(q) => q.zb.z >= self.c_min && q.sigma <= self.sigma_max,
            Err(_) => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchParams {
    pub wheelbase: f64,
    pub max_steering: f64,
    pub limits: Traversability,
    /// Weight of the surface variation in the node cost.
    pub rho_ter: f64,
    pub max_expansions: usize,
}

impl SearchParams {
    pub fn max_curvature(&self) -> f64 {
        self.max_steering.tan() / self.wheelbase
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchNode {
    pub state: SE2State,
    pub cost: f64,
    pub parent: Option<usize>,
    /// Curvature of the arc that reached this node.
    pub curvature: f64,
}

struct OpenEntry {
    f: f64,
    g: f64,
    seq: usize,
    node: usize,
}

impl PartialEq for OpenEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for OpenEntry {}
impl PartialOrd for OpenEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for OpenEntry {
    // BinaryHeap is a max-heap: reverse so the smallest (f, g, seq) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| other.g.total_cmp(&self.g))
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Pose after driving an arc of curvature `k` for length `len`.
fn drive(s: SE2State, k: f64, len: f64) -> SE2State {
    if k.abs() < 1e-12 {
        SE2State {
            x: s.x + len * s.theta.cos(),
            y: s.y + len * s.theta.sin(),
            theta: s.theta,
        }
    } else {
        let th = s.theta + k * len;
        SE2State {
            x: s.x + (th.sin() - s.theta.sin()) / k,
            y: s.y - (th.cos() - s.theta.cos()) / k,
            theta: wrap_angle(th),
        }
    }
}

fn cell_key(grid: &TerrainGrid, s: SE2State) -> (i64, i64, i64) {
    let spec = grid.spec();
    let dt = spec.theta_resolution();
    (
        ((s.x - spec.origin[0]) / spec.resolution).floor() as i64,
        ((s.y - spec.origin[1]) / spec.resolution).floor() as i64,
        ((wrap_angle(s.theta) + PI) / dt).floor() as i64 % spec.dims[2] as i64,
    )
}

/// Hybrid A* from `start` to `goal`. The returned poses start at `start`,
/// end exactly at `goal`, and are joined by arcs or Dubins segments.
pub fn search(
    grid: &TerrainGrid,
    start: SE2State,
    goal: SE2State,
    params: &SearchParams,
) -> Result<Vec<SE2State>, FrontendError> {
    let limits = params.limits;
    if !limits.admits(grid, start) {
        return Err(FrontendError::StartOrGoalInvalid { which: "start" });
    }
    if !limits.admits(grid, goal) {
        return Err(FrontendError::StartOrGoalInvalid { which: "goal" });
    }
    let step = 2.0 * grid.spec().resolution;
    let check_step = 0.5 * grid.spec().resolution;
    let k_max = params.max_curvature();
    let radius = 1.0 / k_max;
    let curvatures = [0.0, 0.5 * k_max, -0.5 * k_max, k_max, -k_max];
    let heuristic = |s: SE2State| {
        DubinsPath::shortest(s, goal, radius)
            .map(|p| p.length())
            .unwrap_or_else(|| (goal.x - s.x).hypot(goal.y - s.y))
    };

    let mut nodes = vec![SearchNode {
        state: start,
        cost: 0.0,
        parent: None,
        curvature: 0.0,
    }];
    let mut visited = HashSet::new();
    visited.insert(cell_key(grid, start));
    let mut open = BinaryHeap::new();
    let mut seq = 0usize;
    open.push(OpenEntry {
        f: heuristic(start),
        g: 0.0,
        seq,
        node: 0,
    });

    let mut expansions = 0usize;
    while let Some(entry) = open.pop() {
        if expansions >= params.max_expansions {
            break;
        }
        expansions += 1;
        let current = nodes[entry.node];

        if let Some(shot) = DubinsPath::shortest(current.state, goal, radius) {
            let samples = shot.sample_many(check_step);
            if samples.iter().all(|&s| limits.admits(grid, s)) {
                return Ok(assemble(&nodes, entry.node, &shot, step));
            }
        }

        for &k in &curvatures {
            let end = drive(current.state, k, step);
            let arc_ok = (1..=4).all(|i| limits.admits(grid, drive(current.state, k, step * i as f64 / 4.0)));
            if !arc_ok {
                continue;
            }
            if !visited.insert(cell_key(grid, end)) {
                continue;
            }
            let sigma = grid.query(end.x, end.y, end.theta).map(|q| q.sigma).unwrap_or(0.0);
            let g = current.cost + step + params.rho_ter * sigma;
            nodes.push(SearchNode {
                state: end,
                cost: g,
                parent: Some(entry.node),
                curvature: k,
            });
            seq += 1;
            open.push(OpenEntry {
                f: g + heuristic(end),
                g,
                seq,
                node: nodes.len() - 1,
            });
        }
    }
    Err(FrontendError::NoPath { expansions })
}

fn assemble(nodes: &[SearchNode], last: usize, shot: &DubinsPath, step: f64) -> Vec<SE2State> {
    let mut chain = Vec::new();
    let mut cursor = Some(last);
    while let Some(i) = cursor {
        chain.push(nodes[i].state);
        cursor = nodes[i].parent;
    }
    chain.reverse();
    let mut tail = shot.sample_many(step);
    tail.remove(0);
    chain.extend(tail);
    chain
}

/// Write a path as `x,y,theta` CSV.
pub fn write_path_csv(path: impl AsRef<Path>, states: &[SE2State]) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "x,y,theta")?;
    for s in states {
        writeln!(out, "{},{},{}", s.x, s.y, s.theta)?;
    }
    out.flush()
}

/// Remove ±2π jumps between consecutive angles.
pub fn unwrap_angles(angles: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(angles.len());
    for (i, &a) in angles.iter().enumerate() {
        if i == 0 {
            out.push(a);
        } else {
            let turns = ((a - out[i - 1] + PI) / TAU).floor();
            out.push(a - turns * TAU);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuessParams {
    /// Target arc length of one xy piece, meters.
    pub piece_length: f64,
    /// θ pieces per xy piece.
    pub theta_split: usize,
    /// Cruise speed of the guess, also used for the boundary velocity.
    pub v_init: f64,
}

/// Starting point for the optimizer. Each xy piece is split into
/// `theta_split` θ pieces of equal duration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialGuess {
    /// Interior xy waypoints, `M - 1` of them.
    pub q_xy: Vec<[f64; 2]>,
    /// Interior θ waypoints, `M · theta_split - 1` of them.
    pub q_theta: Vec<f64>,
    pub t_xy: Vec<f64>,
    pub theta_split: usize,
    pub head_xy: BoundaryCondition,
    pub tail_xy: BoundaryCondition,
    pub head_theta: BoundaryCondition,
    pub tail_theta: BoundaryCondition,
}

impl InitialGuess {
    pub fn pieces(&self) -> usize {
        self.t_xy.len()
    }

    pub fn t_theta(&self) -> Vec<f64> {
        theta_durations(&self.t_xy, self.theta_split)
    }

    pub fn total_duration(&self) -> f64 {
        self.t_xy.iter().sum()
    }
}

/// θ durations derived from the xy durations.
pub fn theta_durations(t_xy: &[f64], split: usize) -> Vec<f64> {
    t_xy.iter()
        .flat_map(|&t| std::iter::repeat_n(t / split as f64, split))
        .collect()
}

/// Resample a path by arc length into pieces of about `piece_length`.
pub fn make_initial_guess(path: &[SE2State], params: &GuessParams) -> Result<InitialGuess, FrontendError> {
    if path.len() < 2 {
        return Err(FrontendError::DegeneratePath);
    }
    let headings = unwrap_angles(&path.iter().map(|s| s.theta).collect::<Vec<_>>());
    let mut arc = vec![0.0];
    for w in path.windows(2) {
        let d = (w[1].x - w[0].x).hypot(w[1].y - w[0].y);
        arc.push(arc.last().unwrap() + d);
    }
    let length = *arc.last().unwrap();
    if !(length > 1e-9) {
        return Err(FrontendError::DegeneratePath);
    }
    let at = |s: f64| -> (f64, f64, f64) {
        let i = arc.partition_point(|&a| a <= s).clamp(1, arc.len() - 1);
        let span = arc[i] - arc[i - 1];
        let u = if span > 0.0 { ((s - arc[i - 1]) / span).clamp(0.0, 1.0) } else { 0.0 };
        let (p, q) = (&path[i - 1], &path[i]);
        (
            p.x + u * (q.x - p.x),
            p.y + u * (q.y - p.y),
            headings[i - 1] + u * (headings[i] - headings[i - 1]),
        )
    };

    let m = ((length / params.piece_length).ceil() as usize).max(1);
    let split = params.theta_split.max(1);
    let piece = length / m as f64;
    let q_xy = (1..m)
        .map(|i| {
            let (x, y, _) = at(piece * i as f64);
            [x, y]
        })
        .collect();
    let q_theta = (1..m * split)
        .map(|j| at(length * j as f64 / (m * split) as f64).2)
        .collect();

    let first = path[0];
    let last = path[path.len() - 1];
    let (th0, th1) = (headings[0], *headings.last().unwrap());
    let v = params.v_init;
    Ok(InitialGuess {
        q_xy,
        q_theta,
        t_xy: vec![piece / v; m],
        theta_split: split,
        head_xy: BoundaryCondition::new(vec![first.x, first.y], vec![v * th0.cos(), v * th0.sin()], vec![0.0, 0.0]),
        tail_xy: BoundaryCondition::new(vec![last.x, last.y], vec![v * th1.cos(), v * th1.sin()], vec![0.0, 0.0]),
        head_theta: BoundaryCondition::scalar(th0, 0.0, 0.0),
        tail_theta: BoundaryCondition::scalar(th1, 0.0, 0.0),
    })
}
