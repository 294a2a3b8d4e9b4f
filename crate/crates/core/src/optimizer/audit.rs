//! Dense re-evaluation of a trajectory against every constraint, plus
//! summary metrics and sampled exports.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::problem::stamp_terms;
use super::{EvalError, PlannerConfig, TrajectorySE2, CONSTRAINT_NAMES};
use crate::dynamics::FlatKinematics;
use crate::terrain_map::TerrainGrid;

/// Everything known about the trajectory at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub z: f64,
    pub flat: FlatKinematics,
    pub v_x: f64,
    pub a_x: f64,
    pub a_y: f64,
    pub omega_z: f64,
    pub curvature: f64,
    pub steering: f64,
    pub cos_xi: f64,
    pub sigma: f64,
    pub h: f64,
    pub g: [f64; 6],
}

pub fn sample_at(traj: &TrajectorySE2, grid: &TerrainGrid, cfg: &PlannerConfig, t: f64) -> Result<TrajectorySample, EvalError> {
    let u = traj.stamp_vars(t)?;
    let (terms, _) = stamp_terms(grid, cfg, &u, false).map_err(|e| e.at(t))?;
    let d = terms.dynamic;
    Ok(TrajectorySample {
        t,
        x: u[0],
        y: u[1],
        theta: u[6],
        z: terms.z,
        flat: terms.flat,
        v_x: d.v_x,
        a_x: d.a_x,
        a_y: d.a_y,
        omega_z: d.omega_z,
        curvature: d.curvature,
        steering: d.steering,
        cos_xi: terms.projection.cos_xi,
        sigma: terms.sigma,
        h: terms.h,
        g: terms.g,
    })
}

/// `n + 1` uniform times covering `[0, duration]`.
fn uniform_times(duration: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..=n).map(move |i| if i == n { duration } else { duration * i as f64 / n as f64 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub name: String,
    /// Largest value; for the equality, the largest magnitude.
    pub max: f64,
    pub argmax_t: f64,
    /// Constant term of the constraint, zero for the equality.
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub oversample: usize,
    pub samples: usize,
    /// Samples where the terrain or chart could not be evaluated.
    pub failed_samples: usize,
    pub constraints: Vec<ConstraintReport>,
    pub jerk_integral: f64,
    /// `∫ σ dt` by the rectangle rule on the audit grid.
    pub sigma_integral: f64,
    pub duration: f64,
    /// `max(|h|, g⁺)` over all samples.
    pub max_violation: f64,
    /// Violation reported by the optimizer, if any.
    pub reported_violation: Option<f64>,
    /// Whether the audited and reported violations agree within `10 ε_cons`.
    pub consistent: bool,
}

impl AuditReport {
    pub fn constraint(&self, name: &str) -> Option<&ConstraintReport> {
        self.constraints.iter().find(|c| c.name == name)
    }

    /// All samples evaluable, `|h| < h_tol`, and every inequality at most
    /// `rel · |bound|`.
    pub fn within_margin(&self, h_tol: f64, rel: f64) -> bool {
        self.failed_samples == 0
            && self.constraints[0].max < h_tol
            && self.constraints[1..].iter().all(|c| c.max <= rel * c.bound.abs())
    }
}

/// Evaluate every constraint at `oversample · K · M` uniform times.
pub fn audit(
    traj: &TrajectorySE2,
    grid: &TerrainGrid,
    cfg: &PlannerConfig,
    oversample: usize,
    reported: Option<f64>,
) -> AuditReport {
    let duration = traj.duration();
    let n = (oversample * cfg.samples_per_piece * traj.xy().pieces()).max(1);
    let dt = duration / n as f64;
    let bounds = cfg.bound_constants();
    let mut best: [Option<(f64, f64)>; 7] = [None; 7];
    let mut failed = 0;
    let mut sigma_integral = 0.0;
    for (i, t) in uniform_times(duration, n).enumerate() {
        let Ok(s) = sample_at(traj, grid, cfg, t) else {
            failed += 1;
            continue;
        };
        if i < n {
            sigma_integral += s.sigma * dt;
        }
        let values = std::iter::once(s.h.abs()).chain(s.g);
        for (slot, v) in best.iter_mut().zip(values) {
            if slot.is_none_or(|(m, _)| v > m) {
                *slot = Some((v, t));
            }
        }
    }
    let constraints: Vec<ConstraintReport> = CONSTRAINT_NAMES
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let (max, argmax_t) = best[k].unwrap_or((0.0, 0.0));
            ConstraintReport {
                name: name.to_string(),
                max,
                argmax_t,
                bound: if k == 0 { 0.0 } else { bounds[k - 1] },
            }
        })
        .collect();
    let max_violation = constraints[1..]
        .iter()
        .fold(constraints[0].max, |m, c| m.max(c.max));
    let consistent = failed == 0
        && reported.is_none_or(|r| (max_violation - r).abs() < 10.0 * cfg.alm.eps_cons);
    AuditReport {
        oversample,
        samples: n + 1,
        failed_samples: failed,
        constraints,
        jerk_integral: traj.xy().jerk_energy() + traj.theta().jerk_energy(),
        sigma_integral,
        duration,
        max_violation,
        reported_violation: reported,
        consistent,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMetrics {
    pub duration: f64,
    pub length_2d: f64,
    /// Length of the path lifted onto the terrain surface.
    pub length_3d: f64,
    /// Mean `|κ|` weighted by 3D arc length.
    pub mean_curvature: f64,
    pub max_v_x: f64,
}

/// Chord sums at `rate_hz` samples per second.
pub fn trajectory_metrics(
    traj: &TrajectorySE2,
    grid: &TerrainGrid,
    cfg: &PlannerConfig,
    rate_hz: f64,
) -> Result<TrajectoryMetrics, EvalError> {
    let duration = traj.duration();
    let n = ((duration * rate_hz).ceil() as usize).max(1);
    let mut prev: Option<TrajectorySample> = None;
    let (mut l2, mut l3, mut weighted, mut max_v_x) = (0.0, 0.0, 0.0, 0.0f64);
    for t in uniform_times(duration, n) {
        let s = sample_at(traj, grid, cfg, t)?;
        max_v_x = max_v_x.max(s.v_x.abs());
        if let Some(p) = prev {
            let (dx, dy, dz) = (s.x - p.x, s.y - p.y, s.z - p.z);
            let flat = dx.hypot(dy);
            let lifted = flat.hypot(dz);
            l2 += flat;
            l3 += lifted;
            weighted += 0.5 * (p.curvature.abs() + s.curvature.abs()) * lifted;
        }
        prev = Some(s);
    }
    Ok(TrajectoryMetrics {
        duration,
        length_2d: l2,
        length_3d: l3,
        mean_curvature: if l3 > 0.0 { weighted / l3 } else { 0.0 },
        max_v_x,
    })
}

const CSV_HEADER: [&str; 24] = [
    "t", "x", "y", "theta", "z", "v", "a_t", "a_n", "omega", "v_x", "a_x", "a_y", "omega_z", "curvature", "steering",
    "cos_xi", "sigma", "h", "g_velocity", "g_longitudinal_acc", "g_lateral_acc", "g_curvature", "g_attitude",
    "g_variation",
];

/// Write samples at `rate_hz` as CSV. Samples that cannot be evaluated are
/// reported as an error.
pub fn write_samples_csv(
    path: impl AsRef<Path>,
    traj: &TrajectorySE2,
    grid: &TerrainGrid,
    cfg: &PlannerConfig,
    rate_hz: f64,
) -> Result<usize, Box<dyn std::error::Error + Send + Sync>> {
    let duration = traj.duration();
    let n = ((duration * rate_hz).ceil() as usize).max(1);
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CSV_HEADER)?;
    for t in uniform_times(duration, n) {
        let s = sample_at(traj, grid, cfg, t)?;
        let mut row = vec![
            s.t, s.x, s.y, s.theta, s.z, s.flat.v, s.flat.a_t, s.flat.a_n, s.flat.omega, s.v_x, s.a_x, s.a_y,
            s.omega_z, s.curvature, s.steering, s.cos_xi, s.sigma, s.h,
        ];
        row.extend_from_slice(&s.g);
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(n + 1)
}
