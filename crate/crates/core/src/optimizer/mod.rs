//! Terrain-aware trajectory optimization over piecewise quintic xy and θ
//! splines, solved with an augmented Lagrangian method.

pub mod alm;
mod audit;
pub mod lbfgs;
mod problem;

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use audit::{
    audit, sample_at, trajectory_metrics, write_samples_csv, AuditReport, ConstraintReport, TrajectoryMetrics,
    TrajectorySample,
};
pub use problem::{stamp_terms, StampCost, StampError, StampGradients, StampTerms, StampVars, TrajectoryEval, TrajectoryProblem};

use crate::dynamics::{DynamicsError, VehicleParams};
use crate::frontend::{GuessParams, InitialGuess, SearchParams, Traversability};
use crate::spline::{PiecewisePoly, PolyJson, SplineError};
use crate::terrain_map::{SE2State, TerrainError, TerrainGrid};
use alm::{AlmError, AlmParams, Evaluation};
use lbfgs::LbfgsParams;

/// Names of the stamp constraints, equality first.
pub const CONSTRAINT_NAMES: [&str; 7] = [
    "nonholonomic",
    "velocity",
    "longitudinal_acc",
    "lateral_acc",
    "curvature",
    "attitude",
    "variation",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    /// Speed limit along the body x axis, m/s.
    pub v_max: f64,
    /// Longitudinal acceleration limit, m/s².
    pub a_mlon: f64,
    /// Lateral acceleration limit, m/s².
    pub a_mlat: f64,
    /// Steering angle limit, rad.
    pub delta_max: f64,
    /// Minimum cosine of the body tilt.
    pub c_min: f64,
    pub sigma_max: f64,
    /// Weight of the total duration.
    pub rho_t: f64,
    /// Weight of the surface-variation integral.
    pub rho_ter: f64,
    pub wheelbase: f64,
    pub gravity: f64,
    pub delta_plus: f64,
    /// Constraint stamps per xy piece.
    pub samples_per_piece: usize,
    /// θ pieces per xy piece.
    pub theta_split: usize,
    /// Lower bound on each xy piece duration, as a fraction of the initial
    /// guess's mean piece duration.
    pub min_piece_ratio: f64,
    pub alm: AlmParams,
    pub lbfgs: LbfgsParams,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        let vehicle = VehicleParams::default();
        Self {
            v_max: 0.8,
            a_mlon: 5.0,
            a_mlat: 5.0,
            delta_max: 0.505,
            c_min: 0.86,
            sigma_max: 0.05,
            rho_t: 500.0,
            rho_ter: 10.0,
            wheelbase: vehicle.wheelbase,
            gravity: vehicle.gravity,
            delta_plus: vehicle.delta_plus,
            samples_per_piece: 16,
            theta_split: 2,
            min_piece_ratio: 0.1,
            alm: AlmParams::default(),
            lbfgs: LbfgsParams::default(),
        }
    }
}

impl PlannerConfig {
    pub fn vehicle(&self) -> VehicleParams {
        VehicleParams {
            wheelbase: self.wheelbase,
            gravity: self.gravity,
            delta_plus: self.delta_plus,
        }
    }

    /// `tan²δ_max / L_w²`, the bound on squared curvature.
    pub fn curvature_bound(&self) -> f64 {
        let k = self.delta_max.tan() / self.wheelbase;
        k * k
    }

    pub fn traversability(&self) -> Traversability {
        Traversability {
            c_min: self.c_min,
            sigma_max: self.sigma_max,
        }
    }

    pub fn search_params(&self, max_expansions: usize) -> SearchParams {
        SearchParams {
            wheelbase: self.wheelbase,
            max_steering: self.delta_max,
            limits: self.traversability(),
            rho_ter: self.rho_ter,
            max_expansions,
        }
    }

    /// Guess parameters with the cruise speed defaulting to half the limit.
    pub fn guess_params(&self, piece_length: f64, v_init: Option<f64>) -> GuessParams {
        GuessParams {
            piece_length,
            theta_split: self.theta_split,
            v_init: v_init.unwrap_or(0.5 * self.v_max),
        }
    }

    /// Constant term of each inequality, used for relative margins.
    pub fn bound_constants(&self) -> [f64; 6] {
        [
            self.v_max * self.v_max,
            self.a_mlon * self.a_mlon,
            self.a_mlat * self.a_mlat,
            self.curvature_bound(),
            self.c_min,
            self.sigma_max,
        ]
    }

    pub fn validate(&self) -> Result<(), OptimizerError> {
        let positive = [
            ("v_max", self.v_max),
            ("a_mlon", self.a_mlon),
            ("a_mlat", self.a_mlat),
            ("delta_max", self.delta_max),
            ("sigma_max", self.sigma_max),
            ("wheelbase", self.wheelbase),
            ("delta_plus", self.delta_plus),
            ("alm.rho_init", self.alm.rho_init),
            ("alm.eps_cons", self.alm.eps_cons),
            ("alm.eps_grad", self.alm.eps_grad),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(OptimizerError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("rho_t", self.rho_t), ("rho_ter", self.rho_ter), ("gravity", self.gravity)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(OptimizerError::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if !(self.c_min > 0.0 && self.c_min < 1.0) {
            return Err(OptimizerError::Config(format!("c_min must lie in (0, 1), got {}", self.c_min)));
        }
        if self.delta_max >= std::f64::consts::FRAC_PI_2 {
            return Err(OptimizerError::Config("delta_max must be below π/2".into()));
        }
        if self.samples_per_piece < 4 {
            return Err(OptimizerError::Config("samples_per_piece must be at least 4".into()));
        }
        if self.theta_split == 0 {
            return Err(OptimizerError::Config("theta_split must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.min_piece_ratio) {
            return Err(OptimizerError::Config(format!(
                "min_piece_ratio must lie in [0, 1), got {}",
                self.min_piece_ratio
            )));
        }
        if !(self.alm.rho_growth > 1.0) {
            return Err(OptimizerError::Config("alm.rho_growth must exceed 1".into()));
        }
        if self.alm.rho_cap < self.alm.rho_init {
            return Err(OptimizerError::Config("alm.rho_cap is below alm.rho_init".into()));
        }
        if self.alm.max_outer == 0 || self.lbfgs.memory == 0 || self.lbfgs.max_iterations == 0 {
            return Err(OptimizerError::Config("iteration counts and memory must be positive".into()));
        }
        if !(0.0 < self.lbfgs.armijo && self.lbfgs.armijo < self.lbfgs.wolfe && self.lbfgs.wolfe < 1.0) {
            return Err(OptimizerError::Config("line search needs 0 < armijo < wolfe < 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error(transparent)]
    Spline(#[from] SplineError),
    #[error("terrain query failed at t = {t:.4} s: {source}")]
    Terrain { t: f64, source: TerrainError },
    #[error("attitude chart failed at t = {t:.4} s: {source}")]
    Chart { t: f64, source: DynamicsError },
    #[error("non-finite value at t = {t:.4} s")]
    NonFinite { t: f64 },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizerError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed initial guess: {0}")]
    Guess(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(EvalError),
}

/// xy and θ splines over the same total duration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TrajectoryJson", into = "TrajectoryJson")]
pub struct TrajectorySE2 {
    xy: PiecewisePoly,
    theta: PiecewisePoly,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrajectoryJson {
    xy: PolyJson,
    theta: PolyJson,
}

impl TryFrom<TrajectoryJson> for TrajectorySE2 {
    type Error = SplineError;
    fn try_from(j: TrajectoryJson) -> Result<Self, SplineError> {
        Self::new(PiecewisePoly::from_json(&j.xy)?, PiecewisePoly::from_json(&j.theta)?)
    }
}

impl From<TrajectorySE2> for TrajectoryJson {
    fn from(t: TrajectorySE2) -> Self {
        Self {
            xy: t.xy.to_json(),
            theta: t.theta.to_json(),
        }
    }
}

impl TrajectorySE2 {
    pub fn new(xy: PiecewisePoly, theta: PiecewisePoly) -> Result<Self, SplineError> {
        if xy.channels() != 2 || theta.channels() != 1 {
            return Err(SplineError::Shape("expected 2 xy channels and 1 θ channel".into()));
        }
        let (a, b) = (xy.total_duration(), theta.total_duration());
        if (a - b).abs() > 1e-9 * a.max(1.0) {
            return Err(SplineError::Shape(format!("xy spans {a} s but θ spans {b} s")));
        }
        Ok(Self { xy, theta })
    }

    pub fn xy(&self) -> &PiecewisePoly {
        &self.xy
    }

    pub fn theta(&self) -> &PiecewisePoly {
        &self.theta
    }

    pub fn duration(&self) -> f64 {
        self.xy.total_duration()
    }

    /// `[x, y, ẋ, ẏ, ẍ, ÿ, θ, θ̇]` at global time `t`. Times past the end by
    /// rounding error are clamped.
    pub fn stamp_vars(&self, t: f64) -> Result<StampVars, SplineError> {
        let end = self.duration();
        let t = if t > end && t <= end * (1.0 + 1e-12) { end } else { t };
        let p = self.xy.eval(t, 0)?;
        let v = self.xy.eval(t, 1)?;
        let a = self.xy.eval(t, 2)?;
        let tt = t.min(self.theta.total_duration());
        let th = self.theta.eval(tt, 0)?[0];
        let dth = self.theta.eval(tt, 1)?[0];
        Ok([p[0], p[1], v[0], v[1], a[0], a[1], th, dth])
    }

    pub fn state(&self, t: f64) -> Result<SE2State, SplineError> {
        let u = self.stamp_vars(t)?;
        Ok(SE2State {
            x: u[0],
            y: u[1],
            theta: u[6],
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    /// Closed-form jerk energy of both splines.
    pub jerk: f64,
    /// `∫ σ dt` by the rectangle rule at the stamps.
    pub sigma_integral: f64,
    /// `ρ_ter · ∫ σ dt`.
    pub sigma_term: f64,
    /// `ρ_T · T_s`.
    pub time_term: f64,
    pub duration: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    pub converged: bool,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub final_rho: f64,
    /// `max(|h|, g⁺)` at the optimization stamps.
    pub stamp_violation: f64,
    /// Relative gradient norm of the last inner solve.
    pub inner_gradient: f64,
    /// Seconds; not serialized so outputs stay reproducible.
    #[serde(skip)]
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub trajectory: TrajectorySE2,
    pub cost: CostBreakdown,
    /// Dense re-evaluation of every constraint.
    pub audit: AuditReport,
    pub diagnostics: SolverDiagnostics,
}

impl PlanResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan results serialize")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

/// Oversampling of the result audit relative to the optimization stamps.
pub const AUDIT_OVERSAMPLE: usize = 10;

/// Optimize a trajectory starting from `guess`. A result is returned even
/// when the solver does not converge; check `diagnostics.converged`.
pub fn alm_solve(guess: &InitialGuess, grid: &TerrainGrid, cfg: &PlannerConfig) -> Result<PlanResult, OptimizerError> {
    cfg.validate()?;
    let started = Instant::now();
    let problem = TrajectoryProblem::new(guess, grid, cfg)?;
    let x0 = problem.pack(guess)?;
    let outcome = alm::solve(&problem, x0, &cfg.alm, &cfg.lbfgs).map_err(|e| match e {
        AlmError::Start(err) => OptimizerError::NumericalFailure(err),
        AlmError::NonFinite => OptimizerError::NumericalFailure(EvalError::NonFinite { t: 0.0 }),
    })?;
    let eval = problem.evaluate(&outcome.x).map_err(OptimizerError::NumericalFailure)?;
    let trajectory = problem.trajectory(&outcome.x).map_err(OptimizerError::NumericalFailure)?;
    let parts = eval.parts();
    let cost = CostBreakdown {
        jerk: parts.jerk,
        sigma_integral: parts.sigma_integral,
        sigma_term: cfg.rho_ter * parts.sigma_integral,
        time_term: cfg.rho_t * parts.duration,
        duration: parts.duration,
        total: eval.cost(),
    };
    let report = audit(&trajectory, grid, cfg, AUDIT_OVERSAMPLE, Some(outcome.max_violation));
    Ok(PlanResult {
        trajectory,
        cost,
        audit: report,
        diagnostics: SolverDiagnostics {
            converged: outcome.converged,
            outer_iterations: outcome.outer_iterations,
            inner_iterations: outcome.inner_iterations,
            final_rho: outcome.rho,
            stamp_violation: outcome.max_violation,
            inner_gradient: outcome.inner_gradient,
            wall_time: started.elapsed().as_secs_f64(),
        },
    })
}
