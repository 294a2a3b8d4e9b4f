//! The discretized trajectory problem: cost, stamp constraints and the
//! gradient chain from local stamp variables back to the primal vector.
//!
//! Primal layout: interior xy waypoints (`(M−1)×2`), interior θ waypoints
//! (`λM−1`), then one unconstrained time parameter per xy piece. Each xy piece
//! is split into `λ` θ pieces of equal duration, so both splines always span
//! the same total time.
//!
//! Inequalities are six per stamp, followed by one lower duration bound per
//! xy piece.

use crate::dynamics::{
    attitude_projection, dynamic_state, state_gradients, AttitudeProjection, DynamicState, DynamicsError,
    FlatKinematics,
};
use crate::frontend::{theta_durations, InitialGuess};
use crate::spline::{basis, time_backward, time_forward, time_forward_derivative, BoundaryCondition, QuinticSpline};
use crate::terrain_map::TerrainGrid;

use super::alm::{ConstrainedProblem, Evaluation};
use super::{EvalError, OptimizerError, PlannerConfig, TrajectorySE2};

/// Local variables at one instant: `[x, y, ẋ, ẏ, ẍ, ÿ, θ, θ̇]`.
pub type StampVars = [f64; 8];

const X: usize = 0;
const Y: usize = 1;
const VX: usize = 2;
const VY: usize = 3;
const AX: usize = 4;
const AY: usize = 5;
const TH: usize = 6;
const DTH: usize = 7;

/// Values of everything the problem constrains at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StampTerms {
    pub z: f64,
    pub sigma: f64,
    pub h: f64,
    /// Inequalities: velocity, longitudinal and lateral acceleration,
    /// curvature, attitude, surface variation.
    pub g: [f64; 6],
    pub flat: FlatKinematics,
    pub projection: AttitudeProjection,
    pub dynamic: DynamicState,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StampGradients {
    pub h: StampVars,
    pub g: [StampVars; 6],
    pub sigma: StampVars,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StampError {
    Terrain(crate::terrain_map::TerrainError),
    Chart(DynamicsError),
}

impl StampError {
    pub(crate) fn at(self, t: f64) -> EvalError {
        match self {
            StampError::Terrain(source) => EvalError::Terrain { t, source },
            StampError::Chart(source) => EvalError::Chart { t, source },
        }
    }
}

/// Spread an `(x, y, θ)` gradient into stamp-variable slots.
fn lift(g: [f64; 3], scale: f64, out: &mut StampVars) {
    out[X] += scale * g[0];
    out[Y] += scale * g[1];
    out[TH] += scale * g[2];
}

fn scaled(v: &StampVars, s: f64) -> StampVars {
    v.map(|x| x * s)
}

/// Evaluate all constrained quantities at one instant, with gradients when
/// `with_gradients` is set.
pub fn stamp_terms(
    grid: &TerrainGrid,
    cfg: &PlannerConfig,
    u: &StampVars,
    with_gradients: bool,
) -> Result<(StampTerms, Option<StampGradients>), StampError> {
    let theta = u[TH];
    let q = grid.query(u[X], u[Y], theta).map_err(StampError::Terrain)?;
    let proj = attitude_projection(theta, q.a, q.b).map_err(StampError::Chart)?;
    let flat = FlatKinematics::from_derivatives([u[VX], u[VY]], [u[AX], u[AY]], theta, u[DTH]);
    let vehicle = cfg.vehicle();
    let dynamic = dynamic_state(&flat, &proj, &vehicle);
    let (st, ct) = theta.sin_cos();

    let p = proj.cos_phi_x;
    let qy = proj.cos_phi_y;
    let c = proj.cos_xi;
    let speed2 = u[VX] * u[VX] + u[VY] * u[VY];
    let vx2 = speed2 / (p * p);
    let den = vx2 + vehicle.delta_plus;
    let omega2 = u[DTH] * u[DTH] / (c * c);

    let h = u[VX] * st - u[VY] * ct;
    let g = [
        vx2 - cfg.v_max * cfg.v_max,
        dynamic.a_x * dynamic.a_x - cfg.a_mlon * cfg.a_mlon,
        dynamic.a_y * dynamic.a_y - cfg.a_mlat * cfg.a_mlat,
        omega2 / den - cfg.curvature_bound(),
        cfg.c_min - c,
        q.sigma - cfg.sigma_max,
    ];
    let terms = StampTerms {
        z: q.z,
        sigma: q.sigma,
        h,
        g,
        flat,
        projection: proj,
        dynamic,
    };
    if !with_gradients {
        return Ok((terms, None));
    }

    let pg = state_gradients(theta, q.a, q.b, q.grad_a, q.grad_b).map_err(StampError::Chart)?;
    let grav = vehicle.gravity;

    let mut gh = [0.0; 8];
    gh[VX] = st;
    gh[VY] = -ct;
    gh[TH] = u[VX] * ct + u[VY] * st;

    let mut g_vx2 = [0.0; 8];
    g_vx2[VX] = 2.0 * u[VX] / (p * p);
    g_vx2[VY] = 2.0 * u[VY] / (p * p);
    lift(pg.cos_phi_x, -2.0 * speed2 / (p * p * p), &mut g_vx2);

    let (a_t, a_n) = (flat.a_t, flat.a_n);
    let mut g_ax = [0.0; 8];
    g_ax[AX] = ct / p;
    g_ax[AY] = st / p;
    g_ax[TH] = a_n / p;
    lift(pg.cos_phi_x, -a_t / (p * p), &mut g_ax);
    lift(pg.sin_phi_x, grav, &mut g_ax);

    let mut g_ay = [0.0; 8];
    g_ay[AX] = -st / qy;
    g_ay[AY] = ct / qy;
    g_ay[TH] = -a_t / qy;
    lift(pg.cos_phi_y, -a_n / (qy * qy), &mut g_ay);
    lift(pg.sin_phi_y, grav, &mut g_ay);

    let mut g_curv = scaled(&g_vx2, -omega2 / (den * den));
    g_curv[DTH] += 2.0 * u[DTH] / (c * c * den);
    lift(pg.cos_xi, -2.0 * omega2 / (c * den), &mut g_curv);

    let mut g_att = [0.0; 8];
    lift(pg.cos_xi, -1.0, &mut g_att);

    let mut g_sigma = [0.0; 8];
    lift(q.grad_sigma, 1.0, &mut g_sigma);

    let grads = StampGradients {
        h: gh,
        g: [
            g_vx2,
            scaled(&g_ax, 2.0 * dynamic.a_x),
            scaled(&g_ay, 2.0 * dynamic.a_y),
            g_curv,
            g_att,
            g_sigma,
        ],
        sigma: g_sigma,
    };
    Ok((terms, Some(grads)))
}

/// Problem data that does not change during optimization.
#[derive(Debug, Clone)]
pub struct TrajectoryProblem<'a> {
    grid: &'a TerrainGrid,
    cfg: PlannerConfig,
    pieces: usize,
    split: usize,
    /// Lower bound on every xy piece duration.
    min_duration: f64,
    head_xy: BoundaryCondition,
    tail_xy: BoundaryCondition,
    head_theta: BoundaryCondition,
    tail_theta: BoundaryCondition,
}

/// Per-stamp record kept for the gradient pullback.
#[derive(Debug, Clone)]
struct StampRecord {
    piece: usize,
    theta_piece: usize,
    t_xy: f64,
    t_theta: f64,
    /// d(t_xy)/dT and d(t_θ)/dT for the parent piece duration T.
    frac_xy: f64,
    frac_theta: f64,
    vel: [f64; 2],
    acc: [f64; 2],
    jerk: [f64; 2],
    theta_rate: f64,
    theta_acc: f64,
    sigma: f64,
    /// `√(T/K)`, the weight applied to this stamp's constraints.
    scale: f64,
    h: f64,
    g: [f64; 6],
    grads: StampGradients,
}

/// Cost parts at the optimization stamps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StampCost {
    pub jerk: f64,
    /// `Σ σ · T_i / K`, unweighted.
    pub sigma_integral: f64,
    pub duration: f64,
}

#[derive(Debug, Clone)]
pub struct TrajectoryEval {
    cost: f64,
    parts: StampCost,
    eq: Vec<f64>,
    ineq: Vec<f64>,
    violation: f64,
    taus: Vec<f64>,
    xy: QuinticSpline,
    theta: QuinticSpline,
    stamps: Vec<StampRecord>,
    rho_ter: f64,
    rho_t: f64,
    samples: usize,
    split: usize,
}

impl<'a> TrajectoryProblem<'a> {
    pub fn new(guess: &InitialGuess, grid: &'a TerrainGrid, cfg: &PlannerConfig) -> Result<Self, OptimizerError> {
        let m = guess.pieces();
        let split = guess.theta_split;
        if m == 0 || split == 0 {
            return Err(OptimizerError::Guess("no pieces".into()));
        }
        if guess.q_xy.len() != m - 1 || guess.q_theta.len() != m * split - 1 {
            return Err(OptimizerError::Guess(format!(
                "{} xy and {} θ waypoints for {m} pieces split {split} ways",
                guess.q_xy.len(),
                guess.q_theta.len()
            )));
        }
        if guess.head_xy.channels() != 2
            || guess.tail_xy.channels() != 2
            || guess.head_theta.channels() != 1
            || guess.tail_theta.channels() != 1
        {
            return Err(OptimizerError::Guess("boundary conditions have wrong channel counts".into()));
        }
        let mean = guess.t_xy.iter().sum::<f64>() / m as f64;
        Ok(Self {
            grid,
            cfg: cfg.clone(),
            pieces: m,
            split,
            min_duration: cfg.min_piece_ratio * mean,
            head_xy: guess.head_xy.clone(),
            tail_xy: guess.tail_xy.clone(),
            head_theta: guess.head_theta.clone(),
            tail_theta: guess.tail_theta.clone(),
        })
    }

    pub fn dim(&self) -> usize {
        2 * (self.pieces - 1) + (self.pieces * self.split - 1) + self.pieces
    }

    pub fn pieces(&self) -> usize {
        self.pieces
    }

    /// Primal vector of an initial guess.
    pub fn pack(&self, guess: &InitialGuess) -> Result<Vec<f64>, OptimizerError> {
        let mut x: Vec<f64> = guess.q_xy.iter().flatten().copied().collect();
        x.extend_from_slice(&guess.q_theta);
        for &t in &guess.t_xy {
            x.push(time_backward(t).map_err(|e| OptimizerError::Guess(e.to_string()))?);
        }
        Ok(x)
    }

    fn parts<'x>(&self, x: &'x [f64]) -> (&'x [f64], &'x [f64], &'x [f64]) {
        let n_xy = 2 * (self.pieces - 1);
        let n_th = self.pieces * self.split - 1;
        (&x[..n_xy], &x[n_xy..n_xy + n_th], &x[n_xy + n_th..])
    }

    pub fn durations(&self, x: &[f64]) -> Vec<f64> {
        self.parts(x).2.iter().map(|&tau| time_forward(tau)).collect()
    }

    fn splines(&self, x: &[f64]) -> Result<(QuinticSpline, QuinticSpline, Vec<f64>), EvalError> {
        let (q_xy, q_th, _) = self.parts(x);
        let t_xy = self.durations(x);
        let t_th = theta_durations(&t_xy, self.split);
        let xy = QuinticSpline::solve(q_xy, &t_xy, &self.head_xy, &self.tail_xy)?;
        let theta = QuinticSpline::solve(q_th, &t_th, &self.head_theta, &self.tail_theta)?;
        Ok((xy, theta, t_xy))
    }

    pub fn trajectory(&self, x: &[f64]) -> Result<TrajectorySE2, EvalError> {
        let (xy, theta, _) = self.splines(x)?;
        Ok(TrajectorySE2::new(xy.into_poly(), theta.into_poly())?)
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<TrajectoryEval, EvalError> {
        let (xy, theta, t_xy) = self.splines(x)?;
        let k = self.cfg.samples_per_piece;
        let split = self.split;
        let (pxy, pth) = (xy.poly(), theta.poly());

        let jerk = pxy.jerk_energy() + pth.jerk_energy();
        let duration: f64 = t_xy.iter().sum();
        let mut sigma_integral = 0.0;
        let mut eq = Vec::with_capacity(k * self.pieces);
        let mut ineq = Vec::with_capacity((6 * k + 1) * self.pieces);
        let mut stamps = Vec::with_capacity(k * self.pieces);
        let mut start = 0.0;
        let mut violation = 0.0f64;
        let mut buf = [0.0; 2];
        let mut th = [0.0; 1];

        for (i, &ti) in t_xy.iter().enumerate() {
            let scale = (ti / k as f64).sqrt();
            for j in 0..k {
                let frac_xy = j as f64 / k as f64;
                let sub = j * split / k;
                let frac_theta = frac_xy - sub as f64 / split as f64;
                let t_local = frac_xy * ti;
                let t_theta = frac_theta * ti;
                let theta_piece = i * split + sub;
                let t_global = start + t_local;

                let mut d = [[0.0; 2]; 4];
                for (order, slot) in d.iter_mut().enumerate() {
                    pxy.eval_piece_into(i, t_local, order, &mut buf);
                    *slot = buf;
                }
                let mut dth = [0.0; 3];
                for (order, slot) in dth.iter_mut().enumerate() {
                    pth.eval_piece_into(theta_piece, t_theta, order, &mut th);
                    *slot = th[0];
                }
                let u = [d[0][0], d[0][1], d[1][0], d[1][1], d[2][0], d[2][1], dth[0], dth[1]];
                let (terms, grads) = stamp_terms(self.grid, &self.cfg, &u, true).map_err(|e| e.at(t_global))?;
                if !(terms.h.is_finite() && terms.g.iter().all(|v| v.is_finite())) {
                    return Err(EvalError::NonFinite { t: t_global });
                }
                sigma_integral += terms.sigma * ti / k as f64;
                violation = terms.g.iter().fold(violation.max(terms.h.abs()), |m, v| m.max(*v));
                eq.push(scale * terms.h);
                ineq.extend(terms.g.iter().map(|v| scale * v));
                stamps.push(StampRecord {
                    piece: i,
                    theta_piece,
                    t_xy: t_local,
                    t_theta,
                    frac_xy,
                    frac_theta,
                    vel: d[1],
                    acc: d[2],
                    jerk: d[3],
                    theta_rate: dth[1],
                    theta_acc: dth[2],
                    sigma: terms.sigma,
                    scale,
                    h: terms.h,
                    g: terms.g,
                    grads: grads.expect("requested"),
                });
            }
            start += ti;
        }
        for &ti in &t_xy {
            let g = self.min_duration - ti;
            violation = violation.max(g);
            ineq.push(g);
        }

        let cost = jerk + self.cfg.rho_ter * sigma_integral + self.cfg.rho_t * duration;
        if !cost.is_finite() {
            return Err(EvalError::NonFinite { t: 0.0 });
        }
        Ok(TrajectoryEval {
            cost,
            parts: StampCost {
                jerk,
                sigma_integral,
                duration,
            },
            eq,
            ineq,
            violation,
            taus: self.parts(x).2.to_vec(),
            xy,
            theta,
            stamps,
            rho_ter: self.cfg.rho_ter,
            rho_t: self.cfg.rho_t,
            samples: k,
            split,
        })
    }
}

impl ConstrainedProblem for TrajectoryProblem<'_> {
    type Eval = TrajectoryEval;
    type Error = EvalError;

    fn evaluate(&self, x: &[f64]) -> Result<TrajectoryEval, EvalError> {
        TrajectoryProblem::evaluate(self, x)
    }
}

impl TrajectoryEval {
    pub fn parts(&self) -> StampCost {
        self.parts
    }
}

impl Evaluation for TrajectoryEval {
    fn cost(&self) -> f64 {
        self.cost
    }

    fn equalities(&self) -> &[f64] {
        &self.eq
    }

    fn inequalities(&self) -> &[f64] {
        &self.ineq
    }

    fn violation(&self) -> f64 {
        self.violation
    }

    fn pullback(&self, w_eq: &[f64], w_in: &[f64]) -> Vec<f64> {
        let pxy = self.xy.poly();
        let pth = self.theta.poly();
        let m = pxy.pieces();
        let mut gc_xy = vec![0.0; pxy.coeffs().len()];
        let mut gt_xy = vec![0.0; m];
        let mut gc_th = vec![0.0; pth.coeffs().len()];
        let mut gt_th = vec![0.0; pth.pieces()];
        pxy.add_jerk_energy_gradient(1.0, &mut gc_xy, &mut gt_xy);
        pth.add_jerk_energy_gradient(1.0, &mut gc_th, &mut gt_th);

        let inv_k = 1.0 / self.samples as f64;
        for (n, s) in self.stamps.iter().enumerate() {
            let ti = pxy.durations()[s.piece];
            let mut gu = scaled(&s.grads.sigma, self.rho_ter * ti * inv_k);
            let mut weighted = 0.0;
            let values = std::iter::once(s.h).chain(s.g);
            let weights = std::iter::once((w_eq[n], &s.grads.h)).chain((0..6).map(|c| (w_in[6 * n + c], &s.grads.g[c])));
            for ((w, grad), v) in weights.zip(values) {
                if w != 0.0 {
                    let ws = w * s.scale;
                    gu.iter_mut().zip(grad).for_each(|(a, b)| *a += ws * b);
                    weighted += w * v;
                }
            }

            let b0 = basis(s.t_xy, 0);
            let b1 = basis(s.t_xy, 1);
            let b2 = basis(s.t_xy, 2);
            for p in 0..6 {
                for ch in 0..2 {
                    gc_xy[(6 * s.piece + p) * 2 + ch] += gu[X + ch] * b0[p] + gu[VX + ch] * b1[p] + gu[AX + ch] * b2[p];
                }
            }
            let c0 = basis(s.t_theta, 0);
            let c1 = basis(s.t_theta, 1);
            for p in 0..6 {
                gc_th[6 * s.theta_piece + p] += gu[TH] * c0[p] + gu[DTH] * c1[p];
            }

            let along_xy = gu[X] * s.vel[0]
                + gu[Y] * s.vel[1]
                + gu[VX] * s.acc[0]
                + gu[VY] * s.acc[1]
                + gu[AX] * s.jerk[0]
                + gu[AY] * s.jerk[1];
            let along_th = gu[TH] * s.theta_rate + gu[DTH] * s.theta_acc;
            gt_xy[s.piece] += s.frac_xy * along_xy
                + s.frac_theta * along_th
                + self.rho_ter * s.sigma * inv_k
                + weighted * s.scale / (2.0 * ti);
        }
        let duration_weights = &w_in[6 * self.stamps.len()..];
        for (g, w) in gt_xy.iter_mut().zip(duration_weights) {
            *g += self.rho_t - w;
        }

        let gxy = self.xy.propagate_gradients(&gc_xy, &gt_xy);
        let gth = self.theta.propagate_gradients(&gc_th, &gt_th);
        let mut out = gxy.waypoints;
        out.extend_from_slice(&gth.waypoints);
        let inv_split = 1.0 / self.split as f64;
        for (i, &tau) in self.taus.iter().enumerate() {
            let from_theta: f64 = gth.durations[i * self.split..(i + 1) * self.split].iter().sum();
            out.push((gxy.durations[i] + from_theta * inv_split) * time_forward_derivative(tau));
        }
        out
    }
}
