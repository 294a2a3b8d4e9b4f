//! Piecewise quintic polynomials parameterized by interior waypoints and piece
//! durations.
//!
//! Coefficients are the unique solution of a banded 6M × 6M system: three
//! boundary rows at each end (position, velocity, acceleration) and, at every
//! junction, one waypoint row plus continuity of derivatives 0..=4. The same
//! factorization gives gradients with respect to waypoints and durations by a
//! transposed solve.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::banded::BandedMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SplineError {
    #[error("time {t} outside [0, {total}]")]
    OutOfDomain { t: f64, total: f64 },
    #[error("coefficient system is singular (non-positive duration?)")]
    SingularSystem,
    #[error("duration must be positive, got {0}")]
    NonPositiveDuration(f64),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// `n! / (n - k)!`
fn falling(n: usize, k: usize) -> f64 {
    ((n - k + 1)..=n).product::<usize>() as f64
}

/// Row `k` of the derivative basis: `d^k/dt^k [1, t, .., t^5]`.
pub fn basis(t: f64, order: usize) -> [f64; 6] {
    let mut out = [0.0; 6];
    if order > 5 {
        return out;
    }
    let mut pow = 1.0;
    for n in order..6 {
        out[n] = falling(n, order) * pow;
        pow *= t;
    }
    out
}

/// Position, velocity and acceleration at one end, one entry per channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryCondition {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    pub acceleration: Vec<f64>,
}

impl BoundaryCondition {
    pub fn new(position: Vec<f64>, velocity: Vec<f64>, acceleration: Vec<f64>) -> Self {
        Self {
            position,
            velocity,
            acceleration,
        }
    }

    pub fn scalar(p: f64, v: f64, a: f64) -> Self {
        Self::new(vec![p], vec![v], vec![a])
    }

    pub fn channels(&self) -> usize {
        self.position.len()
    }

    fn order(&self, k: usize) -> &[f64] {
        match k {
            0 => &self.position,
            1 => &self.velocity,
            _ => &self.acceleration,
        }
    }
}

/// Quintic pieces over consecutive durations. Coefficients are stored
/// row-major as `[(6 * piece + power) * channels + channel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewisePoly {
    channels: usize,
    durations: Vec<f64>,
    coeffs: Vec<f64>,
}

impl PiecewisePoly {
    pub fn new(channels: usize, durations: Vec<f64>, coeffs: Vec<f64>) -> Result<Self, SplineError> {
        if channels == 0 || durations.is_empty() {
            return Err(SplineError::Shape("need at least one channel and one piece".into()));
        }
        if coeffs.len() != 6 * durations.len() * channels {
            return Err(SplineError::Shape(format!(
                "{} coefficients for {} pieces x {} channels",
                coeffs.len(),
                durations.len(),
                channels
            )));
        }
        if let Some(&t) = durations.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
            return Err(SplineError::NonPositiveDuration(t));
        }
        Ok(Self {
            channels,
            durations,
            coeffs,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pieces(&self) -> usize {
        self.durations.len()
    }

    pub fn durations(&self) -> &[f64] {
        &self.durations
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn total_duration(&self) -> f64 {
        self.durations.iter().sum()
    }

    pub fn coeff(&self, piece: usize, power: usize, channel: usize) -> f64 {
        self.coeffs[(6 * piece + power) * self.channels + channel]
    }

    /// Piece index and local time; intervals are right-open except the last.
    pub fn locate(&self, t: f64) -> Result<(usize, f64), SplineError> {
        let total = self.total_duration();
        if !(t >= 0.0 && t <= total) {
            return Err(SplineError::OutOfDomain { t, total });
        }
        let mut start = 0.0;
        let last = self.pieces() - 1;
        for (i, &d) in self.durations.iter().enumerate() {
            if i == last || t < start + d {
                return Ok((i, (t - start).clamp(0.0, d)));
            }
            start += d;
        }
        unreachable!()
    }

    /// Derivative of `order` on one piece at local time `t`, written to `out`.
    pub fn eval_piece_into(&self, piece: usize, t: f64, order: usize, out: &mut [f64]) {
        for (ch, o) in out.iter_mut().enumerate().take(self.channels) {
            let mut acc = 0.0;
            if order <= 5 {
                for n in (order..6).rev() {
                    acc = acc * t + falling(n, order) * self.coeff(piece, n, ch);
                }
            }
            *o = acc;
        }
    }

    pub fn eval_piece(&self, piece: usize, t: f64, order: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.channels];
        self.eval_piece_into(piece, t, order, &mut out);
        out
    }

    /// Derivative of `order` at global time `t`.
    pub fn eval(&self, t: f64, order: usize) -> Result<Vec<f64>, SplineError> {
        let (piece, local) = self.locate(t)?;
        Ok(self.eval_piece(piece, local, order))
    }

    /// `∫ ‖x'''(t)‖² dt` over all pieces, in closed form.
    pub fn jerk_energy(&self) -> f64 {
        let mut total = 0.0;
        for (i, &t) in self.durations.iter().enumerate() {
            for ch in 0..self.channels {
                let (c3, c4, c5) = (self.coeff(i, 3, ch), self.coeff(i, 4, ch), self.coeff(i, 5, ch));
                let (t2, t3) = (t * t, t * t * t);
                total += 36.0 * c3 * c3 * t
                    + 144.0 * c3 * c4 * t2
                    + 192.0 * c4 * c4 * t3
                    + 240.0 * c3 * c5 * t3
                    + 720.0 * c4 * c5 * t2 * t2
                    + 720.0 * c5 * c5 * t3 * t2;
            }
        }
        total
    }

    /// Accumulate `scale · ∂(jerk energy)` into coefficient and duration gradients.
    pub fn add_jerk_energy_gradient(&self, scale: f64, grad_coeffs: &mut [f64], grad_durations: &mut [f64]) {
        let c = self.channels;
        for (i, &t) in self.durations.iter().enumerate() {
            let (t2, t3) = (t * t, t * t * t);
            let (t4, t5) = (t2 * t2, t3 * t2);
            for ch in 0..c {
                let (c3, c4, c5) = (self.coeff(i, 3, ch), self.coeff(i, 4, ch), self.coeff(i, 5, ch));
                grad_coeffs[(6 * i + 3) * c + ch] += scale * (72.0 * c3 * t + 144.0 * c4 * t2 + 240.0 * c5 * t3);
                grad_coeffs[(6 * i + 4) * c + ch] += scale * (144.0 * c3 * t2 + 384.0 * c4 * t3 + 720.0 * c5 * t4);
                grad_coeffs[(6 * i + 5) * c + ch] += scale * (240.0 * c3 * t3 + 720.0 * c4 * t4 + 1440.0 * c5 * t5);
                let jerk_end = 6.0 * c3 + 24.0 * c4 * t + 60.0 * c5 * t2;
                grad_durations[i] += scale * jerk_end * jerk_end;
            }
        }
    }

    pub fn to_json(&self) -> PolyJson {
        PolyJson {
            channels: self.channels,
            pieces: (0..self.pieces())
                .map(|i| PieceJson {
                    duration: self.durations[i],
                    coeffs: (0..self.channels)
                        .map(|ch| std::array::from_fn(|n| self.coeff(i, n, ch)))
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn from_json(json: &PolyJson) -> Result<Self, SplineError> {
        let c = json.channels;
        let mut coeffs = vec![0.0; 6 * json.pieces.len() * c];
        for (i, p) in json.pieces.iter().enumerate() {
            if p.coeffs.len() != c {
                return Err(SplineError::Shape(format!("piece {i} has {} channels", p.coeffs.len())));
            }
            for (ch, row) in p.coeffs.iter().enumerate() {
                for n in 0..6 {
                    coeffs[(6 * i + n) * c + ch] = row[n];
                }
            }
        }
        Self::new(c, json.pieces.iter().map(|p| p.duration).collect(), coeffs)
    }
}

/// Serialized form: one entry per piece, six power-basis coefficients per channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyJson {
    pub channels: usize,
    pub pieces: Vec<PieceJson>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PieceJson {
    pub duration: f64,
    pub coeffs: Vec<[f64; 6]>,
}

/// Which derivative order of its own piece each system row evaluates at the
/// piece end. `None` for rows that only touch t = 0 terms.
fn row_order(row: usize, pieces: usize) -> Option<(usize, usize)> {
    let n = 6 * pieces;
    if row < 3 {
        return None;
    }
    if row >= n - 3 {
        return Some((pieces - 1, row - (n - 3)));
    }
    let piece = (row - 3) / 6;
    let order = match (row - 3) % 6 {
        0 => 3,
        1 => 4,
        2 => 0,
        3 => 0,
        4 => 1,
        _ => 2,
    };
    Some((piece, order))
}

/// A solved spline together with the factored system, ready for adjoint
/// gradient propagation.
#[derive(Debug, Clone)]
pub struct QuinticSpline {
    poly: PiecewisePoly,
    system: BandedMatrix,
}

/// Gradients of a scalar cost with respect to the spline parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineGradients {
    /// `(M - 1) × channels`, row-major.
    pub waypoints: Vec<f64>,
    /// Total derivative with respect to each duration.
    pub durations: Vec<f64>,
    /// `[position, velocity, acceleration]`, each with one entry per channel.
    pub head: [Vec<f64>; 3],
    pub tail: [Vec<f64>; 3],
}

impl SplineGradients {
    /// Chain duration gradients through the time map to the free parameters.
    pub fn tau(&self, taus: &[f64]) -> Vec<f64> {
        self.durations
            .iter()
            .zip(taus)
            .map(|(g, &tau)| g * time_forward_derivative(tau))
            .collect()
    }
}

impl QuinticSpline {
    /// Solve for the spline through `waypoints` (`(M - 1) × channels`,
    /// row-major) with the given durations and end conditions.
    pub fn solve(
        waypoints: &[f64],
        durations: &[f64],
        head: &BoundaryCondition,
        tail: &BoundaryCondition,
    ) -> Result<Self, SplineError> {
        let m = durations.len();
        let c = head.channels();
        if m == 0 || c == 0 || tail.channels() != c || waypoints.len() != (m - 1) * c {
            return Err(SplineError::Shape(format!(
                "{} waypoint values for {m} pieces x {c} channels",
                waypoints.len()
            )));
        }
        if let Some(&t) = durations.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
            return Err(SplineError::NonPositiveDuration(t));
        }
        let n = 6 * m;
        let mut a = BandedMatrix::zeros(n, 6, 6);
        let mut b = vec![0.0; n * c];

        for k in 0..3 {
            for (col, v) in basis(0.0, k).into_iter().enumerate() {
                if v != 0.0 {
                    a.set(k, col, v);
                }
            }
            b[k * c..(k + 1) * c].copy_from_slice(head.order(k));
        }
        for i in 0..m - 1 {
            let t = durations[i];
            let base = 6 * i;
            let row0 = 6 * i + 3;
            let end_rows = [(row0, 3), (row0 + 1, 4), (row0 + 2, 0), (row0 + 3, 0), (row0 + 4, 1), (row0 + 5, 2)];
            for &(row, order) in &end_rows {
                for (p, v) in basis(t, order).into_iter().enumerate() {
                    if v != 0.0 {
                        a.set(row, base + p, v);
                    }
                }
            }
            // next piece at t = 0; the waypoint row has no such term
            for &(row, order) in &[(row0, 3), (row0 + 1, 4), (row0 + 3, 0), (row0 + 4, 1), (row0 + 5, 2)] {
                a.set(row, base + 6 + order, -falling(order, order));
            }
            b[(row0 + 2) * c..(row0 + 3) * c].copy_from_slice(&waypoints[i * c..(i + 1) * c]);
        }
        let t = durations[m - 1];
        for k in 0..3 {
            let row = n - 3 + k;
            for (p, v) in basis(t, k).into_iter().enumerate() {
                if v != 0.0 {
                    a.set(row, 6 * (m - 1) + p, v);
                }
            }
            b[row * c..(row + 1) * c].copy_from_slice(tail.order(k));
        }

        a.factorize().map_err(|_| SplineError::SingularSystem)?;
        a.solve(&mut b, c);
        Ok(Self {
            poly: PiecewisePoly::new(c, durations.to_vec(), b)?,
            system: a,
        })
    }

    pub fn poly(&self) -> &PiecewisePoly {
        &self.poly
    }

    pub fn into_poly(self) -> PiecewisePoly {
        self.poly
    }

    /// Adjoint of [`QuinticSpline::solve`]: given `∂cost/∂coefficients` (same
    /// layout as the coefficients) and the explicit partials `∂cost/∂T`,
    /// returns the total gradients with respect to waypoints, durations and
    /// boundary conditions.
    pub fn propagate_gradients(&self, grad_coeffs: &[f64], grad_durations: &[f64]) -> SplineGradients {
        let c = self.poly.channels;
        let m = self.poly.pieces();
        let n = 6 * m;
        assert_eq!(grad_coeffs.len(), n * c);
        assert_eq!(grad_durations.len(), m);
        let mut adj = grad_coeffs.to_vec();
        self.system.solve_transposed(&mut adj, c);

        let mut durations = grad_durations.to_vec();
        let mut deriv = vec![0.0; c];
        for row in 3..n {
            let Some((piece, order)) = row_order(row, m) else {
                continue;
            };
            self.poly
                .eval_piece_into(piece, self.poly.durations[piece], order + 1, &mut deriv);
            let dot: f64 = (0..c).map(|ch| adj[row * c + ch] * deriv[ch]).sum();
            durations[piece] -= dot;
        }

        let mut waypoints = Vec::with_capacity((m - 1) * c);
        for i in 0..m - 1 {
            let row = 6 * i + 5;
            waypoints.extend_from_slice(&adj[row * c..(row + 1) * c]);
        }
        let rows = |r: usize| adj[r * c..(r + 1) * c].to_vec();
        SplineGradients {
            waypoints,
            durations,
            head: [rows(0), rows(1), rows(2)],
            tail: [rows(n - 3), rows(n - 2), rows(n - 1)],
        }
    }
}

/// Map an unconstrained parameter to a positive duration. C², strictly
/// increasing, onto (0, ∞).
pub fn time_forward(tau: f64) -> f64 {
    if tau >= 0.0 {
        (0.5 * tau + 1.0) * tau + 1.0
    } else {
        1.0 / ((0.5 * tau - 1.0) * tau + 1.0)
    }
}

pub fn time_forward_derivative(tau: f64) -> f64 {
    if tau >= 0.0 {
        tau + 1.0
    } else {
        let den = (0.5 * tau - 1.0) * tau + 1.0;
        (1.0 - tau) / (den * den)
    }
}

/// Exact inverse of [`time_forward`].
pub fn time_backward(duration: f64) -> Result<f64, SplineError> {
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(SplineError::NonPositiveDuration(duration));
    }
    Ok(if duration >= 1.0 {
        (2.0 * duration - 1.0).sqrt() - 1.0
    } else {
        1.0 - (2.0 / duration - 1.0).sqrt()
    })
}
