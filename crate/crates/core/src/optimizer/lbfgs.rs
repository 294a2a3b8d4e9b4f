//! Limited-memory BFGS with a weak-Wolfe bisection line search.
//!
//! The objective returns `None` for points where it cannot be evaluated; the
//! line search treats those like a failed sufficient-decrease test.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LbfgsParams {
    pub memory: usize,
    pub max_iterations: usize,
    /// Sufficient-decrease constant.
    pub armijo: f64,
    /// Curvature constant of the weak Wolfe condition.
    pub wolfe: f64,
    pub max_line_search: usize,
    /// Relative tolerance on `f` for the approximate Wolfe test, used when
    /// decreases fall below rounding error.
    pub approx_wolfe: f64,
}

impl Default for LbfgsParams {
    fn default() -> Self {
        Self {
            memory: 16,
            max_iterations: 2000,
            armijo: 1e-4,
            wolfe: 0.9,
            max_line_search: 64,
            approx_wolfe: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LbfgsStatus {
    /// Relative gradient norm fell below the tolerance.
    Converged,
    /// The line search found no acceptable step.
    Stalled,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub status: LbfgsStatus,
}

/// `‖g‖∞ / max(1, |f|)`.
pub fn relative_gradient(f: f64, g: &[f64]) -> f64 {
    g.iter().fold(0.0f64, |m, v| m.max(v.abs())) / f.abs().max(1.0)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(x: &[f64], alpha: f64, d: &[f64]) -> Vec<f64> {
    x.iter().zip(d).map(|(a, b)| a + alpha * b).collect()
}

/// Minimize from `x0`, which must be evaluable. Returns `None` otherwise.
pub fn minimize<F>(mut objective: F, x0: Vec<f64>, grad_tol: f64, params: &LbfgsParams) -> Option<LbfgsResult>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let (mut f, mut g) = objective(&x0)?;
    let mut x = x0;
    let mut evaluations = 1;
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(params.memory);

    let finish = |x, f, grad, iterations, evaluations, status| {
        Some(LbfgsResult {
            x,
            f,
            grad,
            iterations,
            evaluations,
            status,
        })
    };

    for iter in 0..params.max_iterations {
        if relative_gradient(f, &g) < grad_tol {
            return finish(x, f, g, iter, evaluations, LbfgsStatus::Converged);
        }

        let mut d = direction(&g, &history);
        let mut gd = dot(&g, &d);
        if !(gd < 0.0) {
            history.clear();
            d = direction(&g, &history);
            gd = dot(&g, &d);
        }

        let Some((step, f_new, g_new, evals)) = line_search(&mut objective, &x, f, gd, &d, params) else {
            return finish(x, f, g, iter, evaluations + params.max_line_search, LbfgsStatus::Stalled);
        };
        evaluations += evals;

        let s: Vec<f64> = d.iter().map(|v| step * v).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        let ss = dot(&s, &s);
        let gnorm = dot(&g_new, &g_new).sqrt();
        if sy > 1e-6 * ss * gnorm {
            if history.len() == params.memory {
                history.pop_front();
            }
            history.push_back((s.clone(), y, 1.0 / sy));
        }
        x = axpy(&x, 1.0, &s);
        f = f_new;
        g = g_new;
    }
    let iterations = params.max_iterations;
    let status = if relative_gradient(f, &g) < grad_tol {
        LbfgsStatus::Converged
    } else {
        LbfgsStatus::MaxIterations
    };
    finish(x, f, g, iterations, evaluations, status)
}

/// Two-loop recursion. With no history, a unit-length steepest-descent step.
fn direction(g: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q: Vec<f64> = g.iter().map(|v| -v).collect();
    let Some((s_last, y_last, _)) = history.back() else {
        let norm = dot(g, g).sqrt().max(f64::MIN_POSITIVE);
        return q.iter().map(|v| v / norm).collect();
    };
    let mut alphas = vec![0.0; history.len()];
    for (k, (s, y, rho)) in history.iter().enumerate().rev() {
        let a = rho * dot(s, &q);
        alphas[k] = a;
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
    }
    let gamma = dot(s_last, y_last) / dot(y_last, y_last);
    q.iter_mut().for_each(|v| *v *= gamma);
    for (k, (s, y, rho)) in history.iter().enumerate() {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (alphas[k] - b) * si);
    }
    q
}

type StepResult = (f64, f64, Vec<f64>, usize);

/// Lewis–Overton bracketing: expand while the curvature condition fails,
/// bisect once a step fails sufficient decrease. Sufficient decrease is the
/// Armijo test or the Hager–Zhang approximate test
/// `f ≤ f₀ + ε|f₀|` with `∇f·d ≤ (2c₁ − 1) ∇f₀·d`.
fn line_search<F>(objective: &mut F, x: &[f64], f0: f64, gd0: f64, d: &[f64], params: &LbfgsParams) -> Option<StepResult>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let mut lo = 0.0;
    let mut hi = f64::INFINITY;
    let mut step = 1.0;
    let mut fallback: Option<(f64, f64, Vec<f64>)> = None;
    for evals in 1..=params.max_line_search {
        let trial = axpy(x, step, d);
        match objective(&trial) {
            Some((f1, g1)) if sufficient_decrease(f0, gd0, f1, dot(&g1, d), step, params) => {
                if dot(&g1, d) >= params.wolfe * gd0 {
                    return Some((step, f1, g1, evals));
                }
                lo = step;
                fallback = Some((step, f1, g1));
            }
            _ => hi = step,
        }
        step = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * lo };
        if hi - lo < 1e-16 * hi.max(1.0) {
            break;
        }
    }
    fallback.map(|(s, f, g)| (s, f, g, params.max_line_search))
}

fn sufficient_decrease(f0: f64, gd0: f64, f1: f64, gd1: f64, step: f64, params: &LbfgsParams) -> bool {
    let armijo = f1 <= f0 + params.armijo * step * gd0;
    let approx = f1 <= f0 + params.approx_wolfe * f0.abs() && gd1 <= (2.0 * params.armijo - 1.0) * gd0;
    armijo || approx
}
