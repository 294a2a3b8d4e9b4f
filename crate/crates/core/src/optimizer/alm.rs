//! Powell–Hestenes–Rockafellar augmented Lagrangian method around an
//! L-BFGS inner solve, for problems of the form
//! `min f(x)  s.t.  h(x) = 0,  g(x) ≤ 0`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::lbfgs::{self, LbfgsParams, LbfgsStatus};

/// One evaluation of a constrained problem at a fixed point.
pub trait Evaluation {
    fn cost(&self) -> f64;
    fn equalities(&self) -> &[f64];
    fn inequalities(&self) -> &[f64];
    /// Measure compared against `eps_cons`. Defaults to `max(|h|, g⁺)`;
    /// problems with scaled constraints may report the unscaled measure.
    fn violation(&self) -> f64 {
        max_violation(self.equalities(), self.inequalities())
    }
    /// `∇f + Σ w_eq ∇h + Σ w_in ∇g` at the evaluated point.
    fn pullback(&self, w_eq: &[f64], w_in: &[f64]) -> Vec<f64>;
}

pub trait ConstrainedProblem {
    type Eval: Evaluation;
    type Error: std::error::Error;

    fn evaluate(&self, x: &[f64]) -> Result<Self::Eval, Self::Error>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlmParams {
    pub rho_init: f64,
    pub rho_growth: f64,
    pub rho_cap: f64,
    /// Bound on the magnitude of every multiplier.
    pub multiplier_cap: f64,
    /// Maximum constraint violation at convergence.
    pub eps_cons: f64,
    /// Maximum relative gradient norm `‖∇L‖∞ / max(1, |L|)` at convergence.
    pub eps_grad: f64,
    pub max_outer: usize,
}

impl Default for AlmParams {
    fn default() -> Self {
        Self {
            rho_init: 1e3,
            rho_growth: 10.0,
            rho_cap: 1e6,
            multiplier_cap: 1e8,
            eps_cons: 1e-4,
            eps_grad: 1e-5,
            max_outer: 50,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum AlmError<E> {
    #[error("initial point cannot be evaluated: {0}")]
    Start(E),
    #[error("objective is not finite at the initial point")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlmOutcome {
    pub x: Vec<f64>,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub rho: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub converged: bool,
    /// Violation measure of the problem at `x`.
    pub max_violation: f64,
    /// Relative gradient norm of the last inner solve.
    pub inner_gradient: f64,
}

/// `max(max |h|, max g⁺)`.
pub fn max_violation(eq: &[f64], ineq: &[f64]) -> f64 {
    let h = eq.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    ineq.iter().fold(h, |m, v| m.max(*v))
}

struct Multipliers<'a> {
    lambda: &'a [f64],
    mu: &'a [f64],
    rho: f64,
}

impl Multipliers<'_> {
    /// Augmented Lagrangian value and gradient, or `None` if not finite.
    fn lagrangian(&self, e: &impl Evaluation) -> Option<(f64, Vec<f64>)> {
        let rho = self.rho;
        let mut value = e.cost();
        let mut w_eq = Vec::with_capacity(self.lambda.len());
        for (h, l) in e.equalities().iter().zip(self.lambda) {
            let shifted = h + l / rho;
            value += 0.5 * rho * shifted * shifted - 0.5 * l * l / rho;
            w_eq.push(rho * h + l);
        }
        let mut w_in = Vec::with_capacity(self.mu.len());
        for (g, m) in e.inequalities().iter().zip(self.mu) {
            let shifted = (g + m / rho).max(0.0);
            value += 0.5 * rho * shifted * shifted - 0.5 * m * m / rho;
            w_in.push((rho * g + m).max(0.0));
        }
        let grad = e.pullback(&w_eq, &w_in);
        (value.is_finite() && grad.iter().all(|v| v.is_finite())).then_some((value, grad))
    }
}

pub fn solve<P: ConstrainedProblem>(
    problem: &P,
    x0: Vec<f64>,
    params: &AlmParams,
    inner: &LbfgsParams,
) -> Result<AlmOutcome, AlmError<P::Error>> {
    let first = problem.evaluate(&x0).map_err(AlmError::Start)?;
    let finite = first.cost().is_finite()
        && first.equalities().iter().chain(first.inequalities()).all(|v| v.is_finite());
    if !finite {
        return Err(AlmError::NonFinite);
    }
    let mut lambda = vec![0.0; first.equalities().len()];
    let mut mu = vec![0.0; first.inequalities().len()];
    let mut rho = params.rho_init;
    let mut x = x0;
    let mut inner_iterations = 0;
    let mut best: Option<AlmOutcome> = None;
    let mut outer_done = 0;
    let cap = params.multiplier_cap;

    for outer in 1..=params.max_outer {
        let mult = Multipliers {
            lambda: &lambda,
            mu: &mu,
            rho,
        };
        let objective = |z: &[f64]| problem.evaluate(z).ok().and_then(|e| mult.lagrangian(&e));
        let Some(res) = lbfgs::minimize(objective, x.clone(), params.eps_grad, inner) else {
            break;
        };
        inner_iterations += res.iterations;
        outer_done = outer;
        x = res.x;
        let inner_gradient = lbfgs::relative_gradient(res.f, &res.grad);
        let e = problem
            .evaluate(&x)
            .unwrap_or_else(|_| unreachable!("accepted iterates are evaluable"));
        let violation = e.violation();
        let converged = violation < params.eps_cons
            && (res.status == LbfgsStatus::Converged || inner_gradient < params.eps_grad);

        let outcome = AlmOutcome {
            x: x.clone(),
            lambda: lambda.clone(),
            mu: mu.clone(),
            rho,
            outer_iterations: outer,
            inner_iterations,
            converged,
            max_violation: violation,
            inner_gradient,
        };
        if converged {
            return Ok(outcome);
        }
        if best.as_ref().is_none_or(|b| violation <= b.max_violation) {
            best = Some(outcome);
        }

        for (l, h) in lambda.iter_mut().zip(e.equalities()) {
            *l = (*l + rho * h).clamp(-cap, cap);
        }
        for (m, g) in mu.iter_mut().zip(e.inequalities()) {
            *m = (*m + rho * g).clamp(0.0, cap);
        }
        rho = (params.rho_growth * rho).min(params.rho_cap);
    }
    let mut out = best.unwrap_or_else(|| AlmOutcome {
        x,
        lambda,
        mu,
        rho,
        outer_iterations: 0,
        inner_iterations,
        converged: false,
        max_violation: f64::INFINITY,
        inner_gradient: f64::INFINITY,
    });
    out.inner_iterations = inner_iterations;
    out.outer_iterations = outer_done;
    Ok(out)
}
