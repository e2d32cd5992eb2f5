//! Damped Newton-Raphson maximizer shared by the regression families.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Objective value with analytic first and second derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loglik: f64,
    pub gradient: Vec<f64>,
    /// Row-major Hessian of `loglik`.
    pub hessian: Vec<f64>,
}

impl Evaluation {
    pub fn gradient_inf_norm(&self) -> f64 {
        self.gradient.iter().fold(0.0, |m, g| m.max(g.abs()))
    }
}

pub trait Objective {
    fn dim(&self) -> usize;
    fn evaluate(&self, theta: &[f64]) -> Evaluation;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonOptions {
    pub max_iter: usize,
    pub max_halvings: usize,
    /// Relative log-likelihood change and gradient sup-norm threshold.
    pub tol: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            max_iter: 25,
            max_halvings: 10,
            tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NewtonResult {
    pub theta: Vec<f64>,
    pub evaluation: Evaluation,
    pub trace: Vec<f64>,
    pub iterations: usize,
}

/// Gradient bound a returned optimum must satisfy.
pub const SCORE_BOUND: f64 = 1e-6;

/// Maximizes `objective` from `start`. `scale` gives per-coordinate scales used
/// to measure step sizes; `diverged` flags runaway iterates.
pub fn maximize<O: Objective + ?Sized>(
    objective: &O,
    start: Vec<f64>,
    options: &NewtonOptions,
    scale: &[f64],
    diverged: impl Fn(&[f64]) -> bool,
) -> Result<NewtonResult> {
    let dim = objective.dim();
    let mut theta = start;
    let mut eval = objective.evaluate(&theta);
    if !eval.loglik.is_finite() {
        return Err(Error::NonConvergence("non-finite log-likelihood at start".into()));
    }
    let mut trace = vec![eval.loglik];
    if dim == 0 {
        return Ok(NewtonResult {
            theta,
            evaluation: eval,
            trace,
            iterations: 0,
        });
    }
    let mut last_rel = f64::INFINITY;
    for iter in 0..=options.max_iter {
        let grad_inf = eval.gradient_inf_norm();
        let step = newton_step(&eval, dim);
        let step_size = step
            .iter()
            .zip(scale)
            .fold(0.0f64, |m, (d, s)| m.max((d * s).abs()));
        // A vanishing score alone is not enough: along a monotone likelihood
        // the score decays while Newton steps stay of order one.
        let small_step = step_size < 1e-6;
        if small_step && (grad_inf < options.tol || (last_rel < options.tol && grad_inf < SCORE_BOUND)) {
            polish(objective, &mut theta, &mut eval, &mut trace, step, dim);
            return Ok(NewtonResult {
                theta,
                evaluation: eval,
                trace,
                iterations: iter,
            });
        }
        if iter == options.max_iter {
            break;
        }
        let mut factor = 1.0;
        let mut accepted = None;
        for _ in 0..=options.max_halvings {
            let cand: Vec<f64> = theta.iter().zip(&step).map(|(t, d)| t + factor * d).collect();
            let e = objective.evaluate(&cand);
            if e.loglik.is_finite() && e.loglik >= eval.loglik {
                accepted = Some((cand, e));
                break;
            }
            factor *= 0.5;
        }
        let Some((cand, e)) = accepted else {
            // Near the optimum of a large sample the gain of a tiny step is
            // below the rounding of the log-likelihood itself.
            if grad_inf < SCORE_BOUND || small_step {
                polish(objective, &mut theta, &mut eval, &mut trace, step, dim);
            }
            if eval.gradient_inf_norm() < SCORE_BOUND {
                return Ok(NewtonResult {
                    theta,
                    evaluation: eval,
                    trace,
                    iterations: iter,
                });
            }
            return Err(Error::NonConvergence(format!(
                "step-halving could not increase the log-likelihood (score {grad_inf:.1e}, step {step_size:.1e}, iteration {iter})"
            )));
        };
        last_rel = (e.loglik - eval.loglik).abs() / (eval.loglik.abs() + options.tol);
        theta = cand;
        eval = e;
        trace.push(eval.loglik);
        if diverged(&theta) {
            return Err(Error::NonConvergence("possible monotone likelihood".into()));
        }
    }
    Err(Error::NonConvergence(format!(
        "possible monotone likelihood (no convergence in {} iterations)",
        options.max_iter
    )))
}

/// Full Newton steps from a converged point, kept while they shrink the
/// score. At this distance from the optimum the log-likelihood change is at
/// rounding level, so only steps that do not lower it enter the trace.
fn polish<O: Objective + ?Sized>(
    objective: &O,
    theta: &mut Vec<f64>,
    eval: &mut Evaluation,
    trace: &mut Vec<f64>,
    mut step: Vec<f64>,
    dim: usize,
) {
    for _ in 0..3 {
        let cand: Vec<f64> = theta.iter().zip(&step).map(|(t, d)| t + d).collect();
        let e = objective.evaluate(&cand);
        let rounding = 1e-12 * (1.0 + eval.loglik.abs());
        if !(e.loglik >= eval.loglik - rounding && e.gradient_inf_norm() < eval.gradient_inf_norm()) {
            return;
        }
        if e.loglik >= *trace.last().expect("non-empty trace") {
            trace.push(e.loglik);
        }
        *theta = cand;
        *eval = e;
        step = newton_step(eval, dim);
    }
}

/// Solves (-H) d = g, adding a ridge when -H is not positive definite.
fn newton_step(eval: &Evaluation, dim: usize) -> Vec<f64> {
    let info = -DMatrix::from_row_slice(dim, dim, &eval.hessian);
    let g = DVector::from_column_slice(&eval.gradient);
    if let Some(ch) = info.clone().cholesky() {
        return ch.solve(&g).iter().copied().collect();
    }
    let diag_max = (0..dim).fold(0.0f64, |m, i| m.max(info[(i, i)].abs())).max(1.0);
    let mut ridge = 1e-8 * diag_max;
    loop {
        let mut m = info.clone();
        for i in 0..dim {
            m[(i, i)] += ridge;
        }
        if let Some(ch) = m.cholesky() {
            return ch.solve(&g).iter().copied().collect();
        }
        ridge *= 10.0;
        if !ridge.is_finite() {
            return eval.gradient.clone();
        }
    }
}

/// Inverse of the observed information (-H), row-major.
pub fn covariance_from_hessian(hessian: &[f64], dim: usize) -> Result<Vec<f64>> {
    if dim == 0 {
        return Ok(Vec::new());
    }
    let info = -DMatrix::from_row_slice(dim, dim, hessian);
    let inv = match info.clone().cholesky() {
        Some(ch) => ch.inverse(),
        None => info
            .try_inverse()
            .ok_or_else(|| Error::NonConvergence("singular information matrix".into()))?,
    };
    let mut out = Vec::with_capacity(dim * dim);
    for i in 0..dim {
        for j in 0..dim {
            out.push(0.5 * (inv[(i, j)] + inv[(j, i)]));
        }
    }
    Ok(out)
}
