//! Trust-region Gauss–Newton for unconstrained nonlinear least squares,
//! `min ½‖f(x)‖²`, with an exact subproblem solve on the normal equations.

use std::fmt::Display;
use std::time::{Duration, Instant};

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LsqError {
    #[error("residual or Jacobian evaluation failed: {0}")]
    Callback(String),
    #[error("initial point has non-finite entries or residuals")]
    NonFiniteStart,
}

/// Residual and Jacobian callbacks.
pub trait LsqProblem {
    type Error: Display;

    /// Residual vector; non-finite entries mark an infeasible point.
    fn residual(&mut self, x: &[f64]) -> Result<Vec<f64>, Self::Error>;

    fn jacobian(&mut self, x: &[f64]) -> Result<Mat<f64>, Self::Error>;

    /// `(JᵀJ, Jᵀf)` at `x`, where `f` is the residual at `x`.
    fn normal_equations(
        &mut self,
        x: &[f64],
        f: &[f64],
    ) -> Result<(Mat<f64>, Vec<f64>), Self::Error> {
        let j = self.jacobian(x)?;
        let fm = Mat::from_fn(f.len(), 1, |i, _| f[i]);
        let g = j.transpose() * &fm;
        let b = j.transpose() * &j;
        Ok((b, (0..g.nrows()).map(|i| g[(i, 0)]).collect()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LsqOptions {
    pub ftol: f64,
    pub xtol: f64,
    pub gtol: f64,
    pub max_iterations: usize,
    /// Starting radius; defaults to `100·‖x0‖`, or 100 when `x0 = 0`.
    pub initial_radius: Option<f64>,
    /// Wall-clock budget in seconds.
    pub time_budget: Option<f64>,
}

impl Default for LsqOptions {
    fn default() -> Self {
        Self {
            ftol: 1e-8,
            xtol: 1e-8,
            gtol: 1e-8,
            max_iterations: 500,
            initial_radius: None,
            time_budget: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LsqStatus {
    ConvergedFtol,
    ConvergedGtol,
    ConvergedXtol,
    MaxIter,
    Timeout,
}

impl LsqStatus {
    pub fn converged(self) -> bool {
        matches!(
            self,
            Self::ConvergedFtol | Self::ConvergedGtol | Self::ConvergedXtol
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LsqResult {
    pub x: Vec<f64>,
    /// `½‖f‖²` at the start and after every accepted step.
    pub cost_trajectory: Vec<f64>,
    pub iterations: usize,
    pub residual_evaluations: usize,
    pub status: LsqStatus,
    pub wall_time: f64,
}

impl LsqResult {
    pub fn cost(&self) -> f64 {
        *self
            .cost_trajectory
            .last()
            .expect("trajectory holds the initial cost")
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn shifted(b: &Mat<f64>, lambda: f64) -> Mat<f64> {
    let mut m = b.clone();
    for i in 0..m.nrows() {
        m[(i, i)] += lambda;
    }
    m
}

/// Solves `min gᵀp + ½pᵀBp` subject to `‖p‖ ≤ Δ` for positive semidefinite
/// `B` by a safeguarded Newton iteration on the secular equation
/// `1/‖p(λ)‖ = 1/Δ`, where `(B + λI) p(λ) = −g`. Returns `p` and `λ`.
pub(crate) fn trust_region_step(
    b: &Mat<f64>,
    g: &[f64],
    delta: f64,
    lambda_hint: f64,
) -> (Vec<f64>, f64) {
    let n = g.len();
    let rhs = Mat::from_fn(n, 1, |i, _| -g[i]);
    let to_vec = |m: &Mat<f64>| (0..n).map(|i| m[(i, 0)]).collect::<Vec<f64>>();

    let gnorm = norm(g);
    if gnorm == 0.0 {
        return (vec![0.0; n], 0.0);
    }
    if let Ok(llt) = b.llt(Side::Lower) {
        let p = to_vec(&llt.solve(&rhs));
        if p.iter().all(|v| v.is_finite()) && norm(&p) <= delta {
            return (p, 0.0);
        }
    }

    let mut lo = 0.0;
    let mut hi = gnorm / delta;
    let mut lambda = if lambda_hint > 0.0 {
        lambda_hint
    } else {
        1e-3 * hi
    };
    let mut best: Option<Vec<f64>> = None;
    for _ in 0..60 {
        if !(lambda > lo && lambda < hi) {
            lambda = (lo * hi).sqrt().max(1e-3 * hi);
        }
        let m = shifted(b, lambda);
        let Ok(llt) = m.llt(Side::Lower) else {
            lo = lambda;
            lambda = 0.0;
            continue;
        };
        let pm = llt.solve(&rhs);
        let p = to_vec(&pm);
        let np = norm(&p);
        if (np - delta).abs() <= 0.1 * delta {
            return (p, lambda);
        }
        if np < delta {
            hi = lambda;
            best = Some(p);
        } else {
            lo = lambda;
        }
        let mut q = pm;
        llt.L().solve_lower_triangular_in_place(q.as_mut());
        let nq = (0..n).map(|i| q[(i, 0)] * q[(i, 0)]).sum::<f64>().sqrt();
        lambda += (np / nq).powi(2) * (np - delta) / delta;
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    // Fall back to the last interior step, or the scaled gradient.
    let p = best.unwrap_or_else(|| g.iter().map(|v| -v * delta / gnorm).collect());
    (p, hi)
}

/// Minimizes `½‖f(x)‖²` from `x0`.
///
/// Stops when the gradient `‖Jᵀf‖∞ < gtol`, when an accepted step reduces
/// the cost by less than `ftol·cost` with agreement ratio above 0.25, when a
/// step is shorter than `xtol·(xtol + ‖x‖)`, after `max_iterations` accepted
/// steps, or when the time budget runs out.
pub fn trust_region_lsq<P: LsqProblem>(
    problem: &mut P,
    x0: &[f64],
    opts: &LsqOptions,
) -> Result<LsqResult, LsqError> {
    let start = Instant::now();
    let budget = opts.time_budget.map(Duration::from_secs_f64);
    let timed_out = || budget.is_some_and(|b| start.elapsed() >= b);
    let cb = |e: P::Error| LsqError::Callback(e.to_string());

    if x0.iter().any(|v| !v.is_finite()) {
        return Err(LsqError::NonFiniteStart);
    }
    let mut x = x0.to_vec();
    let mut f = problem.residual(&x).map_err(cb)?;
    let mut fevals = 1;
    if f.iter().any(|v| !v.is_finite()) {
        return Err(LsqError::NonFiniteStart);
    }
    let mut cost = 0.5 * dot(&f, &f);
    let mut trajectory = vec![cost];
    let mut delta = opts.initial_radius.unwrap_or_else(|| {
        let nx = norm(&x);
        if nx > 0.0 {
            100.0 * nx
        } else {
            100.0
        }
    });
    let mut lambda = 0.0;
    let mut iterations = 0;

    let status = 'outer: loop {
        if timed_out() {
            break LsqStatus::Timeout;
        }
        if iterations >= opts.max_iterations {
            break LsqStatus::MaxIter;
        }
        let (b, g) = problem.normal_equations(&x, &f).map_err(cb)?;
        if g.iter().fold(0.0f64, |m, v| m.max(v.abs())) < opts.gtol {
            break LsqStatus::ConvergedGtol;
        }
        loop {
            if timed_out() {
                break 'outer LsqStatus::Timeout;
            }
            let (p, lam) = trust_region_step(&b, &g, delta, lambda);
            lambda = lam;
            let np = norm(&p);
            let xtol_hit = np < opts.xtol * (opts.xtol + norm(&x));

            let bp = {
                let pm = Mat::from_fn(p.len(), 1, |i, _| p[i]);
                let r = &b * &pm;
                (0..p.len()).map(|i| r[(i, 0)]).collect::<Vec<f64>>()
            };
            let predicted = -(dot(&g, &p) + 0.5 * dot(&p, &bp));
            let x_new: Vec<f64> = x.iter().zip(&p).map(|(a, b)| a + b).collect();
            let f_new = problem.residual(&x_new).map_err(cb)?;
            fevals += 1;
            if f_new.iter().any(|v| !v.is_finite()) {
                delta = 0.25 * np;
                lambda = 0.0;
                if xtol_hit {
                    break 'outer LsqStatus::ConvergedXtol;
                }
                continue;
            }
            let cost_new = 0.5 * dot(&f_new, &f_new);
            let actual = cost - cost_new;
            let ratio = if predicted > 0.0 {
                actual / predicted
            } else {
                -1.0
            };
            if ratio < 0.25 {
                delta = 0.25 * np;
                lambda = 0.0;
            } else if ratio > 0.75 && np >= 0.95 * delta {
                delta *= 2.0;
                lambda = 0.0;
            }
            let ftol_hit = actual < opts.ftol * cost && ratio > 0.25;
            let accepted = actual > 0.0;
            if accepted {
                x = x_new;
                f = f_new;
                cost = cost_new;
                trajectory.push(cost);
                iterations += 1;
            }
            if ftol_hit {
                break 'outer LsqStatus::ConvergedFtol;
            }
            if xtol_hit {
                break 'outer LsqStatus::ConvergedXtol;
            }
            if accepted {
                break;
            }
        }
    };

    Ok(LsqResult {
        x,
        cost_trajectory: trajectory,
        iterations,
        residual_evaluations: fevals,
        status,
        wall_time: start.elapsed().as_secs_f64(),
    })
}
