//! Zero-mean Gaussian process regression with an isotropic Matérn 5/2 kernel.
//!
//! The nugget is treated as measurement noise: it enters the covariance of
//! the training data only, never the latent prior evaluated at the cells, so
//! the posterior variance at a measured cell is close to the nugget.

use argmin::core::{CostFunction, Executor};
use argmin::solver::neldermead::NelderMead;
use faer::linalg::solvers::Llt;
use faer::{Mat, Side};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::{Mesh, ObservationSet};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GpError {
    #[error("kernel parameters must satisfy sigma > 0, length > 0, nugget >= 0")]
    InvalidParams,
    #[error("at least {required} training points are required, got {found}")]
    TooFewPoints { required: usize, found: usize },
    #[error("{points} training points but {values} values")]
    LengthMismatch { points: usize, values: usize },
    #[error("training data contain non-finite values")]
    NonFinite,
    #[error("training covariance is not positive definite")]
    SingularCovariance,
    #[error("training index {index} is outside a mesh of {n} cells")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("optimizer failed: {0}")]
    Optimizer(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelParams {
    pub sigma: f64,
    pub length: f64,
    pub nugget: f64,
}

impl KernelParams {
    pub fn new(sigma: f64, length: f64, nugget: f64) -> Result<Self, GpError> {
        let p = Self {
            sigma,
            length,
            nugget,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), GpError> {
        let ok = self.sigma.is_finite()
            && self.sigma > 0.0
            && self.length.is_finite()
            && self.length > 0.0
            && self.nugget.is_finite()
            && self.nugget >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(GpError::InvalidParams)
        }
    }

    /// Noise-free kernel value at lag `r`.
    #[inline]
    pub fn kernel(&self, r: f64) -> f64 {
        let s = 5f64.sqrt() * r / self.length;
        self.sigma * self.sigma * (1.0 + s + s * s / 3.0) * (-s).exp()
    }
}

/// Matérn 5/2 covariance at lag `r`, including the nugget at zero lag.
pub fn matern52(r: f64, params: &KernelParams) -> f64 {
    let k = params.kernel(r);
    if r == 0.0 {
        k + params.nugget
    } else {
        k
    }
}

#[inline]
fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Noise-free kernel matrix between two point sets.
pub fn kernel_matrix(params: &KernelParams, xa: &[[f64; 2]], xb: &[[f64; 2]]) -> Mat<f64> {
    Mat::from_fn(xa.len(), xb.len(), |i, j| params.kernel(dist(xa[i], xb[j])))
}

fn training_covariance(params: &KernelParams, xs: &[[f64; 2]]) -> Mat<f64> {
    let mut c = kernel_matrix(params, xs, xs);
    for i in 0..xs.len() {
        c[(i, i)] += params.nugget;
    }
    c
}

fn factor_training(params: &KernelParams, xs: &[[f64; 2]]) -> Option<Llt<f64>> {
    training_covariance(params, xs).llt(Side::Lower).ok()
}

fn column(values: &[f64]) -> Mat<f64> {
    Mat::from_fn(values.len(), 1, |i, _| values[i])
}

/// Negative log marginal likelihood of zero-mean data; `+∞` when the
/// training covariance cannot be factored.
pub fn neg_log_marginal_likelihood(params: &KernelParams, xs: &[[f64; 2]], ys: &[f64]) -> f64 {
    if xs.is_empty() || xs.len() != ys.len() || params.validate().is_err() {
        return f64::INFINITY;
    }
    let Some(llt) = factor_training(params, xs) else {
        return f64::INFINITY;
    };
    let l = llt.L();
    let mut alpha = column(ys);
    l.solve_lower_triangular_in_place(alpha.as_mut());
    let quad: f64 = (0..ys.len()).map(|i| alpha[(i, 0)] * alpha[(i, 0)]).sum();
    let logdet: f64 = (0..ys.len()).map(|i| l[(i, i)].ln()).sum();
    let v = 0.5 * quad + logdet + 0.5 * ys.len() as f64 * LN_2PI;
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

/// Hyperparameter search settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    /// Nugget as a multiple of the sample variance of the data.
    pub nugget_rel: f64,
    /// Explicit nugget; overrides `nugget_rel`.
    pub nugget: Option<f64>,
    /// `[lo, hi]` bounds on sigma; default is `[0.01, 10]` times the RMS of the data.
    pub sigma_bounds: Option<[f64; 2]>,
    /// `[lo, hi]` bounds on the length; default is `[0.01, 10]` times the data diameter.
    pub length_bounds: Option<[f64; 2]>,
    pub max_iters: u64,
    pub sd_tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            nugget_rel: 1e-8,
            nugget: None,
            sigma_bounds: None,
            length_bounds: None,
            max_iters: 200,
            sd_tolerance: 1e-9,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Converged,
    /// Constant data; sigma is set to its floor and the length to its ceiling.
    Degenerate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: KernelParams,
    pub nlml: f64,
    pub status: FitStatus,
}

/// Box over `(ln sigma, ln length)` used by the optimizer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SearchBox {
    pub log_sigma: [f64; 2],
    pub log_length: [f64; 2],
    pub nugget: f64,
}

impl SearchBox {
    pub fn from_data(xs: &[[f64; 2]], ys: &[f64], opts: &FitOptions) -> Self {
        let n = ys.len() as f64;
        let rms = (ys.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
        let mean = ys.iter().sum::<f64>() / n;
        let var = ys.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let scale = if rms > 0.0 { rms } else { 1.0 };
        let mut diam: f64 = 0.0;
        for (i, a) in xs.iter().enumerate() {
            for b in &xs[i + 1..] {
                diam = diam.max(dist(*a, *b));
            }
        }
        if diam == 0.0 {
            diam = 1.0;
        }
        let sb = opts.sigma_bounds.unwrap_or([0.01 * scale, 10.0 * scale]);
        let lb = opts.length_bounds.unwrap_or([0.01 * diam, 10.0 * diam]);
        let nugget = opts
            .nugget
            .unwrap_or(opts.nugget_rel * if var > 0.0 { var } else { scale * scale });
        Self {
            log_sigma: [sb[0].ln(), sb[1].ln()],
            log_length: [lb[0].ln(), lb[1].ln()],
            nugget,
        }
    }

    fn clamp(&self, p: &[f64]) -> [f64; 2] {
        [
            p[0].clamp(self.log_sigma[0], self.log_sigma[1]),
            p[1].clamp(self.log_length[0], self.log_length[1]),
        ]
    }

    pub fn params(&self, p: &[f64]) -> KernelParams {
        let [ls, ll] = self.clamp(p);
        KernelParams {
            sigma: ls.exp(),
            length: ll.exp(),
            nugget: self.nugget,
        }
    }

    /// 4x4 grid at the 1/8, 3/8, 5/8, 7/8 points of each log range.
    pub fn start_points(&self) -> Vec<[f64; 2]> {
        let at = |r: [f64; 2], f: f64| r[0] + f * (r[1] - r[0]);
        let fr = [0.125, 0.375, 0.625, 0.875];
        let mut out = Vec::with_capacity(16);
        for &fs in &fr {
            for &fl in &fr {
                out.push([at(self.log_sigma, fs), at(self.log_length, fl)]);
            }
        }
        out
    }
}

struct Nlml<'a> {
    xs: &'a [[f64; 2]],
    ys: &'a [f64],
    bounds: SearchBox,
}

impl CostFunction for Nlml<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Vec<f64>) -> Result<f64, argmin::core::Error> {
        Ok(neg_log_marginal_likelihood(
            &self.bounds.params(p),
            self.xs,
            self.ys,
        ))
    }
}

fn check_training(xs: &[[f64; 2]], ys: &[f64], required: usize) -> Result<(), GpError> {
    if xs.len() != ys.len() {
        return Err(GpError::LengthMismatch {
            points: xs.len(),
            values: ys.len(),
        });
    }
    if xs.len() < required {
        return Err(GpError::TooFewPoints {
            required,
            found: xs.len(),
        });
    }
    let finite = ys.iter().all(|v| v.is_finite()) && xs.iter().flatten().all(|v| v.is_finite());
    if !finite {
        return Err(GpError::NonFinite);
    }
    Ok(())
}

/// Maximum-likelihood `(sigma, length)` by multi-start Nelder–Mead in log
/// space with a fixed nugget.
pub fn fit_hyperparameters(
    xs: &[[f64; 2]],
    ys: &[f64],
    opts: &FitOptions,
) -> Result<FitResult, GpError> {
    check_training(xs, ys, 2)?;
    let bounds = SearchBox::from_data(xs, ys, opts);

    let (lo, hi) = ys
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    if hi - lo <= 1e-12 * lo.abs().max(hi.abs()).max(1.0) {
        let params = bounds.params(&[bounds.log_sigma[0], bounds.log_length[1]]);
        return Ok(FitResult {
            nlml: neg_log_marginal_likelihood(&params, xs, ys),
            params,
            status: FitStatus::Degenerate,
        });
    }

    let step = [
        0.1 * (bounds.log_sigma[1] - bounds.log_sigma[0]),
        0.1 * (bounds.log_length[1] - bounds.log_length[0]),
    ];
    let mut best: Option<([f64; 2], f64)> = None;
    for start in bounds.start_points() {
        let simplex = vec![
            start.to_vec(),
            vec![start[0] + step[0], start[1]],
            vec![start[0], start[1] + step[1]],
        ];
        let solver = NelderMead::new(simplex)
            .with_sd_tolerance(opts.sd_tolerance)
            .map_err(|e| GpError::Optimizer(e.to_string()))?;
        let problem = Nlml { xs, ys, bounds };
        let res = Executor::new(problem, solver)
            .configure(|s| s.max_iters(opts.max_iters))
            .run()
            .map_err(|e| GpError::Optimizer(e.to_string()))?;
        let state = res.state();
        let Some(p) = state.best_param.as_ref() else {
            continue;
        };
        let candidate = (bounds.clamp(p), state.best_cost);
        if best.is_none_or(|(_, c)| candidate.1 < c) {
            best = Some(candidate);
        }
    }
    match best {
        Some((p, nlml)) if nlml.is_finite() => Ok(FitResult {
            params: bounds.params(&p),
            nlml,
            status: FitStatus::Converged,
        }),
        _ => Err(GpError::SingularCovariance),
    }
}

/// Posterior mean and covariance of the latent field at every cell center.
#[derive(Clone, Debug)]
pub struct GpPosterior {
    pub mean: Vec<f64>,
    pub cov: Mat<f64>,
    pub params: KernelParams,
    pub train: ObservationSet,
}

/// Posterior mean and covariance at `targets`, sharing one Cholesky factor of
/// the training covariance.
pub fn condition_points(
    params: &KernelParams,
    xs: &[[f64; 2]],
    ys: &[f64],
    targets: &[[f64; 2]],
) -> Result<(Vec<f64>, Mat<f64>), GpError> {
    params.validate()?;
    check_training(xs, ys, 1)?;
    let llt = factor_training(params, xs).ok_or(GpError::SingularCovariance)?;
    let l = llt.L();
    // V = L⁻¹ K(X_s, X), a = L⁻¹ y_s
    let mut v = kernel_matrix(params, xs, targets);
    l.solve_lower_triangular_in_place(v.as_mut());
    let mut a = column(ys);
    l.solve_lower_triangular_in_place(a.as_mut());
    let mean_col = v.transpose() * &a;
    let mean = (0..targets.len()).map(|i| mean_col[(i, 0)]).collect();
    let mut cov = kernel_matrix(params, targets, targets) - v.transpose() * &v;
    let n = targets.len();
    for j in 0..n {
        for i in j + 1..n {
            let s = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            cov[(i, j)] = s;
            cov[(j, i)] = s;
        }
    }
    Ok((mean, cov))
}

/// Conditions the GP on direct measurements at cell centers of `mesh`.
pub fn condition(
    params: &KernelParams,
    train: &ObservationSet,
    mesh: &Mesh,
) -> Result<GpPosterior, GpError> {
    let centers = mesh.centers();
    if let Some(&index) = train.indices().iter().find(|&&i| i >= centers.len()) {
        return Err(GpError::IndexOutOfRange {
            index,
            n: centers.len(),
        });
    }
    let xs: Vec<[f64; 2]> = train.indices().iter().map(|&i| centers[i]).collect();
    let (mean, cov) = condition_points(params, &xs, train.values(), centers)?;
    Ok(GpPosterior {
        mean,
        cov,
        params: *params,
        train: train.clone(),
    })
}
