//! Truncated conditional Karhunen–Loève expansion `y(ξ) = ȳᶜ + Ψ ξ`, with
//! `Ψ[:, j] = √λⱼ φⱼ` from the eigenpairs of the posterior covariance at the
//! cell centers.

use std::fmt::Write as _;
use std::io::{self, BufRead, Write};

use faer::{Mat, Side};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gpr::GpPosterior;

#[derive(Debug, Error)]
pub enum CkleError {
    #[error("covariance is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("covariance must be square, got {0}x{1}")]
    NotSquare(usize, usize),
    #[error("eigendecomposition failed")]
    Eigen,
    #[error("spectrum is identically zero")]
    ZeroSpectrum,
    #[error("relative tolerance must lie in [0, 1), got {0}")]
    InvalidTolerance(f64),
    #[error("mean has length {mean}, covariance is {n}x{n}")]
    MeanMismatch { mean: usize, n: usize },
    #[error("expected {expected} coefficients, got {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("malformed basis file: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Eigenpairs sorted by nonincreasing eigenvalue.
#[derive(Clone, Debug)]
pub struct EigenPairs {
    pub lambdas: Vec<f64>,
    pub vectors: Mat<f64>,
}

/// Full symmetric eigendecomposition; negative eigenvalues are clamped to 0.
pub fn eigendecompose(cov: &Mat<f64>) -> Result<EigenPairs, CkleError> {
    let n = cov.nrows();
    if cov.ncols() != n {
        return Err(CkleError::NotSquare(n, cov.ncols()));
    }
    let mut asym: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for j in 0..n {
        for i in 0..n {
            asym = asym.max((cov[(i, j)] - cov[(j, i)]).abs());
            scale = scale.max(cov[(i, j)].abs());
        }
    }
    if asym > 1e-10 * scale.max(1.0) || !asym.is_finite() {
        return Err(CkleError::NotSymmetric(asym));
    }
    let eig = cov
        .self_adjoint_eigen(Side::Lower)
        .map_err(|_| CkleError::Eigen)?;
    let s = eig.S().column_vector();
    let u = eig.U();
    // ascending from faer
    let lambdas = (0..n).rev().map(|k| s[k].max(0.0)).collect();
    let vectors = Mat::from_fn(n, n, |i, j| u[(i, n - 1 - j)]);
    Ok(EigenPairs { lambdas, vectors })
}

/// `Σ_{i ≥ k} λᵢ / Σ λᵢ`.
pub fn tail_ratio(lambdas: &[f64], k: usize) -> f64 {
    let total: f64 = lambdas.iter().sum();
    let tail: f64 = lambdas[k.min(lambdas.len())..].iter().sum();
    tail / total
}

/// Smallest number of leading modes whose discarded tail is at most `rtol`
/// of the total energy.
pub fn truncate(lambdas: &[f64], rtol: f64) -> Result<usize, CkleError> {
    if !(0.0..1.0).contains(&rtol) {
        return Err(CkleError::InvalidTolerance(rtol));
    }
    let total: f64 = lambdas.iter().sum();
    if total <= 0.0 || !total.is_finite() {
        return Err(CkleError::ZeroSpectrum);
    }
    let mut tail = 0.0;
    let mut k = lambdas.len();
    // grow the tail from the end while it stays within tolerance
    while k > 0 && (tail + lambdas[k - 1]) / total <= rtol {
        tail += lambdas[k - 1];
        k -= 1;
    }
    Ok(k.max(1))
}

/// How many modes to keep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Truncation {
    Rtol(f64),
    Count(usize),
    /// `min(max_modes, truncate(rtol))`.
    Capped {
        rtol: f64,
        max_modes: usize,
    },
}

impl Default for Truncation {
    fn default() -> Self {
        Truncation::Capped {
            rtol: 1e-8,
            max_modes: 1000,
        }
    }
}

impl Truncation {
    pub fn select(&self, lambdas: &[f64]) -> Result<usize, CkleError> {
        let n = lambdas.len();
        match *self {
            Truncation::Rtol(rtol) => truncate(lambdas, rtol),
            Truncation::Count(k) => {
                if lambdas.iter().sum::<f64>() <= 0.0 {
                    return Err(CkleError::ZeroSpectrum);
                }
                Ok(k.clamp(1, n))
            }
            Truncation::Capped { rtol, max_modes } => {
                Ok(truncate(lambdas, rtol)?.min(max_modes.max(1)))
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct CkleBasis {
    pub mean: Vec<f64>,
    /// `N x N_y`, columns ordered by descending eigenvalue.
    pub psi: Mat<f64>,
    pub lambdas_kept: Vec<f64>,
    pub rtol_achieved: f64,
}

/// Basis from a GP posterior.
pub fn build_basis(post: &GpPosterior, trunc: Truncation) -> Result<CkleBasis, CkleError> {
    build_basis_from(&post.mean, &post.cov, trunc)
}

/// Basis from an explicit mean and covariance.
pub fn build_basis_from(
    mean: &[f64],
    cov: &Mat<f64>,
    trunc: Truncation,
) -> Result<CkleBasis, CkleError> {
    let n = cov.nrows();
    if mean.len() != n {
        return Err(CkleError::MeanMismatch {
            mean: mean.len(),
            n,
        });
    }
    let pairs = eigendecompose(cov)?;
    let ny = trunc.select(&pairs.lambdas)?;
    Ok(basis_from_pairs(mean, &pairs, ny))
}

/// Keeps the leading `ny` eigenpairs.
pub fn basis_from_pairs(mean: &[f64], pairs: &EigenPairs, ny: usize) -> CkleBasis {
    let n = pairs.vectors.nrows();
    let ny = ny.min(n);
    let roots: Vec<f64> = pairs.lambdas[..ny].iter().map(|l| l.sqrt()).collect();
    let psi = Mat::from_fn(n, ny, |i, j| roots[j] * pairs.vectors[(i, j)]);
    CkleBasis {
        mean: mean.to_vec(),
        psi,
        lambdas_kept: pairs.lambdas[..ny].to_vec(),
        rtol_achieved: tail_ratio(&pairs.lambdas, ny),
    }
}

impl CkleBasis {
    pub fn n_cells(&self) -> usize {
        self.psi.nrows()
    }

    pub fn n_modes(&self) -> usize {
        self.psi.ncols()
    }

    /// `ȳᶜ + Ψ ξ`.
    pub fn expand(&self, xi: &[f64]) -> Result<Vec<f64>, CkleError> {
        if xi.len() != self.n_modes() {
            return Err(CkleError::LengthMismatch {
                expected: self.n_modes(),
                found: xi.len(),
            });
        }
        let x = Mat::from_fn(xi.len(), 1, |i, _| xi[i]);
        let px = &self.psi * &x;
        Ok(self
            .mean
            .iter()
            .enumerate()
            .map(|(i, m)| m + px[(i, 0)])
            .collect())
    }

    /// Text format: `N N_y`, then `N` mean lines, then `N` rows of `Ψ`.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), CkleError> {
        let (n, ny) = (self.n_cells(), self.n_modes());
        writeln!(w, "{n} {ny}")?;
        for m in &self.mean {
            writeln!(w, "{m:.17e}")?;
        }
        let mut line = String::new();
        for i in 0..n {
            line.clear();
            for j in 0..ny {
                if j > 0 {
                    line.push(' ');
                }
                let _ = write!(line, "{:.17e}", self.psi[(i, j)]);
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    /// Reads the text format. Eigenvalues are recovered as squared column
    /// norms; the achieved tolerance is not stored and reads back as NaN.
    pub fn read_from<R: BufRead>(r: R) -> Result<Self, CkleError> {
        let bad = |m: &str| CkleError::Parse(m.to_string());
        let mut lines = r.lines();
        let mut next = || -> Result<String, CkleError> {
            lines
                .next()
                .ok_or_else(|| bad("unexpected end of file"))?
                .map_err(CkleError::from)
        };
        let header = next()?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| bad("bad header")))
            .collect::<Result<_, _>>()?;
        let [n, ny] = dims[..] else {
            return Err(bad("header must be `N N_y`"));
        };
        let parse = |t: &str| t.parse::<f64>().map_err(|_| bad("bad number"));
        let mut mean = Vec::with_capacity(n);
        for _ in 0..n {
            mean.push(parse(next()?.trim())?);
        }
        let mut psi = Mat::zeros(n, ny);
        for i in 0..n {
            let row = next()?;
            let vals: Vec<f64> = row
                .split_whitespace()
                .map(parse)
                .collect::<Result<_, _>>()?;
            if vals.len() != ny {
                return Err(bad("row length differs from N_y"));
            }
            for (j, v) in vals.into_iter().enumerate() {
                psi[(i, j)] = v;
            }
        }
        let lambdas_kept = (0..ny)
            .map(|j| (0..n).map(|i| psi[(i, j)] * psi[(i, j)]).sum())
            .collect();
        Ok(Self {
            mean,
            psi,
            lambdas_kept,
            rtol_achieved: f64::NAN,
        })
    }
}
