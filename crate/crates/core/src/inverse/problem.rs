//! Residuals and Jacobians of the CKLEMAP and MAP least-squares problems.
//!
//! Both minimize `½‖f‖²` with
//! `f = [u_s − H_u u(y); y_s − H_y y; √γ D y]`, where `u(y)` solves the
//! finite-volume system. For CKLEMAP `y = ȳᶜ + Ψ ξ` and the unknown is `ξ`.
//! The head block of the Jacobian is `Wᵀ S`, with `W = A⁻¹ H_uᵀ` and `S` the
//! residual sensitivity matrix; all other blocks are constant and cached.

use faer::Mat;
use serde::{Deserialize, Serialize};

use super::lsq::LsqProblem;
use super::InverseError;
use crate::ckle::CkleBasis;
use crate::fvtpfa::{FvAssembler, FvError};
use crate::mesh::{gradient_operator, Mesh, ObservationSet};
use crate::sparsechol::{
    full_solve, observation_closures, solve_columns_naive, solve_columns_with, CholeskyFactor,
    ClosureSet, SparseMatrix,
};

/// How `W = A⁻¹ H_uᵀ` is computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolvePath {
    /// Closure-restricted forward solves.
    Accelerated,
    /// Full forward and backward solves.
    Naive,
}

struct State {
    y: Vec<f64>,
    u: Vec<f64>,
    factor: CholeskyFactor,
}

/// Forward model, observations, and regularization shared by both problems.
pub struct ForwardModel {
    assembler: FvAssembler,
    obs_u: ObservationSet,
    obs_y: ObservationSet,
    sqrt_gamma: f64,
    grad: SparseMatrix,
    path: SolvePath,
    closures: Option<Vec<ClosureSet>>,
    state: Option<State>,
}

impl ForwardModel {
    pub fn new(
        mesh: &Mesh,
        obs_u: ObservationSet,
        obs_y: ObservationSet,
        gamma: f64,
        path: SolvePath,
    ) -> Result<Self, InverseError> {
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(InverseError::InvalidConfig(format!(
                "gamma must be >= 0, got {gamma}"
            )));
        }
        let n = mesh.n_cells();
        for (name, obs) in [("head", &obs_u), ("log-transmissivity", &obs_y)] {
            if let Some(&i) = obs.indices().iter().find(|&&i| i >= n) {
                return Err(InverseError::InvalidConfig(format!(
                    "{name} observation index {i} is outside a mesh of {n} cells"
                )));
            }
        }
        Ok(Self {
            assembler: FvAssembler::new(mesh)?,
            obs_u,
            obs_y,
            sqrt_gamma: gamma.sqrt(),
            grad: gradient_operator(mesh),
            path,
            closures: None,
            state: None,
        })
    }

    pub fn n_cells(&self) -> usize {
        self.assembler.n_cells()
    }

    pub fn n_residuals(&self) -> usize {
        let penalty = if self.sqrt_gamma > 0.0 {
            self.grad.nrows()
        } else {
            0
        };
        self.obs_u.len() + self.obs_y.len() + penalty
    }

    pub fn solve_path(&self) -> SolvePath {
        self.path
    }

    /// Forward solve at `y`, reusing the last one when `y` is unchanged.
    fn ensure_state(&mut self, y: &[f64]) -> Result<(), FvError> {
        let fresh = self.state.as_ref().is_some_and(|s| s.y == y);
        if !fresh {
            let sys = self.assembler.assemble(y)?;
            let factor = self.assembler.factor(&sys)?;
            let u = full_solve(&factor, &sys.rhs);
            self.state = Some(State {
                y: y.to_vec(),
                u,
                factor,
            });
        }
        Ok(())
    }

    fn state(&self) -> &State {
        self.state
            .as_ref()
            .expect("forward state is computed first")
    }

    /// Head field at `y`.
    pub fn head(&mut self, y: &[f64]) -> Result<Vec<f64>, InverseError> {
        self.ensure_state(y)?;
        Ok(self.state().u.clone())
    }

    /// Residual vector at field `y`.
    pub fn residual_at(&mut self, y: &[f64]) -> Result<Vec<f64>, FvError> {
        if y.len() != self.n_cells() {
            return Err(FvError::LengthMismatch {
                expected: self.n_cells(),
                found: y.len(),
            });
        }
        self.ensure_state(y)?;
        let u = &self.state().u;
        let mut f = Vec::with_capacity(self.n_residuals());
        for (&i, &v) in self.obs_u.indices().iter().zip(self.obs_u.values()) {
            f.push(v - u[i]);
        }
        for (&i, &v) in self.obs_y.indices().iter().zip(self.obs_y.values()) {
            f.push(v - y[i]);
        }
        if self.sqrt_gamma > 0.0 {
            f.extend(
                self.grad
                    .mul_vec(y)
                    .into_iter()
                    .map(|d| self.sqrt_gamma * d),
            );
        }
        Ok(f)
    }

    /// Head block of the Jacobian with respect to `y`, `∂f_u/∂y = Wᵀ S`,
    /// returned transposed as `Sᵀ W` (`N x N_u`).
    pub fn head_sensitivity_t(&mut self, y: &[f64]) -> Result<Mat<f64>, FvError> {
        self.ensure_state(y)?;
        let state = self
            .state
            .as_ref()
            .expect("forward state is computed first");
        let w = match self.path {
            SolvePath::Accelerated => {
                let closures = self.closures.get_or_insert_with(|| {
                    observation_closures(&state.factor, self.obs_u.indices())
                });
                solve_columns_with(&state.factor, closures)
            }
            SolvePath::Naive => solve_columns_naive(&state.factor, self.obs_u.indices()),
        };
        let s = self.assembler.sensitivity_matrix(y, &state.u)?;
        let n = self.n_cells();
        let mut out = Mat::zeros(n, w.ncols());
        let mut wk = vec![0.0; n];
        for k in 0..w.ncols() {
            for (i, v) in wk.iter_mut().enumerate() {
                *v = w[(i, k)];
            }
            for (p, v) in s.transpose_mul_vec(&wk).into_iter().enumerate() {
                out[(p, k)] = v;
            }
        }
        Ok(out)
    }

    /// `[−H_y; √γ D]` applied to a dense `N x m` matrix `M`.
    fn constant_blocks(&self, m: &Mat<f64>) -> Mat<f64> {
        let ny = self.obs_y.len();
        let penalty = if self.sqrt_gamma > 0.0 {
            self.grad.nrows()
        } else {
            0
        };
        let mut out = Mat::zeros(ny + penalty, m.ncols());
        for (r, &i) in self.obs_y.indices().iter().enumerate() {
            for c in 0..m.ncols() {
                out[(r, c)] = -m[(i, c)];
            }
        }
        if penalty > 0 {
            let dm = self.grad.mul_dense(m);
            for r in 0..penalty {
                for c in 0..m.ncols() {
                    out[(ny + r, c)] = self.sqrt_gamma * dm[(r, c)];
                }
            }
        }
        out
    }

    /// `H_yᵀ H_y + γ DᵀD` as a dense `N x N` matrix.
    fn constant_gram_identity(&self) -> Mat<f64> {
        let n = self.n_cells();
        let mut g = Mat::zeros(n, n);
        for &i in self.obs_y.indices() {
            g[(i, i)] += 1.0;
        }
        if self.sqrt_gamma > 0.0 {
            let gamma = self.sqrt_gamma * self.sqrt_gamma;
            let dt = self.grad.transpose();
            // row f of D is column f of Dᵀ
            for f in 0..dt.ncols() {
                let (cells, vals) = dt.col(f);
                for (&a, &va) in cells.iter().zip(vals) {
                    for (&b, &vb) in cells.iter().zip(vals) {
                        g[(a, b)] += gamma * va * vb;
                    }
                }
            }
        }
        g
    }

    fn split_residual<'a>(&self, f: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        f.split_at(self.obs_u.len())
    }
}

fn infeasible(e: &FvError) -> bool {
    matches!(
        e,
        FvError::InvalidParameter { .. } | FvError::NotPositiveDefinite { .. }
    )
}

fn stack(top: &Mat<f64>, bottom: &Mat<f64>) -> Mat<f64> {
    let (m1, m2) = (top.nrows(), bottom.nrows());
    Mat::from_fn(m1 + m2, top.ncols(), |i, j| {
        if i < m1 {
            top[(i, j)]
        } else {
            bottom[(i - m1, j)]
        }
    })
}

fn col_mat(v: &[f64]) -> Mat<f64> {
    Mat::from_fn(v.len(), 1, |i, _| v[i])
}

/// CKLEMAP: unknowns are the expansion coefficients `ξ`.
pub struct CklemapProblem<'b> {
    model: ForwardModel,
    basis: &'b CkleBasis,
    /// `[−H_yΨ; √γ DΨ]`
    const_jac: Mat<f64>,
    /// `const_jacᵀ const_jac`
    const_gram: Mat<f64>,
}

impl<'b> CklemapProblem<'b> {
    pub fn new(model: ForwardModel, basis: &'b CkleBasis) -> Result<Self, InverseError> {
        if basis.n_cells() != model.n_cells() {
            return Err(InverseError::InvalidConfig(format!(
                "basis has {} cells, mesh has {}",
                basis.n_cells(),
                model.n_cells()
            )));
        }
        let const_jac = model.constant_blocks(&basis.psi);
        let const_gram = const_jac.transpose() * &const_jac;
        Ok(Self {
            model,
            basis,
            const_jac,
            const_gram,
        })
    }

    pub fn model_mut(&mut self) -> &mut ForwardModel {
        &mut self.model
    }

    pub fn field(&self, xi: &[f64]) -> Result<Vec<f64>, InverseError> {
        Ok(self.basis.expand(xi)?)
    }

    pub fn residual(&mut self, xi: &[f64]) -> Result<Vec<f64>, InverseError> {
        let y = self.field(xi)?;
        self.model
            .residual_at(&y)
            .map_err(|source| InverseError::Forward {
                source,
                at: xi.to_vec(),
            })
    }

    /// `(J_u Ψ)ᵀ` as an `N_y x N_u` matrix.
    fn head_block_t(&mut self, xi: &[f64]) -> Result<Mat<f64>, InverseError> {
        let y = self.field(xi)?;
        let st_w = self
            .model
            .head_sensitivity_t(&y)
            .map_err(|source| InverseError::Forward {
                source,
                at: xi.to_vec(),
            })?;
        Ok(self.basis.psi.transpose() * &st_w)
    }

    pub fn jacobian(&mut self, xi: &[f64]) -> Result<Mat<f64>, InverseError> {
        let hb = self.head_block_t(xi)?;
        Ok(stack(&hb.transpose().to_owned(), &self.const_jac))
    }

    pub fn normal_equations(
        &mut self,
        xi: &[f64],
        f: &[f64],
    ) -> Result<(Mat<f64>, Vec<f64>), InverseError> {
        let hb = self.head_block_t(xi)?;
        let (fu, frest) = self.model.split_residual(f);
        let gram = &hb * hb.transpose() + &self.const_gram;
        let g = &hb * col_mat(fu) + self.const_jac.transpose() * col_mat(frest);
        Ok((gram, (0..g.nrows()).map(|i| g[(i, 0)]).collect()))
    }
}

impl LsqProblem for CklemapProblem<'_> {
    type Error = InverseError;

    fn residual(&mut self, x: &[f64]) -> Result<Vec<f64>, InverseError> {
        match CklemapProblem::residual(self, x) {
            Err(InverseError::Forward { source, .. }) if infeasible(&source) => {
                Ok(vec![f64::NAN; self.model.n_residuals()])
            }
            r => r,
        }
    }

    fn jacobian(&mut self, x: &[f64]) -> Result<Mat<f64>, InverseError> {
        CklemapProblem::jacobian(self, x)
    }

    fn normal_equations(
        &mut self,
        x: &[f64],
        f: &[f64],
    ) -> Result<(Mat<f64>, Vec<f64>), InverseError> {
        CklemapProblem::normal_equations(self, x, f)
    }
}

/// MAP: unknowns are the cell values of `y`.
pub struct MapProblem {
    model: ForwardModel,
    const_jac: SparseMatrix,
    const_gram: Mat<f64>,
}

impl MapProblem {
    pub fn new(model: ForwardModel) -> Self {
        let n = model.n_cells();
        let ny = model.obs_y.len();
        let mut triplets: Vec<(usize, usize, f64)> = model
            .obs_y
            .indices()
            .iter()
            .enumerate()
            .map(|(r, &i)| (r, i, -1.0))
            .collect();
        if model.sqrt_gamma > 0.0 {
            let dt = model.grad.transpose();
            for f in 0..dt.ncols() {
                let (cells, vals) = dt.col(f);
                for (&c, &v) in cells.iter().zip(vals) {
                    triplets.push((ny + f, c, model.sqrt_gamma * v));
                }
            }
        }
        let rows = model.n_residuals() - model.obs_u.len();
        let const_jac = SparseMatrix::from_triplets(rows, n, &triplets).expect("indices checked");
        let const_gram = model.constant_gram_identity();
        Self {
            model,
            const_jac,
            const_gram,
        }
    }

    pub fn model_mut(&mut self) -> &mut ForwardModel {
        &mut self.model
    }

    pub fn residual(&mut self, y: &[f64]) -> Result<Vec<f64>, InverseError> {
        self.model
            .residual_at(y)
            .map_err(|source| InverseError::Forward {
                source,
                at: y.to_vec(),
            })
    }

    fn head_block_t(&mut self, y: &[f64]) -> Result<Mat<f64>, InverseError> {
        self.model
            .head_sensitivity_t(y)
            .map_err(|source| InverseError::Forward {
                source,
                at: y.to_vec(),
            })
    }

    pub fn jacobian(&mut self, y: &[f64]) -> Result<Mat<f64>, InverseError> {
        let hb = self.head_block_t(y)?;
        Ok(stack(
            &hb.transpose().to_owned(),
            &self.const_jac.to_dense(),
        ))
    }

    pub fn normal_equations(
        &mut self,
        y: &[f64],
        f: &[f64],
    ) -> Result<(Mat<f64>, Vec<f64>), InverseError> {
        let hb = self.head_block_t(y)?;
        let (fu, frest) = self.model.split_residual(f);
        let gram = &hb * hb.transpose() + &self.const_gram;
        let gu = &hb * col_mat(fu);
        let grest = self.const_jac.transpose_mul_vec(frest);
        Ok((
            gram,
            (0..gu.nrows()).map(|i| gu[(i, 0)] + grest[i]).collect(),
        ))
    }
}

impl LsqProblem for MapProblem {
    type Error = InverseError;

    fn residual(&mut self, x: &[f64]) -> Result<Vec<f64>, InverseError> {
        match MapProblem::residual(self, x) {
            Err(InverseError::Forward { source, .. }) if infeasible(&source) => {
                Ok(vec![f64::NAN; self.model.n_residuals()])
            }
            r => r,
        }
    }

    fn jacobian(&mut self, x: &[f64]) -> Result<Mat<f64>, InverseError> {
        MapProblem::jacobian(self, x)
    }

    fn normal_equations(
        &mut self,
        x: &[f64],
        f: &[f64],
    ) -> Result<(Mat<f64>, Vec<f64>), InverseError> {
        MapProblem::normal_equations(self, x, f)
    }
}
