//! Two-point flux approximation of steady Darcy flow, `∇·(T∇u) = 0` with
//! `T = exp(y)`, and the residual sensitivities `∂l/∂y_p` at fixed head.
//!
//! Cell balance for cell `i` is
//! `Σ_f t_f (u_i − u_j) + Σ_D t_D (u_i − u_D) + Σ_N q_N |face| = 0`,
//! where interior faces use the harmonic mean of the two cell
//! transmissivities and Dirichlet faces use a half-cell transmissibility.
//! Neumann values are outward fluxes per unit face length.

use std::sync::Arc;

use thiserror::Error;

use crate::mesh::{BcKind, BoundaryFace, InteriorFace, Mesh};
use crate::sparsechol::{
    full_solve, CholeskyFactor, Ordering, SparseError, SparseMatrix, SparseVector, SymbolicCholesky,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FvError {
    #[error("log-transmissivity gives a non-finite transmissibility at cell {cell}")]
    InvalidParameter { cell: usize },
    #[error("field has length {found}, mesh has {expected} cells")]
    LengthMismatch { expected: usize, found: usize },
    #[error("mesh has no Dirichlet face; the stiffness matrix is singular")]
    SingularSystem,
    #[error("stiffness matrix is not positive definite at cell {cell} (pivot {pivot:e})")]
    NotPositiveDefinite { cell: usize, pivot: f64 },
    #[error("cell index {cell} is outside a mesh of {n} cells")]
    CellOutOfRange { cell: usize, n: usize },
    #[error(transparent)]
    Sparse(#[from] SparseError),
}

/// `(length / distance) · 2 / (1/t_i + 1/t_j)`.
pub fn harmonic_transmissibility(t_i: f64, t_j: f64, length: f64, distance: f64) -> f64 {
    (length / distance) * (2.0 / (t_i.recip() + t_j.recip()))
}

/// Harmonic-mean TPFA transmissibility of an interior face.
pub fn face_transmissibility(
    y_i: f64,
    y_j: f64,
    length: f64,
    distance: f64,
) -> Result<f64, FvError> {
    let t = harmonic_transmissibility(y_i.exp(), y_j.exp(), length, distance);
    if t.is_finite() && t > 0.0 {
        Ok(t)
    } else {
        Err(FvError::InvalidParameter { cell: 0 })
    }
}

/// Discrete system `A u = b`.
#[derive(Clone, Debug)]
pub struct FvSystem {
    pub matrix: SparseMatrix,
    pub rhs: Vec<f64>,
}

/// Per-cell residual sensitivity `∂A/∂y_p · u − ∂b/∂y_p`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualSensitivity {
    pub cell: usize,
    pub values: SparseVector,
}

#[derive(Clone, Copy, Debug)]
struct FacePositions {
    aa: usize,
    ab: usize,
    ba: usize,
    bb: usize,
}

/// Caches the stiffness pattern and its symbolic Cholesky analysis for one
/// mesh. Matrix, right-hand side, and sensitivities are then filled into fixed
/// storage for every new field.
#[derive(Clone, Debug)]
pub struct FvAssembler {
    n: usize,
    interior: Vec<InteriorFace>,
    boundary: Vec<BoundaryFace>,
    pattern: SparseMatrix,
    face_pos: Vec<FacePositions>,
    diag_pos: Vec<usize>,
    symbolic: Arc<SymbolicCholesky>,
}

impl FvAssembler {
    pub fn new(mesh: &Mesh) -> Result<Self, FvError> {
        Self::with_ordering(mesh, &Ordering::Natural)
    }

    pub fn with_ordering(mesh: &Mesh, ordering: &Ordering) -> Result<Self, FvError> {
        if !mesh.has_dirichlet() {
            return Err(FvError::SingularSystem);
        }
        let n = mesh.n_cells();
        let mut triplets: Vec<(usize, usize, f64)> = (0..n).map(|i| (i, i, 0.0)).collect();
        for f in mesh.interior_faces() {
            triplets.push((f.a, f.b, 0.0));
            triplets.push((f.b, f.a, 0.0));
        }
        let pattern = SparseMatrix::from_triplets(n, n, &triplets)?;
        let pos = |i, j| pattern.position(i, j).expect("entry is in the pattern");
        let face_pos = mesh
            .interior_faces()
            .iter()
            .map(|f| FacePositions {
                aa: pos(f.a, f.a),
                ab: pos(f.a, f.b),
                ba: pos(f.b, f.a),
                bb: pos(f.b, f.b),
            })
            .collect();
        let diag_pos = (0..n).map(|i| pos(i, i)).collect();
        let symbolic = Arc::new(SymbolicCholesky::analyze(&pattern, ordering)?);
        Ok(Self {
            n,
            interior: mesh.interior_faces().to_vec(),
            boundary: mesh.boundary_faces().to_vec(),
            pattern,
            face_pos,
            diag_pos,
            symbolic,
        })
    }

    pub fn n_cells(&self) -> usize {
        self.n
    }

    pub fn symbolic(&self) -> &Arc<SymbolicCholesky> {
        &self.symbolic
    }

    fn check_len(&self, v: &[f64]) -> Result<(), FvError> {
        if v.len() != self.n {
            return Err(FvError::LengthMismatch {
                expected: self.n,
                found: v.len(),
            });
        }
        Ok(())
    }

    fn transmissivities(&self, y: &[f64]) -> Result<Vec<f64>, FvError> {
        self.check_len(y)?;
        y.iter()
            .enumerate()
            .map(|(cell, &v)| {
                let t = v.exp();
                if t.is_finite() && t > 0.0 {
                    Ok(t)
                } else {
                    Err(FvError::InvalidParameter { cell })
                }
            })
            .collect()
    }

    pub fn assemble(&self, y: &[f64]) -> Result<FvSystem, FvError> {
        let tr = self.transmissivities(y)?;
        let mut matrix = self.pattern.clone();
        let mut rhs = vec![0.0; self.n];
        let vals = matrix.values_mut();
        for (face, pos) in self.interior.iter().zip(&self.face_pos) {
            let (ta, tb) = (tr[face.a], tr[face.b]);
            let t = harmonic_transmissibility(ta, tb, face.length, face.distance);
            if !t.is_finite() {
                return Err(FvError::InvalidParameter { cell: face.a });
            }
            vals[pos.aa] += t;
            vals[pos.bb] += t;
            vals[pos.ab] -= t;
            vals[pos.ba] -= t;
        }
        for face in &self.boundary {
            match face.bc.kind {
                BcKind::Dirichlet => {
                    let t = (face.length / face.half_distance) * tr[face.cell];
                    vals[self.diag_pos[face.cell]] += t;
                    rhs[face.cell] += t * face.bc.value;
                }
                BcKind::Neumann => rhs[face.cell] -= face.bc.value * face.length,
            }
        }
        Ok(FvSystem { matrix, rhs })
    }

    pub fn factor(&self, sys: &FvSystem) -> Result<CholeskyFactor, FvError> {
        self.symbolic.factor(&sys.matrix).map_err(|e| match e {
            SparseError::NotPositiveDefinite { pivot, value } => FvError::NotPositiveDefinite {
                cell: pivot,
                pivot: value,
            },
            other => FvError::Sparse(other),
        })
    }

    /// Assembles, factors, and solves for the head. Returns the factor for reuse.
    pub fn solve(&self, y: &[f64]) -> Result<(Vec<f64>, CholeskyFactor), FvError> {
        let sys = self.assemble(y)?;
        let factor = self.factor(&sys)?;
        let u = full_solve(&factor, &sys.rhs);
        Ok((u, factor))
    }

    /// Sensitivity matrix `S` whose column `p` is `∂l/∂y_p` at fixed `u`.
    /// It shares the stiffness matrix pattern.
    pub fn sensitivity_matrix(&self, y: &[f64], u: &[f64]) -> Result<SparseMatrix, FvError> {
        let tr = self.transmissivities(y)?;
        self.check_len(u)?;
        let mut s = self.pattern.clone();
        let vals = s.values_mut();
        for (face, pos) in self.interior.iter().zip(&self.face_pos) {
            let (ta, tb) = (tr[face.a], tr[face.b]);
            let t = harmonic_transmissibility(ta, tb, face.length, face.distance);
            let dta = t * tb / (ta + tb);
            let dtb = t * ta / (ta + tb);
            let du = u[face.a] - u[face.b];
            // column a
            vals[pos.aa] += dta * du;
            vals[pos.ba] -= dta * du;
            // column b
            vals[pos.bb] -= dtb * du;
            vals[pos.ab] += dtb * du;
        }
        for face in &self.boundary {
            if face.bc.kind == BcKind::Dirichlet {
                let t = (face.length / face.half_distance) * tr[face.cell];
                vals[self.diag_pos[face.cell]] += t * (u[face.cell] - face.bc.value);
            }
        }
        Ok(s)
    }
}

/// Assembles `A(y)` and `b(y)` for a mesh.
pub fn assemble(mesh: &Mesh, y: &[f64]) -> Result<FvSystem, FvError> {
    FvAssembler::new(mesh)?.assemble(y)
}

/// `l = A u − b`.
pub fn residual(sys: &FvSystem, u: &[f64]) -> Vec<f64> {
    let mut l = sys.matrix.mul_vec(u);
    for (li, bi) in l.iter_mut().zip(&sys.rhs) {
        *li -= bi;
    }
    l
}

/// Direct sparse Cholesky solve of an assembled system.
pub fn solve_forward(sys: &FvSystem) -> Result<Vec<f64>, FvError> {
    let symbolic = Arc::new(SymbolicCholesky::analyze(&sys.matrix, &Ordering::Natural)?);
    let factor = symbolic.factor(&sys.matrix).map_err(|e| match e {
        SparseError::NotPositiveDefinite { pivot, value } => FvError::NotPositiveDefinite {
            cell: pivot,
            pivot: value,
        },
        other => FvError::Sparse(other),
    })?;
    Ok(full_solve(&factor, &sys.rhs))
}

/// `∂A/∂y_p · u − ∂b/∂y_p`, nonzero only at `p` and its face neighbors.
pub fn residual_sensitivity(
    mesh: &Mesh,
    y: &[f64],
    u: &[f64],
    p: usize,
) -> Result<ResidualSensitivity, FvError> {
    let n = mesh.n_cells();
    if p >= n {
        return Err(FvError::CellOutOfRange { cell: p, n });
    }
    for v in [y, u] {
        if v.len() != n {
            return Err(FvError::LengthMismatch {
                expected: n,
                found: v.len(),
            });
        }
    }
    let tp = y[p].exp();
    if !tp.is_finite() {
        return Err(FvError::InvalidParameter { cell: p });
    }
    let mut entries: Vec<(usize, f64)> = vec![(p, 0.0)];
    for face in mesh.interior_faces() {
        let q = if face.a == p {
            face.b
        } else if face.b == p {
            face.a
        } else {
            continue;
        };
        let tq = y[q].exp();
        let t = face_transmissibility(y[p], y[q], face.length, face.distance)
            .map_err(|_| FvError::InvalidParameter { cell: q })?;
        let dt = t * tq / (tp + tq);
        let du = u[p] - u[q];
        entries[0].1 += dt * du;
        entries.push((q, -dt * du));
    }
    for face in mesh.boundary_faces() {
        if face.cell == p && face.bc.kind == BcKind::Dirichlet {
            let t = (face.length / face.half_distance) * tp;
            entries[0].1 += t * (u[p] - face.bc.value);
        }
    }
    entries.sort_by_key(|&(i, _)| i);
    Ok(ResidualSensitivity {
        cell: p,
        values: SparseVector {
            len: n,
            indices: entries.iter().map(|e| e.0).collect(),
            values: entries.iter().map(|e| e.1).collect(),
        },
    })
}

/// Outward Darcy flux through each boundary face, in `mesh.boundary_faces()` order.
pub fn boundary_fluxes(mesh: &Mesh, y: &[f64], u: &[f64]) -> Vec<f64> {
    mesh.boundary_faces()
        .iter()
        .map(|face| match face.bc.kind {
            BcKind::Dirichlet => {
                (face.length / face.half_distance)
                    * y[face.cell].exp()
                    * (u[face.cell] - face.bc.value)
            }
            BcKind::Neumann => face.bc.value * face.length,
        })
        .collect()
}
