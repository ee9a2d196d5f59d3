//! Sparse Cholesky factorization, elimination trees, and closure-restricted
//! triangular solves used to accelerate Jacobian assembly.

mod cholesky;
mod closure;
mod matrix;

use thiserror::Error;

pub use cholesky::{factorize, full_solve, CholeskyFactor, Ordering, SymbolicCholesky};
pub use closure::{
    find_sparsity, observation_closures, partial_forward_solve, partial_forward_solve_with,
    solve_columns, solve_columns_naive, solve_columns_with, ClosureSet, ClosureWorkspace,
};
pub use matrix::{SparseMatrix, SparseVector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SparseError {
    #[error("entry ({row}, {col}) is outside a {nrows}x{ncols} matrix")]
    OutOfBounds {
        row: usize,
        col: usize,
        nrows: usize,
        ncols: usize,
    },
    #[error("compressed-column arrays are inconsistent")]
    MalformedStorage,
    #[error("matrix must be square, got {nrows}x{ncols}")]
    NotSquare { nrows: usize, ncols: usize },
    #[error("ordering is not a permutation of the matrix indices")]
    InvalidPermutation,
    #[error("matrix pattern differs from the analyzed pattern")]
    PatternMismatch,
    #[error("matrix is not positive definite: pivot at original index {pivot} is {value:e}")]
    NotPositiveDefinite { pivot: usize, value: f64 },
}
