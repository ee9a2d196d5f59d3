//! Closures of unit vectors in the graph of a Cholesky factor and the
//! restricted triangular solves they enable.
//!
//! For `L z = e_x` the nonzeros of `z` are exactly the vertices reachable from
//! `x` in the directed graph of `L`. Because that graph is a tree, the
//! reachable set is the path from `x` to the root of its elimination tree, and
//! the path is found by repeatedly stepping to the first sub-diagonal nonzero
//! of the current column.

use faer::Mat;

use super::cholesky::CholeskyFactor;
use super::matrix::SparseVector;

/// Ascending list of permuted indices reachable from one start vertex.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClosureSet(pub Vec<usize>);

impl ClosureSet {
    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Walks from `x` to its root, each step moving to the smallest row `i > j`
/// with `L[i, j] != 0`. `x` is in permuted coordinates.
pub fn find_sparsity(factor: &CholeskyFactor, x: usize) -> ClosureSet {
    let l = factor.l();
    let mut j = x;
    let mut set = vec![j];
    loop {
        let (rows, _) = l.col(j);
        // rows[0] is the diagonal
        match rows.get(1) {
            Some(&next) => {
                j = next;
                set.push(j);
            }
            None => break,
        }
    }
    ClosureSet(set)
}

/// Scratch space for repeated restricted solves on one factor.
#[derive(Clone, Debug)]
pub struct ClosureWorkspace {
    dense: Vec<f64>,
}

impl ClosureWorkspace {
    pub fn new(n: usize) -> Self {
        Self {
            dense: vec![0.0; n],
        }
    }
}

/// `z = L⁻¹ e_x` computed over the closure of `x` only.
pub fn partial_forward_solve(factor: &CholeskyFactor, x: usize) -> SparseVector {
    let closure = find_sparsity(factor, x);
    let mut ws = ClosureWorkspace::new(factor.dim());
    partial_forward_solve_with(factor, &closure, &mut ws)
}

/// Restricted forward solve using a precomputed closure of its start vertex.
///
/// Columns are visited in ascending order, which is the same update order as
/// a full column-oriented forward solve, so both produce identical values.
pub fn partial_forward_solve_with(
    factor: &CholeskyFactor,
    closure: &ClosureSet,
    ws: &mut ClosureWorkspace,
) -> SparseVector {
    let l = factor.l();
    let set = closure.indices();
    ws.dense[set[0]] = 1.0;
    for &j in set {
        let (rows, vals) = l.col(j);
        ws.dense[j] /= vals[0];
        let zj = ws.dense[j];
        for (&i, &v) in rows[1..].iter().zip(&vals[1..]) {
            ws.dense[i] -= v * zj;
        }
    }
    let values = set
        .iter()
        .map(|&i| std::mem::replace(&mut ws.dense[i], 0.0))
        .collect();
    SparseVector {
        len: factor.dim(),
        indices: set.to_vec(),
        values,
    }
}

/// Closures for a list of observation indices given in original coordinates.
pub fn observation_closures(factor: &CholeskyFactor, obs: &[usize]) -> Vec<ClosureSet> {
    let pinv = factor.inverse_perm();
    obs.iter()
        .map(|&i| find_sparsity(factor, pinv[i]))
        .collect()
}

/// `W = A⁻¹ Hᵀ` for the unit columns at `obs` (original coordinates), using
/// closure-restricted forward solves and dense backward solves.
pub fn solve_columns(factor: &CholeskyFactor, obs: &[usize]) -> Mat<f64> {
    let closures = observation_closures(factor, obs);
    solve_columns_with(factor, &closures)
}

/// As [`solve_columns`], reusing closures computed once for a fixed pattern.
pub fn solve_columns_with(factor: &CholeskyFactor, closures: &[ClosureSet]) -> Mat<f64> {
    let n = factor.dim();
    let perm = factor.perm();
    let mut ws = ClosureWorkspace::new(n);
    let mut w = vec![0.0; n];
    let mut out = Mat::zeros(n, closures.len());
    for (k, closure) in closures.iter().enumerate() {
        let z = partial_forward_solve_with(factor, closure, &mut ws);
        w.fill(0.0);
        for (&i, &v) in z.indices.iter().zip(&z.values) {
            w[i] = v;
        }
        factor.backward_in_place(&mut w);
        for (p, &orig) in perm.iter().enumerate() {
            out[(orig, k)] = w[p];
        }
    }
    out
}

/// Reference path: one full forward and backward substitution per column.
pub fn solve_columns_naive(factor: &CholeskyFactor, obs: &[usize]) -> Mat<f64> {
    let n = factor.dim();
    let perm = factor.perm();
    let pinv = factor.inverse_perm();
    let mut w = vec![0.0; n];
    let mut out = Mat::zeros(n, obs.len());
    for (k, &o) in obs.iter().enumerate() {
        w.fill(0.0);
        w[pinv[o]] = 1.0;
        factor.forward_in_place(&mut w);
        factor.backward_in_place(&mut w);
        for (p, &orig) in perm.iter().enumerate() {
            out[(orig, k)] = w[p];
        }
    }
    out
}
