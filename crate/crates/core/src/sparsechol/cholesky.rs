//! Up-looking sparse Cholesky factorization with a reusable symbolic phase.
//!
//! The symbolic analysis computes the elimination tree of the permuted matrix
//! and the full nonzero pattern of `L` from row subtrees. The numeric phase
//! fills that fixed pattern, so any matrix with the analyzed pattern can be
//! refactored without repeating the analysis.

use std::sync::Arc;

use super::matrix::SparseMatrix;
use super::SparseError;

/// Symmetric permutation applied before factoring.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub enum Ordering {
    #[default]
    Natural,
    /// `perm[k]` is the original index placed at position `k`.
    Given(Vec<usize>),
}

/// Pattern-only part of the factorization, shared by every refactorization.
#[derive(Clone, Debug)]
pub struct SymbolicCholesky {
    n: usize,
    perm: Vec<usize>,
    pinv: Vec<usize>,
    etree: Vec<Option<usize>>,
    l_col_ptr: Vec<usize>,
    l_row_idx: Vec<usize>,
    // Pattern of the analyzed input, for verifying refactorizations.
    a_col_ptr: Vec<usize>,
    a_row_idx: Vec<usize>,
    // Permuted upper triangle C = (P A Pᵀ) upper, stored by column, with the
    // position in A's value array that feeds each entry.
    c_col_ptr: Vec<usize>,
    c_row_idx: Vec<usize>,
    c_source: Vec<usize>,
}

impl SymbolicCholesky {
    pub fn analyze(a: &SparseMatrix, ordering: &Ordering) -> Result<Self, SparseError> {
        let (nrows, ncols) = a.shape();
        if nrows != ncols {
            return Err(SparseError::NotSquare { nrows, ncols });
        }
        let n = nrows;
        let perm = match ordering {
            Ordering::Natural => (0..n).collect::<Vec<_>>(),
            Ordering::Given(p) => {
                let mut seen = vec![false; n];
                if p.len() != n
                    || p.iter()
                        .any(|&k| k >= n || std::mem::replace(&mut seen[k], true))
                {
                    return Err(SparseError::InvalidPermutation);
                }
                p.clone()
            }
        };
        let mut pinv = vec![0usize; n];
        for (k, &orig) in perm.iter().enumerate() {
            pinv[orig] = k;
        }

        // Upper triangle of the permuted matrix.
        let mut counts = vec![0usize; n + 1];
        for j in 0..n {
            let (rows, _) = a.col(j);
            for &i in rows {
                if pinv[i] <= pinv[j] {
                    counts[pinv[j] + 1] += 1;
                }
            }
        }
        for k in 0..n {
            counts[k + 1] += counts[k];
        }
        let mut next = counts.clone();
        let mut c_row_idx = vec![0usize; counts[n]];
        let mut c_source = vec![0usize; counts[n]];
        for j in 0..n {
            let (rows, _) = a.col(j);
            for (offset, &i) in rows.iter().enumerate() {
                let (pi, pj) = (pinv[i], pinv[j]);
                if pi <= pj {
                    c_row_idx[next[pj]] = pi;
                    c_source[next[pj]] = a.col_ptr()[j] + offset;
                    next[pj] += 1;
                }
            }
        }
        let c_col_ptr = counts;

        let etree = elimination_tree(n, &c_col_ptr, &c_row_idx);

        // Column counts from row subtrees, then the pattern itself.
        let mut marks = vec![usize::MAX; n];
        let mut stack = vec![0usize; n];
        let mut col_counts = vec![1usize; n];
        for k in 0..n {
            let top = ereach(k, &c_col_ptr, &c_row_idx, &etree, &mut marks, &mut stack);
            for &j in &stack[top..] {
                col_counts[j] += 1;
            }
        }
        let mut l_col_ptr = vec![0usize; n + 1];
        for k in 0..n {
            l_col_ptr[k + 1] = l_col_ptr[k] + col_counts[k];
        }
        let mut l_row_idx = vec![0usize; l_col_ptr[n]];
        let mut fill = l_col_ptr.clone();
        marks.fill(usize::MAX);
        for k in 0..n {
            let top = ereach(k, &c_col_ptr, &c_row_idx, &etree, &mut marks, &mut stack);
            for &j in &stack[top..] {
                l_row_idx[fill[j]] = k;
                fill[j] += 1;
            }
            l_row_idx[fill[k]] = k;
            fill[k] += 1;
        }

        Ok(Self {
            n,
            perm,
            pinv,
            etree,
            l_col_ptr,
            l_row_idx,
            a_col_ptr: a.col_ptr().to_vec(),
            a_row_idx: a.row_indices().to_vec(),
            c_col_ptr,
            c_row_idx,
            c_source,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn inverse_perm(&self) -> &[usize] {
        &self.pinv
    }

    /// Elimination tree parents in permuted coordinates; `None` marks a root.
    pub fn etree(&self) -> &[Option<usize>] {
        &self.etree
    }

    pub fn nnz_l(&self) -> usize {
        self.l_row_idx.len()
    }

    fn matches(&self, a: &SparseMatrix) -> bool {
        a.nrows() == self.n
            && a.ncols() == self.n
            && a.col_ptr() == self.a_col_ptr.as_slice()
            && a.row_indices() == self.a_row_idx.as_slice()
    }

    /// Numeric factorization of a matrix with the analyzed pattern.
    pub fn factor(self: &Arc<Self>, a: &SparseMatrix) -> Result<CholeskyFactor, SparseError> {
        if !self.matches(a) {
            return Err(SparseError::PatternMismatch);
        }
        let n = self.n;
        let a_vals = a.values();
        let mut l_vals = vec![0.0; self.l_row_idx.len()];
        let mut next = self.l_col_ptr[..n].to_vec();
        let mut x = vec![0.0; n];
        let mut marks = vec![usize::MAX; n];
        let mut stack = vec![0usize; n];

        for k in 0..n {
            let top = ereach(
                k,
                &self.c_col_ptr,
                &self.c_row_idx,
                &self.etree,
                &mut marks,
                &mut stack,
            );
            for p in self.c_col_ptr[k]..self.c_col_ptr[k + 1] {
                x[self.c_row_idx[p]] += a_vals[self.c_source[p]];
            }
            let mut d = x[k];
            x[k] = 0.0;
            for &j in &stack[top..] {
                let lkj = x[j] / l_vals[self.l_col_ptr[j]];
                x[j] = 0.0;
                for p in self.l_col_ptr[j] + 1..next[j] {
                    x[self.l_row_idx[p]] -= l_vals[p] * lkj;
                }
                d -= lkj * lkj;
                l_vals[next[j]] = lkj;
                next[j] += 1;
            }
            if d <= 0.0 || !d.is_finite() {
                return Err(SparseError::NotPositiveDefinite {
                    pivot: self.perm[k],
                    value: d,
                });
            }
            l_vals[next[k]] = d.sqrt();
            next[k] += 1;
        }

        let l =
            SparseMatrix::from_csc(n, n, self.l_col_ptr.clone(), self.l_row_idx.clone(), l_vals)?;
        Ok(CholeskyFactor {
            symbolic: Arc::clone(self),
            l,
        })
    }
}

/// Numeric Cholesky factor `P A Pᵀ = L Lᵀ`.
#[derive(Clone, Debug)]
pub struct CholeskyFactor {
    symbolic: Arc<SymbolicCholesky>,
    l: SparseMatrix,
}

impl CholeskyFactor {
    pub fn l(&self) -> &SparseMatrix {
        &self.l
    }

    pub fn symbolic(&self) -> &Arc<SymbolicCholesky> {
        &self.symbolic
    }

    pub fn dim(&self) -> usize {
        self.symbolic.n
    }

    pub fn perm(&self) -> &[usize] {
        &self.symbolic.perm
    }

    pub fn inverse_perm(&self) -> &[usize] {
        &self.symbolic.pinv
    }

    pub fn etree(&self) -> &[Option<usize>] {
        &self.symbolic.etree
    }

    /// In-place `L z = b` over every column, in permuted coordinates.
    pub fn forward_in_place(&self, z: &mut [f64]) {
        for j in 0..self.dim() {
            let (rows, vals) = self.l.col(j);
            z[j] /= vals[0];
            let zj = z[j];
            for (&i, &v) in rows[1..].iter().zip(&vals[1..]) {
                z[i] -= v * zj;
            }
        }
    }

    /// In-place `Lᵀ w = z`, in permuted coordinates.
    pub fn backward_in_place(&self, w: &mut [f64]) {
        for j in (0..self.dim()).rev() {
            let (rows, vals) = self.l.col(j);
            let mut s = w[j];
            for (&i, &v) in rows[1..].iter().zip(&vals[1..]) {
                s -= v * w[i];
            }
            w[j] = s / vals[0];
        }
    }
}

/// Factors `A` with the given ordering.
pub fn factorize(a: &SparseMatrix, ordering: &Ordering) -> Result<CholeskyFactor, SparseError> {
    Arc::new(SymbolicCholesky::analyze(a, ordering)?).factor(a)
}

/// Solves `A x = rhs` by a full forward and backward substitution.
pub fn full_solve(factor: &CholeskyFactor, rhs: &[f64]) -> Vec<f64> {
    assert_eq!(rhs.len(), factor.dim(), "rhs length must match the factor");
    let perm = factor.perm();
    let mut work: Vec<f64> = perm.iter().map(|&orig| rhs[orig]).collect();
    factor.forward_in_place(&mut work);
    factor.backward_in_place(&mut work);
    let mut out = vec![0.0; work.len()];
    for (k, &orig) in perm.iter().enumerate() {
        out[orig] = work[k];
    }
    out
}

/// Elimination tree from the upper triangle of a symmetric matrix, with path compression.
fn elimination_tree(n: usize, col_ptr: &[usize], row_idx: &[usize]) -> Vec<Option<usize>> {
    let mut parent = vec![None; n];
    let mut ancestor: Vec<Option<usize>> = vec![None; n];
    for k in 0..n {
        for &row in &row_idx[col_ptr[k]..col_ptr[k + 1]] {
            let mut i = Some(row);
            while let Some(node) = i {
                if node >= k {
                    break;
                }
                let next = ancestor[node];
                ancestor[node] = Some(k);
                if next.is_none() {
                    parent[node] = Some(k);
                }
                i = next;
            }
        }
    }
    parent
}

/// Nonzero pattern of row `k` of `L` (columns `j < k`) in topological order,
/// returned as `stack[top..]`.
fn ereach(
    k: usize,
    col_ptr: &[usize],
    row_idx: &[usize],
    etree: &[Option<usize>],
    marks: &mut [usize],
    stack: &mut [usize],
) -> usize {
    let mut top = etree.len();
    marks[k] = k;
    for &row in &row_idx[col_ptr[k]..col_ptr[k + 1]] {
        if row > k {
            continue;
        }
        // stack[..len] holds the unmarked path; it never overlaps stack[top..]
        let mut i = row;
        let mut len = 0;
        while marks[i] != k {
            stack[len] = i;
            len += 1;
            marks[i] = k;
            match etree[i] {
                Some(p) => i = p,
                None => break,
            }
        }
        while len > 0 {
            len -= 1;
            top -= 1;
            stack[top] = stack[len];
        }
    }
    top
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tridiagonal(n: usize) -> SparseMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 4.0));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
        }
        SparseMatrix::from_triplets(n, n, &t).unwrap()
    }

    #[test]
    fn diagonal_matrix_factors_to_square_roots() {
        let a = SparseMatrix::from_triplets(2, 2, &[(0, 0, 4.0), (1, 1, 9.0)]).unwrap();
        let f = factorize(&a, &Ordering::Natural).unwrap();
        assert_eq!(f.l().get(0, 0), 2.0);
        assert_eq!(f.l().get(1, 1), 3.0);
        assert_eq!(f.l().nnz(), 2);
        assert_eq!(f.etree(), &[None, None]);
    }

    #[test]
    fn tridiagonal_etree_is_a_chain() {
        let f = factorize(&tridiagonal(5), &Ordering::Natural).unwrap();
        assert_eq!(f.etree(), &[Some(1), Some(2), Some(3), Some(4), None]);
    }

    #[test]
    fn not_positive_definite_reports_pivot() {
        let a = SparseMatrix::from_triplets(
            2,
            2,
            &[(0, 0, 1.0), (0, 1, 2.0), (1, 0, 2.0), (1, 1, 1.0)],
        )
        .unwrap();
        match factorize(&a, &Ordering::Natural) {
            Err(SparseError::NotPositiveDefinite { pivot, .. }) => assert_eq!(pivot, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn refactorization_requires_same_pattern() {
        let sym = Arc::new(SymbolicCholesky::analyze(&tridiagonal(4), &Ordering::Natural).unwrap());
        assert!(sym.factor(&tridiagonal(4)).is_ok());
        let other = SparseMatrix::identity(4);
        assert!(matches!(
            sym.factor(&other),
            Err(SparseError::PatternMismatch)
        ));
    }

    #[test]
    fn bad_permutation_is_rejected() {
        let a = tridiagonal(3);
        assert!(matches!(
            SymbolicCholesky::analyze(&a, &Ordering::Given(vec![0, 0, 1])),
            Err(SparseError::InvalidPermutation)
        ));
    }

    #[test]
    fn permuted_solve_matches_natural_solve() {
        let a = tridiagonal(6);
        let rhs = [1.0, -2.0, 0.5, 3.0, 0.0, 1.5];
        let natural = full_solve(&factorize(&a, &Ordering::Natural).unwrap(), &rhs);
        let permuted = full_solve(
            &factorize(&a, &Ordering::Given(vec![5, 3, 1, 0, 2, 4])).unwrap(),
            &rhs,
        );
        for (x, y) in natural.iter().zip(&permuted) {
            assert!((x - y).abs() < 1e-13);
        }
    }
}
