//! Compressed-column sparse matrices.

use faer::Mat;

use super::SparseError;

/// A real sparse matrix in compressed-column form.
///
/// Row indices inside each column are strictly increasing, so there are never
/// explicit duplicates.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds a matrix from `(row, col, value)` triplets. Duplicate coordinates are summed.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self, SparseError> {
        let mut counts = vec![0usize; ncols + 1];
        for &(row, col, _) in triplets {
            if row >= nrows || col >= ncols {
                return Err(SparseError::OutOfBounds {
                    row,
                    col,
                    nrows,
                    ncols,
                });
            }
            counts[col + 1] += 1;
        }
        for j in 0..ncols {
            counts[j + 1] += counts[j];
        }
        let mut next = counts.clone();
        let mut rows = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        for &(row, col, value) in triplets {
            let slot = next[col];
            rows[slot] = row;
            vals[slot] = value;
            next[col] += 1;
        }

        let mut col_ptr = Vec::with_capacity(ncols + 1);
        let mut row_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        col_ptr.push(0);
        let mut order: Vec<usize> = Vec::new();
        for j in 0..ncols {
            order.clear();
            order.extend(counts[j]..counts[j + 1]);
            // stable, so summation order of duplicates follows input order
            order.sort_by_key(|&p| rows[p]);
            for &p in &order {
                match row_idx.last() {
                    Some(&last) if values.len() > col_ptr[j] && last == rows[p] => {
                        *values.last_mut().unwrap() += vals[p];
                    }
                    _ => {
                        row_idx.push(rows[p]);
                        values.push(vals[p]);
                    }
                }
            }
            col_ptr.push(row_idx.len());
        }
        Ok(Self {
            nrows,
            ncols,
            col_ptr,
            row_idx,
            values,
        })
    }

    /// Assembles directly from compressed-column arrays, validating their structure.
    pub fn from_csc(
        nrows: usize,
        ncols: usize,
        col_ptr: Vec<usize>,
        row_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self, SparseError> {
        if col_ptr.len() != ncols + 1
            || col_ptr[0] != 0
            || *col_ptr.last().unwrap() != row_idx.len()
            || row_idx.len() != values.len()
        {
            return Err(SparseError::MalformedStorage);
        }
        for j in 0..ncols {
            if col_ptr[j] > col_ptr[j + 1] {
                return Err(SparseError::MalformedStorage);
            }
            let rows = &row_idx[col_ptr[j]..col_ptr[j + 1]];
            if rows.windows(2).any(|w| w[0] >= w[1]) {
                return Err(SparseError::MalformedStorage);
            }
            if let Some(&row) = rows.last() {
                if row >= nrows {
                    return Err(SparseError::OutOfBounds {
                        row,
                        col: j,
                        nrows,
                        ncols,
                    });
                }
            }
        }
        Ok(Self {
            nrows,
            ncols,
            col_ptr,
            row_idx,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            col_ptr: (0..=n).collect(),
            row_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Compresses a dense matrix, dropping exact zeros.
    pub fn from_dense(dense: &Mat<f64>) -> Self {
        let mut triplets = Vec::new();
        for j in 0..dense.ncols() {
            for i in 0..dense.nrows() {
                let v = dense[(i, j)];
                if v != 0.0 {
                    triplets.push((i, j, v));
                }
            }
        }
        Self::from_triplets(dense.nrows(), dense.ncols(), &triplets)
            .expect("indices come from the dense shape")
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nrows, self.ncols)
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    pub fn col_ptr(&self) -> &[usize] {
        &self.col_ptr
    }

    pub fn row_indices(&self) -> &[usize] {
        &self.row_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Row indices and values of column `j`.
    pub fn col(&self, j: usize) -> (&[usize], &[f64]) {
        let range = self.col_ptr[j]..self.col_ptr[j + 1];
        (&self.row_idx[range.clone()], &self.values[range])
    }

    /// Entry `(i, j)`, zero when structurally absent.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (rows, vals) = self.col(j);
        match rows.binary_search(&i) {
            Ok(p) => vals[p],
            Err(_) => 0.0,
        }
    }

    /// Storage position of entry `(i, j)` if it is structurally present.
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let (rows, _) = self.col(j);
        rows.binary_search(&i).ok().map(|p| self.col_ptr[j] + p)
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols, "vector length must match column count");
        let mut y = vec![0.0; self.nrows];
        for (j, &xj) in x.iter().enumerate() {
            if xj == 0.0 {
                continue;
            }
            let (rows, vals) = self.col(j);
            for (&i, &v) in rows.iter().zip(vals) {
                y[i] += v * xj;
            }
        }
        y
    }

    /// `y = Aᵀ x`.
    pub fn transpose_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows, "vector length must match row count");
        (0..self.ncols)
            .map(|j| {
                let (rows, vals) = self.col(j);
                rows.iter().zip(vals).map(|(&i, &v)| v * x[i]).sum()
            })
            .collect()
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.nrows + 1];
        for &i in &self.row_idx {
            counts[i + 1] += 1;
        }
        for i in 0..self.nrows {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut row_idx = vec![0usize; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for j in 0..self.ncols {
            let (rows, vals) = self.col(j);
            for (&i, &v) in rows.iter().zip(vals) {
                row_idx[next[i]] = j;
                values[next[i]] = v;
                next[i] += 1;
            }
        }
        Self {
            nrows: self.ncols,
            ncols: self.nrows,
            col_ptr: counts,
            row_idx,
            values,
        }
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let mut out = Mat::zeros(self.nrows, self.ncols);
        for j in 0..self.ncols {
            let (rows, vals) = self.col(j);
            for (&i, &v) in rows.iter().zip(vals) {
                out[(i, j)] = v;
            }
        }
        out
    }

    /// Dense product `A · B` for a dense right factor.
    pub fn mul_dense(&self, b: &Mat<f64>) -> Mat<f64> {
        assert_eq!(b.nrows(), self.ncols, "inner dimensions must agree");
        let mut out = Mat::zeros(self.nrows, b.ncols());
        for k in 0..b.ncols() {
            for j in 0..self.ncols {
                let bjk = b[(j, k)];
                if bjk == 0.0 {
                    continue;
                }
                let (rows, vals) = self.col(j);
                for (&i, &v) in rows.iter().zip(vals) {
                    out[(i, k)] += v * bjk;
                }
            }
        }
        out
    }

    /// True when `A[i,j] == A[j,i]` bit for bit for every stored entry.
    pub fn is_symmetric(&self) -> bool {
        if self.nrows != self.ncols {
            return false;
        }
        (0..self.ncols).all(|j| {
            let (rows, vals) = self.col(j);
            rows.iter().zip(vals).all(|(&i, &v)| {
                self.position(j, i)
                    .is_some_and(|p| self.values[p].to_bits() == v.to_bits())
            })
        })
    }

    /// True when both matrices share shape and stored pattern.
    pub fn same_pattern(&self, other: &Self) -> bool {
        self.shape() == other.shape()
            && self.col_ptr == other.col_ptr
            && self.row_idx == other.row_idx
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// A sparse vector with ascending indices.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseVector {
    pub len: usize,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseVector {
    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.len];
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            out[i] = v;
        }
        out
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.indices
            .iter()
            .zip(&self.values)
            .map(|(&i, &v)| v * dense[i])
            .sum()
    }
}
