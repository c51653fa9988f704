//! Compressed sparse column matrices, Matrix Market I/O and test-matrix generators.

mod generators;
mod matrix_market;

pub use generators::{
    gen_arrow, gen_chain_pair, gen_laplacian_2d, gen_laplacian_2d_nested, gen_random_diag_dominant,
    gen_tridiagonal, nested_dissection_order,
};
pub use matrix_market::{parse_matrix_market, read_matrix_market, write_matrix_market};

use crate::dense::Dense;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SparseError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed Matrix Market header: {0}")]
    MalformedHeader(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: entry ({row}, {col}) outside a {n}x{n} matrix")]
    IndexOutOfRange { line: usize, row: usize, col: usize, n: usize },
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix dimension must be at least 1")]
    ZeroDimension,
    #[error("invalid compressed structure: {0}")]
    InvalidStructure(String),
    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),
}

/// Square sparse matrix in compressed sparse column form.
///
/// Row indices are strictly increasing inside every column, and
/// `col_ptr[n] == nnz`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Validates and wraps raw CSC arrays.
    pub fn from_csc(
        n: usize,
        col_ptr: Vec<usize>,
        row_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self, SparseError> {
        if col_ptr.len() != n + 1 {
            return Err(SparseError::InvalidStructure(format!(
                "col_ptr has {} entries, expected {}",
                col_ptr.len(),
                n + 1
            )));
        }
        if col_ptr[0] != 0 || col_ptr[n] != row_idx.len() || row_idx.len() != values.len() {
            return Err(SparseError::InvalidStructure("col_ptr does not span the nonzeros".into()));
        }
        for j in 0..n {
            if col_ptr[j] > col_ptr[j + 1] {
                return Err(SparseError::InvalidStructure(format!("col_ptr decreases at column {j}")));
            }
            let rows = &row_idx[col_ptr[j]..col_ptr[j + 1]];
            if rows.windows(2).any(|w| w[0] >= w[1]) {
                return Err(SparseError::InvalidStructure(format!(
                    "row indices of column {j} are not strictly increasing"
                )));
            }
            if rows.last().is_some_and(|&r| r >= n) {
                return Err(SparseError::InvalidStructure(format!("row index out of range in column {j}")));
            }
        }
        Ok(Self { n, col_ptr, row_idx, values })
    }

    /// Assembles from 0-based `(row, col, value)` triplets, summing duplicates.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self, SparseError> {
        let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(triplets.len());
        for &(r, c, v) in triplets {
            if r >= n || c >= n {
                return Err(SparseError::IndexOutOfRange { line: 0, row: r, col: c, n });
            }
            entries.push((c, r, v));
        }
        entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));

        let mut col_ptr = vec![0usize; n + 1];
        let mut row_idx = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (c, r, v) in entries {
            if last == Some((c, r)) {
                *values.last_mut().expect("duplicate follows an entry") += v;
                continue;
            }
            last = Some((c, r));
            col_ptr[c + 1] += 1;
            row_idx.push(r);
            values.push(v);
        }
        for j in 0..n {
            col_ptr[j + 1] += col_ptr[j];
        }
        Self::from_csc(n, col_ptr, row_idx, values)
    }

    pub fn identity(n: usize) -> Self {
        let trip: Vec<_> = (0..n).map(|i| (i, i, 1.0)).collect();
        Self::from_triplets(n, &trip).expect("identity is well formed")
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    pub fn col_ptr(&self) -> &[usize] {
        &self.col_ptr
    }

    pub fn row_idx(&self) -> &[usize] {
        &self.row_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Row indices and values of column `j`.
    pub fn col(&self, j: usize) -> (&[usize], &[f64]) {
        let range = self.col_ptr[j]..self.col_ptr[j + 1];
        (&self.row_idx[range.clone()], &self.values[range])
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let (rows, vals) = self.col(j);
        rows.binary_search(&i).ok().map(|p| vals[p])
    }

    /// Iterates `(row, col, value)` in column-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |j| {
            let (rows, vals) = self.col(j);
            rows.iter().zip(vals).map(move |(&i, &v)| (i, j, v))
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn to_dense(&self) -> Dense {
        let mut d = Dense::zeros(self.n, self.n);
        for (i, j, v) in self.triplets() {
            d[(i, j)] = v;
        }
        d
    }

    pub fn transpose(&self) -> SparseMatrix {
        let trip: Vec<_> = self.triplets().map(|(i, j, v)| (j, i, v)).collect();
        Self::from_triplets(self.n, &trip).expect("transpose of a valid matrix is valid")
    }

    pub fn is_structurally_symmetric(&self) -> bool {
        self.triplets().all(|(i, j, _)| self.get(j, i).is_some())
    }

    /// Exact (bitwise) value symmetry.
    pub fn is_symmetric(&self) -> bool {
        self.triplets().all(|(i, j, v)| self.get(j, i) == Some(v))
    }

    /// Pattern union with the transpose. Positions that only exist in the
    /// transpose are stored as explicit zeros; existing values are kept.
    pub fn symmetrize_pattern(&self) -> SparseMatrix {
        let mut trip: Vec<_> = self.triplets().collect();
        for (i, j, _) in self.triplets() {
            if self.get(j, i).is_none() {
                trip.push((j, i, 0.0));
            }
        }
        Self::from_triplets(self.n, &trip).expect("symmetrized pattern is valid")
    }

    /// Symmetric permutation `B = P A P^T` where `perm[new] = old`.
    pub fn permute_symmetric(&self, perm: &[usize]) -> Result<SparseMatrix, SparseError> {
        if perm.len() != self.n {
            return Err(SparseError::InvalidPermutation(format!(
                "length {} does not match dimension {}",
                perm.len(),
                self.n
            )));
        }
        let mut inverse = vec![usize::MAX; self.n];
        for (new, &old) in perm.iter().enumerate() {
            if old >= self.n || inverse[old] != usize::MAX {
                return Err(SparseError::InvalidPermutation(format!("entry {old} repeated or out of range")));
            }
            inverse[old] = new;
        }
        let trip: Vec<_> = self.triplets().map(|(i, j, v)| (inverse[i], inverse[j], v)).collect();
        Self::from_triplets(self.n, &trip)
    }
}
