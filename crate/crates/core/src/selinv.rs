//! Sequential selected inversion over the supernodal block layout, the dense
//! inverse used as a reference, and helpers to compare the two.

use crate::dense::{gemm_acc, inverse_from_lu, Dense};
use crate::factor::{factorize, normalize_factors, FactorError, SupFactorization};
use crate::sparse::SparseMatrix;
use crate::symbolic::{BlockStructure, FillPattern, SupernodePartition};
use thiserror::Error;

/// Largest dimension the dense oracle accepts.
pub const ORACLE_MAX_N: usize = 2000;

#[derive(Debug, Error, PartialEq)]
pub enum SelInvError {
    #[error(transparent)]
    Factor(#[from] FactorError),
    #[error("selected inversion needs normalized factors")]
    NotNormalized,
    #[error("the symmetric variant needs a symmetric input matrix")]
    NotSymmetric,
    #[error("entry ({row}, {col}) of block ({row_block}, {col_block}) is needed but not stored")]
    MissingEntry { row_block: usize, col_block: usize, row: usize, col: usize },
    #[error("dense oracle refuses n = {n} (limit {ORACLE_MAX_N})")]
    OracleTooLarge { n: usize },
    #[error("matrix is singular")]
    Singular,
    #[error("dense matrix is {rows}x{cols}, expected {n}x{n}")]
    ShapeMismatch { rows: usize, cols: usize, n: usize },
    #[error("results have different block layouts")]
    LayoutMismatch,
}

/// Selected entries of the inverse in the factorization's block layout:
/// `diag[k]` is `w x w`, `lower[k]` holds rows `BlockStructure::rows(k)` of
/// block column `k` (`m x w`), `upper[k]` the matching columns of block row `k`
/// (`w x m`).
#[derive(Debug, Clone, PartialEq)]
pub struct SelInvResult {
    structure: BlockStructure,
    pub diag: Vec<Dense>,
    pub lower: Vec<Dense>,
    pub upper: Vec<Dense>,
}

/// Location and size of the largest discrepancy between two results.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorReport {
    /// `max |a - b| / max |b|` over all stored entries.
    pub relative: f64,
    pub abs: f64,
    pub row: usize,
    pub col: usize,
    pub row_block: usize,
    pub col_block: usize,
}

impl SelInvResult {
    pub fn zeros(structure: &BlockStructure) -> Self {
        let part = structure.partition();
        let count = structure.count();
        Self {
            structure: structure.clone(),
            diag: (0..count).map(|k| Dense::zeros(part.size(k), part.size(k))).collect(),
            lower: (0..count).map(|k| Dense::zeros(structure.rows(k).len(), part.size(k))).collect(),
            upper: (0..count).map(|k| Dense::zeros(part.size(k), structure.rows(k).len())).collect(),
        }
    }

    pub fn structure(&self) -> &BlockStructure {
        &self.structure
    }

    /// Local storage slot of global entry `(r, c)`: (which array, supernode, row, col).
    fn slot(&self, r: usize, c: usize) -> Option<(u8, usize, usize, usize)> {
        let part = self.structure.partition();
        let (kr, kc) = (part.snode_of(r), part.snode_of(c));
        if kr == kc {
            Some((0, kr, r - part.start(kr), c - part.start(kr)))
        } else if r > c {
            let p = self.structure.rows(kc).binary_search(&r).ok()?;
            Some((1, kc, p, c - part.start(kc)))
        } else {
            let p = self.structure.rows(kr).binary_search(&c).ok()?;
            Some((2, kr, r - part.start(kr), p))
        }
    }

    pub fn get(&self, r: usize, c: usize) -> Option<f64> {
        self.slot(r, c).map(|(which, k, i, j)| match which {
            0 => self.diag[k][(i, j)],
            1 => self.lower[k][(i, j)],
            _ => self.upper[k][(i, j)],
        })
    }

    fn set(&mut self, r: usize, c: usize, v: f64) -> bool {
        match self.slot(r, c) {
            Some((0, k, i, j)) => self.diag[k][(i, j)] = v,
            Some((1, k, i, j)) => self.lower[k][(i, j)] = v,
            Some((_, k, i, j)) => self.upper[k][(i, j)] = v,
            None => return false,
        }
        true
    }

    /// Every stored entry as `(row, col, value)`, supernode by supernode.
    pub fn entries(&self) -> Vec<(usize, usize, f64)> {
        let part = self.structure.partition();
        let mut out = Vec::new();
        for k in 0..self.structure.count() {
            let s = part.start(k);
            let rows = self.structure.rows(k);
            for b in 0..part.size(k) {
                for a in 0..part.size(k) {
                    out.push((s + a, s + b, self.diag[k][(a, b)]));
                }
                for (p, &r) in rows.iter().enumerate() {
                    out.push((r, s + b, self.lower[k][(p, b)]));
                    out.push((s + b, r, self.upper[k][(b, p)]));
                }
            }
        }
        out
    }

    /// Stored block at block position `(j, i)` as a dense block.
    pub fn block(&self, j: usize, i: usize) -> Option<Dense> {
        let (rows, cols) = self.structure.block_indices(j, i)?;
        Some(Dense::from_fn(rows.len(), cols.len(), |a, b| self.get(rows[a], cols[b]).expect("stored block")))
    }

    /// Gathers entries `(rows[a], cols[b])` of the stored block `(j, i)`.
    pub fn gather(&self, j: usize, i: usize, rows: &[usize], cols: &[usize]) -> Result<Dense, SelInvError> {
        let mut out = Dense::zeros(rows.len(), cols.len());
        for (b, &c) in cols.iter().enumerate() {
            for (a, &r) in rows.iter().enumerate() {
                out[(a, b)] = self.get(r, c).ok_or(SelInvError::MissingEntry { row_block: j, col_block: i, row: r, col: c })?;
            }
        }
        Ok(out)
    }

    /// Largest entrywise deviation of `self` from `reference`.
    pub fn compare(&self, reference: &SelInvResult) -> Result<ErrorReport, SelInvError> {
        if self.structure != reference.structure {
            return Err(SelInvError::LayoutMismatch);
        }
        let part = self.structure.partition();
        let mine = self.entries();
        let theirs = reference.entries();
        let scale = theirs.iter().fold(0.0_f64, |m, e| m.max(e.2.abs()));
        let mut rep = ErrorReport { relative: 0.0, abs: 0.0, row: 0, col: 0, row_block: 0, col_block: 0 };
        for (x, y) in mine.iter().zip(&theirs) {
            let d = (x.2 - y.2).abs();
            if d > rep.abs || d.is_nan() {
                rep.abs = d;
                rep.row = x.0;
                rep.col = x.1;
                rep.row_block = part.snode_of(x.0);
                rep.col_block = part.snode_of(x.1);
            }
        }
        rep.relative = if scale > 0.0 { rep.abs / scale } else { rep.abs };
        Ok(rep)
    }
}

/// Inverse of the diagonal block `U_KK⁻¹ L_KK⁻¹`.
pub fn diagonal_inverse(f: &SupFactorization, k: usize) -> Dense {
    let s = f.snode(k);
    inverse_from_lu(&s.diag_l, &s.diag_u)
}

/// `Σ_I Ainv[J][I](rowset(J,K), rowset(I,K)) · L̂[I][K]` over `I ∈ C(K)`
/// ascending, accumulated into one block.
fn column_product(
    res: &SelInvResult,
    f: &SupFactorization,
    k: usize,
    j: usize,
    ancestors: &[usize],
) -> Result<Dense, SelInvError> {
    let st = f.structure();
    let rows_j = st.block_rows(j, k);
    let mut acc = Dense::zeros(rows_j.len(), f.partition().size(k));
    for &i in ancestors {
        let x = res.gather(j, i, rows_j, st.block_rows(i, k))?;
        let l_hat = f.lower_block(i, k).expect("ancestor block exists");
        gemm_acc(&mut acc, &x, &l_hat);
    }
    Ok(acc)
}

fn check_normalized(f: &SupFactorization) -> Result<(), SelInvError> {
    if f.is_normalized() {
        Ok(())
    } else {
        Err(SelInvError::NotNormalized)
    }
}

/// Backward sweep over supernodes computing the selected inverse from
/// normalized factors, using both `L̂` and `Û`.
pub fn selected_inversion(f: &SupFactorization) -> Result<SelInvResult, SelInvError> {
    check_normalized(f)?;
    let st = f.structure();
    let mut res = SelInvResult::zeros(st);
    for k in (0..st.count()).rev() {
        let c = st.ancestors(k);
        let w = f.partition().size(k);
        // Ainv[C][K] = -Ainv[C][C] L̂[C][K]
        let mut col_blocks = Vec::with_capacity(c.len());
        for &j in &c {
            col_blocks.push(column_product(&res, f, k, j, &c)?.neg());
        }
        // Ainv[K][C] = -Û[K][C] Ainv[C][C], read before any block of column K is written
        let mut row_blocks = Vec::with_capacity(c.len());
        for &j in &c {
            let cols_j = st.block_rows(j, k);
            let mut acc = Dense::zeros(w, cols_j.len());
            for &i in &c {
                let x = res.gather(i, j, st.block_rows(i, k), cols_j)?;
                gemm_acc(&mut acc, &f.upper_block(k, i).expect("ancestor block exists"), &x);
            }
            row_blocks.push(acc.neg());
        }
        // Ainv[K][K] = U_KK⁻¹ L_KK⁻¹ - Û[K][C] Ainv[C][K]
        let mut acc = Dense::zeros(w, w);
        for (&j, blk) in c.iter().zip(&col_blocks) {
            gemm_acc(&mut acc, &f.upper_block(k, j).expect("ancestor block exists"), blk);
        }
        res.diag[k] = diagonal_inverse(f, k).sub(&acc);
        for ((&j, cb), rb) in c.iter().zip(&col_blocks).zip(&row_blocks) {
            let b = st.block(k, j).expect("ancestor block exists");
            res.lower[k].set_row_range(b.offset, cb);
            res.upper[k].set_col_range(b.offset, rb);
        }
    }
    Ok(res)
}

/// Variant for symmetric input that uses `L̂ᵀ` in place of `Û` and fills
/// `Ainv[K][C]` by transposing `Ainv[C][K]`. The distributed runtime follows
/// exactly this arithmetic.
pub fn selected_inversion_symmetric(f: &SupFactorization) -> Result<SelInvResult, SelInvError> {
    check_normalized(f)?;
    if !f.is_symmetric_input() {
        return Err(SelInvError::NotSymmetric);
    }
    let st = f.structure();
    let mut res = SelInvResult::zeros(st);
    for k in (0..st.count()).rev() {
        let c = st.ancestors(k);
        let w = f.partition().size(k);
        let mut col_blocks = Vec::with_capacity(c.len());
        for &j in &c {
            col_blocks.push(column_product(&res, f, k, j, &c)?.neg());
        }
        let mut acc = Dense::zeros(w, w);
        for (&j, blk) in c.iter().zip(&col_blocks) {
            gemm_acc(&mut acc, &f.lower_block(j, k).expect("ancestor block exists").transpose(), blk);
        }
        res.diag[k] = diagonal_inverse(f, k).sub(&acc);
        for (&j, cb) in c.iter().zip(&col_blocks) {
            let b = st.block(k, j).expect("ancestor block exists");
            res.lower[k].set_row_range(b.offset, cb);
            res.upper[k].set_col_range(b.offset, &cb.transpose());
        }
    }
    Ok(res)
}

/// Factor, normalize and invert in one call.
pub fn selected_inverse(a: &SparseMatrix, max_size: usize) -> Result<SelInvResult, SelInvError> {
    let f = normalize_factors(factorize(a, max_size)?)?;
    selected_inversion(&f)
}

/// Full inverse by dense LU with partial pivoting.
pub fn dense_inverse_oracle(a: &SparseMatrix) -> Result<Dense, SelInvError> {
    let n = a.n();
    if n > ORACLE_MAX_N {
        return Err(SelInvError::OracleTooLarge { n });
    }
    let mut m = nalgebra::DMatrix::<f64>::zeros(n, n);
    for (i, j, v) in a.triplets() {
        m[(i, j)] = v;
    }
    let inv = m.lu().try_inverse().ok_or(SelInvError::Singular)?;
    if inv.iter().any(|v| !v.is_finite()) {
        return Err(SelInvError::Singular);
    }
    Ok(Dense::from_fn(n, n, |i, j| inv[(i, j)]))
}

/// Copies the selected positions of a dense matrix into the block layout
/// implied by `fill` and `part`.
pub fn extract_selected(dense: &Dense, fill: &FillPattern, part: &SupernodePartition) -> Result<SelInvResult, SelInvError> {
    let n = part.n();
    if dense.shape() != (n, n) {
        return Err(SelInvError::ShapeMismatch { rows: dense.rows(), cols: dense.cols(), n });
    }
    let structure = BlockStructure::new(fill, part);
    let mut res = SelInvResult::zeros(&structure);
    for (r, c, _) in res.entries() {
        let ok = res.set(r, c, dense[(r, c)]);
        debug_assert!(ok);
    }
    Ok(res)
}
