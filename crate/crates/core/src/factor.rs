//! Right-looking supernodal LU without pivoting, and the panel normalization
//! that turns `L` and `U` panels into `L̂ = L L_KK⁻¹` and `Û = U_KK⁻¹ U`.

use crate::dense::{
    gemm_acc, lu_in_place, solve_unit_lower_left, solve_unit_lower_right, solve_upper_left, solve_upper_right,
    split_lu, Dense,
};
use crate::sparse::SparseMatrix;
use crate::symbolic::{BlockStructure, FillPattern, Symbolic, SymbolicError, SupernodePartition};
use thiserror::Error;

/// Pivots with magnitude at or below this multiple of `max |A|` are rejected.
pub const PIVOT_TOLERANCE: f64 = 1e-14;

#[derive(Debug, Error, PartialEq)]
pub enum FactorError {
    #[error(transparent)]
    Symbolic(#[from] SymbolicError),
    #[error("zero or tiny pivot {pivot:e} at column {column}")]
    ZeroPivot { column: usize, pivot: f64 },
    #[error("matrix dimension {matrix} does not match the symbolic analysis ({symbolic})")]
    DimensionMismatch { matrix: usize, symbolic: usize },
    #[error("entry ({row}, {col}) of A lies outside the fill pattern")]
    OutsidePattern { row: usize, col: usize },
    #[error("factors are already normalized")]
    AlreadyNormalized,
}

/// Dense storage of one supernode. With `w` columns and `m` rows below it,
/// `diag_l`/`diag_u` are `w x w`, `lower` is `m x w` and `upper` is `w x m`.
/// Panel rows (and upper panel columns) follow `BlockStructure::rows(k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SupernodeFactor {
    pub diag_l: Dense,
    pub diag_u: Dense,
    pub lower: Dense,
    pub upper: Dense,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupFactorization {
    structure: BlockStructure,
    snodes: Vec<SupernodeFactor>,
    normalized: bool,
    symmetric_input: bool,
}

fn position(rows: &[usize], r: usize) -> Option<usize> {
    rows.binary_search(&r).ok()
}

impl SupFactorization {
    pub fn structure(&self) -> &BlockStructure {
        &self.structure
    }

    pub fn partition(&self) -> &SupernodePartition {
        self.structure.partition()
    }

    pub fn count(&self) -> usize {
        self.snodes.len()
    }

    pub fn snode(&self, k: usize) -> &SupernodeFactor {
        &self.snodes[k]
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Whether the factored matrix was bitwise symmetric.
    pub fn is_symmetric_input(&self) -> bool {
        self.symmetric_input
    }

    /// Block `L[i][k]` (or `L̂` once normalized) as a dense `len x w` block.
    pub fn lower_block(&self, i: usize, k: usize) -> Option<Dense> {
        let b = self.structure.block(k, i)?;
        Some(self.snodes[k].lower.row_range(b.offset, b.len))
    }

    /// Block `U[k][j]` (or `Û`) as a dense `w x len` block.
    pub fn upper_block(&self, k: usize, j: usize) -> Option<Dense> {
        let b = self.structure.block(k, j)?;
        Some(self.snodes[k].upper.col_range(b.offset, b.len))
    }

    /// Dense `L` (unit lower) and `U` assembled from the supernodal storage.
    /// Only meaningful before normalization.
    pub fn to_dense(&self) -> (Dense, Dense) {
        let n = self.structure.n();
        let part = self.partition();
        let mut l = Dense::zeros(n, n);
        let mut u = Dense::zeros(n, n);
        for k in 0..self.count() {
            let s = part.start(k);
            let f = &self.snodes[k];
            for a in 0..part.size(k) {
                for b in 0..part.size(k) {
                    l[(s + a, s + b)] = f.diag_l[(a, b)];
                    u[(s + a, s + b)] = f.diag_u[(a, b)];
                }
                for (p, &r) in self.structure.rows(k).iter().enumerate() {
                    l[(r, s + a)] = f.lower[(p, a)];
                    u[(s + a, r)] = f.upper[(a, p)];
                }
            }
        }
        (l, u)
    }
}

/// Factors `a = L U` over the given fill pattern and partition.
pub fn supernodal_lu(
    a: &SparseMatrix,
    part: &SupernodePartition,
    fill: &FillPattern,
) -> Result<SupFactorization, FactorError> {
    if a.n() != fill.n() || a.n() != part.n() {
        return Err(FactorError::DimensionMismatch { matrix: a.n(), symbolic: fill.n() });
    }
    let structure = BlockStructure::new(fill, part);
    let count = part.count();
    let mut diag: Vec<Dense> = (0..count).map(|k| Dense::zeros(part.size(k), part.size(k))).collect();
    let mut lower: Vec<Dense> = (0..count).map(|k| Dense::zeros(structure.rows(k).len(), part.size(k))).collect();
    let mut upper: Vec<Dense> = (0..count).map(|k| Dense::zeros(part.size(k), structure.rows(k).len())).collect();

    for (r, c, v) in a.triplets() {
        let (kr, kc) = (part.snode_of(r), part.snode_of(c));
        if kr == kc {
            diag[kr][(r - part.start(kr), c - part.start(kr))] = v;
        } else if r > c {
            let p = position(structure.rows(kc), r).ok_or(FactorError::OutsidePattern { row: r, col: c })?;
            lower[kc][(p, c - part.start(kc))] = v;
        } else {
            let p = position(structure.rows(kr), c).ok_or(FactorError::OutsidePattern { row: r, col: c })?;
            upper[kr][(r - part.start(kr), p)] = v;
        }
    }

    let tol = PIVOT_TOLERANCE * a.max_abs();
    let mut snodes = Vec::with_capacity(count);
    for k in 0..count {
        let mut packed = std::mem::replace(&mut diag[k], Dense::zeros(0, 0));
        if let Err(local) = lu_in_place(&mut packed, tol) {
            return Err(FactorError::ZeroPivot { column: part.start(k) + local, pivot: packed[(local, local)] });
        }
        let (l_kk, u_kk) = split_lu(&packed);
        let mut lp = std::mem::replace(&mut lower[k], Dense::zeros(0, 0));
        let mut up = std::mem::replace(&mut upper[k], Dense::zeros(0, 0));
        solve_upper_right(&mut lp, &u_kk);
        solve_unit_lower_left(&l_kk, &mut up);

        let rows = structure.rows(k);
        if !rows.is_empty() {
            let mut w = Dense::zeros(rows.len(), rows.len());
            gemm_acc(&mut w, &lp, &up);
            for (b, &c) in rows.iter().enumerate() {
                let kc = part.snode_of(c);
                for (a_, &r) in rows.iter().enumerate() {
                    let v = w[(a_, b)];
                    let kr = part.snode_of(r);
                    if kr == kc {
                        diag[kr][(r - part.start(kr), c - part.start(kr))] -= v;
                    } else if r > c {
                        let p = position(structure.rows(kc), r).expect("Schur update stays inside the fill");
                        lower[kc][(p, c - part.start(kc))] -= v;
                    } else {
                        let p = position(structure.rows(kr), c).expect("Schur update stays inside the fill");
                        upper[kr][(r - part.start(kr), p)] -= v;
                    }
                }
            }
        }
        snodes.push(SupernodeFactor { diag_l: l_kk, diag_u: u_kk, lower: lp, upper: up });
    }
    Ok(SupFactorization { structure, snodes, normalized: false, symmetric_input: a.is_symmetric() })
}

/// Symbolic analysis followed by [`supernodal_lu`].
pub fn factorize(a: &SparseMatrix, max_size: usize) -> Result<SupFactorization, FactorError> {
    let s = Symbolic::analyze(a, max_size)?;
    supernodal_lu(a, s.structure.partition(), &s.fill)
}

/// Overwrites every lower panel by `L L_KK⁻¹` and every upper panel by `U_KK⁻¹ U`.
pub fn normalize_factors(mut f: SupFactorization) -> Result<SupFactorization, FactorError> {
    if f.normalized {
        return Err(FactorError::AlreadyNormalized);
    }
    for s in &mut f.snodes {
        solve_unit_lower_right(&mut s.lower, &s.diag_l);
        solve_upper_left(&s.diag_u, &mut s.upper);
    }
    f.normalized = true;
    Ok(f)
}
