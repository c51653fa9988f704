//! Small column-major dense blocks and the kernels the supernodal code needs.
//!
//! Every kernel accumulates in a fixed index order so that results are
//! bitwise reproducible: `gemm_acc` sums over the inner dimension in
//! ascending order, triangular solves treat each row (or column) of the
//! right-hand side independently. The distributed runtime relies on this to
//! reproduce the sequential reference exactly on a single rank.

use std::fmt;

#[derive(Clone, PartialEq)]
pub struct Dense {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Dense {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Dense {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            let row: Vec<String> = (0..self.cols).map(|j| format!("{:>12.5e}", self[(i, j)])).collect();
            writeln!(f, "  {}", row.join(" "))?;
        }
        write!(f, "]")
    }
}

impl Dense {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a block from row-major nested slices (convenient in tests).
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut m = Self::zeros(r, c);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), c, "ragged rows");
            for (j, &v) in row.iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for j in 0..cols {
            for i in 0..rows {
                m.data[i + j * rows] = f(i, j);
            }
        }
        m
    }

    pub fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "buffer length does not match shape");
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Column-major storage.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn transpose(&self) -> Dense {
        Dense::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn neg(&self) -> Dense {
        Dense { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| -v).collect() }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Copy of rows `start..start + len`.
    pub fn row_range(&self, start: usize, len: usize) -> Dense {
        Dense::from_fn(len, self.cols, |i, j| self[(start + i, j)])
    }

    /// Copy of columns `start..start + len`.
    pub fn col_range(&self, start: usize, len: usize) -> Dense {
        Dense::from_fn(self.rows, len, |i, j| self[(i, start + j)])
    }

    /// Overwrites rows `start..` with `src`.
    pub fn set_row_range(&mut self, start: usize, src: &Dense) {
        assert_eq!(src.cols, self.cols);
        for j in 0..src.cols {
            for i in 0..src.rows {
                self[(start + i, j)] = src[(i, j)];
            }
        }
    }

    /// Overwrites columns `start..` with `src`.
    pub fn set_col_range(&mut self, start: usize, src: &Dense) {
        assert_eq!(src.rows, self.rows);
        for j in 0..src.cols {
            for i in 0..src.rows {
                self[(i, start + j)] = src[(i, j)];
            }
        }
    }

    /// Gathers the submatrix at the given local row and column positions.
    pub fn gather(&self, row_pos: &[usize], col_pos: &[usize]) -> Dense {
        Dense::from_fn(row_pos.len(), col_pos.len(), |i, j| self[(row_pos[i], col_pos[j])])
    }

    pub fn sub_assign(&mut self, other: &Dense) {
        assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a -= b;
        }
    }

    /// `self - other` as a new block.
    pub fn sub(&self, other: &Dense) -> Dense {
        let mut out = self.clone();
        out.sub_assign(other);
        out
    }

    pub fn matmul(&self, b: &Dense) -> Dense {
        let mut c = Dense::zeros(self.rows, b.cols);
        gemm_acc(&mut c, self, b);
        c
    }

    pub fn max_abs_diff(&self, other: &Dense) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data.iter().zip(&other.data).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    }
}

impl std::ops::Index<(usize, usize)> for Dense {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i + j * self.rows]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Dense {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i + j * self.rows]
    }
}

/// `c += a * b`, summing the inner dimension in ascending order for every entry.
pub fn gemm_acc(c: &mut Dense, a: &Dense, b: &Dense) {
    assert_eq!(a.cols, b.rows, "inner dimensions differ");
    assert_eq!((c.rows, c.cols), (a.rows, b.cols), "output shape mismatch");
    let m = a.rows;
    for j in 0..b.cols {
        let cj = &mut c.data[j * m..(j + 1) * m];
        for k in 0..a.cols {
            let bkj = b.data[k + j * b.rows];
            if bkj == 0.0 {
                continue;
            }
            let ak = &a.data[k * m..(k + 1) * m];
            for (ci, ai) in cj.iter_mut().zip(ak) {
                *ci += ai * bkj;
            }
        }
    }
}

/// Unpivoted in-place LU of a square block. On success the strict lower part
/// holds the unit lower factor and the upper part holds U. Returns the local
/// index of the first pivot with `|pivot| <= tol`.
pub fn lu_in_place(a: &mut Dense, tol: f64) -> Result<(), usize> {
    assert_eq!(a.rows, a.cols);
    let n = a.rows;
    for k in 0..n {
        let pivot = a[(k, k)];
        if !(pivot.abs() > tol) {
            return Err(k);
        }
        for i in k + 1..n {
            a[(i, k)] /= pivot;
        }
        for j in k + 1..n {
            let ukj = a[(k, j)];
            if ukj == 0.0 {
                continue;
            }
            for i in k + 1..n {
                let lik = a[(i, k)];
                a[(i, j)] -= lik * ukj;
            }
        }
    }
    Ok(())
}

/// Splits a packed LU block into (unit lower, upper).
pub fn split_lu(packed: &Dense) -> (Dense, Dense) {
    let n = packed.rows;
    let l = Dense::from_fn(n, n, |i, j| match i.cmp(&j) {
        std::cmp::Ordering::Greater => packed[(i, j)],
        std::cmp::Ordering::Equal => 1.0,
        std::cmp::Ordering::Less => 0.0,
    });
    let u = Dense::from_fn(n, n, |i, j| if i <= j { packed[(i, j)] } else { 0.0 });
    (l, u)
}

/// `x <- x * L^{-1}` for unit lower triangular `l`.
pub fn solve_unit_lower_right(x: &mut Dense, l: &Dense) {
    let n = l.rows;
    assert_eq!(x.cols, n);
    for j in (0..n).rev() {
        for k in j + 1..n {
            let lkj = l[(k, j)];
            if lkj == 0.0 {
                continue;
            }
            for i in 0..x.rows {
                let v = x[(i, k)];
                x[(i, j)] -= v * lkj;
            }
        }
    }
}

/// `x <- x * U^{-1}` for upper triangular `u`.
pub fn solve_upper_right(x: &mut Dense, u: &Dense) {
    let n = u.rows;
    assert_eq!(x.cols, n);
    for j in 0..n {
        for k in 0..j {
            let ukj = u[(k, j)];
            if ukj == 0.0 {
                continue;
            }
            for i in 0..x.rows {
                let v = x[(i, k)];
                x[(i, j)] -= v * ukj;
            }
        }
        let d = u[(j, j)];
        for i in 0..x.rows {
            x[(i, j)] /= d;
        }
    }
}

/// `x <- L^{-1} * x` for unit lower triangular `l`.
pub fn solve_unit_lower_left(l: &Dense, x: &mut Dense) {
    let n = l.rows;
    assert_eq!(x.rows, n);
    for c in 0..x.cols {
        for i in 0..n {
            let mut s = x[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = s;
        }
    }
}

/// `x <- U^{-1} * x` for upper triangular `u`.
pub fn solve_upper_left(u: &Dense, x: &mut Dense) {
    let n = u.rows;
    assert_eq!(x.rows, n);
    for c in 0..x.cols {
        for i in (0..n).rev() {
            let mut s = x[(i, c)];
            for k in i + 1..n {
                s -= u[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = s / u[(i, i)];
        }
    }
}

/// `U^{-1} L^{-1}` by two triangular solves against the identity.
pub fn inverse_from_lu(l: &Dense, u: &Dense) -> Dense {
    let mut x = Dense::identity(l.rows);
    solve_unit_lower_left(l, &mut x);
    solve_upper_left(u, &mut x);
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(rows: usize, cols: usize, salt: u64) -> Dense {
        Dense::from_fn(rows, cols, |i, j| {
            let h = (i as u64 * 31 + j as u64 * 17 + salt * 7) % 23;
            h as f64 / 11.0 - 1.0
        })
    }

    #[test]
    fn gemm_matches_naive_triple_loop() {
        let a = sample(4, 3, 1);
        let b = sample(3, 5, 2);
        let c = a.matmul(&b);
        for i in 0..4 {
            for j in 0..5 {
                let mut s = 0.0;
                for k in 0..3 {
                    s += a[(i, k)] * b[(k, j)];
                }
                assert_eq!(c[(i, j)], s);
            }
        }
    }

    #[test]
    fn transpose_of_product_is_bitwise_product_of_transposes() {
        let a = sample(5, 4, 3);
        let b = sample(4, 6, 4);
        let ab_t = a.matmul(&b).transpose();
        let bt_at = b.transpose().matmul(&a.transpose());
        assert_eq!(ab_t, bt_at);
    }

    #[test]
    fn lu_then_inverse() {
        let mut a = Dense::from_rows(&[&[4.0, -1.0, 0.5], &[-1.0, 4.0, -1.0], &[0.25, -1.0, 4.0]]);
        let orig = a.clone();
        lu_in_place(&mut a, 1e-14).unwrap();
        let (l, u) = split_lu(&a);
        assert!(l.matmul(&u).max_abs_diff(&orig) < 1e-14);
        let inv = inverse_from_lu(&l, &u);
        assert!(orig.matmul(&inv).max_abs_diff(&Dense::identity(3)) < 1e-14);
    }

    #[test]
    fn zero_pivot_is_reported() {
        let mut a = Dense::from_rows(&[&[1.0, 2.0], &[2.0, 4.0]]);
        assert_eq!(lu_in_place(&mut a, 1e-14), Err(1));
    }

    #[test]
    fn right_and_left_solves_invert_multiplication() {
        let mut packed = Dense::from_rows(&[&[3.0, 1.0, 0.0], &[0.5, 2.0, -1.0], &[0.2, 0.1, 5.0]]);
        lu_in_place(&mut packed, 0.0).unwrap();
        let (l, u) = split_lu(&packed);
        let b = sample(4, 3, 9);

        let mut x = b.clone();
        solve_unit_lower_right(&mut x, &l);
        assert!(x.matmul(&l).max_abs_diff(&b) < 1e-14);

        let mut x = b.clone();
        solve_upper_right(&mut x, &u);
        assert!(x.matmul(&u).max_abs_diff(&b) < 1e-14);

        let bt = b.transpose();
        let mut y = bt.clone();
        solve_unit_lower_left(&l, &mut y);
        assert!(l.matmul(&y).max_abs_diff(&bt) < 1e-14);

        let mut y = bt.clone();
        solve_upper_left(&u, &mut y);
        assert!(u.matmul(&y).max_abs_diff(&bt) < 1e-14);
    }

    #[test]
    fn right_solve_is_row_independent() {
        let mut packed = Dense::from_rows(&[&[2.0, 0.0], &[0.75, 3.0]]);
        lu_in_place(&mut packed, 0.0).unwrap();
        let (l, _) = split_lu(&packed);
        let b = sample(6, 2, 5);
        let mut whole = b.clone();
        solve_unit_lower_right(&mut whole, &l);
        let mut top = b.row_range(0, 2);
        solve_unit_lower_right(&mut top, &l);
        assert_eq!(whole.row_range(0, 2), top);
    }
}
