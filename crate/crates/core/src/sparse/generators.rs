use super::{SparseError, SparseMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// 5-point Laplacian on an `nx` by `ny` grid, natural row-major numbering
/// (node `(x, y)` is row `y * nx + x`). Diagonal 4, neighbours -1.
pub fn gen_laplacian_2d(nx: usize, ny: usize) -> Result<SparseMatrix, SparseError> {
    if nx == 0 || ny == 0 {
        return Err(SparseError::ZeroDimension);
    }
    let n = nx * ny;
    let mut trip = Vec::with_capacity(5 * n);
    for y in 0..ny {
        for x in 0..nx {
            let i = y * nx + x;
            trip.push((i, i, 4.0));
            if x + 1 < nx {
                trip.push((i, i + 1, -1.0));
                trip.push((i + 1, i, -1.0));
            }
            if y + 1 < ny {
                trip.push((i, i + nx, -1.0));
                trip.push((i + nx, i, -1.0));
            }
        }
    }
    SparseMatrix::from_triplets(n, &trip)
}

/// Geometric nested-dissection numbering of an `nx` by `ny` grid.
/// Returns `perm` with `perm[new] = old`, where `old` is the row-major index.
/// Regions are split across their longer side; the separator line is
/// numbered after both halves.
pub fn nested_dissection_order(nx: usize, ny: usize) -> Vec<usize> {
    fn dissect(x0: usize, x1: usize, y0: usize, y1: usize, nx: usize, out: &mut Vec<usize>) {
        let (w, h) = (x1 - x0, y1 - y0);
        if w == 0 || h == 0 {
            return;
        }
        if w * h <= 4 || (w < 3 && h < 3) {
            for y in y0..y1 {
                for x in x0..x1 {
                    out.push(y * nx + x);
                }
            }
            return;
        }
        if w >= h {
            let mid = x0 + w / 2;
            dissect(x0, mid, y0, y1, nx, out);
            dissect(mid + 1, x1, y0, y1, nx, out);
            out.extend((y0..y1).map(|y| y * nx + mid));
        } else {
            let mid = y0 + h / 2;
            dissect(x0, x1, y0, mid, nx, out);
            dissect(x0, x1, mid + 1, y1, nx, out);
            out.extend((x0..x1).map(|x| mid * nx + x));
        }
    }
    let mut out = Vec::with_capacity(nx * ny);
    dissect(0, nx, 0, ny, nx, &mut out);
    out
}

/// The same operator as [`gen_laplacian_2d`], numbered by [`nested_dissection_order`].
pub fn gen_laplacian_2d_nested(nx: usize, ny: usize) -> Result<SparseMatrix, SparseError> {
    gen_laplacian_2d(nx, ny)?.permute_symmetric(&nested_dissection_order(nx, ny))
}

/// Symmetric tridiagonal matrix with diagonal 4 and off-diagonals -1.
pub fn gen_tridiagonal(n: usize) -> Result<SparseMatrix, SparseError> {
    if n == 0 {
        return Err(SparseError::ZeroDimension);
    }
    let mut trip = Vec::with_capacity(3 * n);
    for i in 0..n {
        trip.push((i, i, 4.0));
        if i + 1 < n {
            trip.push((i, i + 1, -1.0));
            trip.push((i + 1, i, -1.0));
        }
    }
    SparseMatrix::from_triplets(n, &trip)
}

/// Arrow matrix: diagonal plus a dense last row and column. Diagonally dominant.
pub fn gen_arrow(n: usize) -> Result<SparseMatrix, SparseError> {
    if n == 0 {
        return Err(SparseError::ZeroDimension);
    }
    let last = n - 1;
    let mut trip = Vec::with_capacity(3 * n);
    for i in 0..last {
        trip.push((i, i, 4.0 + (i % 3) as f64));
        trip.push((i, last, -1.0));
        trip.push((last, i, -1.0));
    }
    trip.push((last, last, n as f64 + 3.0));
    SparseMatrix::from_triplets(n, &trip)
}

/// Two independent chains interleaved by parity, both attached to a final
/// separator node: `2 * len + 1` unknowns. The elimination tree has two
/// disjoint branches under the last column.
pub fn gen_chain_pair(len: usize) -> Result<SparseMatrix, SparseError> {
    if len == 0 {
        return Err(SparseError::ZeroDimension);
    }
    let sep = 2 * len;
    let n = sep + 1;
    let mut trip = Vec::with_capacity(3 * n);
    for i in 0..n {
        trip.push((i, i, 4.0));
    }
    for i in 0..sep {
        let j = if i + 2 < sep { i + 2 } else { sep };
        trip.push((i, j, -1.0));
        trip.push((j, i, -1.0));
    }
    SparseMatrix::from_triplets(n, &trip)
}

/// Random strictly diagonally dominant matrix with a structurally symmetric
/// pattern. About `per_col` off-diagonal pairs are drawn per column. With
/// `symmetric` the values mirror (the result is SPD); otherwise the two
/// entries of each pair are drawn independently.
pub fn gen_random_diag_dominant(
    n: usize,
    per_col: usize,
    seed: u64,
    symmetric: bool,
) -> Result<SparseMatrix, SparseError> {
    if n == 0 {
        return Err(SparseError::ZeroDimension);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trip = Vec::new();
    if n > 1 {
        for _ in 0..n * per_col {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            if i == j {
                continue;
            }
            let v: f64 = rng.random_range(-1.0..1.0);
            let w = if symmetric { v } else { rng.random_range(-1.0..1.0) };
            trip.push((i, j, v));
            trip.push((j, i, w));
        }
    }
    // Sum duplicates first so the dominance margin is computed on final values.
    let off = SparseMatrix::from_triplets(n, &trip)?;
    let mut row_sum = vec![0.0_f64; n];
    let mut col_sum = vec![0.0_f64; n];
    for (i, j, v) in off.triplets() {
        row_sum[i] += v.abs();
        col_sum[j] += v.abs();
    }
    let mut all: Vec<_> = off.triplets().collect();
    for i in 0..n {
        all.push((i, i, 1.0 + row_sum[i].max(col_sum[i])));
    }
    SparseMatrix::from_triplets(n, &all)
}
