//! Exact accumulation of f64 blocks. Every finite double is an integer
//! multiple of 2^-1074, so sums are kept as big integers in that unit and
//! rounded once, correctly, on the way out. The rounded sum is therefore
//! independent of the order and grouping of the partial sums.

use crate::dense::Dense;
use num_bigint::{BigInt, BigUint, Sign};
use num_traits::{One, ToPrimitive, Zero};

const SCALE_EXP: i32 = 1074;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExactBlock {
    rows: usize,
    cols: usize,
    data: Vec<BigInt>,
}

fn to_exact(v: f64) -> Option<BigInt> {
    if !v.is_finite() {
        return None;
    }
    if v == 0.0 {
        return Some(BigInt::zero());
    }
    let bits = v.to_bits();
    let exp_bits = ((bits >> 52) & 0x7ff) as i32;
    let frac = bits & ((1u64 << 52) - 1);
    // value = mantissa * 2^exp with exp >= -1074
    let (mantissa, exp) = if exp_bits == 0 { (frac, -1074) } else { (frac | (1u64 << 52), exp_bits - 1075) };
    let mag = BigUint::from(mantissa) << (exp + SCALE_EXP) as usize;
    Some(BigInt::from_biguint(if v < 0.0 { Sign::Minus } else { Sign::Plus }, mag))
}

fn pow2(e: i32) -> f64 {
    debug_assert!((-1022..=1023).contains(&e));
    f64::from_bits(((e + 1023) as u64) << 52)
}

fn ldexp(mut x: f64, mut e: i32) -> f64 {
    while e > 1023 {
        x *= pow2(1023);
        e -= 1023;
    }
    while e < -1022 {
        x *= pow2(-1022);
        e += 1022;
    }
    x * pow2(e)
}

/// Nearest double to `x * 2^-1074`, ties to even.
fn round_exact(x: &BigInt) -> f64 {
    let (sign, mag) = x.clone().into_parts();
    if mag.is_zero() {
        return 0.0;
    }
    let bits = mag.bits();
    let value = if bits <= 53 {
        // fits the significand; the scaled result is exactly representable
        let m = mag.to_u64().expect("at most 53 bits") as f64;
        ldexp(m, -SCALE_EXP)
    } else {
        let shift = bits - 53;
        let mut top = (&mag >> shift).to_u64().expect("53 bits");
        let rem = &mag & ((BigUint::one() << shift) - BigUint::one());
        let half = BigUint::one() << (shift - 1);
        if rem > half || (rem == half && top & 1 == 1) {
            top += 1;
        }
        ldexp(top as f64, shift as i32 - SCALE_EXP)
    };
    if sign == Sign::Minus {
        -value
    } else {
        value
    }
}

impl ExactBlock {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![BigInt::zero(); rows * cols] }
    }

    /// `None` if any entry is NaN or infinite.
    pub fn from_dense(d: &Dense) -> Option<Self> {
        let data = d.as_slice().iter().map(|&v| to_exact(v)).collect::<Option<Vec<_>>>()?;
        Some(Self { rows: d.rows(), cols: d.cols(), data })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn add_assign(&mut self, other: &ExactBlock) {
        assert_eq!(self.shape(), other.shape(), "exact block shapes differ");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn to_dense(&self) -> Dense {
        Dense::from_col_major(self.rows, self.cols, self.data.iter().map(round_exact).collect())
    }
}
