use std::fmt::{Debug, Display};
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point element type of the tensor engine.
///
/// Training runs in `f32`; `f64` instances exist so finite-difference oracles
/// can evaluate the exact same code at higher precision.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + std::iter::Sum
    + 'static
{
    /// Little-endian byte width, used by the checkpoint format.
    const BYTES: usize;
    const DTYPE: &'static str;

    /// `c = alpha * op(a) * op(b) + beta * c` for row-major buffers.
    ///
    /// `op(a)` is `m x k`, `op(b)` is `k x n`. With `trans_a` the buffer `a`
    /// holds a `k x m` matrix, likewise `trans_b` means `b` holds `n x k`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        trans_a: bool,
        trans_b: bool,
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        b: &[Self],
        beta: Self,
        c: &mut [Self],
    );

    fn from_f64_lossy(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite conversion")
    }

    fn to_f64_lossy(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

fn strides(trans: bool, rows: usize, cols: usize) -> (isize, isize) {
    // logical `rows x cols`; stored either as-is or transposed
    if trans {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

fn check_gemm_lens(m: usize, k: usize, n: usize, a: usize, b: usize, c: usize) {
    assert!(a >= m * k, "gemm: lhs buffer too small");
    assert!(b >= k * n, "gemm: rhs buffer too small");
    assert!(c >= m * n, "gemm: output buffer too small");
}

impl Scalar for f32 {
    const BYTES: usize = 4;
    const DTYPE: &'static str = "f32";

    fn gemm(
        trans_a: bool,
        trans_b: bool,
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: &[f32],
        b: &[f32],
        beta: f32,
        c: &mut [f32],
    ) {
        check_gemm_lens(m, k, n, a.len(), b.len(), c.len());
        if m == 0 || n == 0 {
            return;
        }
        let (rsa, csa) = strides(trans_a, m, k);
        let (rsb, csb) = strides(trans_b, k, n);
        // SAFETY: buffer sizes are checked above and strides describe
        // dense row-major (or transposed) layouts inside them.
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().expect("4 bytes"))
    }
}

impl Scalar for f64 {
    const BYTES: usize = 8;
    const DTYPE: &'static str = "f64";

    fn gemm(
        trans_a: bool,
        trans_b: bool,
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: &[f64],
        b: &[f64],
        beta: f64,
        c: &mut [f64],
    ) {
        check_gemm_lens(m, k, n, a.len(), b.len(), c.len());
        if m == 0 || n == 0 {
            return;
        }
        let (rsa, csa) = strides(trans_a, m, k);
        let (rsb, csb) = strides(trans_b, k, n);
        // SAFETY: see the f32 implementation.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(ta: bool, tb: bool, m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    let av = if ta { a[p * m + i] } else { a[i * k + p] };
                    let bv = if tb { b[j * k + p] } else { b[p * n + j] };
                    c[i * n + j] += av * bv;
                }
            }
        }
        c
    }

    #[test]
    fn gemm_matches_naive_in_all_transpose_modes() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.91).cos()).collect();
        for ta in [false, true] {
            for tb in [false, true] {
                let want = naive(ta, tb, m, k, n, &a, &b);
                let mut got = vec![0.0; m * n];
                f64::gemm(ta, tb, m, k, n, 1.0, &a, &b, 0.0, &mut got);
                for (x, y) in want.iter().zip(&got) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }
}
