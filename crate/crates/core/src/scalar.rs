//! Scalar abstraction over the floating-point element type.
//!
//! All numerical code in this crate is generic over [`Scalar`], which is
//! implemented for `f32` (the training dtype) and `f64` (used by gradient
//! checks and other high-precision tests). Matrix products dispatch to
//! shape-appropriate kernels per type.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps};

/// Floating-point element type: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + NumAssignOps + Sum<Self> + Default + Debug + Display + Send + Sync + 'static
{
    fn of(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("value representable as scalar")
    }

    fn of_usize(v: usize) -> Self {
        <Self as FromPrimitive>::from_usize(v).expect("value representable as scalar")
    }

    fn to_f64(self) -> f64;

    /// `c[m×n] = alpha · a[m×k] · b[k×n] + beta · c`, all row-major contiguous.
    fn gemm(m: usize, k: usize, n: usize, alpha: Self, a: &[Self], b: &[Self], beta: Self, c: &mut [Self]);

    /// `c[m×q] += a[m×s] · b[q×s]ᵀ`, all row-major contiguous.
    ///
    /// Reduction runs along the contiguous `s` axis of both inputs, which is
    /// the layout produced by convolution backward passes.
    fn gemm_nt(m: usize, q: usize, s: usize, a: &[Self], b: &[Self], c: &mut [Self]);
}

/// Row-blocked product for very flat `a` (few rows, long output rows), where
/// generic GEMM packing costs more than it saves. Requires `beta == 0`.
/// 4x16 register tiles keep `b` traffic at one read per four output rows.
fn flat_gemm<T: Scalar>(m: usize, k: usize, n: usize, alpha: T, a: &[T], b: &[T], c: &mut [T]) {
    const NB: usize = 16;
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let store = |src: &[T], dst: &mut [T]| {
        if alpha == T::one() {
            dst.copy_from_slice(src);
        } else {
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = alpha * s;
            }
        }
    };
    let mut nb = 0;
    while nb < n {
        let nw = NB.min(n - nb);
        let mut i = 0;
        while i + 4 <= m && nw == NB {
            let mut acc = [[T::zero(); NB]; 4];
            let a0 = &a[i * k..(i + 1) * k];
            let a1 = &a[(i + 1) * k..(i + 2) * k];
            let a2 = &a[(i + 2) * k..(i + 3) * k];
            let a3 = &a[(i + 3) * k..(i + 4) * k];
            for kk in 0..k {
                let brow = &b[kk * n + nb..kk * n + nb + NB];
                let (w0, w1, w2, w3) = (a0[kk], a1[kk], a2[kk], a3[kk]);
                for j in 0..NB {
                    let bv = brow[j];
                    acc[0][j] = acc[0][j] + w0 * bv;
                    acc[1][j] = acc[1][j] + w1 * bv;
                    acc[2][j] = acc[2][j] + w2 * bv;
                    acc[3][j] = acc[3][j] + w3 * bv;
                }
            }
            for (r, row) in acc.iter().enumerate() {
                store(row, &mut c[(i + r) * n + nb..(i + r) * n + nb + NB]);
            }
            i += 4;
        }
        // Remaining rows, or the ragged final column chunk.
        while i < m {
            let mut acc = [T::zero(); NB];
            for (kk, &w) in a[i * k..(i + 1) * k].iter().enumerate() {
                let brow = &b[kk * n + nb..kk * n + nb + nw];
                for (av, &bv) in acc[..nw].iter_mut().zip(brow) {
                    *av = *av + w * bv;
                }
            }
            store(&acc[..nw], &mut c[i * n + nb..i * n + nb + nw]);
            i += 1;
        }
        nb += nw;
    }
}

/// Chunked row-pair dot products backing [`Scalar::gemm_nt`].
fn dot_rows_nt<T: Scalar>(m: usize, q: usize, s: usize, a: &[T], b: &[T], c: &mut [T]) {
    const SB: usize = 256;
    debug_assert_eq!(a.len(), m * s);
    debug_assert_eq!(b.len(), q * s);
    debug_assert_eq!(c.len(), m * q);
    let mut sb = 0;
    while sb < s {
        let sw = SB.min(s - sb);
        for i in 0..m {
            let arow = &a[i * s + sb..i * s + sb + sw];
            for j in 0..q {
                let brow = &b[j * s + sb..j * s + sb + sw];
                let mut acc = [T::zero(); 4];
                let mut ia = arow.chunks_exact(4);
                let mut ib = brow.chunks_exact(4);
                for (ca, cb) in (&mut ia).zip(&mut ib) {
                    acc[0] = acc[0] + ca[0] * cb[0];
                    acc[1] = acc[1] + ca[1] * cb[1];
                    acc[2] = acc[2] + ca[2] * cb[2];
                    acc[3] = acc[3] + ca[3] * cb[3];
                }
                let mut rem = T::zero();
                for (&x, &y) in ia.remainder().iter().zip(ib.remainder()) {
                    rem = rem + x * y;
                }
                c[i * q + j] += acc[0] + acc[1] + acc[2] + acc[3] + rem;
            }
        }
        sb += sw;
    }
}

impl Scalar for f32 {
    fn to_f64(self) -> f64 {
        self as f64
    }

    fn gemm(m: usize, k: usize, n: usize, alpha: f32, a: &[f32], b: &[f32], beta: f32, c: &mut [f32]) {
        if (m <= 8 || k <= 8) && beta == 0.0 {
            flat_gemm(m, k, n, alpha, a, b, c);
            return;
        }
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                k as isize,
                1,
                b.as_ptr(),
                n as isize,
                1,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }

    fn gemm_nt(m: usize, q: usize, s: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
        dot_rows_nt(m, q, s, a, b, c);
    }
}

impl Scalar for f64 {
    fn to_f64(self) -> f64 {
        self
    }

    fn gemm(m: usize, k: usize, n: usize, alpha: f64, a: &[f64], b: &[f64], beta: f64, c: &mut [f64]) {
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                k as isize,
                1,
                b.as_ptr(),
                n as isize,
                1,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }

    fn gemm_nt(m: usize, q: usize, s: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
        dot_rows_nt(m, q, s, a, b, c);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_gemm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for kk in 0..k {
                for j in 0..n {
                    c[i * n + j] += a[i * k + kk] * b[kk * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn gemm_matches_naive_product() {
        for &(m, k, n) in &[(3usize, 5usize, 7usize), (8, 27, 33), (16, 9, 4), (1, 1, 1)] {
            let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
            let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.71).cos()).collect();
            let expect = naive_gemm(m, k, n, &a, &b);

            let mut c64 = vec![0.0f64; m * n];
            f64::gemm(m, k, n, 1.0, &a, &b, 0.0, &mut c64);
            for (x, y) in c64.iter().zip(&expect) {
                assert!((x - y).abs() < 1e-12);
            }

            let a32: Vec<f32> = a.iter().map(|&v| v as f32).collect();
            let b32: Vec<f32> = b.iter().map(|&v| v as f32).collect();
            let mut c32 = vec![0.0f32; m * n];
            f32::gemm(m, k, n, 1.0, &a32, &b32, 0.0, &mut c32);
            for (x, y) in c32.iter().zip(&expect) {
                assert!((*x as f64 - y).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn gemm_nt_matches_naive_product() {
        let (m, q, s) = (4usize, 6usize, 133usize);
        let a: Vec<f64> = (0..m * s).map(|i| (i as f64 * 0.13).sin()).collect();
        let b: Vec<f64> = (0..q * s).map(|i| (i as f64 * 0.29).cos()).collect();
        let mut c = vec![0.5f64; m * q];
        f64::gemm_nt(m, q, s, &a, &b, &mut c);
        for i in 0..m {
            for j in 0..q {
                let dot: f64 = (0..s).map(|t| a[i * s + t] * b[j * s + t]).sum();
                assert!((c[i * q + j] - (0.5 + dot)).abs() < 1e-10);
            }
        }
    }
}
