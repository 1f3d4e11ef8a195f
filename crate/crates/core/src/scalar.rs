//! Floating-point element types the tensor core and the statistics routines
//! are generic over.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, NumCast, ToPrimitive};

/// Real scalar usable as a tensor element.
///
/// Besides the usual float arithmetic, each implementation supplies a
/// row-major general matrix multiply `C = alpha * op(A) * op(B) + beta * C`,
/// where `op` optionally transposes its argument.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumCast
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// `c[m x n] = alpha * op(a)[m x k] * op(b)[k x n] + beta * c`.
    ///
    /// When `trans_a` is set, `a` is stored row-major as `k x m`; likewise
    /// `b` is stored as `n x k` when `trans_b` is set.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        trans_a: bool,
        b: &[Self],
        trans_b: bool,
        beta: Self,
        c: &mut [Self],
    );

    fn from_f64_lossy(v: f64) -> Self {
        <Self as NumCast>::from(v).expect("f64 converts to every Scalar")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("every Scalar converts to f64")
    }
}

fn strides(rows: usize, cols: usize, trans: bool) -> (isize, isize) {
    // logical rows x cols; stored transposed when `trans`
    if trans {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

/// Rows below which [`gemm_few_rows`] beats packing for the blocked kernel.
const FEW_ROWS: usize = 4;

/// Row-at-a-time product for very short `op(a)`: the blocked kernel would
/// spend most of its time packing `b`, which is read only once here.
#[allow(clippy::too_many_arguments)]
fn gemm_few_rows<T: Float + AddAssign>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: &[T],
    trans_a: bool,
    b: &[T],
    trans_b: bool,
    beta: T,
    c: &mut [T],
) {
    for i in 0..m {
        let a_at = |p: usize| if trans_a { a[p * m + i] } else { a[i * k + p] };
        let row = &mut c[i * n..(i + 1) * n];
        if beta == T::zero() {
            row.iter_mut().for_each(|v| *v = T::zero());
        } else if beta != T::one() {
            row.iter_mut().for_each(|v| *v = *v * beta);
        }
        if trans_b {
            for (j, out) in row.iter_mut().enumerate() {
                let bj = &b[j * k..(j + 1) * k];
                let mut acc = T::zero();
                for (p, &bv) in bj.iter().enumerate() {
                    acc += a_at(p) * bv;
                }
                *out += alpha * acc;
            }
        } else {
            for p in 0..k {
                let coef = alpha * a_at(p);
                if coef == T::zero() {
                    continue;
                }
                for (out, &bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                    *out += coef * bv;
                }
            }
        }
    }
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                trans_a: bool,
                b: &[Self],
                trans_b: bool,
                beta: Self,
                c: &mut [Self],
            ) {
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
                if m == 0 || n == 0 {
                    return;
                }
                if m <= FEW_ROWS {
                    return gemm_few_rows(m, k, n, alpha, a, trans_a, b, trans_b, beta, c);
                }
                let (rsa, csa) = strides(m, k, trans_a);
                let (rsb, csb) = strides(k, n, trans_b);
                // SAFETY: the asserted lengths cover every index reachable
                // through the row/column strides computed above.
                unsafe {
                    $gemm(
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
        }
    };
}

impl_scalar!(f64, matrixmultiply::dgemm);
impl_scalar!(f32, matrixmultiply::sgemm);

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    fn transpose(rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
        let mut t = vec![0.0; x.len()];
        for i in 0..rows {
            for j in 0..cols {
                t[j * rows + i] = x[i * cols + j];
            }
        }
        t
    }

    #[test]
    fn gemm_matches_naive_in_all_transpose_modes() {
        // m = 3 takes the few-rows path, m = 9 the blocked kernel
        for m in [1, 3, 9] {
            check_transpose_modes(m, 4, 5);
        }
    }

    fn check_transpose_modes(m: usize, k: usize, n: usize) {
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let expect = naive(m, k, n, &a, &b);
        let at = transpose(m, k, &a);
        let bt = transpose(k, n, &b);
        for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
            let aa = if ta { &at } else { &a };
            let bb = if tb { &bt } else { &b };
            let mut c = vec![0.0; m * n];
            f64::gemm(m, k, n, 1.0, aa, ta, bb, tb, 0.0, &mut c);
            for (x, y) in c.iter().zip(&expect) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gemm_accumulates_with_beta() {
        let a = [1.0f32, 2.0];
        let b = [3.0f32, 4.0];
        let mut c = [10.0f32];
        f32::gemm(1, 2, 1, 1.0, &a, false, &b, false, 1.0, &mut c);
        assert_eq!(c[0], 21.0);
        let a: Vec<f64> = (0..18).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..6).map(|i| 0.5 * i as f64).collect();
        let mut c = vec![1.0; 27];
        f64::gemm(9, 2, 3, 2.0, &a, false, &b, false, 3.0, &mut c);
        let expect = naive(9, 2, 3, &a, &b);
        for (x, y) in c.iter().zip(&expect) {
            assert_eq!(*x, 3.0 + 2.0 * y);
        }
    }
}
