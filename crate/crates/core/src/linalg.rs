//! Dense row-major kernels used by the reference encoder.
//!
//! Shapes are passed explicitly; every matrix is a contiguous row-major slice.

use crate::scalar::Scalar;

/// `out[m×n] += a[m×k] · b[k×n]`
pub fn matmul_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    gemm_checked(a, (k, 1), b, (n, 1), out, m, k, n, T::one());
}

/// `out[m×n] = a[m×k] · b[k×n]`
pub fn matmul<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    gemm_checked(a, (k, 1), b, (n, 1), out, m, k, n, T::zero());
}

/// `out[m×n] += a[m×k] · b[n×k]ᵀ`
pub fn matmul_nt_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    gemm_checked(a, (k, 1), b, (1, k), out, m, k, n, T::one());
}

/// `out[k×n] += a[m×k]ᵀ · b[m×n]`
pub fn matmul_tn_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    gemm_checked(a, (1, k), b, (n, 1), out, k, m, n, T::one());
}

/// Shared entry point: `a` is viewed as m×k and `b` as k×n through the given
/// (row, column) strides, and `out` is a dense m×n matrix.
#[allow(clippy::too_many_arguments)]
fn gemm_checked<T: Scalar>(
    a: &[T],
    a_strides: (usize, usize),
    b: &[T],
    b_strides: (usize, usize),
    out: &mut [T],
    m: usize,
    k: usize,
    n: usize,
    beta: T,
) {
    assert_eq!(a.len(), m * k, "left operand shape");
    assert_eq!(b.len(), k * n, "right operand shape");
    assert_eq!(out.len(), m * n, "output shape");
    if m == 0 || n == 0 {
        return;
    }
    let signed = |(r, c): (usize, usize)| (r as isize, c as isize);
    // SAFETY: the asserted lengths match the dense layouts the strides
    // describe, and `out` is a unique borrow so it cannot alias the inputs.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            signed(a_strides),
            b.as_ptr(),
            signed(b_strides),
            beta,
            out.as_mut_ptr(),
            (n as isize, 1),
        );
    }
}

/// Adds `bias` to every row of `out[rows×bias.len()]`.
pub fn add_row_bias<T: Scalar>(out: &mut [T], bias: &[T]) {
    for row in out.chunks_exact_mut(bias.len()) {
        for (o, &b) in row.iter_mut().zip(bias) {
            *o += b;
        }
    }
}

/// Accumulates column sums of `x[rows×grad.len()]` into `grad`.
pub fn acc_col_sums<T: Scalar>(x: &[T], grad: &mut [T]) {
    for row in x.chunks_exact(grad.len()) {
        for (g, &v) in grad.iter_mut().zip(row) {
            *g += v;
        }
    }
}

/// Numerically stable in-place softmax over a single row.
pub fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// `log(softmax(logits))`, computed through log-sum-exp.
pub fn log_softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = logits.iter().map(|&z| (z - max).exp()).sum::<T>().ln() + max;
    logits.iter().map(|&z| z - lse).collect()
}

pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    out
}
