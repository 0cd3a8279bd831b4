//! Safe row-major wrapper over the scalar GEMM.

use crate::scalar::Scalar;

/// `c = alpha * op(a) * op(b) + beta * c` with row-major `c` of `m x n`.
///
/// `op(a)` is `m x k`: `a` is stored `m x k`, or `k x m` when `ta` is set.
/// `op(b)` is `k x n`: `b` is stored `k x n`, or `n x k` when `tb` is set.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<S: Scalar>(
    ta: bool,
    tb: bool,
    m: usize,
    k: usize,
    n: usize,
    alpha: S,
    a: &[S],
    b: &[S],
    beta: S,
    c: &mut [S],
) {
    assert!(
        a.len() >= m * k && b.len() >= k * n && c.len() >= m * n,
        "gemm operand too small"
    );
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the length checks above cover every addressed element, and
    // `c` is a distinct mutable borrow.
    unsafe {
        S::gemm_raw(
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
