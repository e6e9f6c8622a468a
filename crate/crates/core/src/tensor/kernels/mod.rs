//! Forward and backward kernels over raw slices. Shapes are validated by the
//! tape before these are called.

pub(crate) mod bilinear;
pub(crate) mod conv;
pub(crate) mod filter;
pub(crate) mod layout;
pub(crate) mod shuffle;
pub(crate) mod time;

use super::Scalar;

/// Strides (row, column) of a matrix view.
pub(crate) type Strides = (usize, usize);

/// `c (+)= a · b` for an `m×k` by `k×n` product over strided views.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    sa: Strides,
    b: &[T],
    sb: Strides,
    c: &mut [T],
    sc: Strides,
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    let extent = |rows: usize, cols: usize, s: Strides| (rows - 1) * s.0 + (cols - 1) * s.1;
    assert!(k == 0 || extent(m, k, sa) < a.len(), "gemm: lhs view out of bounds");
    assert!(k == 0 || extent(k, n, sb) < b.len(), "gemm: rhs view out of bounds");
    assert!(extent(m, n, sc) < c.len(), "gemm: output view out of bounds");
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: every strided access was bounds-checked above.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr(),
            sb.0 as isize,
            sb.1 as isize,
            beta,
            c.as_mut_ptr(),
            sc.0 as isize,
            sc.1 as isize,
        );
    }
}
