//! Index bookkeeping ops: permutation, concatenation, slicing, repetition and
//! broadcast index maps.

use super::Scalar;

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Calls `f(out_flat, src_flat)` for every element, where `src_strides` maps an
/// output multi-index onto a flat source offset.
fn walk(out_shape: &[usize], src_strides: &[usize], mut f: impl FnMut(usize, usize)) {
    let n: usize = out_shape.iter().product();
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for o in 0..n {
        f(o, src);
        for d in (0..rank).rev() {
            idx[d] += 1;
            src += src_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            src -= src_strides[d] * idx[d];
            idx[d] = 0;
        }
    }
}

pub(crate) fn permute<T: Scalar>(x: &[T], shape: &[usize], axes: &[usize]) -> Vec<T> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = vec![T::zero(); x.len()];
    walk(&out_shape, &src_strides, |o, s| out[o] = x[s]);
    out
}

pub(crate) fn inverse_axes(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

/// Flat source index of `b` for every element of an `a`-shaped output, given
/// `b` broadcast (numpy-style, trailing alignment) to `a_shape`.
pub(crate) fn broadcast_index(a_shape: &[usize], b_shape: &[usize]) -> Vec<usize> {
    let rank = a_shape.len();
    let mut padded = vec![1; rank - b_shape.len()];
    padded.extend_from_slice(b_shape);
    let bs = strides(&padded);
    let src_strides: Vec<usize> = (0..rank)
        .map(|d| if padded[d] == 1 { 0 } else { bs[d] })
        .collect();
    let mut map = vec![0; a_shape.iter().product()];
    walk(a_shape, &src_strides, |o, s| map[o] = s);
    map
}

/// (outer, inner) element counts around `axis`.
pub(crate) fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize) {
    (
        shape[..axis].iter().product(),
        shape[axis + 1..].iter().product(),
    )
}

pub(crate) fn concat<T: Scalar>(parts: &[(&[T], usize)], outer: usize, inner: usize) -> Vec<T> {
    let total: usize = parts.iter().map(|(_, d)| d).sum();
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for (data, d) in parts {
            out.extend_from_slice(&data[o * d * inner..(o + 1) * d * inner]);
        }
    }
    out
}

pub(crate) fn slice<T: Scalar>(
    x: &[T],
    outer: usize,
    dim: usize,
    inner: usize,
    start: usize,
    len: usize,
) -> Vec<T> {
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * dim + start) * inner;
        out.extend_from_slice(&x[base..base + len * inner]);
    }
    out
}

/// Adds `grad` (shaped like the slice) back into a zeroed full-size buffer.
pub(crate) fn unslice<T: Scalar>(
    grad: &[T],
    outer: usize,
    dim: usize,
    inner: usize,
    start: usize,
    len: usize,
) -> Vec<T> {
    let mut out = vec![T::zero(); outer * dim * inner];
    for o in 0..outer {
        let base = (o * dim + start) * inner;
        out[base..base + len * inner].copy_from_slice(&grad[o * len * inner..(o + 1) * len * inner]);
    }
    out
}
