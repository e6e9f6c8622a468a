use super::Scalar;

/// `[N, C·r², H, W] -> [N, C, H·r, W·r]` with
/// `out[n, c, h·r + i, w·r + j] = in[n, c·r² + i·r + j, h, w]`.
pub(crate) fn pixel_shuffle<T: Scalar>(x: &[T], n: usize, c: usize, h: usize, w: usize, r: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    let (oh, ow) = (h * r, w * r);
    for b in 0..n {
        for co in 0..c {
            for i in 0..r {
                for j in 0..r {
                    let ci = co * r * r + i * r + j;
                    let src = &x[((b * c * r * r) + ci) * h * w..][..h * w];
                    let dst = &mut out[(b * c + co) * oh * ow..][..oh * ow];
                    for y in 0..h {
                        let drow = &mut dst[(y * r + i) * ow..][..ow];
                        for (xx, &v) in src[y * w..(y + 1) * w].iter().enumerate() {
                            drow[xx * r + j] = v;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Exact inverse of [`pixel_shuffle`]: `[N, C, H·r, W·r] -> [N, C·r², H, W]`.
pub(crate) fn pixel_unshuffle<T: Scalar>(x: &[T], n: usize, c: usize, h: usize, w: usize, r: usize) -> Vec<T> {
    // h, w are the *output* (small) spatial dims here.
    let mut out = vec![T::zero(); x.len()];
    let (ih, iw) = (h * r, w * r);
    for b in 0..n {
        for co in 0..c {
            let src = &x[(b * c + co) * ih * iw..][..ih * iw];
            for i in 0..r {
                for j in 0..r {
                    let ci = co * r * r + i * r + j;
                    let dst = &mut out[((b * c * r * r) + ci) * h * w..][..h * w];
                    for y in 0..h {
                        let srow = &src[(y * r + i) * iw..][..iw];
                        for (xx, d) in dst[y * w..(y + 1) * w].iter_mut().enumerate() {
                            *d = srow[xx * r + j];
                        }
                    }
                }
            }
        }
    }
    out
}
