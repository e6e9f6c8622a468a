//! Separable "valid" filtering of every `[H, W]` plane with a 1-D kernel
//! applied along both axes.

use super::Scalar;

pub(crate) fn forward<T: Scalar>(x: &[T], planes: usize, h: usize, w: usize, k: &[T]) -> Vec<T> {
    let n = k.len();
    let (ho, wo) = (h + 1 - n, w + 1 - n);
    let mut out = vec![T::zero(); planes * ho * wo];
    let mut tmp = vec![T::zero(); h * wo];
    for pl in 0..planes {
        let src = &x[pl * h * w..][..h * w];
        for y in 0..h {
            let row = &src[y * w..(y + 1) * w];
            for xo in 0..wo {
                let mut acc = T::zero();
                for (i, &kv) in k.iter().enumerate() {
                    acc += kv * row[xo + i];
                }
                tmp[y * wo + xo] = acc;
            }
        }
        let dst = &mut out[pl * ho * wo..][..ho * wo];
        for yo in 0..ho {
            for xo in 0..wo {
                let mut acc = T::zero();
                for (i, &kv) in k.iter().enumerate() {
                    acc += kv * tmp[(yo + i) * wo + xo];
                }
                dst[yo * wo + xo] = acc;
            }
        }
    }
    out
}

pub(crate) fn backward<T: Scalar>(grad: &[T], planes: usize, h: usize, w: usize, k: &[T]) -> Vec<T> {
    let n = k.len();
    let (ho, wo) = (h + 1 - n, w + 1 - n);
    let mut dx = vec![T::zero(); planes * h * w];
    let mut dtmp = vec![T::zero(); h * wo];
    for pl in 0..planes {
        let g = &grad[pl * ho * wo..][..ho * wo];
        dtmp.iter_mut().for_each(|v| *v = T::zero());
        for yo in 0..ho {
            for xo in 0..wo {
                let gv = g[yo * wo + xo];
                for (i, &kv) in k.iter().enumerate() {
                    dtmp[(yo + i) * wo + xo] += kv * gv;
                }
            }
        }
        let dst = &mut dx[pl * h * w..][..h * w];
        for y in 0..h {
            for xo in 0..wo {
                let gv = dtmp[y * wo + xo];
                for (i, &kv) in k.iter().enumerate() {
                    dst[y * w + xo + i] += kv * gv;
                }
            }
        }
    }
    dx
}
