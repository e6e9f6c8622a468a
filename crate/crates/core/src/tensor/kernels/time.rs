//! Per-channel mixing along the time axis for frames-major `[B, T, C, P]`
//! storage: `out[b, j, c, p] = Σ_i x[b, i, c, p] · w[c, i, j]`.

use super::Scalar;

#[derive(Debug, Clone, Copy)]
pub(crate) struct TimeGeom {
    pub b: usize,
    pub t: usize,
    pub c: usize,
    pub p: usize,
}

impl TimeGeom {
    #[inline]
    fn at(&self, b: usize, t: usize, c: usize) -> usize {
        ((b * self.t + t) * self.c + c) * self.p
    }
}

pub(crate) fn forward<T: Scalar>(x: &[T], w: &[T], g: &TimeGeom) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for b in 0..g.b {
        for c in 0..g.c {
            let wc = &w[c * g.t * g.t..(c + 1) * g.t * g.t];
            for j in 0..g.t {
                let o = g.at(b, j, c);
                for i in 0..g.t {
                    let wij = wc[i * g.t + j];
                    let xi = g.at(b, i, c);
                    for p in 0..g.p {
                        out[o + p] += wij * x[xi + p];
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn backward<T: Scalar>(
    x: &[T],
    w: &[T],
    grad: &[T],
    g: &TimeGeom,
    need_x: bool,
    need_w: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let mut dx = need_x.then(|| vec![T::zero(); x.len()]);
    let mut dw = need_w.then(|| vec![T::zero(); w.len()]);
    for b in 0..g.b {
        for c in 0..g.c {
            for i in 0..g.t {
                let xi = g.at(b, i, c);
                for j in 0..g.t {
                    let gj = g.at(b, j, c);
                    let widx = c * g.t * g.t + i * g.t + j;
                    if let Some(dx) = dx.as_mut() {
                        let wij = w[widx];
                        for p in 0..g.p {
                            dx[xi + p] += wij * grad[gj + p];
                        }
                    }
                    if let Some(dw) = dw.as_mut() {
                        let mut acc = T::zero();
                        for p in 0..g.p {
                            acc += x[xi + p] * grad[gj + p];
                        }
                        dw[widx] += acc;
                    }
                }
            }
        }
    }
    (dx, dw)
}
