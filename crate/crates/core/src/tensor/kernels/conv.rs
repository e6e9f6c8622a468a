//! 2-D cross-correlation lowered onto a single GEMM via im2col.
//!
//! Columns are laid out as `[Cin·k·k, N·Ho·Wo]` so one matrix product covers
//! the whole batch; small spatial sizes still get reasonably shaped GEMMs.

use super::{gemm, Scalar};

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.cin * self.k * self.k
    }
    fn cols(&self) -> usize {
        self.n * self.ho * self.wo
    }

    /// Output columns `ox` whose input column `ox·stride + kx − pad` is in range.
    fn valid_range(&self, kx: usize, size_in: usize, size_out: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = kx as isize - self.pad as isize;
        // smallest o with o*s + off >= 0
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        // largest o with o*s + off <= size_in - 1
        let hi_num = size_in as isize - 1 - off;
        let hi = if hi_num < 0 { -1 } else { hi_num / s };
        let lo = lo.max(0) as usize;
        let hi = (hi + 1).clamp(0, size_out as isize) as usize;
        (lo.min(hi), hi)
    }
}

fn im2col<T: Scalar>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let p = g.ho * g.wo;
    let np = g.cols();
    let hw = g.h * g.w;
    let mut cols = vec![T::zero(); g.rows() * np];
    for c in 0..g.cin {
        for ky in 0..g.k {
            let (oy_lo, oy_hi) = g.valid_range(ky, g.h, g.ho);
            for kx in 0..g.k {
                let (ox_lo, ox_hi) = g.valid_range(kx, g.w, g.wo);
                let row = (c * g.k + ky) * g.k + kx;
                let dst_row = &mut cols[row * np..(row + 1) * np];
                for b in 0..g.n {
                    let src = &x[(b * g.cin + c) * hw..][..hw];
                    let dst = &mut dst_row[b * p..(b + 1) * p];
                    for oy in oy_lo..oy_hi {
                        let iy = oy * g.stride + ky - g.pad;
                        let srow = &src[iy * g.w..(iy + 1) * g.w];
                        let drow = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                        if g.stride == 1 {
                            let ix0 = ox_lo + kx - g.pad;
                            drow[ox_lo..ox_hi].copy_from_slice(&srow[ix0..ix0 + (ox_hi - ox_lo)]);
                        } else {
                            for ox in ox_lo..ox_hi {
                                drow[ox] = srow[ox * g.stride + kx - g.pad];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let p = g.ho * g.wo;
    let np = g.cols();
    let hw = g.h * g.w;
    for c in 0..g.cin {
        for ky in 0..g.k {
            let (oy_lo, oy_hi) = g.valid_range(ky, g.h, g.ho);
            for kx in 0..g.k {
                let (ox_lo, ox_hi) = g.valid_range(kx, g.w, g.wo);
                let row = (c * g.k + ky) * g.k + kx;
                let src_row = &cols[row * np..(row + 1) * np];
                for b in 0..g.n {
                    let dst = &mut dx[(b * g.cin + c) * hw..][..hw];
                    let src = &src_row[b * p..(b + 1) * p];
                    for oy in oy_lo..oy_hi {
                        let iy = oy * g.stride + ky - g.pad;
                        let drow = &mut dst[iy * g.w..(iy + 1) * g.w];
                        let srow = &src[oy * g.wo..(oy + 1) * g.wo];
                        for ox in ox_lo..ox_hi {
                            drow[ox * g.stride + kx - g.pad] += srow[ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn forward<T: Scalar>(x: &[T], w: &[T], bias: Option<&[T]>, g: &ConvGeom) -> Vec<T> {
    let cols = im2col(x, g);
    let kk = g.rows();
    let np = g.cols();
    let mut tmp = vec![T::zero(); g.cout * np];
    gemm(g.cout, kk, np, w, (kk, 1), &cols, (np, 1), &mut tmp, (np, 1), false);
    let p = g.ho * g.wo;
    let mut out = vec![T::zero(); g.n * g.cout * p];
    for co in 0..g.cout {
        let bv = bias.map_or(T::zero(), |b| b[co]);
        let src = &tmp[co * np..(co + 1) * np];
        for b in 0..g.n {
            let dst = &mut out[(b * g.cout + co) * p..][..p];
            for (d, &s) in dst.iter_mut().zip(&src[b * p..(b + 1) * p]) {
                *d = s + bv;
            }
        }
    }
    out
}

pub(crate) struct ConvGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Option<Vec<T>>,
    pub db: Option<Vec<T>>,
}

pub(crate) fn backward<T: Scalar>(
    x: &[T],
    w: &[T],
    grad: &[T],
    g: &ConvGeom,
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let kk = g.rows();
    let np = g.cols();
    let p = g.ho * g.wo;
    // [N, Co, P] -> [Co, N·P]
    let mut gt = vec![T::zero(); g.cout * np];
    for b in 0..g.n {
        for co in 0..g.cout {
            gt[co * np + b * p..co * np + (b + 1) * p]
                .copy_from_slice(&grad[(b * g.cout + co) * p..][..p]);
        }
    }
    let db = need.2.then(|| {
        (0..g.cout)
            .map(|co| gt[co * np..(co + 1) * np].iter().copied().sum())
            .collect()
    });
    let dw = need.1.then(|| {
        let cols = im2col(x, g);
        let mut dw = vec![T::zero(); g.cout * kk];
        gemm(g.cout, np, kk, &gt, (np, 1), &cols, (1, np), &mut dw, (kk, 1), false);
        dw
    });
    let dx = need.0.then(|| {
        let mut dcols = vec![T::zero(); kk * np];
        gemm(kk, g.cout, np, w, (1, kk), &gt, (np, 1), &mut dcols, (np, 1), false);
        let mut dx = vec![T::zero(); x.len()];
        col2im(&dcols, g, &mut dx);
        dx
    });
    ConvGrads { dx, dw, db }
}
