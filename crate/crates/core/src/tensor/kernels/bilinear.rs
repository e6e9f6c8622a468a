//! Backward warping with bilinear interpolation and border clamping.
//!
//! Flow channel 0 is the horizontal displacement `dx`, channel 1 the vertical
//! `dy`, both in pixels of the sampled map. A sample point outside the map is
//! clamped to the border, which makes the derivative wrt that flow component
//! zero there.

use super::Scalar;

struct Tap<T> {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    ax: T,
    ay: T,
    inside_x: bool,
    inside_y: bool,
}

#[inline]
fn tap<T: Scalar>(px: usize, py: usize, dx: T, dy: T, h: usize, w: usize) -> Tap<T> {
    let wmax = T::of((w - 1) as f64);
    let hmax = T::of((h - 1) as f64);
    let sx_raw = T::of(px as f64) + dx;
    let sy_raw = T::of(py as f64) + dy;
    let inside_x = sx_raw >= T::zero() && sx_raw <= wmax;
    let inside_y = sy_raw >= T::zero() && sy_raw <= hmax;
    let sx = sx_raw.max(T::zero()).min(wmax);
    let sy = sy_raw.max(T::zero()).min(hmax);
    let fx = sx.floor();
    let fy = sy.floor();
    let x0 = (fx.as_f64() as usize).min(w - 1);
    let y0 = (fy.as_f64() as usize).min(h - 1);
    Tap {
        x0,
        x1: (x0 + 1).min(w - 1),
        y0,
        y1: (y0 + 1).min(h - 1),
        ax: sx - fx,
        ay: sy - fy,
        inside_x,
        inside_y,
    }
}

pub(crate) fn forward<T: Scalar>(src: &[T], flow: &[T], n: usize, c: usize, h: usize, w: usize) -> Vec<T> {
    let hw = h * w;
    let mut out = vec![T::zero(); src.len()];
    for b in 0..n {
        let fxs = &flow[(b * 2) * hw..][..hw];
        let fys = &flow[(b * 2 + 1) * hw..][..hw];
        for py in 0..h {
            for px in 0..w {
                let p = py * w + px;
                let t = tap(px, py, fxs[p], fys[p], h, w);
                let one = T::one();
                let w00 = (one - t.ay) * (one - t.ax);
                let w01 = (one - t.ay) * t.ax;
                let w10 = t.ay * (one - t.ax);
                let w11 = t.ay * t.ax;
                for ch in 0..c {
                    let plane = &src[(b * c + ch) * hw..][..hw];
                    out[(b * c + ch) * hw + p] = w00 * plane[t.y0 * w + t.x0]
                        + w01 * plane[t.y0 * w + t.x1]
                        + w10 * plane[t.y1 * w + t.x0]
                        + w11 * plane[t.y1 * w + t.x1];
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn backward<T: Scalar>(
    src: &[T],
    flow: &[T],
    grad: &[T],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    need_src: bool,
    need_flow: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let hw = h * w;
    let mut dsrc = need_src.then(|| vec![T::zero(); src.len()]);
    let mut dflow = need_flow.then(|| vec![T::zero(); flow.len()]);
    for b in 0..n {
        for py in 0..h {
            for px in 0..w {
                let p = py * w + px;
                let fx = flow[(b * 2) * hw + p];
                let fy = flow[(b * 2 + 1) * hw + p];
                let t = tap(px, py, fx, fy, h, w);
                let one = T::one();
                let (i00, i01, i10, i11) = (
                    t.y0 * w + t.x0,
                    t.y0 * w + t.x1,
                    t.y1 * w + t.x0,
                    t.y1 * w + t.x1,
                );
                let mut gx = T::zero();
                let mut gy = T::zero();
                for ch in 0..c {
                    let base = (b * c + ch) * hw;
                    let g = grad[base + p];
                    if let Some(ds) = dsrc.as_mut() {
                        ds[base + i00] += g * (one - t.ay) * (one - t.ax);
                        ds[base + i01] += g * (one - t.ay) * t.ax;
                        ds[base + i10] += g * t.ay * (one - t.ax);
                        ds[base + i11] += g * t.ay * t.ax;
                    }
                    if dflow.is_some() {
                        let plane = &src[base..base + hw];
                        let (v00, v01, v10, v11) = (plane[i00], plane[i01], plane[i10], plane[i11]);
                        gx += g * ((one - t.ay) * (v01 - v00) + t.ay * (v11 - v10));
                        gy += g * ((one - t.ax) * (v10 - v00) + t.ax * (v11 - v01));
                    }
                }
                if let Some(df) = dflow.as_mut() {
                    if t.inside_x {
                        df[(b * 2) * hw + p] += gx;
                    }
                    if t.inside_y {
                        df[(b * 2 + 1) * hw + p] += gy;
                    }
                }
            }
        }
    }
    (dsrc, dflow)
}
