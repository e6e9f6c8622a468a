//! L1 + α·(1 − SSIM) objective on frames-major `[N,3,H,W]` batches.

use super::TrainError;
use crate::metrics::{gaussian_window, SSIM_SIGMA, SSIM_WINDOW};
use crate::tensor::{Scalar, Tape, Tensor, TensorError, Var};

const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;
/// Output positions whose window sees less visible weight than this are
/// left out of the masked SSIM average.
const MIN_VISIBLE: f64 = 0.25;

fn window<T: Scalar>() -> Vec<T> {
    gaussian_window(SSIM_WINDOW, SSIM_SIGMA).into_iter().map(T::of).collect()
}

/// Per-position SSIM map from local statistics.
fn ssim_map<T: Scalar>(tape: &mut Tape<T>, mx: Var, my: Var, sxx: Var, syy: Var, sxy: Var) -> Result<Var, TensorError> {
    let mxy = tape.mul(mx, my)?;
    let mxx = tape.mul(mx, mx)?;
    let myy = tape.mul(my, my)?;
    let vx = tape.sub(sxx, mxx)?;
    let vy = tape.sub(syy, myy)?;
    let cov = tape.sub(sxy, mxy)?;
    let l_num = tape.scale(mxy, T::of(2.0));
    let l_num = tape.add_scalar(l_num, T::of(C1));
    let c_num = tape.scale(cov, T::of(2.0));
    let c_num = tape.add_scalar(c_num, T::of(C2));
    let l_den = tape.add(mxx, myy)?;
    let l_den = tape.add_scalar(l_den, T::of(C1));
    let c_den = tape.add(vx, vy)?;
    let c_den = tape.add_scalar(c_den, T::of(C2));
    let num = tape.mul(l_num, c_num)?;
    let den = tape.mul(l_den, c_den)?;
    tape.div(num, den)
}

/// Mean SSIM over frames, channels and valid positions.
pub fn ssim_term<T: Scalar>(tape: &mut Tape<T>, pred: Var, gt: Var) -> Result<Var, TensorError> {
    let g = window::<T>();
    let pp = tape.mul(pred, pred)?;
    let gg = tape.mul(gt, gt)?;
    let pg = tape.mul(pred, gt)?;
    let mx = tape.gaussian_filter_valid(pred, &g)?;
    let my = tape.gaussian_filter_valid(gt, &g)?;
    let sxx = tape.gaussian_filter_valid(pp, &g)?;
    let syy = tape.gaussian_filter_valid(gg, &g)?;
    let sxy = tape.gaussian_filter_valid(pg, &g)?;
    let map = ssim_map(tape, mx, my, sxx, syy, sxy)?;
    Ok(tape.mean(map))
}

/// SSIM restricted to visible pixels: local statistics are Gaussian-weighted
/// averages over visible pixels only, and the map is averaged with the
/// visible window weight as importance.
fn masked_ssim_term<T: Scalar>(tape: &mut Tape<T>, pred: Var, gt: Var, mask: &Tensor<T>) -> Result<Var, TensorError> {
    let g = window::<T>();
    let m = tape.constant(mask.clone());
    let px = tape.broadcast_mul(pred, m)?;
    let gx = tape.broadcast_mul(gt, m)?;
    let pp = tape.mul(px, pred)?;
    let gg = tape.mul(gx, gt)?;
    let pg = tape.mul(px, gt)?;
    let wm = tape.gaussian_filter_valid(m, &g)?;
    let wv = tape.value(wm).clone();
    let inv = wv.map(|v| if v.as_f64() > MIN_VISIBLE { T::one() / v } else { T::zero() });
    let weight = wv.map(|v| if v.as_f64() > MIN_VISIBLE { v } else { T::zero() });
    let inv = tape.constant(inv);
    let mut stats = Vec::with_capacity(5);
    for x in [px, gx, pp, gg, pg] {
        let f = tape.gaussian_filter_valid(x, &g)?;
        stats.push(tape.broadcast_mul(f, inv)?);
    }
    let map = ssim_map(tape, stats[0], stats[1], stats[2], stats[3], stats[4])?;
    let channels = tape.shape(pred)[1] as f64;
    let total: f64 = weight.data().iter().map(|v| v.as_f64()).sum::<f64>() * channels;
    let w = tape.constant(weight);
    let wmap = tape.broadcast_mul(map, w)?;
    let s = tape.sum(wmap);
    if total > 0.0 {
        Ok(tape.scale(s, T::of(1.0 / total)))
    } else {
        // nothing visible: the term is constant one
        let zero = tape.scale(s, T::zero());
        Ok(tape.add_scalar(zero, T::one()))
    }
}

/// `mean|pred − gt| + α·(1 − SSIM(pred, gt))`.
///
/// With a mask (`[N,1,H,W]`, 1 = visible) both terms use visible pixels only:
/// ground truth is zeroed under the mask before it enters the graph, so its
/// values there cannot affect the loss.
pub fn composite_loss<T: Scalar>(
    tape: &mut Tape<T>,
    pred: Var,
    gt: &Tensor<T>,
    alpha: f64,
    mask: Option<&Tensor<T>>,
) -> Result<Var, TrainError> {
    if tape.shape(pred) != gt.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "composite_loss",
            lhs: tape.shape(pred).to_vec(),
            rhs: gt.shape().to_vec(),
        }
        .into());
    }
    let s = gt.shape().to_vec();
    match mask {
        None => {
            let g = tape.constant(gt.clone());
            let d = tape.sub(pred, g)?;
            let a = tape.abs(d);
            let l1 = tape.mean(a);
            if alpha == 0.0 {
                return Ok(l1);
            }
            let ss = ssim_term(tape, pred, g)?;
            let ss = tape.scale(ss, T::of(-alpha));
            let l = tape.add(l1, ss)?;
            Ok(tape.add_scalar(l, T::of(alpha)))
        }
        Some(m) => {
            if m.shape() != [s[0], 1, s[2], s[3]] {
                return Err(TensorError::ShapeMismatch {
                    op: "composite_loss mask",
                    lhs: s,
                    rhs: m.shape().to_vec(),
                }
                .into());
            }
            let hw = s[2] * s[3];
            let visible: f64 = m.data().iter().map(|v| v.as_f64()).sum();
            let gt_vis = Tensor::from_fn(&s, |i| gt.data()[i] * m.data()[(i / (s[1] * hw)) * hw + i % hw]);
            let g = tape.constant(gt_vis);
            let mv = tape.constant(m.clone());
            let pv = tape.broadcast_mul(pred, mv)?;
            let d = tape.sub(pv, g)?;
            let a = tape.abs(d);
            let sum = tape.sum(a);
            let l1 = tape.scale(sum, T::of(1.0 / (s[1] as f64 * visible.max(1.0))));
            if alpha == 0.0 {
                return Ok(l1);
            }
            let ss = masked_ssim_term(tape, pred, g, m)?;
            let ss = tape.scale(ss, T::of(-alpha));
            let l = tape.add(l1, ss)?;
            Ok(tape.add_scalar(l, T::of(alpha)))
        }
    }
}
