//! Box masks for the inpainting protocol. Mask value 1 marks a visible pixel.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::TrainError;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskSpec {
    pub boxes_per_frame: usize,
    pub box_width: usize,
    pub seed: u64,
}

impl MaskSpec {
    pub fn validate(&self, h: usize, w: usize) -> Result<(), TrainError> {
        if self.boxes_per_frame > 0 && (self.box_width == 0 || self.box_width > h.min(w)) {
            return Err(TrainError::Config(format!(
                "box width {} does not fit a {h}x{w} frame",
                self.box_width
            )));
        }
        Ok(())
    }
}

/// Mask `[1,H,W]` for one frame. Each box has its top-left corner drawn
/// uniformly from the positions that keep it inside the frame.
pub fn frame_mask(spec: &MaskSpec, h: usize, w: usize, video: usize, frame: usize) -> Result<Tensor<f32>, TrainError> {
    spec.validate(h, w)?;
    let mut m = Tensor::full(&[1, h, w], 1.0f32);
    let key = spec
        .seed
        .wrapping_mul(0x2545_f491_4f6c_dd1d)
        .wrapping_add((video as u64) << 32 | frame as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    let b = spec.box_width;
    for _ in 0..spec.boxes_per_frame {
        let y0 = rng.gen_range(0..=h - b);
        let x0 = rng.gen_range(0..=w - b);
        for y in y0..y0 + b {
            m.data_mut()[y * w + x0..y * w + x0 + b].fill(0.0);
        }
    }
    Ok(m)
}

pub fn video_masks(spec: &MaskSpec, h: usize, w: usize, video: usize, frames: usize) -> Result<Vec<Tensor<f32>>, TrainError> {
    (0..frames).map(|f| frame_mask(spec, h, w, video, f)).collect()
}

/// Fraction of hidden pixels.
pub fn masked_fraction(m: &Tensor<f32>) -> f64 {
    m.data().iter().filter(|v| **v == 0.0).count() as f64 / m.numel() as f64
}

/// Replaces hidden pixels of `frame` (`[3,H,W]`) by the per-channel mean of
/// its visible pixels (0.5 when nothing is visible).
pub fn mean_fill(frame: &Tensor<f32>, mask: &Tensor<f32>) -> Tensor<f32> {
    let hw = mask.numel();
    let vis = mask.data().iter().filter(|v| **v != 0.0).count();
    let mut out = frame.clone();
    for c in 0..frame.shape()[0] {
        let plane = &frame.data()[c * hw..(c + 1) * hw];
        let mean = if vis == 0 {
            0.5
        } else {
            plane
                .iter()
                .zip(mask.data())
                .filter(|(_, m)| **m != 0.0)
                .map(|(v, _)| *v as f64)
                .sum::<f64>()
                / vis as f64
        };
        for (i, m) in mask.data().iter().enumerate() {
            if *m == 0.0 {
                out.data_mut()[c * hw + i] = mean as f32;
            }
        }
    }
    out
}
