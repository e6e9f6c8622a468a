//! Training: objective, optimizer, schedule, clip batching, synthetic data
//! and the inpainting mask protocol.

mod clips;
mod loss;
mod masks;
mod optim;
mod synth;

pub use clips::{build_clips, clip_times, retained_frames, ClipRef};
pub use loss::{composite_loss, ssim_term};
pub use masks::{frame_mask, masked_fraction, mean_fill, video_masks, MaskSpec};
pub use optim::{adamw_step, lr_at, AdamWConfig, AdamWState};
pub use synth::synth_corpus;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::io::Video;
use crate::metrics::psnr;
use crate::model::{ModelConfig, ModelError, ModelInput, ParamStore, Representation};
use crate::tensor::{Tape, Tensor, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training setup: {0}")]
    Config(String),
    #[error("non-finite {what} at step {step}")]
    NonFinite { what: String, step: u64 },
    #[error("training diverged: non-finite {what} at step {step}")]
    Diverged {
        what: String,
        step: u64,
        /// Parameters after the last finite update.
        last_good: Box<ParamStore<f32>>,
        rows: Vec<MetricsRow>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr_peak: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_epochs: usize,
    /// Weight of the `1 − SSIM` term.
    pub alpha: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_peak: 5e-4,
            batch_size: 2,
            epochs: 100,
            warmup_epochs: 10,
            alpha: 0.7,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs > 0 && self.warmup_epochs >= self.epochs {
            return Err(TrainError::Config(format!(
                "warmup_epochs ({}) must be below epochs ({})",
                self.warmup_epochs, self.epochs
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(TrainError::Config(format!("alpha {} is outside [0, 1]", self.alpha)));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive".into()));
        }
        if !(self.lr_peak > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(TrainError::Config("lr_peak must be positive and weight_decay non-negative".into()));
        }
        Ok(())
    }
}

/// Clip layout of a set of videos, independent of their pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipLayout {
    pub clip_len: usize,
    pub clips: Vec<ClipRef>,
    retained: Vec<usize>,
    offsets: Vec<usize>,
    total_frames: usize,
}

impl ClipLayout {
    /// Layout for videos with the given frame counts; each is truncated to
    /// the longest `k·S + 1` prefix.
    pub fn new(frame_counts: &[usize], clip_len: usize) -> Result<Self, TrainError> {
        if frame_counts.is_empty() {
            return Err(TrainError::Config("dataset is empty".into()));
        }
        let mut clips = Vec::new();
        let mut retained = Vec::new();
        let mut offsets = Vec::new();
        let mut total = 0;
        for (i, &n) in frame_counts.iter().enumerate() {
            clips.extend(build_clips(i, n, clip_len)?);
            offsets.push(total);
            retained.push(retained_frames(n, clip_len));
            total += retained_frames(n, clip_len);
        }
        Ok(Self {
            clip_len,
            clips,
            retained,
            offsets,
            total_frames: total,
        })
    }

    pub fn num_videos(&self) -> usize {
        self.retained.len()
    }

    pub fn retained(&self, video: usize) -> usize {
        self.retained[video]
    }

    pub fn total_frames(&self) -> usize {
        self.total_frames
    }

    /// Keyframe positions of a video, as frame indices.
    pub fn keyframe_indices(&self, video: usize) -> Vec<usize> {
        (0..=(self.retained[video] - 1) / self.clip_len).map(|j| j * self.clip_len).collect()
    }

    /// Corpus-wide normalised time of a frame.
    pub fn abs_time(&self, video: usize, frame: usize) -> f64 {
        (self.offsets[video] + frame) as f64 / self.total_frames as f64
    }

    /// Model inputs for `clips`; `keyframes[v][j]` stands in for frame
    /// `j·S` of video `v`. Videos without keyframes yield inputs without
    /// keyframe tensors.
    pub fn inputs(&self, clips: &[ClipRef], keyframes: &[Vec<Tensor<f32>>]) -> Result<ModelInput<f32>, TrainError> {
        let has = |c: &ClipRef| keyframes.get(c.video).is_some_and(|k| k.len() > c.index + 1);
        let (start, end) = if !clips.is_empty() && clips.iter().all(has) {
            let start: Vec<_> = clips.iter().map(|c| keyframes[c.video][c.index].clone()).collect();
            let end: Vec<_> = clips.iter().map(|c| keyframes[c.video][c.index + 1].clone()).collect();
            (Some(Tensor::stack(&start)?), Some(Tensor::stack(&end)?))
        } else {
            (None, None)
        };
        let abs = clips
            .iter()
            .flat_map(|c| (c.start..c.start + c.len).map(|f| self.abs_time(c.video, f)))
            .collect();
        Ok(ModelInput {
            start,
            end,
            rel_times: clip_times(self.clip_len),
            abs_times: abs,
        })
    }
}

/// Videos split into clips, with the keyframes the decoder will see.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub videos: Vec<Video>,
    /// `keyframes[v][j]` stands in for frame `j·S` of video `v`.
    pub keyframes: Vec<Vec<Tensor<f32>>>,
    /// Per-frame visibility masks `[1,H,W]`, when training on partial frames.
    pub masks: Option<Vec<Vec<Tensor<f32>>>>,
    pub layout: ClipLayout,
}

impl TrainData {
    /// Clips every video; keyframes start out as the original frames.
    pub fn new(videos: Vec<Video>, clip_len: usize) -> Result<Self, TrainError> {
        if videos.is_empty() {
            return Err(TrainError::Config("dataset is empty".into()));
        }
        let (h, w) = (videos[0].height(), videos[0].width());
        for v in &videos {
            if (v.height(), v.width()) != (h, w) {
                return Err(TrainError::Config(format!(
                    "video {} is {}x{}, expected {h}x{w}",
                    v.id,
                    v.height(),
                    v.width()
                )));
            }
        }
        let counts: Vec<usize> = videos.iter().map(|v| v.frames.len()).collect();
        let layout = ClipLayout::new(&counts, clip_len)?;
        let keyframes = videos
            .iter()
            .enumerate()
            .map(|(i, v)| layout.keyframe_indices(i).iter().map(|&f| v.frames[f].clone()).collect())
            .collect();
        Ok(Self {
            videos,
            keyframes,
            masks: None,
            layout,
        })
    }

    pub fn clips(&self) -> &[ClipRef] {
        &self.layout.clips
    }

    pub fn clip_len(&self) -> usize {
        self.layout.clip_len
    }

    pub fn frame_size(&self) -> (usize, usize) {
        (self.videos[0].height(), self.videos[0].width())
    }

    /// Model inputs, targets and masks for a set of clips.
    pub fn batch(&self, clips: &[ClipRef]) -> Result<Batch, TrainError> {
        let (h, w) = self.frame_size();
        let n = clips.len() * self.clip_len();
        let mut gt = Vec::with_capacity(n * 3 * h * w);
        let mut mask = Vec::new();
        for c in clips {
            for f in c.start..c.start + c.len {
                gt.extend_from_slice(self.videos[c.video].frames[f].data());
                if let Some(m) = &self.masks {
                    mask.extend_from_slice(m[c.video][f].data());
                }
            }
        }
        Ok(Batch {
            input: self.layout.inputs(clips, &self.keyframes)?,
            gt: Tensor::from_vec(&[n, 3, h, w], gt)?,
            mask: if self.masks.is_some() {
                Some(Tensor::from_vec(&[n, 1, h, w], mask)?)
            } else {
                None
            },
        })
    }
}

pub struct Batch {
    pub input: ModelInput<f32>,
    /// Frames-major targets `[B·S,3,H,W]`.
    pub gt: Tensor<f32>,
    pub mask: Option<Tensor<f32>>,
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub psnr: f64,
    pub lr: f64,
}

pub const METRICS_CSV_HEADER: &str = "epoch,step,loss,psnr,lr";

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from(METRICS_CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{},{},{:.8},{:.6},{:.8e}", r.epoch, r.step, r.loss, r.psnr, r.lr);
    }
    s
}

pub struct TrainOutcome {
    pub params: ParamStore<f32>,
    pub rows: Vec<MetricsRow>,
    pub steps: usize,
}

/// Frames-major predictions `[B·S,3,H,W]` for `clips`.
pub fn predict(
    rep: &dyn Representation<f32>,
    params: &ParamStore<f32>,
    cfg: &ModelConfig,
    layout: &ClipLayout,
    keyframes: &[Vec<Tensor<f32>>],
    clips: &[ClipRef],
) -> Result<Tensor<f32>, TrainError> {
    let input = layout.inputs(clips, keyframes)?;
    let mut tape = Tape::new();
    let p = params.bind(&mut tape, false);
    let y = rep.forward(&mut tape, &p, cfg, &input)?;
    Ok(tape.value(y).clone())
}

/// Mean PSNR over frames 0 and S/2 of every clip.
pub fn eval_psnr(
    rep: &dyn Representation<f32>,
    params: &ParamStore<f32>,
    cfg: &ModelConfig,
    data: &TrainData,
    batch_size: usize,
) -> Result<f64, TrainError> {
    let s = data.clip_len();
    let picks = if s / 2 == 0 { vec![0] } else { vec![0, s / 2] };
    let (mut total, mut n) = (0.0, 0usize);
    for chunk in data.clips().chunks(batch_size.max(1)) {
        let pred = predict(rep, params, cfg, &data.layout, &data.keyframes, chunk)?;
        for (k, c) in chunk.iter().enumerate() {
            for &i in &picks {
                let p = pred.index_axis0(k * s + i);
                let g = &data.videos[c.video].frames[c.start + i];
                total += psnr(&p, g).map_err(|e| TrainError::Config(e.to_string()))?;
                n += 1;
            }
        }
    }
    Ok(total / n as f64)
}

/// Decodes the retained frames of `video`, or only those of clip `only_clip`,
/// as `(frame index, frame)` pairs. The last frame, which only exists as an
/// end keyframe, comes from the keyframe itself for keyframe-conditioned
/// models and from the network otherwise.
#[allow(clippy::too_many_arguments)]
pub fn reconstruct_video(
    rep: &dyn Representation<f32>,
    params: &ParamStore<f32>,
    cfg: &ModelConfig,
    layout: &ClipLayout,
    keyframes: &[Vec<Tensor<f32>>],
    video: usize,
    only_clip: Option<usize>,
    batch_size: usize,
) -> Result<Vec<(usize, Tensor<f32>)>, TrainError> {
    let clips: Vec<ClipRef> = layout
        .clips
        .iter()
        .copied()
        .filter(|c| c.video == video && only_clip.is_none_or(|j| c.index == j))
        .collect();
    let s = layout.clip_len;
    let mut frames = Vec::with_capacity(clips.len() * s + 1);
    for chunk in clips.chunks(batch_size.max(1)) {
        let pred = predict(rep, params, cfg, layout, keyframes, chunk)?;
        for (k, c) in chunk.iter().enumerate() {
            log::debug!("video {video} clip {}: keyframes {} and {}", c.index, c.start, c.end_keyframe());
            for i in 0..s {
                let f = if i == 0 && cfg.copy_keyframes && rep.uses_keyframes() {
                    keyframes[video][c.index].clone()
                } else {
                    pred.index_axis0(k * s + i)
                };
                frames.push((c.start + i, f));
            }
        }
    }
    let last = layout.retained(video) - 1;
    if only_clip.is_some() {
        return Ok(frames);
    }
    if rep.uses_keyframes() {
        frames.push((last, keyframes[video].last().expect("keyframes").clone()));
    } else {
        let input = ModelInput {
            start: None,
            end: None,
            rel_times: Vec::new(),
            abs_times: vec![layout.abs_time(video, last)],
        };
        let mut tape = Tape::new();
        let p = params.bind(&mut tape, false);
        let y = rep.forward(&mut tape, &p, cfg, &input)?;
        frames.push((last, tape.value(y).index_axis0(0)));
    }
    Ok(frames)
}

/// Mini-batch training with AdamW and the warmup/cosine schedule. Clip order
/// is reshuffled every epoch from the seed; after every epoch a row is
/// appended to the log and passed to `on_row`.
pub fn train_loop(
    rep: &dyn Representation<f32>,
    cfg: &ModelConfig,
    tc: &TrainConfig,
    data: &TrainData,
    mut params: ParamStore<f32>,
    on_row: &mut dyn FnMut(&MetricsRow),
) -> Result<TrainOutcome, TrainError> {
    tc.validate()?;
    cfg.validate()?;
    if data.clip_len() != cfg.clip_len {
        return Err(TrainError::Config(format!(
            "data clipped at {} frames, model expects {}",
            data.clip_len(),
            cfg.clip_len
        )));
    }
    let per_epoch = data.clips().len().div_ceil(tc.batch_size);
    let total = per_epoch * tc.epochs;
    let warmup = per_epoch * tc.warmup_epochs;
    let opt = AdamWConfig {
        weight_decay: tc.weight_decay,
        ..AdamWConfig::default()
    };
    let mut state = AdamWState::new(&params);
    let mut rows = Vec::new();
    let mut step = 0;
    for epoch in 0..tc.epochs {
        let mut order = data.clips().to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(tc.seed.wrapping_add(epoch as u64).wrapping_mul(0x9e37_79b9));
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut lr = 0.0;
        for chunk in order.chunks(tc.batch_size) {
            lr = lr_at(step, total, warmup, tc.lr_peak);
            let b = data.batch(chunk)?;
            let mut tape = Tape::new();
            let p = params.bind(&mut tape, true);
            let y = rep.forward(&mut tape, &p, cfg, &b.input)?;
            let loss = composite_loss(&mut tape, y, &b.gt, tc.alpha, b.mask.as_ref())?;
            let lv = tape.value(loss).item() as f64;
            let diverged = |what: String, params: &ParamStore<f32>, rows: &Vec<MetricsRow>| TrainError::Diverged {
                what,
                step: step as u64,
                last_good: Box::new(params.clone()),
                rows: rows.clone(),
            };
            if !lv.is_finite() {
                return Err(diverged("loss".into(), &params, &rows));
            }
            tape.backward(loss)?;
            let grads: Vec<Tensor<f32>> = p
                .iter()
                .map(|(_, v)| tape.grad(v).expect("parameter gradient"))
                .collect();
            if let Err(TrainError::NonFinite { what, .. }) = adamw_step(&mut params, &grads, &mut state, lr, &opt) {
                return Err(diverged(what, &params, &rows));
            }
            epoch_loss += lv;
            step += 1;
        }
        let psnr = eval_psnr(rep, &params, cfg, data, tc.batch_size)?;
        let row = MetricsRow {
            epoch,
            step,
            loss: epoch_loss / per_epoch as f64,
            psnr,
            lr,
        };
        log::debug!(
            "epoch {epoch} step {step} loss {:.5} psnr {:.2} lr {:.2e}",
            row.loss,
            row.psnr,
            row.lr
        );
        on_row(&row);
        rows.push(row);
    }
    Ok(TrainOutcome {
        params,
        rows,
        steps: step,
    })
}

#[cfg(test)]
mod tests;
