//! Steps shared by the subcommands.

use std::fs::OpenOptions;
use std::path::{Path, PathBuf};

use dnerv_core::compress::{compress_model, CodecRegistry, CompressedBundle, KeyframeInput, SizeLedger, VideoEntry};
use dnerv_core::io::{atomic_write, load_dataset, quantize_8bit, Video};
use dnerv_core::metrics::{score_video, VideoScore};
use dnerv_core::model::{read_checkpoint, write_checkpoint, Checkpoint, ModelConfig, ModelRegistry, ParamStore, Representation};
use dnerv_core::train::{
    mean_fill, metrics_csv, reconstruct_video, train_loop, video_masks, ClipLayout, MetricsRow, TrainData, TrainError,
};
use dnerv_core::Tensor;

use crate::config::RunConfig;
use crate::error::CliError;

pub const CONFIG_FILE: &str = "config.resolved";
pub const CHECKPOINT_FILE: &str = "checkpoint.dnrv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const REPORT_FILE: &str = "report.csv";
pub const BUNDLE_FILE: &str = "bundle.dnvb";

/// Clips per forward pass when decoding.
pub const DECODE_BATCH: usize = 4;

/// Exclusive claim on a run directory, released on drop.
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Invalid(format!(
                "run directory {} is in use by another command (remove {} if stale)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

/// Worker cap from `DNERV_THREADS`, defaulting to the available cores.
pub fn threads() -> Result<usize, CliError> {
    match std::env::var("DNERV_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(CliError::Invalid(format!("DNERV_THREADS must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Maps `f` over `0..n` on up to `threads` workers; results keep index order.
pub fn parallel_map<R, F>(n: usize, threads: usize, f: F) -> Result<Vec<R>, CliError>
where
    R: Send,
    F: Fn(usize) -> Result<R, CliError> + Sync,
{
    let workers = threads.clamp(1, n.max(1));
    if workers == 1 {
        return (0..n).map(&f).collect();
    }
    let f = &f;
    let mut slots: Vec<Option<Result<R, CliError>>> = (0..n).map(|_| None).collect();
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|k| s.spawn(move || (k..n).step_by(workers).map(|i| (i, f(i))).collect::<Vec<_>>()))
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots.into_iter().map(|r| r.expect("every index visited")).collect()
}

pub fn lookup<'a>(reg: &'a ModelRegistry<f32>, variant: &str) -> Result<&'a dyn Representation<f32>, CliError> {
    reg.get(variant).map_err(|e| CliError::Invalid(e.to_string()))
}

/// Loads the dataset named by the config and fixes the frame size from it.
pub fn load_corpus(cfg: &mut RunConfig) -> Result<Vec<Video>, CliError> {
    if !cfg.data.is_dir() {
        return Err(CliError::Invalid(format!("dataset path {} does not exist", cfg.data.display())));
    }
    let videos = load_dataset(&cfg.data)?;
    if videos.is_empty() {
        return Err(CliError::Invalid(format!("dataset {} holds no videos", cfg.data.display())));
    }
    let (h, w) = (videos[0].height(), videos[0].width());
    for (key, set, actual) in [("height", cfg.model.height, h), ("width", cfg.model.width, w)] {
        if set != 0 && set != actual {
            return Err(CliError::Invalid(format!(
                "field `{key}`: config says {set} but dataset frames are {h}x{w}"
            )));
        }
    }
    cfg.model.height = h;
    cfg.model.width = w;
    cfg.validate()?;
    Ok(videos)
}

/// Training data with the keyframes a decoder would see: masked pixels are
/// mean-filled, then every keyframe goes through the keyframe codec.
pub fn prepare_data(cfg: &RunConfig, videos: Vec<Video>, uses_keyframes: bool) -> Result<TrainData, CliError> {
    let mut data = TrainData::new(videos, cfg.model.clip_len)?;
    let (h, w) = data.frame_size();
    if cfg.mask.boxes_per_frame > 0 {
        let masks = data
            .videos
            .iter()
            .enumerate()
            .map(|(v, video)| video_masks(&cfg.mask, h, w, v, video.frames.len()))
            .collect::<Result<Vec<_>, TrainError>>()?;
        data.masks = Some(masks);
    }
    if uses_keyframes {
        let codecs = CodecRegistry::builtin();
        let codec = codecs.get(&cfg.kf_codec)?;
        for v in 0..data.videos.len() {
            for (j, f) in data.layout.keyframe_indices(v).into_iter().enumerate() {
                let mut img = data.videos[v].frames[f].clone();
                if let Some(m) = &data.masks {
                    img = mean_fill(&img, &m[v][f]);
                }
                data.keyframes[v][j] = codec.decode(&codec.encode(&img, cfg.quality)?)?;
            }
        }
    } else {
        data.keyframes.iter_mut().for_each(Vec::clear);
    }
    Ok(data)
}

pub fn write_checkpoint_file(path: &Path, cfg: &RunConfig, params: &ParamStore<f32>, steps: usize) -> Result<(), CliError> {
    let header = Checkpoint {
        model: cfg.effective_model(),
        meta: serde_json::json!({
            "seed": cfg.train.seed,
            "steps": steps,
            "kf_codec": cfg.kf_codec,
            "quality": cfg.quality,
        }),
    };
    let mut bytes = Vec::new();
    write_checkpoint(&mut bytes, &header, params)?;
    atomic_write(path, &bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Checkpoint, ParamStore<f32>), CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Invalid(format!("cannot read checkpoint {}: {e}", path.display())))?;
    read_checkpoint::<f32, _>(&mut bytes.as_slice())
        .map_err(|e| CliError::Invalid(format!("corrupt checkpoint {}: {e}", path.display())))
}

pub struct TrainedRun {
    pub params: ParamStore<f32>,
    pub data: TrainData,
    pub rows: Vec<MetricsRow>,
}

/// Trains into `dir`, leaving the resolved config, metrics log and checkpoint.
/// On divergence the last finite parameters are still checkpointed.
pub fn train_run(cfg: &RunConfig, dir: &Path, videos: Vec<Video>) -> Result<TrainedRun, CliError> {
    let reg = ModelRegistry::builtin();
    let rep = lookup(&reg, &cfg.model.variant)?;
    let model = cfg.effective_model();
    let data = prepare_data(cfg, videos, rep.uses_keyframes())?;
    let params = rep.init_params(&model, cfg.train.seed)?;
    let _lock = RunLock::acquire(dir)?;
    atomic_write(&dir.join(CONFIG_FILE), cfg.to_text().as_bytes())?;
    log::info!(
        "training {} ({} parameters) on {} clips from {} videos",
        rep.name(),
        params.num_scalars(),
        data.clips().len(),
        data.videos.len()
    );
    let mut on_row = |r: &MetricsRow| {
        log::info!(
            "epoch {} step {} loss {:.5} psnr {:.3} lr {:.2e}",
            r.epoch,
            r.step,
            r.loss,
            r.psnr,
            r.lr
        )
    };
    match train_loop(rep, &model, &cfg.train, &data, params, &mut on_row) {
        Ok(out) => {
            atomic_write(&dir.join(METRICS_FILE), metrics_csv(&out.rows).as_bytes())?;
            write_checkpoint_file(&dir.join(CHECKPOINT_FILE), cfg, &out.params, out.steps)?;
            Ok(TrainedRun {
                params: out.params,
                data,
                rows: out.rows,
            })
        }
        Err(TrainError::Diverged {
            what,
            step,
            last_good,
            rows,
        }) => {
            atomic_write(&dir.join(METRICS_FILE), metrics_csv(&rows).as_bytes())?;
            write_checkpoint_file(&dir.join(CHECKPOINT_FILE), cfg, &last_good, step as usize)?;
            Err(CliError::Diverged(format!(
                "non-finite {what} at step {step}; last finite parameters saved to {}",
                dir.join(CHECKPOINT_FILE).display()
            )))
        }
        Err(e) => Err(e.into()),
    }
}

/// Decodes every retained frame of every video and rounds it to 8 bits.
pub fn decode_videos(
    rep: &dyn Representation<f32>,
    params: &ParamStore<f32>,
    model: &ModelConfig,
    layout: &ClipLayout,
    keyframes: &[Vec<Tensor<f32>>],
    threads: usize,
) -> Result<Vec<Vec<Tensor<f32>>>, CliError> {
    parallel_map(layout.num_videos(), threads, |v| {
        let frames = reconstruct_video(rep, params, model, layout, keyframes, v, None, DECODE_BATCH)?;
        Ok(frames.into_iter().map(|(_, f)| quantize_8bit(&f)).collect())
    })
}

pub fn decode_clip(
    rep: &dyn Representation<f32>,
    params: &ParamStore<f32>,
    model: &ModelConfig,
    layout: &ClipLayout,
    keyframes: &[Vec<Tensor<f32>>],
    video: usize,
    clip: usize,
) -> Result<Vec<(usize, Tensor<f32>)>, CliError> {
    let frames = reconstruct_video(rep, params, model, layout, keyframes, video, Some(clip), DECODE_BATCH)?;
    Ok(frames.into_iter().map(|(i, f)| (i, quantize_8bit(&f))).collect())
}

/// Scores decoded videos against the first frames of the originals.
pub fn score_videos(gt: &[Video], decoded: &[Vec<Tensor<f32>>], threads: usize) -> Result<Vec<VideoScore>, CliError> {
    parallel_map(gt.len(), threads, |v| {
        let n = decoded[v].len();
        if gt[v].frames.len() < n {
            return Err(CliError::Invalid(format!(
                "video {}: ground truth has {} frames, decoded has {n}",
                gt[v].id,
                gt[v].frames.len()
            )));
        }
        Ok(score_video(&gt[v].id, &gt[v].frames[..n], &decoded[v])?)
    })
}

pub fn mean_psnr(scores: &[VideoScore]) -> f64 {
    scores.iter().map(|s| s.psnr_db).sum::<f64>() / scores.len() as f64
}

pub fn mean_ms_ssim(scores: &[VideoScore]) -> f64 {
    scores.iter().map(|s| s.ms_ssim).sum::<f64>() / scores.len() as f64
}

/// Keyframes of every video in the bundle, checked against the clip layout.
pub fn bundle_keyframes(
    bundle: &CompressedBundle,
    layout: &ClipLayout,
    uses_keyframes: bool,
) -> Result<Vec<Vec<Tensor<f32>>>, CliError> {
    let codecs = CodecRegistry::builtin();
    let mut out = Vec::with_capacity(bundle.config.videos.len());
    for (v, entry) in bundle.config.videos.iter().enumerate() {
        if !uses_keyframes {
            out.push(Vec::new());
            continue;
        }
        let kfs = bundle.keyframes_of(&entry.id, &codecs)?;
        let want = layout.keyframe_indices(v);
        let got: Vec<usize> = kfs.iter().map(|(f, _)| *f as usize).collect();
        if got != want {
            return Err(CliError::Invalid(format!(
                "bundle stores keyframes {got:?} for video {}, expected {want:?}",
                entry.id
            )));
        }
        out.push(kfs.into_iter().map(|(_, t)| t).collect());
    }
    Ok(out)
}

pub fn layout_of(bundle: &CompressedBundle) -> Result<ClipLayout, CliError> {
    let counts: Vec<usize> = bundle.config.videos.iter().map(|v| v.frames).collect();
    Ok(ClipLayout::new(&counts, bundle.config.model.clip_len)?)
}

pub struct CompressReport {
    pub ledger: SizeLedger,
    pub bpp: f64,
    /// Mean PSNR of the 8-bit frames decoded from the bundle.
    pub psnr: f64,
    pub ms_ssim: f64,
    /// Same, decoding with the unquantized parameters.
    pub float_psnr: f64,
}

/// Builds the bundle for a checkpoint, writes it to `bundle_path`, and
/// scores what a decoder reading that file would reconstruct.
pub fn compress_run(
    cfg: &RunConfig,
    model: &ModelConfig,
    params: &ParamStore<f32>,
    videos: &[Video],
    bundle_path: &Path,
) -> Result<CompressReport, CliError> {
    let threads = threads()?;
    let reg = ModelRegistry::builtin();
    let rep = lookup(&reg, &model.variant)?;
    if (videos[0].height(), videos[0].width()) != (model.height, model.width) {
        return Err(CliError::Invalid(format!(
            "checkpoint decodes {}x{} frames but the dataset is {}x{}",
            model.height,
            model.width,
            videos[0].height(),
            videos[0].width()
        )));
    }
    let counts: Vec<usize> = videos.iter().map(|v| v.frames.len()).collect();
    let layout = ClipLayout::new(&counts, model.clip_len)?;
    let mut kf_inputs = Vec::new();
    if rep.uses_keyframes() {
        for (v, video) in videos.iter().enumerate() {
            for f in layout.keyframe_indices(v) {
                kf_inputs.push(KeyframeInput {
                    video_id: &video.id,
                    frame: f as u32,
                    img: &video.frames[f],
                });
            }
        }
    }
    let entries = videos
        .iter()
        .enumerate()
        .map(|(v, video)| VideoEntry {
            id: video.id.clone(),
            frames: layout.retained(v),
            height: video.height(),
            width: video.width(),
        })
        .collect();
    let codecs = CodecRegistry::builtin();
    let bundle = compress_model(params, model, cfg.bits, entries, &kf_inputs, &codecs, &cfg.kf_codec, cfg.quality)?;
    let bytes = bundle.to_bytes()?;
    atomic_write(bundle_path, &bytes)?;

    let stored = CompressedBundle::from_bytes(&bytes)?;
    let ledger = stored.ledger()?;
    let bpp = stored.bpp()?;
    let keyframes = bundle_keyframes(&stored, &layout, rep.uses_keyframes())?;
    let qparams = stored.params::<f32>()?;
    let decoded = decode_videos(rep, &qparams, model, &layout, &keyframes, threads)?;
    let scores = score_videos(videos, &decoded, threads)?;
    let float = decode_videos(rep, params, model, &layout, &keyframes, threads)?;
    let float_scores = score_videos(videos, &float, threads)?;
    Ok(CompressReport {
        ledger,
        bpp,
        psnr: mean_psnr(&scores),
        ms_ssim: mean_ms_ssim(&scores),
        float_psnr: mean_psnr(&float_scores),
    })
}

/// PSNR over the hidden pixels only, pooled over all frames of a video.
pub fn masked_psnr(pairs: &[(&Tensor<f32>, &Tensor<f32>, &Tensor<f32>)]) -> Option<f64> {
    let (mut se, mut n) = (0.0f64, 0usize);
    for (pred, gt, mask) in pairs {
        let hw = mask.numel();
        for (i, (&p, &g)) in pred.data().iter().zip(gt.data()).enumerate() {
            if mask.data()[i % hw] < 0.5 {
                se += (p as f64 - g as f64).powi(2);
                n += 1;
            }
        }
    }
    (n > 0).then(|| dnerv_core::metrics::psnr_from_mse(se / n as f64))
}
