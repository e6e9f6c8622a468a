use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use dnerv_core::compress::{CodecRegistry, CompressedBundle, SizeLedger};
use dnerv_core::io::{atomic_write, encode_ppm, frame_name, load_dataset, quantize_8bit, save_video};
use dnerv_core::metrics::{rd_csv, rd_csv_row, rd_point, RdPoint, RD_CSV_HEADER};
use dnerv_core::model::ModelRegistry;
use dnerv_core::train::{mean_fill, reconstruct_video, synth_corpus};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::pipeline::*;

pub struct SynthArgs {
    pub out: PathBuf,
    pub videos: usize,
    pub classes: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
}

pub fn synth(a: &SynthArgs) -> Result<(), CliError> {
    if a.videos == 0 || a.classes == 0 || a.frames == 0 || a.height < 8 || a.width < 8 {
        return Err(CliError::Invalid(
            "synth needs at least one video, class and frame, and frames of at least 8x8".into(),
        ));
    }
    for v in synth_corpus(a.videos, a.classes, a.frames, (a.height, a.width), a.seed) {
        save_video(&a.out, &v)?;
    }
    println!("wrote {} videos of {} frames to {}", a.videos, a.frames, a.out.display());
    Ok(())
}

pub fn train(cfg: &mut RunConfig) -> Result<(), CliError> {
    let videos = load_corpus(cfg)?;
    let dir = cfg.run_dir();
    let run = train_run(cfg, &dir, videos)?;
    match run.rows.last() {
        Some(r) => println!("epochs={} steps={} loss={:.6} psnr={:.4}", r.epoch + 1, r.step, r.loss, r.psnr),
        None => println!("epochs=0 steps=0"),
    }
    println!("run_dir={}", dir.display());
    Ok(())
}

pub fn compress(cfg: &mut RunConfig, checkpoint: Option<PathBuf>) -> Result<(), CliError> {
    let dir = cfg.run_dir();
    let ck_path = checkpoint.unwrap_or_else(|| dir.join(CHECKPOINT_FILE));
    let (ck, params) = load_checkpoint(&ck_path)?;
    let videos = load_corpus(cfg)?;
    let _lock = RunLock::acquire(&dir)?;
    let bundle_path = dir.join(BUNDLE_FILE);
    let r = compress_run(cfg, &ck.model, &params, &videos, &bundle_path)?;
    println!(
        "model_bytes={} keyframe_bytes={} bpp={}",
        r.ledger.model_bytes, r.ledger.keyframe_bytes, r.bpp
    );
    println!("psnr={} ms_ssim={} float_psnr={}", r.psnr, r.ms_ssim, r.float_psnr);
    println!("bundle={}", bundle_path.display());
    Ok(())
}

/// `video=ID[,clip=J]`.
pub fn parse_select(s: &str) -> Result<(String, Option<usize>), CliError> {
    let bad = || CliError::Invalid(format!("--select expects video=ID[,clip=J], got `{s}`"));
    let mut video = None;
    let mut clip = None;
    for part in s.split(',') {
        match part.split_once('=') {
            Some(("video", v)) if !v.is_empty() => video = Some(v.to_string()),
            Some(("clip", j)) => clip = Some(j.parse().map_err(|_| bad())?),
            _ => return Err(bad()),
        }
    }
    Ok((video.ok_or_else(bad)?, clip))
}

pub fn decode(bundle_path: &Path, out: &Path, select: Option<&str>) -> Result<(), CliError> {
    let bytes = std::fs::read(bundle_path)
        .map_err(|e| CliError::Invalid(format!("cannot read bundle {}: {e}", bundle_path.display())))?;
    let bundle = CompressedBundle::from_bytes(&bytes)
        .map_err(|e| CliError::Invalid(format!("corrupt bundle {}: {e}", bundle_path.display())))?;
    let model = &bundle.config.model;
    let reg = ModelRegistry::builtin();
    let rep = lookup(&reg, &model.variant)?;
    let layout = layout_of(&bundle)?;
    let params = bundle.params::<f32>()?;
    let ids: Vec<&str> = bundle.config.videos.iter().map(|v| v.id.as_str()).collect();

    let selection = select.map(parse_select).transpose()?;
    let (videos, clip): (Vec<usize>, Option<usize>) = match &selection {
        None => ((0..ids.len()).collect(), None),
        Some((id, clip)) => {
            let v = ids.iter().position(|x| x == id).ok_or_else(|| {
                CliError::Invalid(format!("video `{id}` is not in the bundle (have {})", ids.join(", ")))
            })?;
            let n_clips = layout.keyframe_indices(v).len() - 1;
            if let Some(j) = clip {
                if *j >= n_clips {
                    return Err(CliError::Invalid(format!(
                        "clip {j} is out of range: video `{id}` has {n_clips} clips"
                    )));
                }
            }
            (vec![v], *clip)
        }
    };

    let threads = threads()?;
    let written = match clip {
        Some(j) => {
            let v = videos[0];
            let s = model.clip_len;
            let (h, w) = (model.height, model.width);
            let codecs = CodecRegistry::builtin();
            let mut keyframes = vec![Vec::new(); layout.num_videos()];
            if rep.uses_keyframes() {
                let mut kfs = vec![dnerv_core::Tensor::zeros(&[3, h, w]); layout.keyframe_indices(v).len()];
                for e in bundle.keyframes.iter().filter(|e| e.video_id == ids[v]) {
                    let f = e.frame as usize;
                    if f == j * s || f == (j + 1) * s {
                        log::info!("clip {j} of {}: decoding keyframe at frame {f}", ids[v]);
                        kfs[f / s] = codecs.by_id(e.codec_id)?.decode(&e.payload)?;
                    }
                }
                keyframes[v] = kfs;
            }
            let frames = decode_clip(rep, &params, model, &layout, &keyframes, v, j)?;
            write_frames(out, ids[v], &frames)?
        }
        None => {
            let keyframes = bundle_keyframes(&bundle, &layout, rep.uses_keyframes())?;
            let per_video = parallel_map(videos.len(), threads, |k| {
                let v = videos[k];
                let frames = reconstruct_video(rep, &params, model, &layout, &keyframes, v, None, DECODE_BATCH)?;
                let frames: Vec<_> = frames.into_iter().map(|(i, f)| (i, quantize_8bit(&f))).collect();
                write_frames(out, ids[v], &frames)
            })?;
            per_video.into_iter().sum()
        }
    };
    println!("frames={written} out={}", out.display());
    Ok(())
}

fn write_frames(out: &Path, id: &str, frames: &[(usize, dnerv_core::Tensor<f32>)]) -> Result<usize, CliError> {
    let dir = out.join(id);
    for (i, f) in frames {
        atomic_write(&dir.join(frame_name(*i)), &encode_ppm(f))?;
    }
    Ok(frames.len())
}

pub struct EvalArgs {
    pub decoded: PathBuf,
    pub gt: PathBuf,
    pub bundle: Option<PathBuf>,
    pub label: Option<String>,
    pub report: Option<PathBuf>,
}

pub fn eval(a: &EvalArgs) -> Result<(), CliError> {
    for p in [&a.decoded, &a.gt] {
        if !p.is_dir() {
            return Err(CliError::Invalid(format!("{} is not a directory", p.display())));
        }
    }
    let decoded = load_dataset(&a.decoded)?;
    let mut gt = load_dataset(&a.gt)?;
    let bundle = match &a.bundle {
        Some(p) => {
            let bytes =
                std::fs::read(p).map_err(|e| CliError::Invalid(format!("cannot read bundle {}: {e}", p.display())))?;
            Some(CompressedBundle::from_bytes(&bytes)?)
        }
        None => None,
    };

    let gt_ids: BTreeSet<&str> = gt.iter().map(|v| v.id.as_str()).collect();
    let dec_ids: BTreeSet<&str> = decoded.iter().map(|v| v.id.as_str()).collect();
    if gt_ids != dec_ids {
        return Err(CliError::Invalid(format!(
            "video sets differ: ground truth has [{}], decoded has [{}]",
            gt_ids.into_iter().collect::<Vec<_>>().join(", "),
            dec_ids.into_iter().collect::<Vec<_>>().join(", ")
        )));
    }
    // Both lists are sorted by id, so they line up.
    let mut mismatches = Vec::new();
    for (g, d) in gt.iter_mut().zip(&decoded) {
        if let Some(b) = &bundle {
            // The bundle records how many frames were kept; longer originals
            // are truncated the same way the encoder did.
            if let Some(entry) = b.config.videos.iter().find(|e| e.id == g.id) {
                g.frames.truncate(entry.frames);
            }
        }
        if g.frames.len() != d.frames.len() {
            mismatches.push(format!("{}: ground truth {} frames, decoded {}", g.id, g.frames.len(), d.frames.len()));
        }
    }
    if !mismatches.is_empty() {
        return Err(CliError::Invalid(format!("frame counts differ: {}", mismatches.join("; "))));
    }

    let frames: Vec<_> = decoded.iter().map(|v| v.frames.clone()).collect();
    let scores = score_videos(&gt, &frames, threads()?)?;
    println!("{:<24} {:>6} {:>10} {:>9}", "video", "frames", "psnr_db", "ms_ssim");
    for s in &scores {
        println!("{:<24} {:>6} {:>10.4} {:>9.6}", s.video_id, s.frames, s.psnr_db, s.ms_ssim);
    }
    println!("psnr={} ms_ssim={}", mean_psnr(&scores), mean_ms_ssim(&scores));

    let Some(b) = bundle else {
        println!("no bundle given; skipping the rate-distortion row");
        return Ok(());
    };
    let label = a.label.clone().unwrap_or_else(|| b.config.model.variant.clone());
    let point = rd_point(&label, b.bpp()?, &scores)?;
    let row = rd_csv_row(&point);
    println!("{RD_CSV_HEADER}\n{row}");
    let report = a.report.clone().unwrap_or_else(|| {
        a.bundle
            .as_ref()
            .and_then(|p| p.parent())
            .unwrap_or(Path::new("."))
            .join(REPORT_FILE)
    });
    append_row(&report, &row)?;
    Ok(())
}

/// Appends one CSV row, writing the header first for a new file.
fn append_row(path: &Path, row: &str) -> Result<(), CliError> {
    let mut text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => format!("{RD_CSV_HEADER}\n"),
        Err(e) => return Err(e.into()),
    };
    text.push_str(row);
    text.push('\n');
    atomic_write(path, text.as_bytes())?;
    Ok(())
}

pub fn inpaint(cfg: &mut RunConfig) -> Result<(), CliError> {
    let videos = load_corpus(cfg)?;
    let dir = cfg.run_dir();
    let run = train_run(cfg, &dir, videos)?;
    let model = cfg.effective_model();
    let reg = ModelRegistry::builtin();
    let rep = lookup(&reg, &model.variant)?;
    let data = &run.data;
    let decoded = decode_videos(rep, &run.params, &model, &data.layout, &data.keyframes, threads()?)?;

    let mut report = String::from("label,psnr_db\n");
    let Some(masks) = &data.masks else {
        let scores = score_videos(&data.videos, &decoded, threads()?)?;
        let p = mean_psnr(&scores);
        let _ = writeln!(report, "model,{p}");
        atomic_write(&dir.join(REPORT_FILE), report.as_bytes())?;
        println!("no masks; full-frame psnr={p}");
        return Ok(());
    };
    let (mut model_psnr, mut fill_psnr, mut n) = (0.0, 0.0, 0usize);
    for (v, frames) in decoded.iter().enumerate() {
        let gt = &data.videos[v].frames;
        let fills: Vec<_> = (0..frames.len())
            .map(|f| quantize_8bit(&mean_fill(&gt[f], &masks[v][f])))
            .collect();
        let pairs: Vec<_> = (0..frames.len()).map(|f| (&frames[f], &gt[f], &masks[v][f])).collect();
        let base: Vec<_> = (0..frames.len()).map(|f| (&fills[f], &gt[f], &masks[v][f])).collect();
        if let (Some(m), Some(b)) = (masked_psnr(&pairs), masked_psnr(&base)) {
            model_psnr += m;
            fill_psnr += b;
            n += 1;
        }
    }
    if n == 0 {
        return Err(CliError::Invalid("masks hide no pixels".into()));
    }
    let (m, b) = (model_psnr / n as f64, fill_psnr / n as f64);
    let _ = writeln!(report, "model,{m}\nmean_fill,{b}");
    atomic_write(&dir.join(REPORT_FILE), report.as_bytes())?;
    println!("masked_psnr={m} mean_fill_psnr={b}");
    Ok(())
}

pub struct SweepArgs {
    pub widths: Vec<f64>,
    pub bits: Vec<u32>,
    pub qualities: Vec<u8>,
    pub variants: Vec<String>,
    pub match_total: bool,
}

fn scaled(channels: &[usize], m: f64) -> Vec<usize> {
    channels.iter().map(|&c| ((c as f64 * m).round() as usize).max(1)).collect()
}

/// Parameter count at width multiplier `m`.
fn param_count(cfg: &RunConfig, m: f64) -> Result<usize, CliError> {
    let reg = ModelRegistry::builtin();
    let rep = lookup(&reg, &cfg.model.variant)?;
    let mut model = cfg.effective_model();
    model.stage_channels = scaled(&cfg.model.stage_channels, m);
    Ok(rep.init_params(&model, cfg.train.seed)?.num_scalars())
}

/// Grid step of the width search.
const WIDTH_STEP: f64 = 1.0 / 32.0;

/// Relative size miss above which a matched point is retrained once.
const MATCH_TOLERANCE: f64 = 0.04;

/// Width multiplier whose predicted size is closest to `budget` bytes. The
/// prediction is parameter count times an entropy-coded bytes-per-parameter
/// rate measured on a trained model.
fn match_width(cfg: &RunConfig, budget: u64, bytes_per_param: f64) -> Result<f64, CliError> {
    let mut best = (f64::INFINITY, 0.0);
    for k in 1..=(16.0 / WIDTH_STEP) as usize {
        let m = k as f64 * WIDTH_STEP;
        let predicted = param_count(cfg, m)? as f64 * bytes_per_param;
        let miss = (predicted - budget as f64).abs();
        if miss < best.0 {
            best = (miss, m);
        }
        if predicted > budget as f64 {
            break;
        }
    }
    Ok(best.1)
}

fn run_point(
    c: &mut RunConfig,
    base: &RunConfig,
    variant: &str,
    m: f64,
    bits: u32,
    q: u8,
    videos: &[dnerv_core::io::Video],
) -> Result<(RdPoint, SizeLedger), CliError> {
    c.model.stage_channels = scaled(&base.model.stage_channels, m);
    c.name = format!("{variant}-w{m}-b{bits}-q{q}");
    sweep_point(c, videos)
}

fn sweep_point(cfg: &RunConfig, videos: &[dnerv_core::io::Video]) -> Result<(RdPoint, SizeLedger), CliError> {
    let dir = cfg.run_dir();
    let run = train_run(cfg, &dir, videos.to_vec())?;
    let _lock = RunLock::acquire(&dir)?;
    let r = compress_run(cfg, &cfg.effective_model(), &run.params, videos, &dir.join(BUNDLE_FILE))?;
    let point = RdPoint {
        label: cfg.name.clone(),
        bpp: r.bpp,
        psnr_db: r.psnr,
        ms_ssim: r.ms_ssim,
    };
    let mut report = rd_csv(std::slice::from_ref(&point));
    let _ = writeln!(report, "# model_bytes={} keyframe_bytes={}", r.ledger.model_bytes, r.ledger.keyframe_bytes);
    atomic_write(&dir.join(REPORT_FILE), report.as_bytes())?;
    Ok((point, r.ledger))
}

/// Runs every sweep point; returns whether all of them succeeded.
pub fn rd_sweep(cfg: &mut RunConfig, a: &SweepArgs) -> Result<bool, CliError> {
    let videos = load_corpus(cfg)?;
    for v in &a.variants {
        let mut c = cfg.clone();
        c.model.variant = v.clone();
        c.validate()?;
    }
    if a.match_total && !(a.variants.iter().any(|v| v == "dnerv") && a.variants.iter().any(|v| v == "nerv")) {
        return Err(CliError::Invalid("--match-total needs both dnerv and nerv in --variants".into()));
    }
    let dir = cfg.run_dir();
    let _lock = RunLock::acquire(&dir)?;
    atomic_write(&dir.join(CONFIG_FILE), cfg.to_text().as_bytes())?;

    let mut rows = Vec::new();
    let mut failed = 0;
    for &w in &a.widths {
        for &bits in &a.bits {
            for &q in &a.qualities {
                // Keyframe-conditioned variants go first so their byte totals
                // can serve as the budget for the rest.
                let mut order: Vec<&String> = a.variants.iter().collect();
                order.sort_by_key(|v| v.as_str() != "dnerv");
                let mut budget = None;
                for v in order {
                    let mut c = cfg.clone();
                    c.model.variant = v.clone();
                    c.bits = bits;
                    c.quality = q;
                    c.runs_dir = dir.clone();
                    let mut m = w;
                    let outcome = (|| {
                        if !(a.match_total && v == "nerv") {
                            return run_point(&mut c, cfg, v, w, bits, q, &videos);
                        }
                        let (b, per_param) = budget.ok_or_else(|| CliError::Failed("reference point failed".into()))?;
                        // run_point rescales c, so widths are fitted on an unscaled copy
                        let base = c.clone();
                        m = match_width(&base, b, per_param)?;
                        log::info!("nerv width x{m} matches the {b}-byte budget");
                        let (point, ledger) = run_point(&mut c, cfg, v, m, bits, q, &videos)?;
                        let miss = ledger.total() as f64 / b as f64 - 1.0;
                        if miss.abs() <= MATCH_TOLERANCE {
                            return Ok((point, ledger));
                        }
                        // the baseline compresses at its own rate; refit on it
                        let own = ledger.model_bytes as f64 / param_count(&base, m)? as f64;
                        let refit = match_width(&base, b, own)?;
                        if refit == m {
                            return Ok((point, ledger));
                        }
                        log::info!("nerv x{m} missed the budget by {:.1}%, retraining at x{refit}", 100.0 * miss);
                        m = refit;
                        run_point(&mut c, cfg, v, m, bits, q, &videos)
                    })();
                    match outcome {
                        Ok((point, ledger)) => {
                            let total = ledger.total();
                            if v == "dnerv" {
                                // c already carries the scaled channels
                                let n = param_count(&c, 1.0)?;
                                budget = Some((total, ledger.model_bytes as f64 / n as f64));
                            }
                            println!("{} total_bytes={total}", rd_csv_row(&point));
                            rows.push(rd_csv_row(&point));
                        }
                        Err(e) => {
                            failed += 1;
                            eprintln!("sweep point {v}-w{m}-b{bits}-q{q} failed: {e}");
                            rows.push(format!("{v}-w{m}-b{bits}-q{q},nan,nan,nan"));
                        }
                    }
                }
            }
        }
    }
    let mut report = format!("{RD_CSV_HEADER}\n");
    for r in &rows {
        report.push_str(r);
        report.push('\n');
    }
    atomic_write(&dir.join(REPORT_FILE), report.as_bytes())?;
    println!("report={}", dir.join(REPORT_FILE).display());
    if failed > 0 {
        eprintln!("{failed} of {} sweep points failed", rows.len());
    }
    Ok(failed == 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn select_syntax() {
        assert_eq!(parse_select("video=v001").unwrap(), ("v001".into(), None));
        assert_eq!(parse_select("video=a,clip=3").unwrap(), ("a".into(), Some(3)));
        for bad in ["clip=1", "video=", "video=a,clip=x", "frame=2"] {
            assert!(matches!(parse_select(bad), Err(CliError::Invalid(_))), "{bad}");
        }
    }

    #[test]
    fn channel_scaling_rounds_and_keeps_one() {
        assert_eq!(scaled(&[32, 24, 16], 0.5), vec![16, 12, 8]);
        assert_eq!(scaled(&[3, 1], 0.25), vec![1, 1]);
        assert_eq!(scaled(&[10], 1.25), vec![13]);
    }

    #[test]
    fn width_matching_lands_on_the_budget() {
        let mut cfg = RunConfig::default();
        cfg.model.variant = "nerv".into();
        cfg.model.height = 32;
        cfg.model.width = 40;
        let per_param = 0.9;
        let at = |m: f64| param_count(&cfg, m).unwrap() as f64 * per_param;
        assert_eq!(match_width(&cfg, at(1.5) as u64, per_param).unwrap(), 1.5);
        // between two grid points the nearer one wins
        let near = (0.75 * at(0.75) + 0.25 * at(0.78125)) as u64;
        assert_eq!(match_width(&cfg, near, per_param).unwrap(), 0.75);
    }
}
