//! `dnerv`: train, compress, decode and evaluate neural video representations.

mod commands;
mod config;
mod error;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{EvalArgs, SweepArgs, SynthArgs};
use config::RunConfig;
use error::CliError;

#[derive(Parser)]
#[command(name = "dnerv", version, about = "Keyframe-conditioned neural video codec")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

/// Config file plus per-field overrides, applied in the order listed here
/// and then in the order of `--set`.
#[derive(Args, Default)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory (one subdirectory of frame_%05d.ppm per video).
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    clip_len: Option<String>,
    #[arg(long, value_name = "raw|dct8")]
    kf_codec: Option<String>,
    #[arg(long)]
    quality: Option<String>,
    #[arg(long)]
    bits: Option<String>,
    #[arg(long, value_name = "dnerv|nerv")]
    variant: Option<String>,
    /// Run directory; defaults to <runs_dir>/<name>.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Any config field, as key=value.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let flags = [
            ("data", &self.data),
            ("seed", &self.seed),
            ("epochs", &self.epochs),
            ("clip_len", &self.clip_len),
            ("kf_codec", &self.kf_codec),
            ("quality", &self.quality),
            ("bits", &self.bits),
            ("variant", &self.variant),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                cfg.set(k, v)?;
            }
        }
        for pair in &self.set {
            cfg.set_pair(pair)?;
        }
        if let Some(out) = &self.out {
            let name = out
                .file_name()
                .and_then(|n| n.to_str())
                .ok_or_else(|| CliError::Invalid(format!("--out {} does not name a directory", out.display())))?;
            cfg.set("name", name)?;
            cfg.runs_dir = out.parent().map(PathBuf::from).unwrap_or_default();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2)]
        videos: usize,
        #[arg(long, default_value_t = 1)]
        classes: usize,
        #[arg(long, default_value_t = 33)]
        frames: usize,
        #[arg(long, default_value_t = 32)]
        height: usize,
        #[arg(long, default_value_t = 40)]
        width: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Fit a model to a dataset.
    Train(RunArgs),
    /// Quantize and entropy-code a checkpoint together with its keyframes.
    Compress {
        #[command(flatten)]
        run: RunArgs,
        /// Defaults to the run directory's checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Reconstruct frames from a bundle.
    Decode {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_name = "video=ID[,clip=J]")]
        select: Option<String>,
    },
    /// Score decoded frames against the originals.
    Eval {
        #[arg(long)]
        decoded: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Bundle the frames came from; supplies the bit rate.
        #[arg(long)]
        bundle: Option<PathBuf>,
        #[arg(long)]
        label: Option<String>,
        /// Defaults to report.csv next to the bundle.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train on frames with hidden boxes and score the hidden pixels.
    Inpaint {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        boxes: Option<String>,
        #[arg(long)]
        box_width: Option<String>,
    },
    /// Train, compress and score a grid of settings.
    RdSweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_value = "1")]
        widths: Vec<f64>,
        /// Quantization bit depths; defaults to the config's `bits`.
        #[arg(long, value_delimiter = ',')]
        bit_depths: Vec<u32>,
        /// Keyframe qualities; defaults to the config's `quality`.
        #[arg(long, value_delimiter = ',')]
        qualities: Vec<u8>,
        /// Defaults to the config's `variant`.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
        /// Size every nerv point to the byte total of its dnerv counterpart.
        #[arg(long)]
        match_total: bool,
    },
}

fn run(cmd: Cmd) -> Result<bool, CliError> {
    match cmd {
        Cmd::Synth {
            out,
            videos,
            classes,
            frames,
            height,
            width,
            seed,
        } => commands::synth(&SynthArgs {
            out,
            videos,
            classes,
            frames,
            height,
            width,
            seed,
        })?,
        Cmd::Train(a) => commands::train(&mut a.resolve()?)?,
        Cmd::Compress { run, checkpoint } => commands::compress(&mut run.resolve()?, checkpoint)?,
        Cmd::Decode { bundle, out, select } => commands::decode(&bundle, &out, select.as_deref())?,
        Cmd::Eval {
            decoded,
            gt,
            bundle,
            label,
            report,
        } => commands::eval(&EvalArgs {
            decoded,
            gt,
            bundle,
            label,
            report,
        })?,
        Cmd::Inpaint { run, boxes, box_width } => {
            let mut cfg = run.resolve()?;
            if let Some(b) = boxes {
                cfg.set("mask_boxes", &b)?;
            }
            if let Some(w) = box_width {
                cfg.set("mask_width", &w)?;
            }
            commands::inpaint(&mut cfg)?
        }
        Cmd::RdSweep {
            run,
            widths,
            bit_depths,
            qualities,
            variants,
            match_total,
        } => {
            let mut cfg = run.resolve()?;
            if widths.iter().any(|w| !(*w > 0.0)) {
                return Err(CliError::Invalid("--widths must be positive".into()));
            }
            let args = SweepArgs {
                widths,
                bits: if bit_depths.is_empty() { vec![cfg.bits] } else { bit_depths },
                qualities: if qualities.is_empty() { vec![cfg.quality] } else { qualities },
                variants: if variants.is_empty() {
                    vec![cfg.model.variant.clone()]
                } else {
                    variants
                },
                match_total,
            };
            return commands::rd_sweep(&mut cfg, &args);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
