//! Key-value run configuration.
//!
//! A config file holds one `key = value` pair per line; `#` starts a comment.
//! Command-line flags are applied on top through the same setter, so every
//! value goes through one validation path.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use dnerv_core::compress::CodecRegistry;
use dnerv_core::model::{ModelConfig, ModelRegistry};
use dnerv_core::train::{MaskSpec, TrainConfig};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub name: String,
    pub data: PathBuf,
    pub runs_dir: PathBuf,
    pub model: ModelConfig,
    /// Overrides `pe_levels` for the time-only baseline; 0 keeps `pe_levels`.
    pub nerv_pe_levels: usize,
    pub train: TrainConfig,
    pub bits: u32,
    pub kf_codec: String,
    pub quality: u8,
    pub mask: MaskSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            name: "run".into(),
            data: PathBuf::from("data"),
            runs_dir: PathBuf::from("runs"),
            model: ModelConfig {
                height: 0,
                width: 0,
                ..ModelConfig::default()
            },
            nerv_pe_levels: 0,
            train: TrainConfig::default(),
            bits: 8,
            kf_codec: "dct8".into(),
            quality: 75,
            mask: MaskSpec {
                boxes_per_frame: 0,
                box_width: 8,
                seed: 0,
            },
        }
    }
}

fn invalid(key: &str, value: &str, expected: &str) -> CliError {
    CliError::Invalid(format!("field `{key}`: expected {expected}, got `{value}`"))
}

fn num<T: std::str::FromStr>(key: &str, value: &str, expected: &str) -> Result<T, CliError> {
    value.parse().map_err(|_| invalid(key, value, expected))
}

fn list(key: &str, value: &str) -> Result<Vec<usize>, CliError> {
    value
        .split(',')
        .map(|v| num(key, v.trim(), "a comma-separated list of positive integers"))
        .collect()
}

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Invalid(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Invalid(m) => CliError::Invalid(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(CliError::Invalid(format!("line {}: expected `key = value`", n + 1)));
            };
            cfg.set(k.trim(), v.trim())
                .map_err(|e| CliError::Invalid(format!("line {}: {e}", n + 1)))?;
        }
        Ok(cfg)
    }

    /// Applies one `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), CliError> {
        let Some((k, v)) = pair.split_once('=') else {
            return Err(CliError::Invalid(format!("override `{pair}` is not `key=value`")));
        };
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "name" => {
                if value.is_empty() || value.contains(['/', '\\']) {
                    return Err(invalid(key, value, "a non-empty name without path separators"));
                }
                self.name = value.into()
            }
            "data" => self.data = value.into(),
            "runs_dir" => self.runs_dir = value.into(),
            "variant" => m.variant = value.into(),
            "height" => m.height = num(key, value, "an integer")?,
            "width" => m.width = num(key, value, "an integer")?,
            "stage_upscales" => m.stage_upscales = list(key, value)?,
            "stage_channels" => m.stage_channels = list(key, value)?,
            "clip_len" => m.clip_len = num(key, value, "an integer")?,
            "pe_base" => m.pe_base = num(key, value, "a number")?,
            "pe_levels" => m.pe_levels = num(key, value, "an integer")?,
            "nerv_pe_levels" => self.nerv_pe_levels = num(key, value, "an integer")?,
            "flow_hidden" => m.flow_hidden = num(key, value, "an integer")?,
            "refine_hidden" => m.refine_hidden = num(key, value, "an integer")?,
            "copy_keyframes" => m.copy_keyframes = num(key, value, "true or false")?,
            "lr" => t.lr_peak = num(key, value, "a number")?,
            "batch_size" => t.batch_size = num(key, value, "an integer")?,
            "epochs" => t.epochs = num(key, value, "an integer")?,
            "warmup_epochs" => t.warmup_epochs = num(key, value, "an integer")?,
            "alpha" => t.alpha = num(key, value, "a number")?,
            "weight_decay" => t.weight_decay = num(key, value, "a number")?,
            "seed" => t.seed = num(key, value, "an unsigned integer")?,
            "bits" => self.bits = num(key, value, "an integer")?,
            "kf_codec" => self.kf_codec = value.into(),
            "quality" => self.quality = num(key, value, "an integer in 1..=100")?,
            "mask_boxes" => self.mask.boxes_per_frame = num(key, value, "an integer")?,
            "mask_width" => self.mask.box_width = num(key, value, "an integer")?,
            "mask_seed" => self.mask.seed = num(key, value, "an unsigned integer")?,
            _ => return Err(CliError::Invalid(format!("unknown field `{key}`"))),
        }
        Ok(())
    }

    /// Model config with the variant-specific overrides applied.
    pub fn effective_model(&self) -> ModelConfig {
        let mut m = self.model.clone();
        if m.variant == "nerv" && self.nerv_pe_levels > 0 {
            m.pe_levels = self.nerv_pe_levels;
        }
        m
    }

    /// Checks every field. `height` and `width` of 0 mean "take them from the
    /// dataset", so this runs once the dataset is loaded.
    pub fn validate(&self) -> Result<(), CliError> {
        let field = |k: &str, e: String| CliError::Invalid(format!("field `{k}`: {e}"));
        ModelRegistry::<f32>::builtin()
            .get(&self.model.variant)
            .map_err(|e| field("variant", e.to_string()))?;
        CodecRegistry::builtin()
            .get(&self.kf_codec)
            .map_err(|e| field("kf_codec", e.to_string()))?;
        if !(1..=100).contains(&self.quality) {
            return Err(field("quality", format!("{} is outside 1..=100", self.quality)));
        }
        if !(1..=16).contains(&self.bits) {
            return Err(field("bits", format!("{} is outside 1..=16", self.bits)));
        }
        self.train.validate().map_err(|e| field("train", e.to_string()))?;
        self.effective_model()
            .validate()
            .map_err(|e| CliError::Invalid(format!("model: {e}")))?;
        self.mask
            .validate(self.model.height, self.model.width)
            .map_err(|e| field("mask_width", e.to_string()))?;
        Ok(())
    }

    /// Fully resolved `key = value` text; parsing it yields `self` again.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("name", self.name.clone());
        kv("data", self.data.display().to_string());
        kv("runs_dir", self.runs_dir.display().to_string());
        kv("variant", m.variant.clone());
        kv("height", m.height.to_string());
        kv("width", m.width.to_string());
        kv("stage_upscales", join(&m.stage_upscales));
        kv("stage_channels", join(&m.stage_channels));
        kv("clip_len", m.clip_len.to_string());
        kv("pe_base", format!("{:?}", m.pe_base));
        kv("pe_levels", m.pe_levels.to_string());
        kv("nerv_pe_levels", self.nerv_pe_levels.to_string());
        kv("flow_hidden", m.flow_hidden.to_string());
        kv("refine_hidden", m.refine_hidden.to_string());
        kv("copy_keyframes", m.copy_keyframes.to_string());
        kv("lr", format!("{:?}", t.lr_peak));
        kv("batch_size", t.batch_size.to_string());
        kv("epochs", t.epochs.to_string());
        kv("warmup_epochs", t.warmup_epochs.to_string());
        kv("alpha", format!("{:?}", t.alpha));
        kv("weight_decay", format!("{:?}", t.weight_decay));
        kv("seed", t.seed.to_string());
        kv("bits", self.bits.to_string());
        kv("kf_codec", self.kf_codec.clone());
        kv("quality", self.quality.to_string());
        kv("mask_boxes", self.mask.boxes_per_frame.to_string());
        kv("mask_width", self.mask.box_width.to_string());
        kv("mask_seed", self.mask.seed.to_string());
        s
    }

    pub fn run_dir(&self) -> PathBuf {
        self.runs_dir.join(&self.name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolved_text_roundtrips() {
        let mut cfg = RunConfig::parse("name = demo\n# comment\nlr = 0.002  # peak\nstage_channels = 8, 8, 4\n").unwrap();
        cfg.set("nerv_pe_levels", "20").unwrap();
        assert_eq!(cfg.train.lr_peak, 0.002);
        assert_eq!(cfg.model.stage_channels, vec![8, 8, 4]);
        let again = RunConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.to_text(), cfg.to_text());
    }

    #[test]
    fn errors_name_the_field() {
        let e = RunConfig::parse("lr = fast\n").unwrap_err().to_string();
        assert!(e.contains("line 1") && e.contains("`lr`"), "{e}");
        let e = RunConfig::parse("colour = red\n").unwrap_err().to_string();
        assert!(e.contains("unknown field `colour`"), "{e}");
        let e = RunConfig::parse("just words\n").unwrap_err().to_string();
        assert!(e.contains("key = value"), "{e}");
    }

    #[test]
    fn validation_reports_the_offending_field() {
        let sized = || {
            let mut c = RunConfig::default();
            c.model.height = 32;
            c.model.width = 40;
            c
        };
        let mut cfg = sized();
        cfg.validate().unwrap();
        cfg.quality = 0;
        assert!(cfg.validate().unwrap_err().to_string().contains("`quality`"));
        let mut cfg = sized();
        cfg.kf_codec = "png".into();
        assert!(cfg.validate().unwrap_err().to_string().contains("`kf_codec`"));
        let mut cfg = sized();
        cfg.model.variant = "siren".into();
        assert!(cfg.validate().unwrap_err().to_string().contains("`variant`"));
    }

    #[test]
    fn nerv_pe_override_only_touches_nerv() {
        let mut cfg = RunConfig::default();
        cfg.nerv_pe_levels = 20;
        assert_eq!(cfg.effective_model().pe_levels, 12);
        cfg.model.variant = "nerv".into();
        assert_eq!(cfg.effective_model().pe_levels, 20);
    }
}
