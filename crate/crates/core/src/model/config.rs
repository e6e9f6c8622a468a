use serde::{Deserialize, Serialize};

use super::ModelError;

/// Architecture hyperparameters shared by every representation.
///
/// `stage_channels[l]` is the channel count produced by decoder stage `l`
/// (after its pixel shuffle); the first stage consumes the coarsest keyframe
/// features concatenated with the time embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: String,
    pub height: usize,
    pub width: usize,
    pub stage_upscales: Vec<usize>,
    pub stage_channels: Vec<usize>,
    pub clip_len: usize,
    pub pe_base: f64,
    pub pe_levels: usize,
    pub flow_hidden: usize,
    pub refine_hidden: usize,
    /// Replace the network output at each clip start with the decoded keyframe
    /// when reconstructing videos.
    #[serde(default)]
    pub copy_keyframes: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: "dnerv".into(),
            height: 32,
            width: 40,
            stage_upscales: vec![2, 2, 2],
            stage_channels: vec![32, 24, 16],
            clip_len: 8,
            pe_base: 1.25,
            pe_levels: 12,
            flow_hidden: 16,
            refine_hidden: 16,
            copy_keyframes: false,
        }
    }
}

impl ModelConfig {
    pub fn num_stages(&self) -> usize {
        self.stage_upscales.len()
    }

    pub fn total_upscale(&self) -> usize {
        self.stage_upscales.iter().product()
    }

    /// Spatial size of the coarsest feature map.
    pub fn base_size(&self) -> (usize, usize) {
        let f = self.total_upscale();
        (self.height / f, self.width / f)
    }

    /// Input resolution of decoder stage `l`.
    pub fn stage_size(&self, l: usize) -> (usize, usize) {
        let (h, w) = self.base_size();
        let f: usize = self.stage_upscales[..l].iter().product();
        (h * f, w * f)
    }

    /// Channels of the decoder feature map entering stage `l`, which is also
    /// the width of the keyframe features extracted for that stage.
    pub fn stage_feature_channels(&self, l: usize) -> usize {
        if l == 0 {
            self.stage_channels[0]
        } else {
            self.stage_channels[l - 1]
        }
    }

    pub fn pe_dim(&self) -> usize {
        2 * self.pe_levels
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |field: &'static str, reason: String| Err(ModelError::Config { field, reason });
        if self.stage_upscales.is_empty() {
            return bad("stage_upscales", "at least one stage is required".into());
        }
        if self.stage_upscales.iter().any(|&r| r < 1) {
            return bad("stage_upscales", "factors must be at least 1".into());
        }
        if self.stage_channels.len() != self.stage_upscales.len() {
            return bad(
                "stage_channels",
                format!(
                    "{} entries for {} stages",
                    self.stage_channels.len(),
                    self.stage_upscales.len()
                ),
            );
        }
        if self.stage_channels.contains(&0) {
            return bad("stage_channels", "channel counts must be positive".into());
        }
        let f = self.total_upscale();
        if self.height == 0 || self.width == 0 || !self.height.is_multiple_of(f) || !self.width.is_multiple_of(f) {
            return bad(
                "input_size",
                format!(
                    "{}x{} is not divisible by the total upscale {f}",
                    self.height, self.width
                ),
            );
        }
        if self.clip_len == 0 {
            return bad("clip_len", "must be positive".into());
        }
        if self.pe_levels == 0 || !(self.pe_base > 0.0) {
            return bad("pe", "pe_levels must be positive and pe_base > 0".into());
        }
        if self.flow_hidden == 0 || self.refine_hidden == 0 {
            return bad("hidden", "flow_hidden and refine_hidden must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_sizes_chain_to_output() {
        for ups in [vec![2, 2, 2], vec![4, 2, 2, 2, 2], vec![2], vec![3, 2], vec![1, 2, 2]] {
            let f: usize = ups.iter().product();
            let cfg = ModelConfig {
                height: f * 3,
                width: f * 5,
                stage_channels: vec![4; ups.len()],
                stage_upscales: ups.clone(),
                ..ModelConfig::default()
            };
            cfg.validate().unwrap();
            for l in 0..ups.len() {
                let (h, w) = cfg.stage_size(l);
                let rest: usize = ups[l..].iter().product();
                assert_eq!((h * rest, w * rest), (cfg.height, cfg.width));
            }
        }
    }

    #[test]
    fn desk_default_sizes() {
        let cfg = ModelConfig::default();
        let sizes: Vec<_> = (0..3).map(|l| cfg.stage_size(l)).collect();
        assert_eq!(sizes, vec![(4, 5), (8, 10), (16, 20)]);
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let mut cfg = ModelConfig {
            height: 30,
            ..ModelConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(ModelError::Config { field: "input_size", .. })));
        cfg.height = 32;
        cfg.stage_channels = vec![8, 8];
        assert!(matches!(cfg.validate(), Err(ModelError::Config { field: "stage_channels", .. })));
    }
}
