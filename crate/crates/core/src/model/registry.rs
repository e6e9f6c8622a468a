use std::collections::BTreeMap;

use super::params::{Bound, ParamStore};
use super::{dnerv, nerv, ModelConfig, ModelError, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Everything a representation may need to decode a batch of frames.
#[derive(Debug, Clone)]
pub struct ModelInput<T: Scalar> {
    /// Start keyframes `[B,3,H,W]`, one per clip.
    pub start: Option<Tensor<T>>,
    /// End keyframes `[B,3,H,W]`.
    pub end: Option<Tensor<T>>,
    /// Normalised position of each frame inside its clip (length `S`).
    pub rel_times: Vec<f64>,
    /// Normalised position of each output frame in the whole corpus
    /// (length `B·S`).
    pub abs_times: Vec<f64>,
}

/// A video representation selectable by name.
pub trait Representation<T: Scalar>: Send + Sync {
    fn name(&self) -> &'static str;
    /// Whether decoding needs the clip keyframes.
    fn uses_keyframes(&self) -> bool;
    fn init_params(&self, cfg: &ModelConfig, seed: u64) -> Result<ParamStore<T>>;
    /// Decodes frames-major `[B·S,3,H,W]`.
    fn forward(&self, tape: &mut Tape<T>, params: &Bound, cfg: &ModelConfig, input: &ModelInput<T>) -> Result<Var>;
}

pub struct DNerv;
pub struct Nerv;

impl<T: Scalar> Representation<T> for DNerv {
    fn name(&self) -> &'static str {
        "dnerv"
    }
    fn uses_keyframes(&self) -> bool {
        true
    }
    fn init_params(&self, cfg: &ModelConfig, seed: u64) -> Result<ParamStore<T>> {
        dnerv::init_params(cfg, seed)
    }
    fn forward(&self, tape: &mut Tape<T>, params: &Bound, cfg: &ModelConfig, input: &ModelInput<T>) -> Result<Var> {
        let (Some(start), Some(end)) = (&input.start, &input.end) else {
            return Err(ModelError::Input("dnerv needs start and end keyframes".into()));
        };
        let s = tape.constant(start.clone());
        let e = tape.constant(end.clone());
        dnerv::forward_frames(tape, params, cfg, s, e, &input.rel_times)
    }
}

impl<T: Scalar> Representation<T> for Nerv {
    fn name(&self) -> &'static str {
        "nerv"
    }
    fn uses_keyframes(&self) -> bool {
        false
    }
    fn init_params(&self, cfg: &ModelConfig, seed: u64) -> Result<ParamStore<T>> {
        nerv::init_params(cfg, seed)
    }
    fn forward(&self, tape: &mut Tape<T>, params: &Bound, cfg: &ModelConfig, input: &ModelInput<T>) -> Result<Var> {
        nerv::forward(tape, params, cfg, &input.abs_times)
    }
}

/// Name → representation lookup.
pub struct ModelRegistry<T: Scalar> {
    entries: BTreeMap<&'static str, Box<dyn Representation<T>>>,
}

impl<T: Scalar> Default for ModelRegistry<T> {
    fn default() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }
}

impl<T: Scalar> ModelRegistry<T> {
    /// Registry holding `dnerv` and `nerv`.
    pub fn builtin() -> Self {
        let mut r = Self::default();
        r.register(Box::new(DNerv));
        r.register(Box::new(Nerv));
        r
    }

    pub fn register(&mut self, rep: Box<dyn Representation<T>>) {
        self.entries.insert(rep.name(), rep);
    }

    pub fn get(&self, name: &str) -> Result<&dyn Representation<T>> {
        self.entries
            .get(name)
            .map(|b| b.as_ref())
            .ok_or_else(|| ModelError::UnknownVariant(name.to_string()))
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_lookup() {
        let reg = ModelRegistry::<f32>::builtin();
        assert_eq!(reg.names(), vec!["dnerv", "nerv"]);
        assert!(reg.get("dnerv").unwrap().uses_keyframes());
        assert!(!reg.get("nerv").unwrap().uses_keyframes());
        assert!(matches!(reg.get("siren"), Err(ModelError::UnknownVariant(_))));
    }

    #[test]
    fn dnerv_without_keyframes_is_an_input_error() {
        let cfg = ModelConfig {
            height: 8,
            width: 8,
            stage_upscales: vec![2],
            stage_channels: vec![4],
            clip_len: 2,
            ..ModelConfig::default()
        };
        let reg = ModelRegistry::<f32>::builtin();
        let rep = reg.get("dnerv").unwrap();
        let params = rep.init_params(&cfg, 0).unwrap();
        let mut tape = Tape::new();
        let p = params.bind(&mut tape, false);
        let input = ModelInput {
            start: None,
            end: None,
            rel_times: vec![0.0, 0.5],
            abs_times: vec![0.0, 0.1],
        };
        assert!(matches!(rep.forward(&mut tape, &p, &cfg, &input), Err(ModelError::Input(_))));
    }
}
