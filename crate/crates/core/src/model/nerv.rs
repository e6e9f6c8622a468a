//! Time-only baseline: every frame is decoded from the embedding of its
//! global time index alone.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{Bound, Init, ParamStore};
use super::pe::encode_times;
use super::{ModelConfig, ModelError, Result};
use crate::tensor::{Scalar, Tape, Var};

pub fn init_params<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<ParamStore<T>> {
    cfg.validate()?;
    let mut store = ParamStore::new();
    let mut init = Init {
        store: &mut store,
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let (h0, w0) = cfg.base_size();
    let c0 = cfg.stage_feature_channels(0);
    init.linear("stem", cfg.pe_dim(), c0 * h0 * w0);
    for l in 0..cfg.num_stages() {
        let r = cfg.stage_upscales[l];
        init.conv(
            &format!("up.{l}"),
            cfg.stage_channels[l] * r * r,
            cfg.stage_feature_channels(l),
            3,
        );
    }
    init.conv("head", 3, cfg.stage_channels[cfg.num_stages() - 1], 3);
    Ok(store)
}

/// Decodes one frame per entry of `times` (each in `[0,1]`); `[N,3,H,W]`.
pub fn forward<T: Scalar>(tape: &mut Tape<T>, p: &Bound, cfg: &ModelConfig, times: &[f64]) -> Result<Var> {
    if times.is_empty() {
        return Err(ModelError::Input("no frames requested".into()));
    }
    let n = times.len();
    let pe = tape.constant(encode_times::<T>(times, cfg.pe_base, cfg.pe_levels)?);
    let (h0, w0) = cfg.base_size();
    let c0 = cfg.stage_feature_channels(0);
    let x = tape.linear(pe, p.get("stem.w")?, Some(p.get("stem.b")?))?;
    let x = tape.gelu(x);
    let mut x = tape.reshape(x, &[n, c0, h0, w0])?;
    for l in 0..cfg.num_stages() {
        let w = p.get(&format!("up.{l}.w"))?;
        let b = p.get(&format!("up.{l}.b"))?;
        x = tape
            .conv2d(x, w, Some(b), 1, 1)
            .map_err(|source| ModelError::Stage { stage: l, source })?;
        x = tape.gelu(x);
        x = tape
            .pixel_shuffle(x, cfg.stage_upscales[l])
            .map_err(|source| ModelError::Stage { stage: l, source })?;
    }
    let x = tape.conv2d(x, p.get("head.w")?, Some(p.get("head.b")?), 1, 1)?;
    Ok(tape.sigmoid(x))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            variant: "nerv".into(),
            height: 8,
            width: 12,
            stage_upscales: vec![2, 2],
            stage_channels: vec![6, 4],
            pe_levels: 4,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn output_shape_and_range() {
        let cfg = tiny();
        let params = init_params::<f32>(&cfg, 3).unwrap();
        let mut tape = Tape::new();
        let p = params.bind(&mut tape, false);
        let y = forward(&mut tape, &p, &cfg, &[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(tape.shape(y), &[3, 3, 8, 12]);
        assert!(tape.value(y).data().iter().all(|v| *v > 0.0 && *v < 1.0));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let cfg = ModelConfig {
            height: 4,
            width: 4,
            stage_upscales: vec![2],
            stage_channels: vec![3],
            pe_levels: 2,
            ..tiny()
        };
        let params = init_params::<f64>(&cfg, 9).unwrap();
        let rel = crate::model::grad_check_params(&params, |tape, p| {
            let y = forward(tape, p, &cfg, &[0.25, 0.75])?;
            Ok(tape.mean(y))
        });
        assert!(rel < 1e-4, "rel {rel}");
    }
}
