//! Keyframe-conditioned decoder.
//!
//! A clip of `S` frames is decoded from its start/end keyframes and the
//! relative time of each frame. All frame-level tensors are stored
//! frames-major, `[B·S, C, h, w]`, so the per-frame convolutions batch
//! naturally; the time-mixing step views the same buffer as `[B, S, C, h, w]`.
//!
//! Per stage `l`:
//!
//! 1. flows `(F_{t→0}, F_{t→1})` from the stage features `M`,
//! 2. keyframe features warped with those flows and blended with weights
//!    `(1−t, t)`,
//! 3. spatially-adaptive fusion `γ·M + β` with per-pixel `γ, β` predicted
//!    from the blended features,
//! 4. conv → GELU → pixel shuffle,
//! 5. residual per-channel mixing along the clip axis.
//!
//! The first stage input is the time-interpolated coarsest keyframe feature
//! concatenated with the time embedding. A final stage warps the raw keyframes
//! at full resolution and refines with two convolutions and a sigmoid.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{Bound, Init, ParamStore};
use super::pe::encode_times;
use super::{ModelConfig, ModelError, Result};
use crate::tensor::{Scalar, Tape, Tensor, TensorError, Var};

/// Keyframe features per decoder stage, finest last.
#[derive(Debug, Clone)]
pub struct KeyframePyramid {
    pub start: Vec<Var>,
    pub end: Vec<Var>,
}

/// Per-pixel displacements towards the start (`forward`, `F_{t→0}`) and end
/// (`backward`, `F_{t→1}`) keyframes, each `[N, 2, h, w]`.
#[derive(Debug, Clone, Copy)]
pub struct FlowPair {
    pub forward: Var,
    pub backward: Var,
}

fn stage_err(stage: usize) -> impl Fn(TensorError) -> ModelError {
    move |source| ModelError::Stage { stage, source }
}

pub fn init_params<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<ParamStore<T>> {
    cfg.validate()?;
    let mut store = ParamStore::new();
    let mut init = Init {
        store: &mut store,
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let stages = cfg.num_stages();
    // encoder, finest first: image -> unshuffle(r) -> conv3x3 -> GELU
    let mut cin = 3;
    for l in (0..stages).rev() {
        let r = cfg.stage_upscales[l];
        let cout = cfg.stage_feature_channels(l);
        init.conv(&format!("enc.{l}"), cout, cin * r * r, 3);
        cin = cout;
    }
    for l in 0..stages {
        let feat = cfg.stage_feature_channels(l);
        let cin = if l == 0 { feat + cfg.pe_dim() } else { feat };
        flow_head(&mut init, &format!("flow.{l}"), cin, cfg.flow_hidden);
        // gamma emits 1 and beta emits 0 at init
        init.fixed(format!("saf.{l}.gamma.w"), &[1, feat, 1, 1], 0.0);
        init.fixed(format!("saf.{l}.gamma.b"), &[1], 1.0);
        init.fixed(format!("saf.{l}.beta.w"), &[1, feat, 1, 1], 0.0);
        init.fixed(format!("saf.{l}.beta.b"), &[1], 0.0);
        let r = cfg.stage_upscales[l];
        init.conv(&format!("up.{l}"), cfg.stage_channels[l] * r * r, cin, 3);
        init.fixed(
            format!("gtmlp.{l}.w"),
            &[cfg.stage_channels[l], cfg.clip_len, cfg.clip_len],
            0.0,
        );
    }
    let top = cfg.stage_channels[stages - 1];
    flow_head(&mut init, "flow.final", top, cfg.flow_hidden);
    init.conv("refine.0", cfg.refine_hidden, top + 3, 3);
    init.conv("refine.1", 3, cfg.refine_hidden, 3);
    refine_pass_through(&mut store, top, cfg.refine_hidden);
    Ok(store)
}

/// Routes each warped colour channel through a pair of hidden units, since
/// gelu(x) - gelu(-x) = x, so the refinement starts out close to the blended
/// keyframes instead of noise. Only the centre taps are set; the other random
/// weights stay, as zeroed rows quantize badly once trained. Channels without
/// a free pair stay fully random.
fn refine_pass_through<T: Scalar>(store: &mut ParamStore<T>, top: usize, hidden: usize) {
    // logit 4(x - 0.5), i.e. unit slope through the sigmoid at mid-grey, with
    // the gain split evenly over both convs
    const TAP: f64 = 2.0;
    let pairs = 3.min(hidden / 2);
    let cin = top + 3;
    let w0 = store.get_mut("refine.0.w").expect("refine.0.w").data_mut();
    for c in 0..pairs {
        w0[(2 * c * cin + top + c) * 9 + 4] = T::of(TAP);
        w0[((2 * c + 1) * cin + top + c) * 9 + 4] = T::of(-TAP);
    }
    store.get_mut("refine.0.b").expect("refine.0.b").data_mut()[..2 * pairs].fill(T::of(0.0));
    let w1 = store.get_mut("refine.1.w").expect("refine.1.w").data_mut();
    for c in 0..pairs {
        w1[(c * hidden + 2 * c) * 9 + 4] = T::of(TAP);
        w1[(c * hidden + 2 * c + 1) * 9 + 4] = T::of(-TAP);
    }
    store.get_mut("refine.1.b").expect("refine.1.b").data_mut()[..pairs].fill(T::of(-TAP * TAP / 2.0));
}

fn flow_head<T: Scalar>(init: &mut Init<'_, T>, prefix: &str, cin: usize, hidden: usize) {
    init.conv(&format!("{prefix}.0"), hidden, cin, 3);
    // zero final layer: flows start at exactly zero
    init.fixed(format!("{prefix}.1.w"), &[4, hidden, 3, 3], 0.0);
    init.fixed(format!("{prefix}.1.b"), &[4], 0.0);
}

fn conv3<T: Scalar>(tape: &mut Tape<T>, p: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let w = p.get(&format!("{prefix}.w"))?;
    let b = p.get(&format!("{prefix}.b"))?;
    Ok(tape.conv2d(x, w, Some(b), 1, 1)?)
}

fn conv1<T: Scalar>(tape: &mut Tape<T>, p: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let w = p.get(&format!("{prefix}.w"))?;
    let b = p.get(&format!("{prefix}.b"))?;
    Ok(tape.conv2d(x, w, Some(b), 1, 0)?)
}

fn encode_one<T: Scalar>(tape: &mut Tape<T>, p: &Bound, cfg: &ModelConfig, img: Var) -> Result<Vec<Var>> {
    let s = tape.shape(img);
    if s.len() != 4 || s[1] != 3 {
        return Err(ModelError::Input(format!("keyframes must be [B,3,H,W], got {s:?}")));
    }
    let f = cfg.total_upscale();
    if !s[2].is_multiple_of(f) || !s[3].is_multiple_of(f) {
        return Err(ModelError::Input(format!(
            "keyframe size {}x{} is not divisible by the total downscale {f}",
            s[2], s[3]
        )));
    }
    let stages = cfg.num_stages();
    let mut feats = vec![img; stages];
    let mut x = img;
    for l in (0..stages).rev() {
        let err = stage_err(l);
        x = tape.pixel_unshuffle(x, cfg.stage_upscales[l]).map_err(&err)?;
        x = conv3(tape, p, &format!("enc.{l}"), x)?;
        x = tape.gelu(x);
        feats[l] = x;
    }
    Ok(feats)
}

/// Runs the shared content encoder on both keyframes of every clip.
pub fn encode_keyframes<T: Scalar>(
    tape: &mut Tape<T>,
    p: &Bound,
    cfg: &ModelConfig,
    start: Var,
    end: Var,
) -> Result<KeyframePyramid> {
    Ok(KeyframePyramid {
        start: encode_one(tape, p, cfg, start)?,
        end: encode_one(tape, p, cfg, end)?,
    })
}

/// `[N,1,1,1]` constant holding `f(t_i)` per item; `times` has one entry per
/// item or a single entry shared by all.
fn per_item<T: Scalar>(tape: &mut Tape<T>, n: usize, times: &[f64], f: impl Fn(f64) -> f64) -> Result<Var> {
    if times.len() != n && times.len() != 1 {
        return Err(ModelError::Input(format!(
            "{} time values for a batch of {n}",
            times.len()
        )));
    }
    let vals = (0..n)
        .map(|i| T::of(f(times[if times.len() == 1 { 0 } else { i }])))
        .collect();
    Ok(tape.constant(Tensor::from_vec(&[n, 1, 1, 1], vals)?))
}

fn blend<T: Scalar>(tape: &mut Tape<T>, a: Var, b: Var, times: &[f64]) -> Result<Var> {
    let n = tape.shape(a)[0];
    let wa = per_item(tape, n, times, |t| 1.0 - t)?;
    let wb = per_item(tape, n, times, |t| t)?;
    let x = tape.broadcast_mul(a, wa)?;
    let y = tape.broadcast_mul(b, wb)?;
    Ok(tape.add(x, y)?)
}

/// `(1−t)·start + t·end`, item-wise.
pub fn content_interp<T: Scalar>(tape: &mut Tape<T>, start: Var, end: Var, times: &[f64]) -> Result<Var> {
    if tape.shape(start) != tape.shape(end) {
        return Err(TensorError::ShapeMismatch {
            op: "content_interp",
            lhs: tape.shape(start).to_vec(),
            rhs: tape.shape(end).to_vec(),
        }
        .into());
    }
    if let Some(&t) = times.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(ModelError::TimeOutOfRange(t));
    }
    blend(tape, start, end, times)
}

/// Concatenates `feat[N,C,h,w]` with the time embedding `pe[N,2l]` broadcast
/// over every spatial position.
pub fn stage1_input<T: Scalar>(tape: &mut Tape<T>, feat: Var, pe: &Tensor<T>) -> Result<Var> {
    let s = tape.shape(feat).to_vec();
    let (n, h, w) = (s[0], s[2], s[3]);
    let (rows, dim) = match pe.shape() {
        [d] => (1, *d),
        [r, d] => (*r, *d),
        other => return Err(ModelError::Input(format!("time embedding shape {other:?}"))),
    };
    if rows != 1 && rows != n {
        return Err(ModelError::Input(format!("{rows} embeddings for {n} feature maps")));
    }
    let plane = h * w;
    let grid = Tensor::from_fn(&[n, dim, h, w], |i| {
        let item = i / (dim * plane);
        let ch = (i / plane) % dim;
        pe.data()[if rows == 1 { 0 } else { item } * dim + ch]
    });
    let g = tape.constant(grid);
    Ok(tape.concat(&[feat, g], 1)?)
}

/// Two 3×3 convolutions with a GELU between; the 4 output channels split into
/// the forward and backward flow.
pub fn estimate_flow<T: Scalar>(tape: &mut Tape<T>, p: &Bound, prefix: &str, m: Var) -> Result<FlowPair> {
    let h = conv3(tape, p, &format!("{prefix}.0"), m)?;
    let h = tape.gelu(h);
    let f = conv3(tape, p, &format!("{prefix}.1"), h)?;
    Ok(FlowPair {
        forward: tape.slice(f, 1, 0, 2)?,
        backward: tape.slice(f, 1, 2, 2)?,
    })
}

/// `(1−t)·warp(start, F_{t→0}) + t·warp(end, F_{t→1})`.
pub fn warp_blend<T: Scalar>(
    tape: &mut Tape<T>,
    start: Var,
    end: Var,
    flows: FlowPair,
    times: &[f64],
) -> Result<Var> {
    let a = tape.bilinear_sample(start, flows.forward)?;
    let b = tape.bilinear_sample(end, flows.backward)?;
    blend(tape, a, b, times)
}

/// Spatially-adaptive fusion: `γ·M + β`, with `γ, β` `[N,1,h,w]` predicted
/// per pixel from `i_hat` by two fully-connected maps over channels.
pub fn saf<T: Scalar>(tape: &mut Tape<T>, p: &Bound, prefix: &str, m: Var, i_hat: Var) -> Result<Var> {
    let (sm, si) = (tape.shape(m), tape.shape(i_hat));
    if sm[0] != si[0] || sm[2..] != si[2..] {
        return Err(TensorError::ShapeMismatch {
            op: "saf",
            lhs: sm.to_vec(),
            rhs: si.to_vec(),
        }
        .into());
    }
    let gamma = conv1(tape, p, &format!("{prefix}.gamma"), i_hat)?;
    let beta = conv1(tape, p, &format!("{prefix}.beta"), i_hat)?;
    let scaled = tape.broadcast_mul(m, gamma)?;
    Ok(tape.broadcast_add(scaled, beta)?)
}

/// `PixelShuffle(GELU(Conv(J)))`.
pub fn upsample_block<T: Scalar>(tape: &mut Tape<T>, p: &Bound, prefix: &str, j: Var, r: usize) -> Result<Var> {
    let x = conv3(tape, p, prefix, j)?;
    let x = tape.gelu(x);
    Ok(tape.pixel_shuffle(x, r)?)
}

/// Residual time mixing on clip-last `o[B,C,h,w,T]`: `o + matmul(o, W)`.
pub fn gtmlp<T: Scalar>(tape: &mut Tape<T>, o: Var, w: Var) -> Result<Var> {
    let mixed = tape.time_matmul(o, w)?;
    Ok(tape.add(o, mixed)?)
}

/// [`gtmlp`] on frames-major `o[B·S,C,h,w]`.
pub fn gtmlp_frames<T: Scalar>(tape: &mut Tape<T>, o: Var, w: Var, clip_len: usize) -> Result<Var> {
    let s = tape.shape(o).to_vec();
    if !s[0].is_multiple_of(clip_len) {
        return Err(ModelError::Input(format!(
            "{} frames do not form clips of {clip_len}",
            s[0]
        )));
    }
    let clips = tape.reshape(o, &[s[0] / clip_len, clip_len, s[1], s[2], s[3]])?;
    let mixed = tape.frame_time_matmul(clips, w)?;
    let mixed = tape.reshape(mixed, &s)?;
    Ok(tape.add(o, mixed)?)
}

/// Concat(features, warped frames) → conv → GELU → conv → sigmoid.
pub fn final_refine<T: Scalar>(tape: &mut Tape<T>, p: &Bound, m: Var, warped: Var) -> Result<Var> {
    let (sm, sw) = (tape.shape(m), tape.shape(warped));
    if sm[0] != sw[0] || sm[2..] != sw[2..] {
        return Err(TensorError::ShapeMismatch {
            op: "final_refine",
            lhs: sm.to_vec(),
            rhs: sw.to_vec(),
        }
        .into());
    }
    let x = tape.concat(&[m, warped], 1)?;
    let x = conv3(tape, p, "refine.0", x)?;
    let x = tape.gelu(x);
    let x = conv3(tape, p, "refine.1", x)?;
    Ok(tape.sigmoid(x))
}

/// One decoder stage on frames-major features; returns the next stage input.
#[allow(clippy::too_many_arguments)]
pub fn decoder_stage<T: Scalar>(
    tape: &mut Tape<T>,
    p: &Bound,
    cfg: &ModelConfig,
    l: usize,
    m: Var,
    start_feat: Var,
    end_feat: Var,
    frame_times: &[f64],
) -> Result<Var> {
    let err = stage_err(l);
    let flows = estimate_flow(tape, p, &format!("flow.{l}"), m)?;
    let i_hat = warp_blend(tape, start_feat, end_feat, flows, frame_times)?;
    let j = saf(tape, p, &format!("saf.{l}"), m, i_hat)?;
    let o = upsample_block(tape, p, &format!("up.{l}"), j, cfg.stage_upscales[l])?;
    let w = p.get(&format!("gtmlp.{l}.w"))?;
    gtmlp_frames(tape, o, w, cfg.clip_len).map_err(|e| match e {
        ModelError::Tensor(t) => err(t),
        other => other,
    })
}

fn attach_stage(stage: usize) -> impl Fn(ModelError) -> ModelError {
    move |e| match e {
        ModelError::Tensor(source) => ModelError::Stage { stage, source },
        other => other,
    }
}

/// Full clip decode. `start`/`end` are `[B,3,H,W]` keyframe constants or
/// variables; returns frames-major `[B·S,3,H,W]`.
pub fn forward_frames<T: Scalar>(
    tape: &mut Tape<T>,
    p: &Bound,
    cfg: &ModelConfig,
    start: Var,
    end: Var,
    t_indices: &[f64],
) -> Result<Var> {
    let s = cfg.clip_len;
    if t_indices.len() != s {
        return Err(ModelError::Input(format!(
            "{} time indices for clips of {s}",
            t_indices.len()
        )));
    }
    if tape.shape(start) != tape.shape(end) {
        return Err(ModelError::Input("start and end keyframes differ in shape".into()));
    }
    let ks = tape.shape(start).to_vec();
    if ks[2] != cfg.height || ks[3] != cfg.width {
        return Err(ModelError::Input(format!(
            "keyframes are {}x{}, model expects {}x{}",
            ks[2], ks[3], cfg.height, cfg.width
        )));
    }
    let b = ks[0];
    let frame_times: Vec<f64> = (0..b * s).map(|i| t_indices[i % s]).collect();
    let pyr = encode_keyframes(tape, p, cfg, start, end)?;
    let stages = cfg.num_stages();

    let mut m = {
        let a = tape.repeat_interleave(pyr.start[0], s);
        let z = tape.repeat_interleave(pyr.end[0], s);
        let interp = content_interp(tape, a, z, &frame_times).map_err(attach_stage(0))?;
        let pe = encode_times::<T>(&frame_times, cfg.pe_base, cfg.pe_levels)?;
        stage1_input(tape, interp, &pe).map_err(attach_stage(0))?
    };
    for l in 0..stages {
        let a = tape.repeat_interleave(pyr.start[l], s);
        let z = tape.repeat_interleave(pyr.end[l], s);
        m = decoder_stage(tape, p, cfg, l, m, a, z, &frame_times).map_err(attach_stage(l))?;
    }
    let out = (|| {
        let flows = estimate_flow(tape, p, "flow.final", m)?;
        let a = tape.repeat_interleave(start, s);
        let z = tape.repeat_interleave(end, s);
        let warped = warp_blend(tape, a, z, flows, &frame_times)?;
        final_refine(tape, p, m, warped)
    })()
    .map_err(attach_stage(stages))?;
    Ok(out)
}

/// [`forward_frames`] with the clip axis last: `[B,3,H,W,S]`.
pub fn forward_clip<T: Scalar>(
    tape: &mut Tape<T>,
    p: &Bound,
    cfg: &ModelConfig,
    start: Var,
    end: Var,
    t_indices: &[f64],
) -> Result<Var> {
    let frames = forward_frames(tape, p, cfg, start, end, t_indices)?;
    let b = tape.shape(start)[0];
    let x = tape.reshape(frames, &[b, cfg.clip_len, 3, cfg.height, cfg.width])?;
    Ok(tape.permute(x, &[0, 2, 3, 4, 1])?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny(h: usize, w: usize, s: usize) -> ModelConfig {
        ModelConfig {
            height: h,
            width: w,
            stage_upscales: vec![2, 2],
            stage_channels: vec![4, 3],
            clip_len: s,
            pe_levels: 3,
            flow_hidden: 3,
            refine_hidden: 3,
            ..ModelConfig::default()
        }
    }

    fn rand_tensor<T: Scalar>(shape: &[usize], seed: u64) -> Tensor<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| T::of(rng.gen_range(0.0..1.0)))
    }

    /// Adds noise so zero-initialised layers take part in the check.
    fn jitter(store: &mut ParamStore<f64>, seed: u64, amp: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (_, t) in store.iter_mut() {
            for v in t.data_mut() {
                *v += rng.gen_range(-amp..amp);
            }
        }
    }

    #[test]
    fn interpolation_endpoints_are_exact() {
        let mut tape = Tape::<f32>::new();
        let a = tape.constant(rand_tensor(&[2, 3, 4, 5], 1));
        let b = tape.constant(rand_tensor(&[2, 3, 4, 5], 2));
        let y0 = content_interp(&mut tape, a, b, &[0.0]).unwrap();
        let y1 = content_interp(&mut tape, a, b, &[1.0]).unwrap();
        assert_eq!(tape.value(y0), tape.value(a));
        assert_eq!(tape.value(y1), tape.value(b));
        assert!(matches!(
            content_interp(&mut tape, a, b, &[1.2]),
            Err(ModelError::TimeOutOfRange(_))
        ));
    }

    #[test]
    fn zero_flow_warp_blend_is_interpolation() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(rand_tensor(&[3, 2, 4, 5], 3));
        let b = tape.constant(rand_tensor(&[3, 2, 4, 5], 4));
        let zero = tape.constant(Tensor::zeros(&[3, 2, 4, 5]));
        let flows = FlowPair {
            forward: zero,
            backward: zero,
        };
        let ts = [0.0, 0.3, 1.0];
        let w = warp_blend(&mut tape, a, b, flows, &ts).unwrap();
        let (av, bv, wv) = (tape.value(a), tape.value(b), tape.value(w));
        let plane = 2 * 4 * 5;
        for i in 0..wv.numel() {
            let t = ts[i / plane];
            let expect = (1.0 - t) * av.data()[i] + t * bv.data()[i];
            assert!((wv.data()[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_gtmlp_is_identity_and_layouts_agree() {
        let (b, s, c, h, w) = (2, 3, 4, 2, 3);
        let mut tape = Tape::<f64>::new();
        let o = tape.constant(rand_tensor(&[b * s, c, h, w], 5));
        let zero = tape.constant(Tensor::zeros(&[c, s, s]));
        let y = gtmlp_frames(&mut tape, o, zero, s).unwrap();
        assert_eq!(tape.value(y), tape.value(o));

        let wt = tape.constant(rand_tensor(&[c, s, s], 6));
        let frames = gtmlp_frames(&mut tape, o, wt, s).unwrap();
        let r = tape.reshape(o, &[b, s, c, h, w]).unwrap();
        let last = tape.permute(r, &[0, 2, 3, 4, 1]).unwrap();
        let mixed = gtmlp(&mut tape, last, wt).unwrap();
        let back = tape.permute(mixed, &[0, 4, 1, 2, 3]).unwrap();
        let back = tape.reshape(back, &[b * s, c, h, w]).unwrap();
        assert!(tape.value(back).max_abs_diff(tape.value(frames)) < 1e-12);

        // direct: out[b,c,y,x,t] = o + sum_s o[b,c,y,x,s] W[c,s,t]
        let (ov, wv, fv) = (tape.value(o), tape.value(wt), tape.value(frames));
        for bi in 0..b {
            for ti in 0..s {
                for ci in 0..c {
                    for p in 0..h * w {
                        let at = |f: usize| ov.data()[((bi * s + f) * c + ci) * h * w + p];
                        let mut e = at(ti);
                        for si in 0..s {
                            e += at(si) * wv.data()[(ci * s + si) * s + ti];
                        }
                        let got = fv.data()[((bi * s + ti) * c + ci) * h * w + p];
                        assert!((got - e).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn saf_identity_at_init_and_beta_when_gamma_zero() {
        let cfg = tiny(8, 8, 2);
        let mut store = init_params::<f64>(&cfg, 0).unwrap();
        let mut tape = Tape::new();
        let m = tape.constant(rand_tensor(&[2, 4, 2, 2], 7));
        let i_hat = tape.constant(rand_tensor(&[2, 4, 2, 2], 8));
        {
            let p = store.bind(&mut tape, false);
            let y = saf(&mut tape, &p, "saf.0", m, i_hat).unwrap();
            assert_eq!(tape.value(y), tape.value(m));
        }
        store.get_mut("saf.0.gamma.b").unwrap().data_mut()[0] = 0.0;
        let bw: Vec<f64> = (0..4).map(|c| 0.1 * c as f64).collect();
        *store.get_mut("saf.0.beta.w").unwrap() = Tensor::from_vec(&[1, 4, 1, 1], bw.clone()).unwrap();
        store.get_mut("saf.0.beta.b").unwrap().data_mut()[0] = 0.25;
        let p = store.bind(&mut tape, false);
        let y = saf(&mut tape, &p, "saf.0", m, i_hat).unwrap();
        let iv = tape.value(i_hat).clone();
        let yv = tape.value(y);
        for n in 0..2 {
            for pos in 0..4 {
                let beta: f64 = 0.25 + (0..4).map(|c| bw[c] * iv.data()[(n * 4 + c) * 4 + pos]).sum::<f64>();
                for c in 0..4 {
                    assert!((yv.data()[(n * 4 + c) * 4 + pos] - beta).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn upsample_block_matches_its_steps() {
        let cfg = tiny(8, 8, 2);
        let store = init_params::<f32>(&cfg, 1).unwrap();
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let j = tape.constant(rand_tensor(&[2, 4, 2, 2], 9));
        let y = upsample_block(&mut tape, &p, "up.1", j, 2).unwrap();
        let c = tape
            .conv2d(j, p.get("up.1.w").unwrap(), Some(p.get("up.1.b").unwrap()), 1, 1)
            .unwrap();
        let g = tape.gelu(c);
        let s = tape.pixel_shuffle(g, 2).unwrap();
        assert_eq!(tape.value(y), tape.value(s));
        assert_eq!(tape.shape(y), &[2, 3, 4, 4]);
    }

    #[test]
    fn shape_chain_and_output_range() {
        let cfg = ModelConfig::default();
        let store = init_params::<f32>(&cfg, 2).unwrap();
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let a = tape.constant(rand_tensor(&[2, 3, 32, 40], 10));
        let b = tape.constant(rand_tensor(&[2, 3, 32, 40], 11));
        let pyr = encode_keyframes(&mut tape, &p, &cfg, a, b).unwrap();
        let shapes: Vec<Vec<usize>> = pyr.start.iter().map(|v| tape.shape(*v).to_vec()).collect();
        assert_eq!(shapes, vec![vec![2, 32, 4, 5], vec![2, 32, 8, 10], vec![2, 24, 16, 20]]);
        let ts: Vec<f64> = (0..8).map(|i| i as f64 / 8.0).collect();
        let y = forward_clip(&mut tape, &p, &cfg, a, b, &ts).unwrap();
        assert_eq!(tape.shape(y), &[2, 3, 32, 40, 8]);
        assert!(tape.value(y).data().iter().all(|v| *v > 0.0 && *v < 1.0));
    }

    #[test]
    fn mismatched_input_is_rejected() {
        let cfg = tiny(8, 8, 2);
        let store = init_params::<f32>(&cfg, 2).unwrap();
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let a = tape.constant(rand_tensor(&[1, 3, 8, 12], 1));
        assert!(forward_frames(&mut tape, &p, &cfg, a, a, &[0.0, 0.5]).is_err());
        let a = tape.constant(rand_tensor(&[1, 3, 8, 8], 1));
        assert!(forward_frames(&mut tape, &p, &cfg, a, a, &[0.0]).is_err());
    }

    fn run(cfg: &ModelConfig, store: &ParamStore<f64>, a: &Tensor<f64>, b: &Tensor<f64>, ts: &[f64]) -> Tensor<f64> {
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let a = tape.constant(a.clone());
        let b = tape.constant(b.clone());
        let y = forward_frames(&mut tape, &p, cfg, a, b, ts).unwrap();
        tape.value(y).clone()
    }

    #[test]
    fn deterministic_and_batch_equivariant() {
        let cfg = tiny(8, 12, 3);
        let mut store = init_params::<f64>(&cfg, 4).unwrap();
        assert_eq!(store, init_params::<f64>(&cfg, 4).unwrap());
        jitter(&mut store, 1, 0.2);
        let a = rand_tensor::<f64>(&[3, 3, 8, 12], 20);
        let b = rand_tensor::<f64>(&[3, 3, 8, 12], 21);
        let ts = [0.0, 1.0 / 3.0, 2.0 / 3.0];
        let y = run(&cfg, &store, &a, &b, &ts);
        assert_eq!(y, run(&cfg, &store, &a, &b, &ts));

        let perm = [2, 0, 1];
        let pa = Tensor::stack(&perm.map(|i| a.index_axis0(i))).unwrap();
        let pb = Tensor::stack(&perm.map(|i| b.index_axis0(i))).unwrap();
        let py = run(&cfg, &store, &pa, &pb, &ts);
        for (k, &src) in perm.iter().enumerate() {
            for f in 0..3 {
                let d = py.index_axis0(k * 3 + f).max_abs_diff(&y.index_axis0(src * 3 + f));
                assert!(d < 1e-12);
            }
        }
    }

    #[test]
    fn end_to_end_gradients_match_finite_differences() {
        let cfg = ModelConfig {
            stage_channels: vec![2, 2],
            pe_levels: 1,
            flow_hidden: 2,
            refine_hidden: 2,
            ..tiny(8, 8, 2)
        };
        let mut store = init_params::<f64>(&cfg, 6).unwrap();
        jitter(&mut store, 2, 0.3);
        let a = rand_tensor::<f64>(&[1, 3, 8, 8], 30);
        let b = rand_tensor::<f64>(&[1, 3, 8, 8], 31);
        let gt = rand_tensor::<f64>(&[2, 3, 8, 8], 32);
        let rel = crate::model::grad_check_params(&store, |tape, p| {
            let (sa, sb) = (tape.constant(a.clone()), tape.constant(b.clone()));
            let y = forward_frames(tape, p, &cfg, sa, sb, &[0.0, 0.5])?;
            let g = tape.constant(gt.clone());
            let d = tape.sub(y, g)?;
            let d = tape.mul(d, d)?;
            Ok(tape.mean(d))
        });
        assert!(rel < 1e-4, "relative gradient error {rel}");
    }

    #[test]
    fn decoder_stage_gradients_on_coarse_features() {
        let cfg = ModelConfig {
            stage_upscales: vec![2],
            stage_channels: vec![3],
            flow_hidden: 2,
            pe_levels: 1,
            ..tiny(8, 10, 2)
        };
        let mut store = init_params::<f64>(&cfg, 8).unwrap();
        jitter(&mut store, 3, 0.3);
        // stage 0 features carry the time embedding as well
        let m = rand_tensor::<f64>(&[2, 5, 4, 5], 40);
        let fa = rand_tensor::<f64>(&[2, 3, 4, 5], 41);
        let fb = rand_tensor::<f64>(&[2, 3, 4, 5], 42);
        let rel = crate::model::grad_check_params(&store, |tape, p| {
            let (m, fa, fb) = (tape.constant(m.clone()), tape.constant(fa.clone()), tape.constant(fb.clone()));
            let o = decoder_stage(tape, p, &cfg, 0, m, fa, fb, &[0.25, 0.75])?;
            assert_eq!(tape.shape(o), &[2, 3, 8, 10]);
            let o = tape.mul(o, o)?;
            Ok(tape.mean(o))
        });
        assert!(rel < 1e-4, "relative gradient error {rel}");
    }

    #[test]
    fn fresh_model_passes_keyframes_through_at_the_endpoints() {
        let cfg = ModelConfig {
            refine_hidden: 6,
            ..tiny(8, 12, 2)
        };
        let mut store = init_params::<f64>(&cfg, 9).unwrap();
        // drop the random weights, which are far below the taps
        for name in ["refine.0.w", "refine.1.w"] {
            let w = store.get_mut(name).unwrap().data_mut();
            assert_eq!(w.iter().filter(|v| v.abs() > 1.0).count(), 6, "{name}");
            w.iter_mut().filter(|v| v.abs() < 1.0).for_each(|v| *v = 0.0);
        }
        let a = rand_tensor::<f64>(&[1, 3, 8, 12], 50);
        let b = rand_tensor::<f64>(&[1, 3, 8, 12], 51);
        let y = run(&cfg, &store, &a, &b, &[0.0, 1.0]);
        let squash = |x: f64| 1.0 / (1.0 + (-4.0 * (x - 0.5)).exp());
        for (k, key) in [&a, &b].into_iter().enumerate() {
            let got = y.index_axis0(k);
            for (g, x) in got.data().iter().zip(key.data()) {
                assert!((g - squash(*x)).abs() < 1e-12, "{g} vs {}", squash(*x));
            }
        }
    }

}
