use super::*;
use crate::model::ModelRegistry;

fn small_cfg() -> ModelConfig {
    ModelConfig {
        height: 16,
        width: 16,
        stage_upscales: vec![2, 2],
        stage_channels: vec![8, 6],
        clip_len: 4,
        pe_levels: 4,
        flow_hidden: 4,
        refine_hidden: 4,
        ..ModelConfig::default()
    }
}

fn small_data() -> TrainData {
    TrainData::new(synth_corpus(2, 2, 9, (16, 16), 3), 4).unwrap()
}

#[test]
fn zero_epochs_keeps_initialisation() {
    let reg = ModelRegistry::<f32>::builtin();
    let rep = reg.get("dnerv").unwrap();
    let cfg = small_cfg();
    let init = rep.init_params(&cfg, 1).unwrap();
    let tc = TrainConfig {
        epochs: 0,
        warmup_epochs: 0,
        ..TrainConfig::default()
    };
    let out = train_loop(rep, &cfg, &tc, &small_data(), init.clone(), &mut |_| {}).unwrap();
    assert_eq!(out.params, init);
    assert!(out.rows.is_empty());
    assert_eq!(metrics_csv(&out.rows), "epoch,step,loss,psnr,lr\n");
}

#[test]
fn training_is_deterministic_and_improves() {
    let reg = ModelRegistry::<f32>::builtin();
    for name in ["dnerv", "nerv"] {
        let rep = reg.get(name).unwrap();
        let cfg = ModelConfig {
            variant: name.into(),
            ..small_cfg()
        };
        let tc = TrainConfig {
            epochs: 6,
            warmup_epochs: 1,
            lr_peak: 3e-3,
            batch_size: 2,
            seed: 5,
            ..TrainConfig::default()
        };
        let data = small_data();
        let run = || {
            let init = rep.init_params(&cfg, 2).unwrap();
            train_loop(rep, &cfg, &tc, &data, init, &mut |_| {}).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.params, b.params);
        assert_eq!(metrics_csv(&a.rows), metrics_csv(&b.rows));
        assert_eq!(a.rows.len(), 6);
        assert_eq!(a.steps, 6 * 2);
        assert!(a.rows[5].loss < a.rows[0].loss, "{name}: {:?}", a.rows);
    }
}

#[test]
fn batches_line_up_with_clips() {
    let data = small_data();
    assert_eq!(data.clips().len(), 4);
    assert_eq!(data.layout.total_frames(), 18);
    assert_eq!(data.layout.keyframe_indices(1), vec![0, 4, 8]);
    let b = data.batch(&data.clips()[1..3]).unwrap();
    assert_eq!(b.gt.shape(), &[8, 3, 16, 16]);
    assert_eq!(b.input.rel_times, vec![0.0, 0.25, 0.5, 0.75]);
    // clip 1 of video 0 starts at frame 4, clip 0 of video 1 at its frame 0
    assert_eq!(b.input.start.as_ref().unwrap().index_axis0(0), data.videos[0].frames[4]);
    assert_eq!(b.input.end.as_ref().unwrap().index_axis0(0), data.videos[0].frames[8]);
    assert_eq!(b.gt.index_axis0(4), data.videos[1].frames[0]);
    assert_eq!(b.input.abs_times[4], 9.0 / 18.0);
}

#[test]
fn reconstruction_covers_retained_frames() {
    let reg = ModelRegistry::<f32>::builtin();
    let data = small_data();
    for name in ["dnerv", "nerv"] {
        let rep = reg.get(name).unwrap();
        let cfg = small_cfg();
        let p = rep.init_params(&cfg, 0).unwrap();
        let frames = reconstruct_video(rep, &p, &cfg, &data.layout, &data.keyframes, 1, None, 3).unwrap();
        assert_eq!(frames.iter().map(|f| f.0).collect::<Vec<_>>(), (0..9).collect::<Vec<_>>());
        if name == "dnerv" {
            assert_eq!(frames[8].1, data.keyframes[1][2]);
        }
        let one = reconstruct_video(rep, &p, &cfg, &data.layout, &data.keyframes, 1, Some(1), 3).unwrap();
        assert_eq!(one.iter().map(|f| f.0).collect::<Vec<_>>(), vec![4, 5, 6, 7]);
        for (i, f) in &one {
            assert!(f.max_abs_diff(&frames[*i].1) < 1e-6);
        }
    }
}

#[test]
fn invalid_train_config_is_rejected() {
    let bad = TrainConfig {
        epochs: 5,
        warmup_epochs: 5,
        ..TrainConfig::default()
    };
    assert!(bad.validate().is_err());
    let bad = TrainConfig {
        alpha: 1.5,
        ..TrainConfig::default()
    };
    assert!(bad.validate().is_err());
}
