use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_frame(h: usize, w: usize, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[3, h, w], |_| rng.gen_range(0.0..1.0))
}

/// Smooth pattern so that structure survives downsampling.
fn texture(h: usize, w: usize) -> Tensor<f64> {
    Tensor::from_fn(&[3, h, w], |i| {
        let (c, y, x) = (i / (h * w), (i / w) % h, i % w);
        0.5 + 0.3 * ((x as f64 * 0.4 + c as f64).sin() * (y as f64 * 0.3).cos())
    })
}

fn add_noise(t: &Tensor<f64>, sigma: f64, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(t.shape(), |i| {
        // Box-Muller
        let (u1, u2): (f64, f64) = (rng.gen_range(1e-12..1.0), rng.gen_range(0.0..1.0));
        t.data()[i] + sigma * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    })
}

/// Direct windowed SSIM with a full 2-D Gaussian window per position.
fn naive_ssim(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let (c, h, w) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let k = 11;
    let s2 = 2.0 * 1.5 * 1.5;
    let mut win = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            win[i * k + j] = (-(di * di + dj * dj) / s2).exp();
        }
    }
    let z: f64 = win.iter().sum();
    win.iter_mut().for_each(|v| *v /= z);
    let at = |t: &Tensor<f64>, ch: usize, y: usize, x: usize| t.data()[(ch * h + y) * w + x];
    let mut total = 0.0;
    let mut count = 0;
    for ch in 0..c {
        for y in 0..=h - k {
            for x in 0..=w - k {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..k {
                    for j in 0..k {
                        let g = win[i * k + j];
                        let (va, vb) = (at(a, ch, y + i, x + j), at(b, ch, y + i, x + j));
                        ma += g * va;
                        mb += g * vb;
                        saa += g * va * va;
                        sbb += g * vb * vb;
                        sab += g * va * vb;
                    }
                }
                let (c1, c2) = (0.0001, 0.0009);
                let num = (2.0 * ma * mb + c1) * (2.0 * (sab - ma * mb) + c2);
                let den = (ma * ma + mb * mb + c1) * (saa - ma * ma + sbb - mb * mb + c2);
                total += num / den;
                count += 1;
            }
        }
    }
    total / count as f64
}

#[test]
fn psnr_closed_forms() {
    let a = random_frame(8, 8, 1);
    assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
    let zeros = Tensor::<f64>::zeros(&[3, 4, 4]);
    let ones = Tensor::<f64>::full(&[3, 4, 4], 1.0);
    assert_eq!(psnr(&zeros, &ones).unwrap(), 0.0);
    let off = Tensor::<f64>::full(&[3, 4, 4], 0.5 + 1.0 / 255.0);
    let half = Tensor::<f64>::full(&[3, 4, 4], 0.5);
    let expect = -10.0 * (1.0f64 / 255.0).powi(2).log10();
    assert!((psnr(&half, &off).unwrap() - expect).abs() < 1e-9);
    assert!((expect - 48.1308).abs() < 1e-3);
}

#[test]
fn psnr_is_symmetric_and_decreases_with_noise() {
    let a = random_frame(16, 16, 2);
    let b = random_frame(16, 16, 3);
    assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    let base = texture(16, 16);
    let mut last = f64::INFINITY;
    for (i, s) in [0.005, 0.01, 0.02, 0.05, 0.1].iter().enumerate() {
        let p = psnr(&base, &add_noise(&base, *s, 7 + i as u64)).unwrap();
        assert!(p < last);
        last = p;
    }
}

#[test]
fn shape_mismatch_is_an_error() {
    let a = Tensor::<f64>::zeros(&[3, 4, 4]);
    let b = Tensor::<f64>::zeros(&[3, 4, 5]);
    assert!(matches!(psnr(&a, &b), Err(MetricsError::ShapeMismatch(..))));
}

#[test]
fn ssim_matches_naive_oracle() {
    for seed in 0..3 {
        let a = random_frame(16, 19, 10 + seed);
        let b = add_noise(&a, 0.1, 20 + seed);
        let fast = ssim(&a, &b).unwrap();
        let slow = naive_ssim(&a, &b);
        assert!((fast - slow).abs() < 1e-6, "{fast} vs {slow}");
    }
}

#[test]
fn ssim_identity_symmetry_and_negation() {
    let a = random_frame(14, 14, 4);
    let b = random_frame(14, 14, 5);
    assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
    assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
    let pattern = |sign: f64| {
        Tensor::<f64>::from_fn(&[3, 16, 16], |i| {
            let (y, x) = ((i / 16) % 16, i % 16);
            0.5 + sign * 0.25 * if (x + y) % 2 == 0 { 1.0 } else { -1.0 }
        })
    };
    assert!(ssim(&pattern(1.0), &pattern(-1.0)).unwrap() < 0.0);
    let small = Tensor::<f64>::zeros(&[3, 10, 16]);
    assert!(matches!(ssim(&small, &small), Err(MetricsError::TooSmall { .. })));
}

#[test]
fn ms_ssim_identity_single_scale_and_monotone() {
    let a = texture(48, 56);
    assert!((ms_ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
    let b = add_noise(&a, 0.05, 1);
    assert!((ms_ssim_with_scales(&a, &b, 1).unwrap() - ssim(&a, &b).unwrap()).abs() < 1e-12);
    assert_eq!(ms_ssim_scales(48, 56, 5), 3);
    assert_eq!(ms_ssim_scales(32, 40, 5), 2);
    assert_eq!(ms_ssim_scales(176, 200, 5), 5);
    let scores: Vec<f64> = [0.01, 0.05, 0.1]
        .iter()
        .map(|s| ms_ssim(&a, &add_noise(&a, *s, 3)).unwrap())
        .collect();
    assert!(scores[0] > scores[1] && scores[1] > scores[2], "{scores:?}");
    assert!(scores.iter().all(|s| (0.0..=1.0).contains(s)));
}

#[test]
fn rd_point_averages_per_video() {
    let v = |id: &str, frames, p| VideoScore {
        video_id: id.into(),
        frames,
        psnr_db: p,
        ms_ssim: 0.9,
    };
    let r = rd_point("x", 0.5, &[v("a", 3, 30.0), v("b", 30, 40.0)]).unwrap();
    assert_eq!(r.psnr_db, 35.0);
    assert!(rd_point("x", 0.0, &[v("a", 1, 1.0)]).is_err());
    let csv = rd_csv(&[r]);
    assert!(csv.starts_with("label,bpp,psnr_db,ms_ssim\nx,0.500000,35.0000,0.900000"));
}

#[test]
fn perfect_reconstruction_scores() {
    let frames: Vec<_> = (0..3).map(|i| texture(32, 40).map(|v| v * (0.9 + 0.03 * i as f64))).collect();
    let s = score_video("v", &frames, &frames).unwrap();
    assert_eq!(s.psnr_db, PSNR_CAP_DB);
    assert!((s.ms_ssim - 1.0).abs() < 1e-9);
    assert!(matches!(
        score_video("v", &frames, &frames[..2]),
        Err(MetricsError::Coverage(_))
    ));
}
