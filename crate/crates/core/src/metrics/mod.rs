//! Reconstruction quality metrics and rate-distortion rows.
//!
//! Frames are `[3,H,W]` tensors with values in `[0,1]`. All arithmetic runs
//! in f64 regardless of the tensor element type.

use std::fmt::Write as _;

use crate::tensor::{Scalar, Tensor};

pub const PSNR_CAP_DB: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch(Vec<usize>, Vec<usize>),
    #[error("frame {h}x{w} is smaller than the {window}x{window} window")]
    TooSmall { h: usize, w: usize, window: usize },
    #[error("expected a [C,H,W] frame, got {0:?}")]
    NotAFrame(Vec<usize>),
    #[error("decoded frames do not cover the dataset: {0}")]
    Coverage(String),
    #[error("bits per pixel must be positive, got {0}")]
    InvalidBpp(f64),
}

pub type Result<T, E = MetricsError> = std::result::Result<T, E>;

fn same_shape<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(MetricsError::ShapeMismatch(a.shape().to_vec(), b.shape().to_vec()));
    }
    Ok(())
}

pub fn mse<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    same_shape(a, b)?;
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum();
    Ok(s / a.numel() as f64)
}

/// `−10·log10(mse)` capped at [`PSNR_CAP_DB`].
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP_DB
    } else {
        (-10.0 * mse.log10()).min(PSNR_CAP_DB)
    }
}

pub fn psnr<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

/// Normalised 1-D Gaussian taps.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// One channel plane in f64.
#[derive(Clone)]
struct Plane {
    h: usize,
    w: usize,
    d: Vec<f64>,
}

impl Plane {
    fn at(&self, y: usize, x: usize) -> f64 {
        self.d[y * self.w + x]
    }

    fn zip(&self, o: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        Plane {
            h: self.h,
            w: self.w,
            d: self.d.iter().zip(&o.d).map(|(a, b)| f(*a, *b)).collect(),
        }
    }

    /// Separable "valid" filtering.
    fn filter(&self, g: &[f64]) -> Plane {
        let k = g.len();
        let (ho, wo) = (self.h - k + 1, self.w - k + 1);
        let mut rows = vec![0.0; self.h * wo];
        for y in 0..self.h {
            for x in 0..wo {
                rows[y * wo + x] = (0..k).map(|i| g[i] * self.at(y, x + i)).sum();
            }
        }
        let mut d = vec![0.0; ho * wo];
        for y in 0..ho {
            for x in 0..wo {
                d[y * wo + x] = (0..k).map(|i| g[i] * rows[(y + i) * wo + x]).sum();
            }
        }
        Plane { h: ho, w: wo, d }
    }

    fn pool2(&self) -> Plane {
        let (h, w) = (self.h / 2, self.w / 2);
        let mut d = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let s = self.at(2 * y, 2 * x)
                    + self.at(2 * y, 2 * x + 1)
                    + self.at(2 * y + 1, 2 * x)
                    + self.at(2 * y + 1, 2 * x + 1);
                d.push(s / 4.0);
            }
        }
        Plane { h, w, d }
    }
}

fn planes<T: Scalar>(t: &Tensor<T>) -> Result<Vec<Plane>> {
    let &[c, h, w] = t.shape() else {
        return Err(MetricsError::NotAFrame(t.shape().to_vec()));
    };
    Ok((0..c)
        .map(|ci| Plane {
            h,
            w,
            d: t.data()[ci * h * w..(ci + 1) * h * w].iter().map(|v| v.as_f64()).collect(),
        })
        .collect())
}

/// Mean SSIM and mean contrast-structure term of one channel pair.
fn ssim_cs(a: &Plane, b: &Plane, g: &[f64]) -> (f64, f64) {
    let mu_a = a.filter(g);
    let mu_b = b.filter(g);
    let aa = a.zip(a, |x, y| x * y).filter(g);
    let bb = b.zip(b, |x, y| x * y).filter(g);
    let ab = a.zip(b, |x, y| x * y).filter(g);
    let n = mu_a.d.len() as f64;
    let (mut s, mut c) = (0.0, 0.0);
    for i in 0..mu_a.d.len() {
        let (ma, mb) = (mu_a.d[i], mu_b.d[i]);
        let va = aa.d[i] - ma * ma;
        let vb = bb.d[i] - mb * mb;
        let cov = ab.d[i] - ma * mb;
        let cs = (2.0 * cov + C2) / (va + vb + C2);
        let l = (2.0 * ma * mb + C1) / (ma * ma + mb * mb + C1);
        s += l * cs;
        c += cs;
    }
    (s / n, c / n)
}

fn check_window(h: usize, w: usize) -> Result<()> {
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(MetricsError::TooSmall {
            h,
            w,
            window: SSIM_WINDOW,
        });
    }
    Ok(())
}

/// Single-scale SSIM, 11×11 Gaussian window (σ = 1.5), valid positions only,
/// averaged over channels and positions.
pub fn ssim<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    same_shape(a, b)?;
    let (pa, pb) = (planes(a)?, planes(b)?);
    check_window(pa[0].h, pa[0].w)?;
    let g = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let total: f64 = pa.iter().zip(&pb).map(|(x, y)| ssim_cs(x, y, &g).0).sum();
    Ok(total / pa.len() as f64)
}

/// Largest usable scale count (≤ `wanted`) for a frame of `h×w`.
pub fn ms_ssim_scales(h: usize, w: usize, wanted: usize) -> usize {
    let mut s = wanted.max(1);
    while s > 1 && h.min(w) < SSIM_WINDOW << (s - 1) {
        s -= 1;
    }
    s
}

/// Multi-scale SSIM with the standard five-scale weights, reduced to the
/// number of scales the frame supports (weights renormalised).
pub fn ms_ssim<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    ms_ssim_with_scales(a, b, 5)
}

pub fn ms_ssim_with_scales<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, scales: usize) -> Result<f64> {
    same_shape(a, b)?;
    let (mut pa, mut pb) = (planes(a)?, planes(b)?);
    let (h, w) = (pa[0].h, pa[0].w);
    check_window(h, w)?;
    let n = ms_ssim_scales(h, w, scales.min(MS_SSIM_WEIGHTS.len()));
    if n < scales {
        static WARNED: std::sync::Once = std::sync::Once::new();
        WARNED.call_once(|| log::warn!("ms-ssim: {h}x{w} frames support {n} of {scales} scales; weights renormalised"));
    }
    let wsum: f64 = MS_SSIM_WEIGHTS[..n].iter().sum();
    let g = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let mut score = 1.0;
    for s in 0..n {
        let (mut ss, mut cs) = (0.0, 0.0);
        for (x, y) in pa.iter().zip(&pb) {
            let (a, c) = ssim_cs(x, y, &g);
            ss += a;
            cs += c;
        }
        let k = pa.len() as f64;
        let term = if s + 1 == n { ss / k } else { cs / k };
        score *= term.max(0.0).powf(MS_SSIM_WEIGHTS[s] / wsum);
        if s + 1 < n {
            pa = pa.iter().map(Plane::pool2).collect();
            pb = pb.iter().map(Plane::pool2).collect();
        }
    }
    Ok(score)
}

/// Quality of one decoded video.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoScore {
    pub video_id: String,
    pub frames: usize,
    pub psnr_db: f64,
    pub ms_ssim: f64,
}

/// Frame-averaged PSNR and MS-SSIM for one video.
pub fn score_video<T: Scalar>(video_id: &str, gt: &[Tensor<T>], decoded: &[Tensor<T>]) -> Result<VideoScore> {
    if gt.len() != decoded.len() || gt.is_empty() {
        return Err(MetricsError::Coverage(format!(
            "video {video_id}: {} ground-truth frames, {} decoded",
            gt.len(),
            decoded.len()
        )));
    }
    let (mut p, mut m) = (0.0, 0.0);
    for (g, d) in gt.iter().zip(decoded) {
        p += psnr(g, d)?;
        m += ms_ssim(g, d)?;
    }
    let n = gt.len() as f64;
    Ok(VideoScore {
        video_id: video_id.to_string(),
        frames: gt.len(),
        psnr_db: p / n,
        ms_ssim: m / n,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RdPoint {
    pub label: String,
    pub bpp: f64,
    pub psnr_db: f64,
    pub ms_ssim: f64,
}

/// Averages per-video scores with equal weight per video.
pub fn rd_point(label: &str, bpp: f64, videos: &[VideoScore]) -> Result<RdPoint> {
    if !(bpp > 0.0) {
        return Err(MetricsError::InvalidBpp(bpp));
    }
    if videos.is_empty() {
        return Err(MetricsError::Coverage("no videos".into()));
    }
    let n = videos.len() as f64;
    Ok(RdPoint {
        label: label.to_string(),
        bpp,
        psnr_db: videos.iter().map(|v| v.psnr_db).sum::<f64>() / n,
        ms_ssim: videos.iter().map(|v| v.ms_ssim).sum::<f64>() / n,
    })
}

pub const RD_CSV_HEADER: &str = "label,bpp,psnr_db,ms_ssim";

pub fn rd_csv_row(p: &RdPoint) -> String {
    format!("{},{:.6},{:.4},{:.6}", p.label, p.bpp, p.psnr_db, p.ms_ssim)
}

pub fn rd_csv(points: &[RdPoint]) -> String {
    let mut s = String::from(RD_CSV_HEADER);
    s.push('\n');
    for p in points {
        let _ = writeln!(s, "{}", rd_csv_row(p));
    }
    s
}

#[cfg(test)]
mod tests;
