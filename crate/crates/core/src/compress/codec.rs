//! Keyframe image codecs, selectable by name.
//!
//! Every payload starts with `u8 codec_id | u16 height | u16 width` so it can
//! be decoded without side information.

use std::collections::BTreeMap;

use super::{huffman, CompressError};
use crate::io::to_u8;
use crate::tensor::Tensor;

pub trait KeyframeCodec: Send + Sync {
    fn id(&self) -> u8;
    fn name(&self) -> &'static str;
    /// Encodes a `[3,H,W]` frame in `[0,1]`.
    fn encode(&self, img: &Tensor<f32>, quality: u8) -> Result<Vec<u8>, CompressError>;
    fn decode(&self, bytes: &[u8]) -> Result<Tensor<f32>, CompressError>;
}

fn header(id: u8, img: &Tensor<f32>) -> Result<(Vec<u8>, usize, usize), CompressError> {
    let &[3, h, w] = img.shape() else {
        return Err(CompressError::InvalidArgument(format!(
            "keyframes must be [3,H,W], got {:?}",
            img.shape()
        )));
    };
    if h > u16::MAX as usize || w > u16::MAX as usize {
        return Err(CompressError::InvalidArgument(format!("{h}x{w} keyframe is too large")));
    }
    let mut out = vec![id];
    out.extend_from_slice(&(h as u16).to_le_bytes());
    out.extend_from_slice(&(w as u16).to_le_bytes());
    Ok((out, h, w))
}

fn read_header(bytes: &[u8], id: u8) -> Result<(usize, usize, &[u8]), CompressError> {
    if bytes.len() < 5 {
        return Err(CompressError::Truncated("keyframe header".into()));
    }
    if bytes[0] != id {
        return Err(CompressError::Corrupt(format!("codec id {} where {id} expected", bytes[0])));
    }
    let h = u16::from_le_bytes([bytes[1], bytes[2]]) as usize;
    let w = u16::from_le_bytes([bytes[3], bytes[4]]) as usize;
    if h == 0 || w == 0 {
        return Err(CompressError::Corrupt("empty keyframe".into()));
    }
    Ok((h, w, &bytes[5..]))
}

/// 8-bit planar dump.
pub struct RawCodec;

impl KeyframeCodec for RawCodec {
    fn id(&self) -> u8 {
        0
    }
    fn name(&self) -> &'static str {
        "raw"
    }
    fn encode(&self, img: &Tensor<f32>, _quality: u8) -> Result<Vec<u8>, CompressError> {
        let (mut out, _, _) = header(self.id(), img)?;
        out.extend(img.data().iter().map(|v| to_u8(*v as f64)));
        Ok(out)
    }
    fn decode(&self, bytes: &[u8]) -> Result<Tensor<f32>, CompressError> {
        let (h, w, body) = read_header(bytes, self.id())?;
        if body.len() != 3 * h * w {
            return Err(CompressError::Truncated("raw keyframe pixels".into()));
        }
        Ok(Tensor::from_vec(&[3, h, w], body.iter().map(|b| *b as f32 / 255.0).collect())?)
    }
}

const LUMA_TABLE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, 12, 12, 14, 19, 26, 58, 60, 55, 14, 13, 16, 24, 40, 57, 69, 56, 14, 17, 22, 29, 51,
    87, 80, 62, 18, 22, 37, 56, 68, 109, 103, 77, 24, 35, 55, 64, 81, 104, 113, 92, 49, 64, 78, 87, 103, 121, 120, 101,
    72, 92, 95, 98, 112, 100, 103, 99,
];

const CHROMA_TABLE: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99, 24, 26, 56, 99, 99, 99, 99, 99, 47, 66, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99,
];

const ZIGZAG: [usize; 64] = [
    0, 1, 8, 16, 9, 2, 3, 10, 17, 24, 32, 25, 18, 11, 4, 5, 12, 19, 26, 33, 40, 48, 41, 34, 27, 20, 13, 6, 7, 14, 21, 28,
    35, 42, 49, 56, 57, 50, 43, 36, 29, 22, 15, 23, 30, 37, 44, 51, 58, 59, 52, 45, 38, 31, 39, 46, 53, 60, 61, 54, 47,
    55, 62, 63,
];

/// Largest DC step. A flat block's DC error is at most step/16 per plane, and
/// blue mixes luma with 1.772 × Cb, so 2 keeps it under half an 8-bit level
/// and constant images come back exactly.
const MAX_DC_STEP: f64 = 2.0;

/// Quality-scaled quantization steps (1..=100, higher is finer) for the luma
/// plane, or for the two chroma planes when `chroma` is set.
pub fn quant_table(quality: u8, chroma: bool) -> [f64; 64] {
    let q = quality.clamp(1, 100) as u32;
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let base = if chroma { &CHROMA_TABLE } else { &LUMA_TABLE };
    let mut t = [0.0; 64];
    for i in 0..64 {
        t[i] = ((base[i] as u32 * scale + 50) / 100).clamp(1, 255) as f64;
    }
    t[0] = t[0].min(MAX_DC_STEP);
    t
}

/// Full-range YCbCr, centred on 0.
fn to_ycc([r, g, b]: [f64; 3]) -> [f64; 3] {
    [
        0.299 * r + 0.587 * g + 0.114 * b - 128.0,
        -0.168736 * r - 0.331264 * g + 0.5 * b,
        0.5 * r - 0.418688 * g - 0.081312 * b,
    ]
}

fn from_ycc([y, cb, cr]: [f64; 3]) -> [f64; 3] {
    let y = y + 128.0;
    [y + 1.402 * cr, y - 0.344136 * cb - 0.714136 * cr, y + 1.772 * cb]
}

fn dct_basis() -> [[f64; 8]; 8] {
    let mut c = [[0.0; 8]; 8];
    for (k, row) in c.iter_mut().enumerate() {
        let a = if k == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
        for (n, v) in row.iter_mut().enumerate() {
            *v = a * (std::f64::consts::PI * (2 * n + 1) as f64 * k as f64 / 16.0).cos();
        }
    }
    c
}

fn dct2(block: &[f64; 64], c: &[[f64; 8]; 8], inverse: bool) -> [f64; 64] {
    let mut tmp = [0.0; 64];
    let mut out = [0.0; 64];
    // rows then columns
    for y in 0..8 {
        for k in 0..8 {
            tmp[y * 8 + k] = (0..8)
                .map(|n| if inverse { c[n][k] } else { c[k][n] } * block[y * 8 + n])
                .sum();
        }
    }
    for x in 0..8 {
        for k in 0..8 {
            out[k * 8 + x] = (0..8)
                .map(|n| if inverse { c[n][k] } else { c[k][n] } * tmp[n * 8 + x])
                .sum();
        }
    }
    out
}

fn put_varint(out: &mut Vec<u8>, mut v: u64) {
    while v >= 0x80 {
        out.push((v as u8 & 0x7f) | 0x80);
        v >>= 7;
    }
    out.push(v as u8);
}

fn get_varint(bytes: &[u8], pos: &mut usize) -> Result<u64, CompressError> {
    let mut v = 0u64;
    for shift in (0..64).step_by(7) {
        let b = *bytes
            .get(*pos)
            .ok_or_else(|| CompressError::Truncated("dct coefficients".into()))?;
        *pos += 1;
        v |= ((b & 0x7f) as u64) << shift;
        if b & 0x80 == 0 {
            return Ok(v);
        }
    }
    Err(CompressError::Corrupt("varint overflow".into()))
}

fn zz(v: i64) -> u64 {
    ((v << 1) ^ (v >> 63)) as u64
}

fn unzz(v: u64) -> i64 {
    (v >> 1) as i64 ^ -((v & 1) as i64)
}

/// 8×8 block DCT over Y, Cb and Cr planes with quality-scaled quantization;
/// edges are padded by replication and cropped on decode.
pub struct Dct8Codec;

impl KeyframeCodec for Dct8Codec {
    fn id(&self) -> u8 {
        1
    }
    fn name(&self) -> &'static str {
        "dct8"
    }
    fn encode(&self, img: &Tensor<f32>, quality: u8) -> Result<Vec<u8>, CompressError> {
        if !(1..=100).contains(&quality) {
            return Err(CompressError::InvalidArgument(format!("quality must be in 1..=100, got {quality}")));
        }
        let (mut out, h, w) = header(self.id(), img)?;
        out.push(quality);
        let tables = [quant_table(quality, false), quant_table(quality, true)];
        let basis = dct_basis();
        let (bh, bw) = (h.div_ceil(8), w.div_ceil(8));
        let src = img.data();
        let mut planes = vec![vec![0.0; h * w]; 3];
        for i in 0..h * w {
            let ycc = to_ycc(std::array::from_fn(|c| to_u8(src[c * h * w + i] as f64) as f64));
            for c in 0..3 {
                planes[c][i] = ycc[c];
            }
        }
        let mut coefs = Vec::new();
        for (c, plane) in planes.iter().enumerate() {
            let table = &tables[(c > 0) as usize];
            let mut prev_dc = 0i64;
            for by in 0..bh {
                for bx in 0..bw {
                    let mut block = [0.0; 64];
                    for y in 0..8 {
                        for x in 0..8 {
                            let (sy, sx) = ((by * 8 + y).min(h - 1), (bx * 8 + x).min(w - 1));
                            block[y * 8 + x] = plane[sy * w + sx];
                        }
                    }
                    let f = dct2(&block, &basis, false);
                    let q: Vec<i64> = ZIGZAG.iter().map(|&i| (f[i] / table[i]).round() as i64).collect();
                    let last = q.iter().rposition(|v| *v != 0).map_or(0, |p| p + 1);
                    put_varint(&mut coefs, last as u64);
                    for (k, &v) in q[..last].iter().enumerate() {
                        let v = if k == 0 { v - prev_dc } else { v };
                        put_varint(&mut coefs, zz(v));
                    }
                    prev_dc = if last > 0 { q[0] } else { 0 };
                }
            }
        }
        out.extend_from_slice(&(coefs.len() as u32).to_le_bytes());
        out.extend_from_slice(&huffman::encode(&coefs));
        Ok(out)
    }
    fn decode(&self, bytes: &[u8]) -> Result<Tensor<f32>, CompressError> {
        let (h, w, body) = read_header(bytes, self.id())?;
        if body.len() < 5 {
            return Err(CompressError::Truncated("dct8 header".into()));
        }
        let tables = [quant_table(body[0], false), quant_table(body[0], true)];
        let n = u32::from_le_bytes(body[1..5].try_into().unwrap()) as usize;
        let coefs = huffman::decode(&body[5..], n)?;
        let basis = dct_basis();
        let (bh, bw) = (h.div_ceil(8), w.div_ceil(8));
        let mut planes = vec![vec![0.0; h * w]; 3];
        let mut pos = 0;
        for (c, plane) in planes.iter_mut().enumerate() {
            let table = &tables[(c > 0) as usize];
            let mut prev_dc = 0i64;
            for by in 0..bh {
                for bx in 0..bw {
                    let last = get_varint(&coefs, &mut pos)? as usize;
                    if last > 64 {
                        return Err(CompressError::Corrupt("block coefficient count above 64".into()));
                    }
                    let mut f = [0.0; 64];
                    let mut dc = 0;
                    for k in 0..last {
                        let mut v = unzz(get_varint(&coefs, &mut pos)?);
                        if k == 0 {
                            v += prev_dc;
                            dc = v;
                        }
                        f[ZIGZAG[k]] = v as f64 * table[ZIGZAG[k]];
                    }
                    prev_dc = dc;
                    let px = dct2(&f, &basis, true);
                    for y in 0..8 {
                        for x in 0..8 {
                            let (sy, sx) = (by * 8 + y, bx * 8 + x);
                            if sy < h && sx < w {
                                plane[sy * w + sx] = px[y * 8 + x];
                            }
                        }
                    }
                }
            }
        }
        let mut data = vec![0.0f32; 3 * h * w];
        for i in 0..h * w {
            let rgb = from_ycc([planes[0][i], planes[1][i], planes[2][i]]);
            for c in 0..3 {
                data[c * h * w + i] = rgb[c].round().clamp(0.0, 255.0) as f32 / 255.0;
            }
        }
        Ok(Tensor::from_vec(&[3, h, w], data)?)
    }
}

/// Codecs by name and by id.
pub struct CodecRegistry {
    by_name: BTreeMap<&'static str, Box<dyn KeyframeCodec>>,
}

impl CodecRegistry {
    pub fn builtin() -> Self {
        let mut r = Self {
            by_name: BTreeMap::new(),
        };
        r.register(Box::new(RawCodec));
        r.register(Box::new(Dct8Codec));
        r
    }

    pub fn register(&mut self, codec: Box<dyn KeyframeCodec>) {
        self.by_name.insert(codec.name(), codec);
    }

    pub fn get(&self, name: &str) -> Result<&dyn KeyframeCodec, CompressError> {
        self.by_name
            .get(name)
            .map(|c| c.as_ref())
            .ok_or_else(|| CompressError::UnknownCodec(name.to_string()))
    }

    pub fn by_id(&self, id: u8) -> Result<&dyn KeyframeCodec, CompressError> {
        self.by_name
            .values()
            .find(|c| c.id() == id)
            .map(|c| c.as_ref())
            .ok_or_else(|| CompressError::UnknownCodec(format!("id {id}")))
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.by_name.keys().copied().collect()
    }

    /// Decodes a self-describing payload.
    pub fn decode(&self, bytes: &[u8]) -> Result<Tensor<f32>, CompressError> {
        let id = *bytes
            .first()
            .ok_or_else(|| CompressError::Truncated("keyframe payload".into()))?;
        self.by_id(id)?.decode(bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::psnr;

    fn texture(h: usize, w: usize) -> Tensor<f32> {
        Tensor::from_fn(&[3, h, w], |i| {
            let (c, y, x) = (i / (h * w), (i / w) % h, i % w);
            let v = 0.5
                + 0.25 * ((x as f32 * 0.35 + c as f32).sin() * (y as f32 * 0.22).cos())
                + 0.1 * ((x * 7 + y * 13 + c * 5) % 11) as f32 / 11.0;
            (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
        })
    }

    #[test]
    fn raw_is_bit_exact() {
        let img = texture(9, 13);
        let reg = CodecRegistry::builtin();
        let b = reg.get("raw").unwrap().encode(&img, 0).unwrap();
        assert_eq!(b.len(), 5 + 3 * 9 * 13);
        assert_eq!(reg.decode(&b).unwrap(), img);
    }

    #[test]
    fn dct8_constant_image_is_exact_and_small() {
        for level in [0u8, 37, 128, 200, 255] {
            let img = Tensor::full(&[3, 16, 24], level as f32 / 255.0);
            for q in [1, 30, 90] {
                let b = Dct8Codec.encode(&img, q).unwrap();
                assert_eq!(Dct8Codec.decode(&b).unwrap(), img, "level {level} q {q}");
                assert!(b.len() * 20 < 3 * 16 * 24);
            }
        }
    }

    #[test]
    fn dct8_quality_ladder_is_monotone() {
        let img = texture(32, 40);
        let scores: Vec<f64> = [30, 60, 90]
            .iter()
            .map(|&q| psnr(&Dct8Codec.decode(&Dct8Codec.encode(&img, q).unwrap()).unwrap(), &img).unwrap())
            .collect();
        assert!(scores[0] <= scores[1] && scores[1] <= scores[2], "{scores:?}");
        assert!(scores[0] > 25.0);
    }

    #[test]
    fn dct8_handles_unaligned_sizes() {
        let img = texture(13, 21);
        let back = Dct8Codec.decode(&Dct8Codec.encode(&img, 95).unwrap()).unwrap();
        assert_eq!(back.shape(), &[3, 13, 21]);
        assert!(psnr(&back, &img).unwrap() > 30.0);
    }

    #[test]
    fn colour_transform_inverts() {
        for rgb in [[0.0, 0.0, 0.0], [255.0, 255.0, 255.0], [255.0, 0.0, 0.0], [12.0, 200.0, 77.0]] {
            let back = from_ycc(to_ycc(rgb));
            for (a, b) in rgb.iter().zip(back) {
                assert!((a - b).abs() < 1e-3, "{rgb:?} -> {back:?}");
            }
        }
    }

    #[test]
    fn dct_is_orthonormal() {
        let c = dct_basis();
        let block: [f64; 64] = std::array::from_fn(|i| ((i * 37) % 17) as f64 - 8.0);
        let back = dct2(&dct2(&block, &c, false), &c, true);
        for (a, b) in block.iter().zip(back) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn registry_and_errors() {
        let reg = CodecRegistry::builtin();
        assert_eq!(reg.names(), vec!["dct8", "raw"]);
        assert!(matches!(reg.get("jpeg"), Err(CompressError::UnknownCodec(_))));
        assert!(reg.by_id(7).is_err());
        assert!(reg.decode(&[1, 0]).is_err());
        let img = texture(8, 8);
        let b = Dct8Codec.encode(&img, 50).unwrap();
        assert!(Dct8Codec.decode(&b[..b.len() - 2]).is_err());
        assert!(Dct8Codec.encode(&img, 0).is_err());
    }
}
