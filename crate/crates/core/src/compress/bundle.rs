//! Bundle file:
//!
//! ```text
//! "DNVB1" | u32 version | u64 json_len | json
//! u32 tensor_count | per tensor: u32 name_len | name | u8 dtype | u32 rank | u64 dims[rank]
//!                                | f64 scale | f64 zero_point | u64 symbol_count
//! u64 stream_len | entropy-coded symbol bytes of all tensors, in order
//! u32 keyframe_count | per keyframe: u32 id_len | video_id | u32 frame | u8 codec_id | u64 len | payload
//! ```
//!
//! Everything up to the end of the symbol stream counts as model bytes, the
//! keyframe table as keyframe bytes.

use serde::{Deserialize, Serialize};

use super::codec::CodecRegistry;
use super::quant::{check_bits, quantize, QuantizedTensor};
use super::{huffman, CompressError};
use crate::model::{ModelConfig, ParamStore};
use crate::tensor::{Dtype, Scalar, Tensor};

pub const MAGIC: &[u8; 5] = b"DNVB1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoEntry {
    pub id: String,
    /// Frames reconstructed from the bundle.
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleConfig {
    pub model: ModelConfig,
    pub bits: u32,
    pub videos: Vec<VideoEntry>,
}

impl BundleConfig {
    pub fn total_pixels(&self) -> u64 {
        self.videos.iter().map(|v| (v.frames * v.height * v.width) as u64).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorMeta {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub scale: f64,
    pub zero_point: f64,
    pub symbols: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeyframeEntry {
    pub video_id: String,
    pub frame: u32,
    pub codec_id: u8,
    pub payload: Vec<u8>,
}

/// Byte counts of the two bundle sections.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SizeLedger {
    pub model_bytes: u64,
    pub keyframe_bytes: u64,
}

impl SizeLedger {
    pub fn total(&self) -> u64 {
        self.model_bytes + self.keyframe_bytes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedBundle {
    pub config: BundleConfig,
    pub tensors: Vec<TensorMeta>,
    pub stream: Vec<u8>,
    pub keyframes: Vec<KeyframeEntry>,
}

/// A keyframe to store: `img` is frame `frame` of video `video_id`.
pub struct KeyframeInput<'a> {
    pub video_id: &'a str,
    pub frame: u32,
    pub img: &'a Tensor<f32>,
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

impl CompressedBundle {
    pub fn to_bytes(&self) -> Result<Vec<u8>, CompressError> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let json = serde_json::to_vec(&self.config).map_err(|e| CompressError::Corrupt(e.to_string()))?;
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            put_str(&mut out, &t.name);
            out.push(t.dtype.tag());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&t.scale.to_le_bytes());
            out.extend_from_slice(&t.zero_point.to_le_bytes());
            out.extend_from_slice(&t.symbols.to_le_bytes());
        }
        out.extend_from_slice(&(self.stream.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.stream);
        out.extend_from_slice(&(self.keyframes.len() as u32).to_le_bytes());
        for k in &self.keyframes {
            put_str(&mut out, &k.video_id);
            out.extend_from_slice(&k.frame.to_le_bytes());
            out.push(k.codec_id);
            out.extend_from_slice(&(k.payload.len() as u64).to_le_bytes());
            out.extend_from_slice(&k.payload);
        }
        Ok(out)
    }

    /// Section sizes of the serialized bundle.
    pub fn ledger(&self) -> Result<SizeLedger, CompressError> {
        let keyframe_bytes = 4 + self
            .keyframes
            .iter()
            .map(|k| (4 + k.video_id.len() + 4 + 1 + 8 + k.payload.len()) as u64)
            .sum::<u64>();
        let total = self.to_bytes()?.len() as u64;
        Ok(SizeLedger {
            model_bytes: total - keyframe_bytes,
            keyframe_bytes,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CompressError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(5, "magic")? != MAGIC {
            return Err(CompressError::Corrupt("not a bundle (bad magic)".into()));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(CompressError::Version(version));
        }
        let jlen = r.u64("config length")? as usize;
        let config: BundleConfig =
            serde_json::from_slice(r.take(jlen, "config")?).map_err(|e| CompressError::Corrupt(format!("config: {e}")))?;
        let nt = r.u32("tensor count")? as usize;
        let mut tensors = Vec::with_capacity(nt.min(1 << 16));
        for _ in 0..nt {
            let name = r.string("tensor name")?;
            let tag = r.take(1, "dtype")?[0];
            let dtype = Dtype::from_tag(tag).ok_or_else(|| CompressError::Corrupt(format!("dtype tag {tag}")))?;
            let rank = r.u32("rank")? as usize;
            let mut shape = Vec::with_capacity(rank.min(16));
            for _ in 0..rank {
                shape.push(r.u64("dims")? as usize);
            }
            tensors.push(TensorMeta {
                name,
                dtype,
                shape,
                scale: r.f64("scale")?,
                zero_point: r.f64("zero point")?,
                symbols: r.u64("symbol count")?,
            });
        }
        let slen = r.u64("stream length")? as usize;
        let stream = r.take(slen, "entropy stream")?.to_vec();
        let nk = r.u32("keyframe count")? as usize;
        let mut keyframes = Vec::with_capacity(nk.min(1 << 16));
        for _ in 0..nk {
            let video_id = r.string("video id")?;
            let frame = r.u32("frame index")?;
            let codec_id = r.take(1, "codec id")?[0];
            let len = r.u64("payload length")? as usize;
            keyframes.push(KeyframeEntry {
                video_id,
                frame,
                codec_id,
                payload: r.take(len, "keyframe payload")?.to_vec(),
            });
        }
        if r.pos != bytes.len() {
            return Err(CompressError::Corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            config,
            tensors,
            stream,
            keyframes,
        })
    }

    /// Dequantized parameters in stored order.
    pub fn params<T: Scalar>(&self) -> Result<ParamStore<T>, CompressError> {
        check_bits(self.config.bits)?;
        let width = QuantizedTensor::symbol_width(self.config.bits);
        let count: u64 = self.tensors.iter().map(|t| t.symbols).sum();
        let raw = huffman::decode(&self.stream, count as usize * width)?;
        let mut pos = 0;
        let mut out = ParamStore::new();
        for t in &self.tensors {
            if t.dtype != T::DTYPE {
                return Err(CompressError::Corrupt(format!(
                    "`{}` stored as {:?}, requested {:?}",
                    t.name,
                    t.dtype,
                    T::DTYPE
                )));
            }
            let n = t.symbols as usize;
            if t.shape.iter().product::<usize>() != n {
                return Err(CompressError::Corrupt(format!("`{}`: shape and symbol count disagree", t.name)));
            }
            let bytes = &raw[pos..pos + n * width];
            pos += n * width;
            let symbols = if width == 2 {
                bytes.chunks(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect()
            } else {
                bytes.iter().map(|b| *b as u16).collect()
            };
            let q = QuantizedTensor {
                shape: t.shape.clone(),
                bits: self.config.bits,
                symbols,
                scale: t.scale,
                zero_point: t.zero_point,
            };
            out.insert(t.name.clone(), q.dequantize());
        }
        Ok(out)
    }

    /// Decodes the keyframes of one video, in frame order.
    pub fn keyframes_of(&self, video_id: &str, codecs: &CodecRegistry) -> Result<Vec<(u32, Tensor<f32>)>, CompressError> {
        let mut v: Vec<(u32, Tensor<f32>)> = self
            .keyframes
            .iter()
            .filter(|k| k.video_id == video_id)
            .map(|k| {
                log::debug!("decoding keyframe {}:{}", k.video_id, k.frame);
                let img = codecs.by_id(k.codec_id)?.decode(&k.payload)?;
                Ok((k.frame, img))
            })
            .collect::<Result<_, CompressError>>()?;
        v.sort_by_key(|e| e.0);
        Ok(v)
    }

    pub fn bpp(&self) -> Result<f64, CompressError> {
        bpp(&self.ledger()?, self.config.total_pixels())
    }
}

/// `8·(model_bytes + keyframe_bytes) / total_pixels`.
pub fn bpp(ledger: &SizeLedger, total_pixels: u64) -> Result<f64, CompressError> {
    if total_pixels == 0 {
        return Err(CompressError::InvalidArgument("total pixel count is zero".into()));
    }
    Ok(8.0 * ledger.total() as f64 / total_pixels as f64)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CompressError> {
        if self.bytes.len() - self.pos < n {
            return Err(CompressError::Truncated(what.to_string()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self, what: &str) -> Result<u32, CompressError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn u64(&mut self, what: &str) -> Result<u64, CompressError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn f64(&mut self, what: &str) -> Result<f64, CompressError> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn string(&mut self, what: &str) -> Result<String, CompressError> {
        let n = self.u32(what)? as usize;
        String::from_utf8(self.take(n, what)?.to_vec()).map_err(|_| CompressError::Corrupt(format!("{what} is not UTF-8")))
    }
}

/// Quantizes and entropy-codes `params`, encodes the keyframes with
/// `codec_name`, and assembles the bundle.
#[allow(clippy::too_many_arguments)]
pub fn compress_model<T: Scalar>(
    params: &ParamStore<T>,
    model: &ModelConfig,
    bits: u32,
    videos: Vec<VideoEntry>,
    keyframes: &[KeyframeInput<'_>],
    codecs: &CodecRegistry,
    codec_name: &str,
    quality: u8,
) -> Result<CompressedBundle, CompressError> {
    check_bits(bits)?;
    let codec = codecs.get(codec_name)?;
    let mut tensors = Vec::with_capacity(params.len());
    let mut raw = Vec::new();
    for (name, t) in params.iter() {
        let q = quantize(t, bits)?;
        let err = q.dequantize::<f64>().max_abs_diff(&t.cast::<f64>());
        debug_assert!(err <= q.scale / 2.0 * (1.0 + 1e-9) + 1e-300, "{name}: {err}");
        q.write_symbols(&mut raw);
        tensors.push(TensorMeta {
            name: name.to_string(),
            dtype: T::DTYPE,
            shape: q.shape.clone(),
            scale: q.scale,
            zero_point: q.zero_point,
            symbols: q.symbols.len() as u64,
        });
    }
    let stream = huffman::encode(&raw);
    let keyframes = keyframes
        .iter()
        .map(|k| {
            Ok(KeyframeEntry {
                video_id: k.video_id.to_string(),
                frame: k.frame,
                codec_id: codec.id(),
                payload: codec.encode(k.img, quality)?,
            })
        })
        .collect::<Result<_, CompressError>>()?;
    Ok(CompressedBundle {
        config: BundleConfig {
            model: model.clone(),
            bits,
            videos,
        },
        tensors,
        stream,
        keyframes,
    })
}

/// In-memory quantize → dequantize of every parameter.
pub fn quantize_roundtrip<T: Scalar>(params: &ParamStore<T>, bits: u32) -> Result<ParamStore<T>, CompressError> {
    let mut out = ParamStore::new();
    for (name, t) in params.iter() {
        out.insert(name.to_string(), quantize(t, bits)?.dequantize());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::dnerv;

    fn fixture(bits: u32, codec: &str) -> (ParamStore<f32>, CompressedBundle, Vec<Tensor<f32>>) {
        let cfg = ModelConfig {
            height: 16,
            width: 16,
            stage_upscales: vec![2, 2],
            stage_channels: vec![6, 4],
            clip_len: 4,
            ..ModelConfig::default()
        };
        let p = dnerv::init_params::<f32>(&cfg, 3).unwrap();
        let kfs: Vec<Tensor<f32>> = (0..2)
            .map(|k| Tensor::from_fn(&[3, 16, 16], |i| ((i * (3 + k)) % 256) as f32 / 255.0))
            .collect();
        let inputs: Vec<KeyframeInput> = kfs
            .iter()
            .enumerate()
            .map(|(i, img)| KeyframeInput {
                video_id: "v0",
                frame: 4 * i as u32,
                img,
            })
            .collect();
        let videos = vec![VideoEntry {
            id: "v0".into(),
            frames: 5,
            height: 16,
            width: 16,
        }];
        let reg = CodecRegistry::builtin();
        let b = compress_model(&p, &cfg, bits, videos, &inputs, &reg, codec, 60).unwrap();
        (p, b, kfs)
    }

    #[test]
    fn decompressed_params_equal_quantize_roundtrip() {
        for bits in [4, 8, 12] {
            let (p, b, _) = fixture(bits, "raw");
            let bytes = b.to_bytes().unwrap();
            let back = CompressedBundle::from_bytes(&bytes).unwrap();
            assert_eq!(back, b);
            assert_eq!(back.params::<f32>().unwrap(), quantize_roundtrip(&p, bits).unwrap());
        }
    }

    #[test]
    fn keyframes_match_direct_decode() {
        let (_, b, kfs) = fixture(8, "dct8");
        let reg = CodecRegistry::builtin();
        let got = b.keyframes_of("v0", &reg).unwrap();
        assert_eq!(got.len(), 2);
        for ((f, img), (i, src)) in got.iter().zip(kfs.iter().enumerate()) {
            assert_eq!(*f, 4 * i as u32);
            let direct = reg.get("dct8").unwrap().encode(src, 60).unwrap();
            assert_eq!(*img, reg.decode(&direct).unwrap());
        }
        let (_, raw, kfs) = fixture(8, "raw");
        assert_eq!(raw.keyframes_of("v0", &reg).unwrap()[1].1, kfs[1]);
    }

    #[test]
    fn ledger_matches_sections_and_is_deterministic() {
        let (_, b, _) = fixture(8, "raw");
        let bytes = b.to_bytes().unwrap();
        assert_eq!(bytes, fixture(8, "raw").1.to_bytes().unwrap());
        let l = b.ledger().unwrap();
        assert_eq!(l.total(), bytes.len() as u64);
        // the keyframe section starts right after the stream
        let stream_end = l.model_bytes as usize;
        let count = u32::from_le_bytes(bytes[stream_end..stream_end + 4].try_into().unwrap());
        assert_eq!(count, 2);
        let expect = 8.0 * bytes.len() as f64 / (5 * 16 * 16) as f64;
        assert_eq!(b.bpp().unwrap(), expect);
    }

    #[test]
    fn bpp_arithmetic() {
        let l = SizeLedger {
            model_bytes: 600,
            keyframe_bytes: 400,
        };
        assert_eq!(bpp(&l, 10 * 32 * 40).unwrap(), 0.625);
        assert_eq!(bpp(&l, 20 * 32 * 40).unwrap(), 0.3125);
        assert!(bpp(&l, 0).is_err());
    }

    #[test]
    fn corrupt_bundles_are_rejected() {
        let (_, b, _) = fixture(8, "raw");
        let mut bytes = b.to_bytes().unwrap();
        assert!(matches!(
            CompressedBundle::from_bytes(&bytes[..bytes.len() - 1]),
            Err(CompressError::Truncated(_))
        ));
        bytes[5] = 9;
        assert!(matches!(CompressedBundle::from_bytes(&bytes), Err(CompressError::Version(9))));
        assert!(CompressedBundle::from_bytes(b"DNVX1").is_err());
        assert!(b.params::<f64>().is_err());
    }
}
