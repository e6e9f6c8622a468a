//! Post-training compression: per-tensor weight quantization, canonical
//! Huffman coding, keyframe codecs and the bundle file with its byte ledger.

mod bundle;
mod codec;
pub mod huffman;
mod quant;

pub use bundle::{
    bpp, compress_model, quantize_roundtrip, BundleConfig, CompressedBundle, KeyframeEntry, KeyframeInput, SizeLedger,
    TensorMeta, VideoEntry, MAGIC, VERSION,
};
pub use codec::{quant_table, CodecRegistry, Dct8Codec, KeyframeCodec, RawCodec};
pub use quant::{quantize, QuantizedTensor};

#[derive(Debug, thiserror::Error)]
pub enum CompressError {
    #[error("truncated data while reading {0}")]
    Truncated(String),
    #[error("corrupt data: {0}")]
    Corrupt(String),
    #[error("unsupported bundle version {0}")]
    Version(u32),
    #[error("unknown keyframe codec `{0}`")]
    UnknownCodec(String),
    #[error("{0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
}
