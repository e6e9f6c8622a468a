//! Keyframe-conditioned implicit neural video representation.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: dense tensors, a reverse-mode autodiff tape and a
//!   finite-difference gradient checker.
//! * [`model`]: the keyframe-conditioned decoder and the time-only baseline,
//!   both selectable by name through [`model::ModelRegistry`].
//! * [`train`]: the L1 + SSIM objective, AdamW, the warmup/cosine schedule,
//!   clip layout, synthetic corpora and inpainting masks.
//! * [`compress`]: weight quantization, canonical Huffman coding, keyframe
//!   codecs and the bundle file.
//! * [`metrics`]: PSNR, SSIM, MS-SSIM and rate-distortion rows.
//! * [`io`]: PPM frame directories and atomic file writes.

pub mod compress;
pub mod io;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod train;

pub use tensor::{Dtype, Scalar, Tape, Tensor, Var};
