use super::CompressError;
use crate::tensor::{Scalar, Tensor};

/// Affine min–max quantized tensor: `value = zero_point + symbol·scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    pub shape: Vec<usize>,
    pub bits: u32,
    pub symbols: Vec<u16>,
    pub scale: f64,
    pub zero_point: f64,
}

impl QuantizedTensor {
    /// Bytes per symbol in the entropy stream.
    pub fn symbol_width(bits: u32) -> usize {
        if bits > 8 {
            2
        } else {
            1
        }
    }

    pub fn dequantize<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_vec(
            &self.shape,
            self.symbols
                .iter()
                .map(|&s| T::of(self.zero_point + s as f64 * self.scale))
                .collect(),
        )
        .expect("quantized shape matches symbols")
    }

    /// Appends the symbols as bytes (little-endian pairs above 8 bits).
    pub fn write_symbols(&self, out: &mut Vec<u8>) {
        for &s in &self.symbols {
            if self.bits > 8 {
                out.extend_from_slice(&s.to_le_bytes());
            } else {
                out.push(s as u8);
            }
        }
    }
}

pub fn check_bits(bits: u32) -> Result<(), CompressError> {
    if !(1..=16).contains(&bits) {
        return Err(CompressError::InvalidArgument(format!("bits must be in 1..=16, got {bits}")));
    }
    Ok(())
}

pub fn quantize<T: Scalar>(t: &Tensor<T>, bits: u32) -> Result<QuantizedTensor, CompressError> {
    check_bits(bits)?;
    if !t.is_finite() {
        return Err(CompressError::InvalidArgument("cannot quantize non-finite values".into()));
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in t.data() {
        lo = lo.min(v.as_f64());
        hi = hi.max(v.as_f64());
    }
    let levels = ((1u32 << bits) - 1) as f64;
    let scale = (hi - lo) / levels;
    let symbols = if scale == 0.0 {
        vec![0; t.numel()]
    } else {
        t.data()
            .iter()
            .map(|v| ((v.as_f64() - lo) / scale).round().clamp(0.0, levels) as u16)
            .collect()
    };
    Ok(QuantizedTensor {
        shape: t.shape().to_vec(),
        bits,
        symbols,
        scale,
        zero_point: lo,
    })
}
