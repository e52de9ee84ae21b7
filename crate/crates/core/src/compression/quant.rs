use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// A tensor mapped onto `2^bits` evenly spaced levels between its min and max.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantTensor {
    pub shape: Vec<usize>,
    pub bits: u8,
    pub theta_min: f64,
    /// Level spacing `(max - min) / (2^bits - 1)`; zero for a constant tensor.
    pub scale: f64,
    pub codes: Vec<u16>,
}

pub fn check_bits(bits: u8) -> Result<()> {
    if (1..=16).contains(&bits) {
        Ok(())
    } else {
        Err(Error::config(format!("quantization bits must lie in 1..=16, got {bits}")))
    }
}

/// Per-tensor affine quantization with round-half-to-even.
pub fn quantize(t: &Tensor<f32>, bits: u8) -> Result<QuantTensor> {
    check_bits(bits)?;
    if let Some(v) = t.data().iter().find(|v| !v.is_finite()) {
        return Err(Error::Data(format!("cannot quantize non-finite value {v}")));
    }
    let (lo, hi) =
        t.data().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v as f64), hi.max(v as f64)));
    let top = ((1u32 << bits) - 1) as f64;
    let scale = if hi > lo { (hi - lo) / top } else { 0.0 };
    let codes = t
        .data()
        .iter()
        .map(|&v| if scale == 0.0 { 0 } else { ((v as f64 - lo) / scale).round_ties_even().clamp(0.0, top) as u16 })
        .collect();
    Ok(QuantTensor { shape: t.shape().to_vec(), bits, theta_min: lo, scale, codes })
}

/// `theta_min + code * scale`, evaluated in `f64` and rounded to `f32`.
pub fn dequantize(q: &QuantTensor) -> Result<Tensor<f32>> {
    let data = q.codes.iter().map(|&c| (q.theta_min + c as f64 * q.scale) as f32).collect();
    Tensor::new(q.shape.clone(), data)
}
