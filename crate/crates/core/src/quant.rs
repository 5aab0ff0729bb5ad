//! Per-tensor linear quantization.
//!
//! Two integer codes appear throughout:
//! - the round-to-nearest code `round_tn(a / s)` (inputs always use this one)
//! - the floor code `floor(a / s)`, to which adaptive rounding adds a bit `v`
//!
//! `round_tn` rounds halves away from zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_BITS: u8 = 8;

/// Scale, zero-point and clip range of one tensor.
///
/// `min`/`max` are the observed range the scale was derived from. Stored codes
/// are `clip(k + zero_point, qmin, qmax)` where `k` is a rounding or floor
/// code, and dequantize as `scale * (code - zero_point)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub scale: f64,
    pub zero_point: i32,
    pub bits: u8,
    pub min: f64,
    pub max: f64,
}

impl QuantParams {
    /// Parameters with an explicit scale and zero-point.
    pub fn with_scale(scale: f64, zero_point: i32, bits: u8) -> Result<Self> {
        check_bits(bits)?;
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidQuantization(format!("scale must be positive, got {scale}")));
        }
        Ok(Self {
            scale,
            zero_point,
            bits,
            min: f64::NAN,
            max: f64::NAN,
        })
    }

    pub fn qmin(&self) -> i32 {
        -(1 << (self.bits - 1))
    }

    pub fn qmax(&self) -> i32 {
        (1 << (self.bits - 1)) - 1
    }

    pub fn clip(&self, code: i64) -> i32 {
        code.clamp(self.qmin() as i64, self.qmax() as i64) as i32
    }

    pub fn dequantize_code(&self, code: i32) -> f64 {
        self.scale * (code as i64 - self.zero_point as i64) as f64
    }
}

fn check_bits(bits: u8) -> Result<()> {
    if !(1..=MAX_BITS).contains(&bits) {
        return Err(Error::InvalidQuantization(format!(
            "bit width must be in 1..={MAX_BITS}, got {bits}"
        )));
    }
    Ok(())
}

/// Derives per-tensor parameters from the range of `values`.
///
/// `s = (max - min) / (2^bits - 1)`. The zero-point places the lowest floor
/// code at `qmin`, so every code the rounding choices can produce fits except
/// the top element rounded up, which saturates. A constant tensor gets `s = 1`
/// and zero-point 0.
pub fn make_quant_params<'a, I>(values: I, bits: u8) -> Result<QuantParams>
where
    I: IntoIterator<Item = &'a f64>,
{
    check_bits(bits)?;
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut count = 0usize;
    for &v in values {
        if !v.is_finite() {
            return Err(Error::InvalidQuantization(format!("non-finite value {v}")));
        }
        min = min.min(v);
        max = max.max(v);
        count += 1;
    }
    if count == 0 {
        return Err(Error::Empty("tensor"));
    }
    let mut params = if max > min {
        let scale = (max - min) / ((1u32 << bits) - 1) as f64;
        let lowest = floor_code(min, scale);
        let qmin = -(1i64 << (bits - 1));
        let zero_point = i32::try_from(qmin - lowest)
            .map_err(|_| Error::InvalidQuantization("zero-point out of range".into()))?;
        QuantParams::with_scale(scale, zero_point, bits)?
    } else {
        QuantParams::with_scale(1.0, 0, bits)?
    };
    params.min = min;
    params.max = max;
    Ok(params)
}

/// Round half away from zero.
pub fn round_tn(x: f64) -> f64 {
    x.round()
}

/// `floor(a / s)`.
pub fn floor_code(a: f64, s: f64) -> i64 {
    (a / s).floor() as i64
}

/// `round_tn(a / s)`.
pub fn rtn_code(a: f64, s: f64) -> i64 {
    round_tn(a / s) as i64
}

/// The rounding bit that makes floor-plus-bit agree with round-to-nearest.
pub fn rtn_bit(a: f64, s: f64) -> u8 {
    (rtn_code(a, s) - floor_code(a, s)) as u8
}

pub fn rtn_quantize(a: f64, p: &QuantParams) -> i32 {
    p.clip(rtn_code(a, p.scale) + p.zero_point as i64)
}

pub fn ada_quantize(a: f64, v: u8, p: &QuantParams) -> i32 {
    p.clip(floor_code(a, p.scale) + v as i64 + p.zero_point as i64)
}

/// `s * round_tn(a / s)`, unclipped.
pub fn rtn_dequantize(a: f64, p: &QuantParams) -> f64 {
    p.scale * rtn_code(a, p.scale) as f64
}

/// `s * (floor(a / s) + v)`, unclipped.
pub fn ada_dequantize(a: f64, v: u8, p: &QuantParams) -> f64 {
    p.scale * (floor_code(a, p.scale) + v as i64) as f64
}

/// Scales of one layer: weights, bias and layer input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerScales {
    pub weight: QuantParams,
    pub bias: QuantParams,
    pub input: QuantParams,
}

impl LayerScales {
    /// Weight and bias ranges come from the layer itself, the input range
    /// from every entry of the calibration inputs.
    pub fn calibrate(weights: &[f64], bias: &[f64], inputs: &[Vec<f64>], bits: u8) -> Result<Self> {
        Ok(Self {
            weight: make_quant_params(weights, bits)?,
            bias: make_quant_params(bias, bits)?,
            input: make_quant_params(inputs.iter().flatten(), bits)?,
        })
    }

    /// `s_w * s_x`, the factor between rescaled and real pre-activations.
    pub fn product(&self) -> f64 {
        self.weight.scale * self.input.scale
    }

    /// `r = s_b / (s_x s_w)`.
    pub fn ratio(&self) -> f64 {
        self.bias.scale / (self.input.scale * self.weight.scale)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(scale: f64) -> QuantParams {
        QuantParams::with_scale(scale, 0, 8).unwrap()
    }

    #[test]
    fn scale_from_range() {
        let q = make_quant_params(&[-1.0, 0.2, 1.0], 8).unwrap();
        assert_eq!(q.scale, 2.0 / 255.0);
        let q = make_quant_params(&[0.0, 3.0], 2).unwrap();
        assert_eq!(q.scale, 1.0);
        assert_eq!((q.qmin(), q.qmax()), (-2, 1));
    }

    #[test]
    fn degenerate_range() {
        let q = make_quant_params(&[0.5, 0.5], 4).unwrap();
        assert_eq!(q.scale, 1.0);
        assert_eq!(q.zero_point, 0);
        assert_eq!(ada_quantize(0.5, 0, &q), 0);
        let zeros = make_quant_params(&[0.0; 4], 4).unwrap();
        assert_eq!(rtn_quantize(0.0, &zeros), 0);
        assert_eq!(ada_quantize(0.0, 0, &zeros), 0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(make_quant_params(&[], 8), Err(Error::Empty(_))));
        assert!(make_quant_params(&[1.0, f64::INFINITY], 8).is_err());
        assert!(make_quant_params(&[1.0, f64::NAN], 8).is_err());
        assert!(make_quant_params(&[0.0, 1.0], 0).is_err());
        assert!(make_quant_params(&[0.0, 1.0], 9).is_err());
    }

    #[test]
    fn one_bit_range() {
        let q = make_quant_params(&[-1.0, 1.0], 1).unwrap();
        assert_eq!((q.qmin(), q.qmax()), (-1, 0));
        for a in [-1.0, -0.3, 0.0, 0.7, 1.0] {
            for v in 0..2 {
                assert!((-1..=0).contains(&ada_quantize(a, v, &q)));
            }
            assert!((-1..=0).contains(&rtn_quantize(a, &q)));
        }
    }

    #[test]
    fn rtn_examples() {
        assert_eq!(rtn_quantize(0.3, &p(0.25)), 1);
        assert_eq!(rtn_quantize(0.125, &p(0.25)), 1);
        assert_eq!(rtn_quantize(1e6, &p(0.25)), 127);
        assert_eq!(rtn_quantize(-1e6, &p(0.25)), -128);
        assert_eq!(rtn_dequantize(0.3, &p(0.25)), 0.25);
        assert_eq!(rtn_dequantize(0.75, &p(0.25)), 0.75);
        assert_eq!(rtn_dequantize(-0.3, &p(0.25)), -0.25);
    }

    #[test]
    fn ada_examples() {
        assert_eq!(ada_dequantize(0.3, 0, &p(0.25)), 0.25);
        assert_eq!(ada_dequantize(0.3, 1, &p(0.25)), 0.5);
        assert_eq!(ada_dequantize(-0.3, 0, &p(0.25)), -0.5);
        assert_eq!(ada_dequantize(-0.3, 1, &p(0.25)), -0.25);
        assert_eq!(ada_dequantize(0.75, 0, &p(0.25)), 0.75);
    }

    #[test]
    fn code_examples() {
        assert_eq!(floor_code(0.3, 0.25), 1);
        assert_eq!(floor_code(-0.3, 0.25), -2);
        assert_eq!(floor_code(0.5, 0.5), 1);
        assert_eq!(rtn_code(0.3, 0.25), 1);
        assert_eq!(rtn_code(0.375, 0.25), 2);
        assert_eq!(rtn_code(0.0, 0.37), 0);
        assert_eq!(rtn_code(-0.375, 0.25), -2);
    }

    #[test]
    fn zero_point_maps_range_onto_codes() {
        let q = make_quant_params(&[-0.1, 0.2, 0.5], 2).unwrap();
        assert_eq!(rtn_quantize(-0.1, &q), q.qmin());
        assert_eq!(ada_quantize(-0.1, 0, &q), q.qmin());
        assert!((q.dequantize_code(rtn_quantize(0.2, &q)) - rtn_dequantize(0.2, &q)).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn rtn_roundtrip_within_half_step(
            lo in -10f64..0.0, width in 0.01f64..20.0, t in 0f64..=1.0, bits in 1u8..=8,
        ) {
            let hi = lo + width;
            let q = make_quant_params(&[lo, hi], bits).unwrap();
            let a = lo + t * width;
            prop_assert!((rtn_dequantize(a, &q) - a).abs() <= q.scale / 2.0 + 1e-12);
        }

        #[test]
        fn ada_brackets_value(a in -100f64..100.0, s in 0.001f64..5.0) {
            let q = QuantParams::with_scale(s, 0, 8).unwrap();
            let down = ada_dequantize(a, 0, &q);
            let up = ada_dequantize(a, 1, &q);
            prop_assert!(down <= a + 1e-12 && a <= up + 1e-12);
            prop_assert!((up - down - s).abs() <= 1e-9 * (1.0 + a.abs()));
            prop_assert!((a - down).abs().min((up - a).abs()) <= s / 2.0 + 1e-12);
        }

        #[test]
        fn rtn_bit_reproduces_rtn(a in -100f64..100.0, s in 0.001f64..5.0) {
            let q = QuantParams::with_scale(s, 0, 8).unwrap();
            let v = rtn_bit(a, s);
            prop_assert!(v <= 1);
            prop_assert_eq!(ada_dequantize(a, v, &q), rtn_dequantize(a, &q));
        }

        #[test]
        fn codes_stay_in_range(a in -1e4f64..1e4, v in 0u8..2, bits in 1u8..=8) {
            let q = make_quant_params(&[-3.0, 5.0], bits).unwrap();
            let (lo, hi) = (q.qmin(), q.qmax());
            prop_assert!((lo..=hi).contains(&rtn_quantize(a, &q)));
            prop_assert!((lo..=hi).contains(&ada_quantize(a, v, &q)));
        }
    }
}
