#![allow(dead_code)]
// Oracles index like the formulas they transcribe.
#![allow(clippy::needless_range_loop)]

use std::path::PathBuf;

use quboround::quant::{ada_dequantize, floor_code, make_quant_params, rtn_code, rtn_dequantize};
use quboround::{Activation, DenseLayer, DenseNetwork, LayerScales, Sample};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

pub fn random_layer(rng: &mut ChaCha8Rng, n: usize, f: usize) -> DenseLayer {
    let w = (0..n).map(|_| (0..f).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let b = (0..n).map(|_| rng.random_range(-0.5..0.5)).collect();
    DenseLayer::new(w, b, Activation::None).unwrap()
}

pub fn random_inputs(rng: &mut ChaCha8Rng, t: usize, f: usize) -> Vec<Vec<f64>> {
    let lo = rng.random_range(-2.0..0.5);
    let hi = lo + rng.random_range(0.5..3.0);
    (0..t).map(|_| (0..f).map(|_| rng.random_range(lo..hi)).collect()).collect()
}

pub fn random_bits(rng: &mut ChaCha8Rng, len: usize) -> Vec<u8> {
    (0..len).map(|_| rng.random_range(0..2u8)).collect()
}

/// Scales from the data ranges at a random bit width.
pub fn random_scales(rng: &mut ChaCha8Rng, layer: &DenseLayer, inputs: &[Vec<f64>]) -> LayerScales {
    let bits = rng.random_range(1..=8u8);
    LayerScales {
        weight: make_quant_params(layer.weights(), bits).unwrap(),
        bias: make_quant_params(layer.bias(), bits).unwrap(),
        input: make_quant_params(inputs.iter().flatten(), bits).unwrap(),
    }
}

/// Plain pre-activation `Σ_j w_ij x_j + b_i`.
pub fn float_output(layer: &DenseLayer, x: &[f64]) -> Vec<f64> {
    (0..layer.outputs())
        .map(|i| {
            let mut acc = layer.bias()[i];
            for j in 0..layer.inputs() {
                acc += layer.row(i)[j] * x[j];
            }
            acc
        })
        .collect()
}

/// `‖y - y̌(v)‖²` built only from the scalar dequantization functions.
/// `weight_bits[i][j]`, `bias_bits[i]`.
pub fn direct_error(layer: &DenseLayer, s: &LayerScales, x: &[f64], weight_bits: &[Vec<u8>], bias_bits: &[u8]) -> f64 {
    let y = float_output(layer, x);
    let mut total = 0.0;
    for i in 0..layer.outputs() {
        let mut yq = ada_dequantize(layer.bias()[i], bias_bits[i], &s.bias);
        for j in 0..layer.inputs() {
            yq += ada_dequantize(layer.row(i)[j], weight_bits[i][j], &s.weight) * rtn_dequantize(x[j], &s.input);
        }
        total += (y[i] - yq).powi(2);
    }
    total
}

/// Rescaled residuals and `‖y/(s_w s_x) - y̲‖²` from the floor reconstruction.
pub fn floor_residuals(layer: &DenseLayer, s: &LayerScales, x: &[f64]) -> Vec<f64> {
    let (sw, sb, sx) = (s.weight.scale, s.bias.scale, s.input.scale);
    let r = sb / (sx * sw);
    let y = float_output(layer, x);
    (0..layer.outputs())
        .map(|i| {
            let mut under = r * floor_code(layer.bias()[i], sb) as f64;
            for j in 0..layer.inputs() {
                under += floor_code(layer.row(i)[j], sw) as f64 * rtn_code(x[j], sx) as f64;
            }
            y[i] / (sw * sx) - under
        })
        .collect()
}

/// Rounding objective for one sample, summed term by term from its
/// definition: linear weight terms, ordered cross terms, bias terms, and the
/// bias/weight coupling with its factor 2.
pub fn objective_terms(layer: &DenseLayer, s: &LayerScales, x: &[f64], weight_bits: &[Vec<u8>], bias_bits: &[u8]) -> f64 {
    let (sw, sb, sx) = (s.weight.scale, s.bias.scale, s.input.scale);
    let r = sb / (sx * sw);
    let xt: Vec<f64> = x.iter().map(|&v| rtn_code(v, sx) as f64).collect();
    let d = floor_residuals(layer, s, x);
    let f = layer.inputs();
    let mut q = 0.0;
    for i in 0..layer.outputs() {
        let v = |j: usize| weight_bits[i][j] as f64;
        for j in 0..f {
            q += xt[j] * (xt[j] - 2.0 * d[i]) * v(j) * v(j);
        }
        for j in 0..f {
            for k in 0..f {
                if k != j {
                    q += xt[j] * xt[k] * v(j) * v(k);
                }
            }
        }
        let vb = bias_bits[i] as f64;
        q += r * (r - 2.0 * d[i]) * vb * vb;
        for j in 0..f {
            q += 2.0 * r * xt[j] * vb * v(j);
        }
    }
    q
}

pub fn split_bits(bits: &[u8], n: usize, f: usize) -> (Vec<Vec<u8>>, Vec<u8>) {
    let weight_bits = (0..n).map(|i| bits[i * f..(i + 1) * f].to_vec()).collect();
    (weight_bits, bits[n * f..].to_vec())
}

pub fn load_fixture(model: &str, data: &str) -> (DenseNetwork, Vec<Sample>) {
    let net = quboround::io::load_model(fixture(model)).unwrap();
    let samples = quboround::io::load_dataset(fixture(data)).unwrap();
    (net, samples)
}

pub fn relative_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(1.0)
}
