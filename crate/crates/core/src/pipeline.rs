//! End-to-end quantization.
//!
//! Adaptive rounding runs per layer: calibrate the weight, bias and input
//! scales, average the per-neuron subproblem matrices over the calibration
//! inputs, solve each subproblem, then write the chosen floor-plus-bit codes.
//! The round-to-nearest baseline shares the calibration step.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{argmax, check_width, Activation, DenseLayer, DenseNetwork, LayerOutput, Sample};
use crate::quant::{ada_quantize, floor_code, rtn_bit, rtn_code, rtn_quantize, LayerScales};
use crate::qubo::SubproblemBatch;
use crate::solve::{solve_exact, solve_sa, SolveConfig, EXACT_MAX_DIM, RNG_NAME};

/// Widest subproblem (`f + 1`) the pipeline will build.
pub const MAX_SUBPROBLEM_DIM: usize = 4096;

pub const DEFAULT_CALIBRATION_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Adaround,
    Rtn,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Adaround => "adaround",
            Method::Rtn => "rtn",
        }
    }
}

/// Rounding bits of one layer: `v_ij` per weight, `v_i` per bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerPlan {
    pub weight_bits: Vec<Vec<u8>>,
    pub bias_bits: Vec<u8>,
    /// `v_iᵀ E[S_i] v_i` per neuron.
    pub energies: Vec<f64>,
}

impl LayerPlan {
    /// `(v_i1, .., v_if, v_i)`, the variables of subproblem `i`.
    pub fn neuron_bits(&self, i: usize) -> Vec<u8> {
        let mut v = self.weight_bits[i].clone();
        v.push(self.bias_bits[i]);
        v
    }

    fn from_neurons(neurons: Vec<Vec<u8>>, energies: Vec<f64>) -> Self {
        let mut weight_bits = Vec::with_capacity(neurons.len());
        let mut bias_bits = Vec::with_capacity(neurons.len());
        for mut v in neurons {
            bias_bits.push(v.pop().expect("subproblem has a bias variable"));
            weight_bits.push(v);
        }
        Self {
            weight_bits,
            bias_bits,
            energies,
        }
    }

    fn check_shape(&self, layer_index: usize, layer: &DenseLayer) -> Result<()> {
        let ok = self.weight_bits.len() == layer.outputs()
            && self.bias_bits.len() == layer.outputs()
            && self.weight_bits.iter().all(|r| r.len() == layer.inputs())
            && self
                .weight_bits
                .iter()
                .flatten()
                .chain(&self.bias_bits)
                .all(|&b| b <= 1);
        if !ok {
            return Err(Error::InvalidConfig(format!(
                "plan for layer {layer_index} does not match a {}x{} layer",
                layer.outputs(),
                layer.inputs()
            )));
        }
        Ok(())
    }
}

/// Settings a plan was produced with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanConfig {
    pub bits: u8,
    pub seed: u64,
    pub rng: String,
    pub calibration_samples: usize,
    pub calibration_fraction: Option<f64>,
    pub restarts: usize,
    pub sweeps: Option<usize>,
    pub exact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundingPlan {
    pub method: Method,
    pub config: PlanConfig,
    pub layers: Vec<LayerPlan>,
}

impl RoundingPlan {
    pub fn total_energy(&self) -> f64 {
        self.layers.iter().flat_map(|l| &l.energies).sum()
    }
}

/// Scales and float layer inputs of a calibration set.
#[derive(Debug, Clone)]
pub struct Calibration {
    pub bits: u8,
    pub samples: usize,
    pub scales: Vec<LayerScales>,
    pub inputs: Vec<Vec<Vec<f64>>>,
}

impl Calibration {
    pub fn new(net: &DenseNetwork, samples: &[Sample], bits: u8) -> Result<Self> {
        let inputs = net.per_layer_calibration_inputs(samples)?;
        let scales = net
            .layers()
            .iter()
            .zip(&inputs)
            .map(|(layer, xs)| LayerScales::calibrate(layer.weights(), layer.bias(), xs, bits))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            bits,
            samples: samples.len(),
            scales,
            inputs,
        })
    }

    /// `E[S_i]` of every layer.
    pub fn batches(&self, net: &DenseNetwork) -> Result<Vec<SubproblemBatch>> {
        net.layers()
            .iter()
            .enumerate()
            .map(|(l, layer)| {
                check_subproblem_width(l, layer)?;
                SubproblemBatch::build(l, layer, &self.scales[l], &self.inputs[l])
            })
            .collect()
    }
}

fn check_subproblem_width(layer_index: usize, layer: &DenseLayer) -> Result<()> {
    let dim = layer.inputs() + 1;
    if dim > MAX_SUBPROBLEM_DIM {
        return Err(Error::LayerTooWide {
            layer: layer_index,
            dim,
            limit: MAX_SUBPROBLEM_DIM,
        });
    }
    Ok(())
}

/// Picks `max(1, round(fraction * len))` samples with a seeded generator,
/// kept in their original order.
pub fn select_calibration(samples: &[Sample], fraction: f64, seed: u64) -> Result<Vec<Sample>> {
    if samples.is_empty() {
        return Err(Error::Empty("sample set"));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidConfig(format!("calibration fraction must lie in (0, 1], got {fraction}")));
    }
    let count = ((fraction * samples.len() as f64).round() as usize).clamp(1, samples.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, samples.len(), count).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| samples[i].clone()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedLayer {
    /// Stored weight codes, one row per output neuron.
    pub weight_codes: Vec<Vec<i32>>,
    pub bias_codes: Vec<i32>,
    pub scales: LayerScales,
    pub activation: Activation,
}

impl QuantizedLayer {
    pub fn inputs(&self) -> usize {
        self.weight_codes.first().map_or(0, Vec::len)
    }

    pub fn outputs(&self) -> usize {
        self.bias_codes.len()
    }

    pub fn dequantized_weights(&self) -> Vec<Vec<f64>> {
        self.weight_codes
            .iter()
            .map(|row| row.iter().map(|&c| self.scales.weight.dequantize_code(c)).collect())
            .collect()
    }

    pub fn dequantized_bias(&self) -> Vec<f64> {
        self.bias_codes.iter().map(|&c| self.scales.bias.dequantize_code(c)).collect()
    }

    /// `s_w s_x Σ_j (c_ij - z_w) x̃_j + s_b (c_i - z_b)` with `x̃_j` the
    /// round-to-nearest input codes under this layer's input scale.
    pub fn pre_activation(&self, x: &[f64]) -> Vec<f64> {
        let sx = self.scales.input.scale;
        let codes: Vec<i64> = x.iter().map(|&xj| rtn_code(xj, sx)).collect();
        let zw = self.scales.weight.zero_point as i64;
        let product = self.scales.product();
        self.weight_codes
            .iter()
            .zip(&self.bias_codes)
            .map(|(row, &cb)| {
                let acc: f64 = row.iter().zip(&codes).map(|(&c, &xt)| ((c as i64 - zw) * xt) as f64).sum();
                product * acc + self.scales.bias.dequantize_code(cb)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedNetwork {
    pub bits: u8,
    pub layers: Vec<QuantizedLayer>,
}

impl QuantizedNetwork {
    pub fn input_width(&self) -> usize {
        self.layers[0].inputs()
    }

    /// Forward pass through the dequantized layers. Activations stay in
    /// float; each layer re-derives its input codes from its own input scale.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<LayerOutput>> {
        let mut outputs: Vec<LayerOutput> = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let input = outputs.last().map_or(x, |o| o.post.as_slice());
            check_width(l, layer.inputs(), input.len())?;
            let pre = layer.pre_activation(input);
            let post = layer.activation.apply(&pre);
            outputs.push(LayerOutput { pre, post });
        }
        Ok(outputs)
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        let outputs = self.forward(x)?;
        Ok(argmax(&outputs[outputs.len() - 1].post))
    }

    /// Checks codes against each layer's clip range and scales for positivity.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidNetwork("quantized network has no layers".into()));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            let s = &layer.scales;
            for p in [&s.weight, &s.bias, &s.input] {
                if !(p.scale.is_finite() && p.scale > 0.0) {
                    return Err(Error::InvalidNetwork(format!("layer {l}: non-positive scale")));
                }
                if p.bits != self.bits {
                    return Err(Error::InvalidNetwork(format!("layer {l}: bit width differs from network")));
                }
            }
            let (wlo, whi) = (s.weight.qmin(), s.weight.qmax());
            let (blo, bhi) = (s.bias.qmin(), s.bias.qmax());
            if layer.weight_codes.iter().flatten().any(|c| !(wlo..=whi).contains(c))
                || layer.bias_codes.iter().any(|c| !(blo..=bhi).contains(c))
            {
                return Err(Error::InvalidNetwork(format!("layer {l}: code outside {}-bit range", self.bits)));
            }
            if layer.weight_codes.len() != layer.outputs()
                || layer.weight_codes.iter().any(|r| r.len() != layer.inputs())
                || layer.inputs() == 0
            {
                return Err(Error::InvalidNetwork(format!("layer {l}: ragged weight codes")));
            }
            if l > 0 && layer.inputs() != self.layers[l - 1].outputs() {
                return Err(Error::DimensionMismatch {
                    layer: l,
                    expected: self.layers[l - 1].outputs(),
                    actual: layer.inputs(),
                });
            }
        }
        Ok(())
    }
}

/// Bits that reproduce round-to-nearest through floor-plus-bit.
pub fn rtn_layer_plan(layer: &DenseLayer, scales: &LayerScales) -> LayerPlan {
    LayerPlan {
        weight_bits: layer
            .weight_rows()
            .iter()
            .map(|row| row.iter().map(|&w| rtn_bit(w, scales.weight.scale)).collect())
            .collect(),
        bias_bits: layer.bias().iter().map(|&b| rtn_bit(b, scales.bias.scale)).collect(),
        energies: Vec::new(),
    }
}

fn fill_energies(plan: &mut LayerPlan, batch: &SubproblemBatch) {
    plan.energies = (0..batch.outputs())
        .map(|i| crate::solve::energy(&batch.subproblem(i), &plan.neuron_bits(i)))
        .collect();
}

/// The round-to-nearest plan with its subproblem energies.
pub fn rtn_plan(net: &DenseNetwork, calibration: &Calibration, batches: &[SubproblemBatch]) -> RoundingPlan {
    let layers = net
        .layers()
        .iter()
        .zip(&calibration.scales)
        .zip(batches)
        .map(|((layer, scales), batch)| {
            let mut plan = rtn_layer_plan(layer, scales);
            fill_energies(&mut plan, batch);
            plan
        })
        .collect();
    RoundingPlan {
        method: Method::Rtn,
        config: PlanConfig {
            bits: calibration.bits,
            seed: 0,
            rng: RNG_NAME.into(),
            calibration_samples: calibration.samples,
            calibration_fraction: None,
            restarts: 0,
            sweeps: None,
            exact: false,
        },
        layers,
    }
}

pub fn quantize_rtn(net: &DenseNetwork, samples: &[Sample], bits: u8) -> Result<QuantizedNetwork> {
    let calibration = Calibration::new(net, samples, bits)?;
    let layers = net
        .layers()
        .iter()
        .zip(&calibration.scales)
        .map(|(layer, scales)| QuantizedLayer {
            weight_codes: layer
                .weight_rows()
                .iter()
                .map(|row| row.iter().map(|&w| rtn_quantize(w, &scales.weight)).collect())
                .collect(),
            bias_codes: layer.bias().iter().map(|&b| rtn_quantize(b, &scales.bias)).collect(),
            scales: *scales,
            activation: layer.activation(),
        })
        .collect();
    Ok(QuantizedNetwork { bits, layers })
}

/// Stored codes `clip(floor(a / s) + v + z)` for every weight and bias.
pub fn apply_plan(net: &DenseNetwork, scales: &[LayerScales], plan: &RoundingPlan) -> Result<QuantizedNetwork> {
    if scales.len() != net.layers().len() || plan.layers.len() != net.layers().len() {
        return Err(Error::InvalidConfig(format!(
            "network has {} layers, plan {} and scales {}",
            net.layers().len(),
            plan.layers.len(),
            scales.len()
        )));
    }
    let bits = scales[0].weight.bits;
    let layers = net
        .layers()
        .iter()
        .zip(scales)
        .zip(&plan.layers)
        .enumerate()
        .map(|(l, ((layer, scales), lp))| {
            lp.check_shape(l, layer)?;
            Ok(QuantizedLayer {
                weight_codes: layer
                    .weight_rows()
                    .iter()
                    .zip(&lp.weight_bits)
                    .map(|(row, vs)| row.iter().zip(vs).map(|(&w, &v)| ada_quantize(w, v, &scales.weight)).collect())
                    .collect(),
                bias_codes: layer
                    .bias()
                    .iter()
                    .zip(&lp.bias_bits)
                    .map(|(&b, &v)| ada_quantize(b, v, &scales.bias))
                    .collect(),
                scales: *scales,
                activation: layer.activation(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(QuantizedNetwork { bits, layers })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AdaroundOptions {
    pub solve: SolveConfig,
    /// Enumerate subproblems exhaustively when `f + 1` allows it.
    pub exact: bool,
    pub calibration_fraction: Option<f64>,
}


/// Solves every subproblem of one layer, seeded with the round-to-nearest bits.
pub fn solve_layer(
    layer: &DenseLayer,
    scales: &LayerScales,
    batch: &SubproblemBatch,
    options: &AdaroundOptions,
) -> Result<LayerPlan> {
    let seed_plan = rtn_layer_plan(layer, scales);
    let use_exact = options.exact && layer.inputs() < EXACT_MAX_DIM;
    let solutions = (0..layer.outputs())
        .into_par_iter()
        .map(|i| {
            let q = batch.subproblem(i);
            let seed = seed_plan.neuron_bits(i);
            if use_exact {
                solve_exact(&q)
            } else {
                solve_sa(&q, &options.solve.for_subproblem(batch.layer, i), Some(&seed))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let energies = solutions.iter().map(|s| s.energy).collect();
    Ok(LayerPlan::from_neurons(solutions.into_iter().map(|s| s.v).collect(), energies))
}

/// Adaptive rounding of every layer against the calibration samples.
pub fn quantize_adaround(
    net: &DenseNetwork,
    samples: &[Sample],
    bits: u8,
    options: &AdaroundOptions,
) -> Result<(QuantizedNetwork, RoundingPlan)> {
    options.solve.validate()?;
    let calibration = Calibration::new(net, samples, bits)?;
    let batches = calibration.batches(net)?;
    let plan = adaround_plan(net, &calibration, &batches, options)?;
    let qnet = apply_plan(net, &calibration.scales, &plan)?;
    Ok((qnet, plan))
}

/// Plan from already built calibration and batches.
pub fn adaround_plan(
    net: &DenseNetwork,
    calibration: &Calibration,
    batches: &[SubproblemBatch],
    options: &AdaroundOptions,
) -> Result<RoundingPlan> {
    let layers = net
        .layers()
        .iter()
        .zip(&calibration.scales)
        .zip(batches)
        .map(|((layer, scales), batch)| solve_layer(layer, scales, batch, options))
        .collect::<Result<Vec<_>>>()?;
    Ok(RoundingPlan {
        method: Method::Adaround,
        config: PlanConfig {
            bits: calibration.bits,
            seed: options.solve.seed,
            rng: RNG_NAME.into(),
            calibration_samples: calibration.samples,
            calibration_fraction: options.calibration_fraction,
            restarts: options.solve.restarts,
            sweeps: options.solve.sweeps,
            exact: options.exact,
        },
        layers,
    })
}

/// Floor codes `floor(w / s_w)` of a layer, row-major.
pub fn weight_floor_codes(layer: &DenseLayer, scales: &LayerScales) -> Vec<i64> {
    layer.weights().iter().map(|&w| floor_code(w, scales.weight.scale)).collect()
}
