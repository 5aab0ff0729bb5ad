//! Accuracy, QUBO cost, per-layer reconstruction error and the random-plan
//! scatter used to relate cost to accuracy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{DenseLayer, DenseNetwork, Sample};
use crate::pipeline::{
    adaround_plan, apply_plan, rtn_plan, AdaroundOptions, Calibration, LayerPlan, Method, QuantizedNetwork,
    RoundingPlan,
};
use crate::quant::{floor_code, rtn_code, LayerScales};
use crate::qubo::SubproblemBatch;
use crate::solve::energy;

pub trait Classifier {
    fn classify(&self, x: &[f64]) -> Result<usize>;
}

impl Classifier for DenseNetwork {
    fn classify(&self, x: &[f64]) -> Result<usize> {
        self.predict(x)
    }
}

impl Classifier for QuantizedNetwork {
    fn classify(&self, x: &[f64]) -> Result<usize> {
        self.predict(x)
    }
}

/// Fraction of samples whose predicted class equals the label.
pub fn accuracy<C: Classifier + Sync>(model: &C, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let hits = samples
        .par_iter()
        .map(|s| model.classify(&s.features).map(|p| usize::from(p == s.label)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(hits as f64 / samples.len() as f64)
}

/// `Σ_i v_iᵀ E[S_i] v_i` for one layer.
pub fn layer_cost(batch: &SubproblemBatch, plan: &LayerPlan) -> f64 {
    (0..batch.outputs())
        .map(|i| energy(&batch.subproblem(i), &plan.neuron_bits(i)))
        .sum()
}

/// Per-layer costs of a plan.
pub fn layer_costs(batches: &[SubproblemBatch], plan: &RoundingPlan) -> Result<Vec<f64>> {
    if batches.len() != plan.layers.len() {
        return Err(Error::InvalidConfig(format!(
            "{} layer batches for a {}-layer plan",
            batches.len(),
            plan.layers.len()
        )));
    }
    Ok(batches.iter().zip(&plan.layers).map(|(b, p)| layer_cost(b, p)).collect())
}

/// Total cost summed over layers.
pub fn qubo_cost(batches: &[SubproblemBatch], plan: &RoundingPlan) -> Result<f64> {
    Ok(layer_costs(batches, plan)?.iter().sum())
}

/// Mean `‖y - y̌(v)‖²` over `inputs`, evaluated directly from the unclipped
/// dequantized weights `s_w (w̲ + v)`, bias `s_b (b̲ + v)` and inputs
/// `s_x x̃`. This is the quantity the layer's QUBO models exactly.
pub fn layer_plan_error(layer: &DenseLayer, scales: &LayerScales, inputs: &[Vec<f64>], plan: &LayerPlan) -> f64 {
    let (sw, sb, sx) = (scales.weight.scale, scales.bias.scale, scales.input.scale);
    let weights: Vec<Vec<f64>> = layer
        .weight_rows()
        .iter()
        .zip(&plan.weight_bits)
        .map(|(row, vs)| row.iter().zip(vs).map(|(&w, &v)| sw * (floor_code(w, sw) + v as i64) as f64).collect())
        .collect();
    let bias: Vec<f64> = layer
        .bias()
        .iter()
        .zip(&plan.bias_bits)
        .map(|(&b, &v)| sb * (floor_code(b, sb) + v as i64) as f64)
        .collect();
    let total: f64 = inputs
        .iter()
        .map(|x| {
            let xq: Vec<f64> = x.iter().map(|&xj| sx * rtn_code(xj, sx) as f64).collect();
            let y = layer.pre_activation(x);
            weights
                .iter()
                .zip(&bias)
                .zip(&y)
                .map(|((row, b), yi)| {
                    let yq: f64 = row.iter().zip(&xq).map(|(w, x)| w * x).sum::<f64>() + b;
                    (yi - yq).powi(2)
                })
                .sum::<f64>()
        })
        .sum();
    total / inputs.len() as f64
}

/// Mean `‖y - y̌‖²` of every layer of a stored quantized network, each layer
/// fed the float network's inputs for that layer.
pub fn layer_frobenius_report(net: &DenseNetwork, qnet: &QuantizedNetwork, samples: &[Sample]) -> Result<Vec<f64>> {
    if qnet.layers.len() != net.layers().len() {
        return Err(Error::InvalidConfig("quantized network does not match the float network".into()));
    }
    let inputs = net.per_layer_calibration_inputs(samples)?;
    Ok(net
        .layers()
        .iter()
        .zip(&qnet.layers)
        .zip(&inputs)
        .map(|((layer, qlayer), xs)| {
            let total: f64 = xs
                .iter()
                .map(|x| {
                    let y = layer.pre_activation(x);
                    let yq = qlayer.pre_activation(x);
                    y.iter().zip(&yq).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
                })
                .sum();
            total / xs.len() as f64
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScatterKind {
    Random,
    Rtn,
    Adaround,
}

impl ScatterKind {
    pub fn name(self) -> &'static str {
        match self {
            ScatterKind::Random => "random",
            ScatterKind::Rtn => "rtn",
            ScatterKind::Adaround => "adaround",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatterRow {
    pub plan_id: usize,
    pub kind: ScatterKind,
    pub cost: f64,
    pub accuracy: f64,
}

/// A uniformly random plan for every layer.
pub fn random_plan(net: &DenseNetwork, bits: u8, rng: &mut ChaCha8Rng) -> RoundingPlan {
    let layers = net
        .layers()
        .iter()
        .map(|layer| LayerPlan {
            weight_bits: (0..layer.outputs())
                .map(|_| (0..layer.inputs()).map(|_| rng.random_range(0..2u8)).collect())
                .collect(),
            bias_bits: (0..layer.outputs()).map(|_| rng.random_range(0..2u8)).collect(),
            energies: Vec::new(),
        })
        .collect();
    RoundingPlan {
        method: Method::Adaround,
        config: crate::pipeline::PlanConfig {
            bits,
            seed: 0,
            rng: crate::solve::RNG_NAME.into(),
            calibration_samples: 0,
            calibration_fraction: None,
            restarts: 0,
            sweeps: None,
            exact: false,
        },
        layers,
    }
}

/// `count` random plans followed by the round-to-nearest and the adaptive
/// rounding plans, each with its total cost and accuracy on `eval`.
///
/// Random plans get ids `0..count`, round-to-nearest `count` and adaptive
/// rounding `count + 1`. Random plans are drawn from `seed`; the solver uses
/// `options.solve.seed`.
pub fn scatter_sample(
    net: &DenseNetwork,
    eval: &[Sample],
    calibration: &[Sample],
    bits: u8,
    count: usize,
    seed: u64,
    options: &AdaroundOptions,
) -> Result<Vec<ScatterRow>> {
    if count == 0 {
        return Err(Error::InvalidConfig("scatter needs at least one random plan".into()));
    }
    let cal = Calibration::new(net, calibration, bits)?;
    let batches = cal.batches(net)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut plans: Vec<(ScatterKind, RoundingPlan)> = (0..count)
        .map(|_| (ScatterKind::Random, random_plan(net, bits, &mut rng)))
        .collect();
    plans.push((ScatterKind::Rtn, rtn_plan(net, &cal, &batches)));
    plans.push((ScatterKind::Adaround, adaround_plan(net, &cal, &batches, options)?));

    plans
        .par_iter()
        .enumerate()
        .map(|(plan_id, (kind, plan))| {
            let qnet = apply_plan(net, &cal.scales, plan)?;
            Ok(ScatterRow {
                plan_id,
                kind: *kind,
                cost: qubo_cost(&batches, plan)?,
                accuracy: accuracy(&qnet, eval)?,
            })
        })
        .collect()
}

/// Pearson correlation; `None` when either series is constant or too short.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}
