//! Dense networks and their float forward pass.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Softmax,
    None,
}

impl Activation {
    pub fn apply(self, pre: &[f64]) -> Vec<f64> {
        match self {
            Activation::None => pre.to_vec(),
            Activation::Relu => pre.iter().map(|&y| y.max(0.0)).collect(),
            Activation::Softmax => {
                let max = pre.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = pre.iter().map(|&y| (y - max).exp()).collect();
                let total: f64 = exps.iter().sum();
                exps.into_iter().map(|e| e / total).collect()
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Softmax => "softmax",
            Activation::None => "none",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "softmax" => Ok(Activation::Softmax),
            "none" => Ok(Activation::None),
            other => Err(Error::InvalidNetwork(format!("unknown activation '{other}'"))),
        }
    }
}

/// One fully connected layer, `y = W x + b` followed by an activation.
///
/// Weights are row-major with one row per output neuron.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    weights: Vec<f64>,
    bias: Vec<f64>,
    inputs: usize,
    activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: Vec<Vec<f64>>, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        let outputs = weights.len();
        if outputs == 0 {
            return Err(Error::InvalidNetwork("layer has no output neurons".into()));
        }
        if outputs != bias.len() {
            return Err(Error::InvalidNetwork(format!(
                "{} weight rows but {} bias entries",
                outputs,
                bias.len()
            )));
        }
        let inputs = weights[0].len();
        if inputs == 0 {
            return Err(Error::InvalidNetwork("layer has no inputs".into()));
        }
        if let Some(i) = weights.iter().position(|row| row.len() != inputs) {
            return Err(Error::InvalidNetwork(format!(
                "weight row {i} has {} entries, expected {inputs}",
                weights[i].len()
            )));
        }
        let flat: Vec<f64> = weights.into_iter().flatten().collect();
        if flat.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidNetwork("non-finite parameter".into()));
        }
        Ok(Self {
            weights: flat,
            bias,
            inputs,
            activation,
        })
    }

    /// Input width `f`.
    pub fn inputs(&self) -> usize {
        self.inputs
    }

    /// Output width `n`.
    pub fn outputs(&self) -> usize {
        self.bias.len()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.inputs..(i + 1) * self.inputs]
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weight_rows(&self) -> Vec<Vec<f64>> {
        self.weights.chunks(self.inputs).map(<[f64]>::to_vec).collect()
    }

    /// Pre-activation `W x + b`; the caller guarantees `x.len() == inputs()`.
    pub fn pre_activation(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.inputs);
        self.weights
            .chunks(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + b)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNetwork {
    layers: Vec<DenseLayer>,
}

/// Pre- and post-activation values of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerOutput {
    pub pre: Vec<f64>,
    pub post: Vec<f64>,
}

impl DenseNetwork {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidNetwork("network has no layers".into()));
        }
        for (l, pair) in layers.windows(2).enumerate() {
            if pair[1].inputs() != pair[0].outputs() {
                return Err(Error::InvalidNetwork(format!(
                    "layer {} expects {} inputs but layer {} produces {}",
                    l + 1,
                    pair[1].inputs(),
                    l,
                    pair[0].outputs()
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<LayerOutput>> {
        check_width(0, self.input_width(), x.len())?;
        let mut outputs: Vec<LayerOutput> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let input = outputs.last().map_or(x, |o| o.post.as_slice());
            let pre = layer.pre_activation(input);
            let post = layer.activation().apply(&pre);
            outputs.push(LayerOutput { pre, post });
        }
        Ok(outputs)
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        let outputs = self.forward(x)?;
        Ok(argmax(&outputs[outputs.len() - 1].post))
    }

    /// Float inputs seen by every layer over the calibration set.
    ///
    /// Layer 0 receives the raw features; later layers receive the
    /// post-activations of the float network, never of quantized layers.
    pub fn per_layer_calibration_inputs(&self, samples: &[Sample]) -> Result<Vec<Vec<Vec<f64>>>> {
        if samples.is_empty() {
            return Err(Error::Empty("calibration set"));
        }
        let mut per_layer = vec![Vec::with_capacity(samples.len()); self.layers.len()];
        for sample in samples {
            let outputs = self.forward(&sample.features)?;
            per_layer[0].push(sample.features.clone());
            for (l, out) in outputs.iter().take(self.layers.len() - 1).enumerate() {
                per_layer[l + 1].push(out.post.clone());
            }
        }
        Ok(per_layer)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
}

impl Sample {
    pub fn new(features: Vec<f64>, label: usize) -> Self {
        Self { features, label }
    }
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn check_width(layer: usize, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            layer,
            expected,
            actual,
        });
    }
    Ok(())
}
