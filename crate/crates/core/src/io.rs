//! File formats.
//!
//! Models, quantized models and rounding plans are JSON documents tagged with
//! a `format` string and a `version`. Floats are written in shortest
//! round-trip form, so save followed by load is bit-exact. Datasets and
//! reports are CSV with LF line endings.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::ScatterRow;
use crate::model::{Activation, DenseLayer, DenseNetwork, Sample};
use crate::pipeline::{QuantizedNetwork, RoundingPlan};
use crate::qubo::QuboMatrix;

pub const MODEL_FORMAT: &str = "quboround-model";
pub const QUANTIZED_FORMAT: &str = "quboround-quantized";
pub const PLAN_FORMAT: &str = "quboround-plan";
pub const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerRecord {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
    activation: Activation,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    layers: Vec<LayerRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct QuantizedFile {
    format: String,
    version: u32,
    #[serde(flatten)]
    network: QuantizedNetwork,
}

#[derive(Debug, Serialize, Deserialize)]
struct PlanFile {
    format: String,
    version: u32,
    #[serde(flatten)]
    plan: RoundingPlan,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn parse_json<T: DeserializeOwned>(path: &Path, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::parse(path, e.to_string()))
}

fn check_header(path: &Path, format: &str, version: u32, expected: &str) -> Result<()> {
    if format != expected {
        return Err(Error::parse(path, format!("expected format '{expected}', found '{format}'")));
    }
    if version != VERSION {
        return Err(Error::parse(path, format!("unsupported version {version}")));
    }
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string(value).expect("serializable");
    s.push('\n');
    s
}

pub fn model_to_string(net: &DenseNetwork) -> String {
    to_json(&ModelFile {
        format: MODEL_FORMAT.into(),
        version: VERSION,
        layers: net
            .layers()
            .iter()
            .map(|l| LayerRecord {
                weights: l.weight_rows(),
                bias: l.bias().to_vec(),
                activation: l.activation(),
            })
            .collect(),
    })
}

pub fn model_from_str(path: &Path, text: &str) -> Result<DenseNetwork> {
    let file: ModelFile = parse_json(path, text)?;
    check_header(path, &file.format, file.version, MODEL_FORMAT)?;
    let layers = file
        .layers
        .into_iter()
        .enumerate()
        .map(|(l, r)| {
            DenseLayer::new(r.weights, r.bias, r.activation).map_err(|e| Error::parse(path, format!("layer {l}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    DenseNetwork::new(layers).map_err(|e| Error::parse(path, e.to_string()))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<DenseNetwork> {
    let path = path.as_ref();
    model_from_str(path, &read(path)?)
}

pub fn save_model(path: impl AsRef<Path>, net: &DenseNetwork) -> Result<()> {
    write(path.as_ref(), &model_to_string(net))
}

pub fn quantized_to_string(qnet: &QuantizedNetwork) -> String {
    to_json(&QuantizedFile {
        format: QUANTIZED_FORMAT.into(),
        version: VERSION,
        network: qnet.clone(),
    })
}

pub fn quantized_from_str(path: &Path, text: &str) -> Result<QuantizedNetwork> {
    let file: QuantizedFile = parse_json(path, text)?;
    check_header(path, &file.format, file.version, QUANTIZED_FORMAT)?;
    file.network.validate().map_err(|e| Error::parse(path, e.to_string()))?;
    Ok(file.network)
}

pub fn load_quantized(path: impl AsRef<Path>) -> Result<QuantizedNetwork> {
    let path = path.as_ref();
    quantized_from_str(path, &read(path)?)
}

pub fn save_quantized(path: impl AsRef<Path>, qnet: &QuantizedNetwork) -> Result<()> {
    write(path.as_ref(), &quantized_to_string(qnet))
}

pub fn plan_to_string(plan: &RoundingPlan) -> String {
    to_json(&PlanFile {
        format: PLAN_FORMAT.into(),
        version: VERSION,
        plan: plan.clone(),
    })
}

pub fn load_plan(path: impl AsRef<Path>) -> Result<RoundingPlan> {
    let path = path.as_ref();
    let file: PlanFile = parse_json(path, &read(path)?)?;
    check_header(path, &file.format, file.version, PLAN_FORMAT)?;
    Ok(file.plan)
}

pub fn save_plan(path: impl AsRef<Path>, plan: &RoundingPlan) -> Result<()> {
    write(path.as_ref(), &plan_to_string(plan))
}

/// Parses `label,f0,f1,...` CSV. Every row must have the header's width.
pub fn dataset_from_reader<R: std::io::Read>(path: &Path, reader: R) -> Result<Vec<Sample>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::parse(path, e.to_string()))?.clone();
    if headers.get(0) != Some("label") || headers.len() < 2 {
        return Err(Error::parse(path, "header must be 'label,f0,f1,...'"));
    }
    let mut samples = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let line = row + 2;
        let record = record.map_err(|e| Error::parse(path, format!("line {line}: {e}")))?;
        let label = record[0]
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::parse(path, format!("line {line}: label '{}' is not a non-negative integer", &record[0])))?;
        let features = record
            .iter()
            .enumerate()
            .skip(1)
            .map(|(col, field)| match field.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::parse(
                    path,
                    format!("line {line}, field {}: '{field}' is not a finite number", &headers[col]),
                )),
            })
            .collect::<Result<Vec<_>>>()?;
        samples.push(Sample::new(features, label));
    }
    if samples.is_empty() {
        return Err(Error::parse(path, "dataset has no rows"));
    }
    Ok(samples)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    dataset_from_reader(path, std::io::BufReader::new(file))
}

/// Checks samples against a network's input width and class count.
pub fn check_dataset(samples: &[Sample], input_width: usize, classes: usize) -> Result<()> {
    for (row, s) in samples.iter().enumerate() {
        if s.features.len() != input_width {
            return Err(Error::DimensionMismatch {
                layer: 0,
                expected: input_width,
                actual: s.features.len(),
            });
        }
        if s.label >= classes {
            return Err(Error::InvalidConfig(format!(
                "row {}: label {} not below class count {classes}",
                row + 1,
                s.label
            )));
        }
    }
    Ok(())
}

pub fn dataset_to_string(samples: &[Sample]) -> String {
    let width = samples.first().map_or(0, |s| s.features.len());
    let mut out = String::from("label");
    for j in 0..width {
        write!(out, ",f{j}").unwrap();
    }
    out.push('\n');
    for s in samples {
        write!(out, "{}", s.label).unwrap();
        for v in &s.features {
            write!(out, ",{v:?}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// 17 significant digits.
pub fn format_sig17(x: f64) -> String {
    format!("{x:.16e}")
}

/// `plan_id,method,cost,accuracy`.
pub fn scatter_csv(rows: &[ScatterRow]) -> String {
    let mut out = String::from("plan_id,method,cost,accuracy\n");
    for r in rows {
        writeln!(out, "{},{},{},{}", r.plan_id, r.kind.name(), format_sig17(r.cost), r.accuracy).unwrap();
    }
    out
}

/// One row of the `compare` report.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub bits: u8,
    pub method: &'static str,
    pub accuracy: f64,
    pub qubo_cost: f64,
}

pub fn compare_csv(rows: &[CompareRow]) -> String {
    let mut out = String::from("bits,method,accuracy,qubo_cost\n");
    for r in rows {
        writeln!(out, "{},{},{},{}", r.bits, r.method, r.accuracy, format_sig17(r.qubo_cost)).unwrap();
    }
    out
}

/// Row-major dump of a matrix, 17 significant digits per entry.
pub fn matrix_csv(m: &QuboMatrix) -> String {
    let mut out = String::new();
    for j in 0..m.dim() {
        let row: Vec<String> = m.row(j).iter().map(|&v| format_sig17(v)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn write_text(path: impl AsRef<Path>, contents: &str) -> Result<()> {
    write(path.as_ref(), contents)
}
