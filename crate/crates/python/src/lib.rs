//! Python bindings: load models and data, quantize, evaluate, and build and
//! solve the rounding subproblems directly.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use quboround_core::eval;
use quboround_core::io;
use quboround_core::pipeline::{self, AdaroundOptions, Calibration};
use quboround_core::solve::{self, SolveConfig};
use quboround_core::{Error, QuboMatrix, Sample};

fn err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

type PySample = (Vec<f64>, usize);

fn samples(data: Vec<PySample>) -> Vec<Sample> {
    data.into_iter().map(|(x, y)| Sample::new(x, y)).collect()
}

/// Bit vectors cross into Python as `list[int]` rather than `bytes`.
fn bits(v: Vec<u8>) -> Vec<u32> {
    v.into_iter().map(u32::from).collect()
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<QuboMatrix> {
    QuboMatrix::from_rows(rows).map_err(err)
}

/// A float dense network.
#[pyclass(name = "Network", frozen)]
struct PyNetwork(quboround_core::DenseNetwork);

#[pymethods]
impl PyNetwork {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        io::load_model(path).map(Self).map_err(err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        io::save_model(path, &self.0).map_err(err)
    }

    #[getter]
    fn input_width(&self) -> usize {
        self.0.input_width()
    }

    #[getter]
    fn output_width(&self) -> usize {
        self.0.output_width()
    }

    /// Output of the last layer, after its activation.
    fn forward(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        let out = self.0.forward(&x).map_err(err)?;
        Ok(out.into_iter().last().map(|o| o.post).unwrap_or_default())
    }

    fn predict(&self, x: Vec<f64>) -> PyResult<usize> {
        self.0.predict(&x).map_err(err)
    }

    fn accuracy(&self, data: Vec<PySample>) -> PyResult<f64> {
        eval::accuracy(&self.0, &samples(data)).map_err(err)
    }
}

/// A quantized network with integer codes per layer.
#[pyclass(name = "QuantizedNetwork", frozen)]
struct PyQuantized(pipeline::QuantizedNetwork);

#[pymethods]
impl PyQuantized {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        io::load_quantized(path).map(Self).map_err(err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        io::save_quantized(path, &self.0).map_err(err)
    }

    #[getter]
    fn bits(&self) -> u8 {
        self.0.bits
    }

    /// Integer weight codes of one layer, one row per neuron.
    fn weight_codes(&self, layer: usize) -> PyResult<Vec<Vec<i32>>> {
        self.0
            .layers
            .get(layer)
            .map(|l| l.weight_codes.clone())
            .ok_or_else(|| PyValueError::new_err(format!("no layer {layer}")))
    }

    fn predict(&self, x: Vec<f64>) -> PyResult<usize> {
        self.0.predict(&x).map_err(err)
    }

    fn accuracy(&self, data: Vec<PySample>) -> PyResult<f64> {
        eval::accuracy(&self.0, &samples(data)).map_err(err)
    }
}

/// Rows of a `label,f0,...` CSV as `(features, label)` tuples.
#[pyfunction]
fn load_dataset(path: &str) -> PyResult<Vec<PySample>> {
    let data = io::load_dataset(path).map_err(err)?;
    Ok(data.into_iter().map(|s| (s.features, s.label)).collect())
}

#[pyfunction]
fn select_calibration(data: Vec<PySample>, fraction: f64, seed: u64) -> PyResult<Vec<PySample>> {
    let picked = pipeline::select_calibration(&samples(data), fraction, seed).map_err(err)?;
    Ok(picked.into_iter().map(|s| (s.features, s.label)).collect())
}

#[pyfunction]
fn quantize_rtn(net: &PyNetwork, calibration: Vec<PySample>, bits: u8) -> PyResult<PyQuantized> {
    pipeline::quantize_rtn(&net.0, &samples(calibration), bits).map(PyQuantized).map_err(err)
}

/// Returns the quantized network and the total subproblem energy of its plan.
#[pyfunction]
#[pyo3(signature = (net, calibration, bits, seed=42, restarts=8, exact=false))]
fn quantize_adaround(
    py: Python<'_>,
    net: &PyNetwork,
    calibration: Vec<PySample>,
    bits: u8,
    seed: u64,
    restarts: usize,
    exact: bool,
) -> PyResult<(PyQuantized, f64)> {
    let options = AdaroundOptions {
        solve: SolveConfig {
            seed,
            restarts,
            ..SolveConfig::default()
        },
        exact,
        calibration_fraction: None,
    };
    let cal = samples(calibration);
    let (qnet, plan) = py
        .detach(|| pipeline::quantize_adaround(&net.0, &cal, bits, &options))
        .map_err(err)?;
    Ok((PyQuantized(qnet), plan.total_energy()))
}

/// Averaged subproblem matrices of one layer, one per output neuron.
#[pyfunction]
fn subproblems(net: &PyNetwork, calibration: Vec<PySample>, bits: u8, layer: usize) -> PyResult<Vec<Vec<Vec<f64>>>> {
    let cal = Calibration::new(&net.0, &samples(calibration), bits).map_err(err)?;
    let batches = cal.batches(&net.0).map_err(err)?;
    let batch = batches
        .get(layer)
        .ok_or_else(|| PyValueError::new_err(format!("no layer {layer}")))?;
    Ok((0..batch.outputs()).map(|i| batch.subproblem(i).to_rows()).collect())
}

#[pyfunction]
fn energy(q: Vec<Vec<f64>>, v: Vec<u8>) -> PyResult<f64> {
    let q = matrix(q)?;
    if v.len() != q.dim() || v.iter().any(|&b| b > 1) {
        return Err(PyValueError::new_err("v must be a 0/1 vector of the matrix dimension"));
    }
    Ok(solve::energy(&q, &v))
}

#[pyfunction]
fn solve_exact(q: Vec<Vec<f64>>) -> PyResult<(Vec<u32>, f64)> {
    let s = solve::solve_exact(&matrix(q)?).map_err(err)?;
    Ok((bits(s.v), s.energy))
}

#[pyfunction]
#[pyo3(signature = (q, seed=42, restarts=8, start=None))]
fn solve_sa(q: Vec<Vec<f64>>, seed: u64, restarts: usize, start: Option<Vec<u8>>) -> PyResult<(Vec<u32>, f64)> {
    let cfg = SolveConfig {
        seed,
        restarts,
        ..SolveConfig::default()
    };
    let s = solve::solve_sa(&matrix(q)?, &cfg, start.as_deref()).map_err(err)?;
    Ok((bits(s.v), s.energy))
}

#[pymodule]
#[pyo3(name = "quboround")]
fn quboround_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNetwork>()?;
    m.add_class::<PyQuantized>()?;
    m.add_function(wrap_pyfunction!(load_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(select_calibration, m)?)?;
    m.add_function(wrap_pyfunction!(quantize_rtn, m)?)?;
    m.add_function(wrap_pyfunction!(quantize_adaround, m)?)?;
    m.add_function(wrap_pyfunction!(subproblems, m)?)?;
    m.add_function(wrap_pyfunction!(energy, m)?)?;
    m.add_function(wrap_pyfunction!(solve_exact, m)?)?;
    m.add_function(wrap_pyfunction!(solve_sa, m)?)?;
    Ok(())
}
