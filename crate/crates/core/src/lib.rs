//! Post-training quantization of dense networks by adaptive rounding.
//!
//! Every weight and bias of a dense layer is rounded either down or up. The
//! choice is encoded as a binary vector and picked by minimizing the squared
//! distance between the float pre-activations and the dequantized ones over a
//! calibration set. That distance is an exact quadratic form in the rounding
//! bits, and it splits into one independent `(f + 1)`-variable QUBO per output
//! neuron, which [`solve`] handles with simulated annealing (or exhaustively
//! at small sizes).
//!
//! Module map:
//! - [`model`]: dense networks and the float forward pass
//! - [`quant`]: scale/zero-point parameters, round-to-nearest and floor+bit codes
//! - [`qubo`]: per-neuron subproblem matrices and the full verification matrix
//! - [`solve`]: QUBO energy, exhaustive and annealing solvers
//! - [`pipeline`]: scales, subproblems, solves and the quantized network
//! - [`eval`]: accuracy, QUBO cost, layer reconstruction error, scatter sampling
//! - [`io`]: model, quantized model, dataset, plan and report files

pub mod error;
pub mod eval;
pub mod io;
pub mod model;
pub mod numeric;
pub mod pipeline;
pub mod quant;
pub mod qubo;
pub mod solve;

pub use error::{Error, Result};
pub use model::{Activation, DenseLayer, DenseNetwork, Sample};
pub use pipeline::{QuantizedLayer, QuantizedNetwork, RoundingPlan};
pub use quant::{LayerScales, QuantParams};
pub use qubo::{QuboMatrix, SubproblemBatch};
pub use solve::{Solution, SolveConfig};
