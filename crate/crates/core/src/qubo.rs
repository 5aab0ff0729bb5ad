//! Construction of the rounding QUBO of a dense layer.
//!
//! For input `x`, write `x̃_j = round_tn(x_j / s_x)`, `w̲_ij = floor(w_ij / s_w)`,
//! `b̲_i = floor(b_i / s_b)`, `r = s_b / (s_x s_w)` and
//!
//! ```text
//! d_i = y_i / (s_w s_x) - Σ_j w̲_ij x̃_j - r b̲_i
//! ```
//!
//! Then `‖y - y̌(v)‖² = (s_w s_x)² (Σ_i d_i² + Σ_i v_iᵀ S_i v_i)` where
//! `v_i = (v_i1, .., v_if, v_i)` and `S_i` is the `(f + 1)`-square matrix
//!
//! ```text
//! S_i[j][j] = x̃_j (x̃_j - 2 d_i)       S_i[j][k] = x̃_j x̃_k   (j ≠ k)
//! S_i[j][f] = S_i[f][j] = r x̃_j        S_i[f][f] = r (r - 2 d_i)
//! ```
//!
//! Averaging over samples only needs `E[x̃ x̃ᵀ]`, `E[x̃]`, `E[d_i]` and
//! `E[d_i x̃]`, so the off-diagonal part is shared by every neuron of a layer.

use crate::error::{Error, Result};
use crate::model::{check_width, DenseLayer};
use crate::quant::{floor_code, rtn_code, LayerScales};

/// Default cap on the dimension of the full (all neurons) matrix.
pub const FULL_MATRIX_CAP: usize = 4096;

/// Below this many samples the moments are summed sequentially.
const LEAF_SAMPLES: usize = 64;

/// Dense symmetric QUBO matrix, minimized as `vᵀ Q v` over binary `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuboMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl QuboMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for j in 0..dim {
            m.set(j, j, 1.0);
        }
        m
    }

    /// Checks shape, finiteness and symmetry (1e-12 relative).
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidConfig("qubo matrix must be square".into()));
        }
        let m = Self {
            dim,
            data: rows.into_iter().flatten().collect(),
        };
        if m.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("qubo matrix has non-finite entries".into()));
        }
        if !m.is_symmetric(1e-12) {
            return Err(Error::InvalidConfig("qubo matrix is not symmetric".into()));
        }
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.data[j * self.dim + k]
    }

    #[inline]
    pub fn set(&mut self, j: usize, k: usize, value: f64) {
        self.data[j * self.dim + k] = value;
    }

    pub fn set_symmetric(&mut self, j: usize, k: usize, value: f64) {
        self.set(j, k, value);
        self.set(k, j, value);
    }

    #[inline]
    pub fn row(&self, j: usize) -> &[f64] {
        &self.data[j * self.dim..(j + 1) * self.dim]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim).map(|j| self.row(j).to_vec()).collect()
    }

    pub fn is_symmetric(&self, rel_tol: f64) -> bool {
        (0..self.dim).all(|j| {
            (j + 1..self.dim).all(|k| {
                let (a, b) = (self.get(j, k), self.get(k, j));
                (a - b).abs() <= rel_tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
            })
        })
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Per-neuron residuals `d_i` for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualD(pub Vec<f64>);

/// Floor codes and scale constants of one layer.
struct LayerCodes<'a> {
    layer: &'a DenseLayer,
    weight_floor: Vec<f64>,
    bias_term: Vec<f64>,
    input_scale: f64,
    product: f64,
}

impl<'a> LayerCodes<'a> {
    fn new(layer: &'a DenseLayer, scales: &LayerScales) -> Self {
        let ratio = scales.ratio();
        Self {
            layer,
            weight_floor: layer
                .weights()
                .iter()
                .map(|&w| floor_code(w, scales.weight.scale) as f64)
                .collect(),
            bias_term: layer
                .bias()
                .iter()
                .map(|&b| ratio * floor_code(b, scales.bias.scale) as f64)
                .collect(),
            input_scale: scales.input.scale,
            product: scales.product(),
        }
    }

    /// Input codes `x̃` and residuals `d` of one sample.
    fn sample(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let f = self.layer.inputs();
        let codes: Vec<f64> = x.iter().map(|&xj| rtn_code(xj, self.input_scale) as f64).collect();
        let y = self.layer.pre_activation(x);
        let d = y
            .iter()
            .enumerate()
            .map(|(i, &yi)| {
                let floor_row = &self.weight_floor[i * f..(i + 1) * f];
                let recon: f64 = floor_row.iter().zip(&codes).map(|(w, c)| w * c).sum();
                yi / self.product - recon - self.bias_term[i]
            })
            .collect();
        (codes, d)
    }
}

pub fn residual_d(layer: &DenseLayer, scales: &LayerScales, x: &[f64]) -> Result<ResidualD> {
    check_width(0, layer.inputs(), x.len())?;
    Ok(ResidualD(LayerCodes::new(layer, scales).sample(x).1))
}

fn assemble(codes: &[f64], gram: impl Fn(usize, usize) -> f64, dx: &[f64], d: f64, ratio: f64) -> QuboMatrix {
    let f = codes.len();
    let mut s = QuboMatrix::zeros(f + 1);
    for j in 0..f {
        s.set(j, j, gram(j, j) - 2.0 * dx[j]);
        for k in j + 1..f {
            s.set_symmetric(j, k, gram(j, k));
        }
        s.set_symmetric(j, f, ratio * codes[j]);
    }
    s.set(f, f, ratio * ratio - 2.0 * ratio * d);
    s
}

/// The `n` subproblem matrices of a single sample.
pub fn build_subproblem_sample(layer: &DenseLayer, scales: &LayerScales, x: &[f64]) -> Result<Vec<QuboMatrix>> {
    check_width(0, layer.inputs(), x.len())?;
    let (codes, d) = LayerCodes::new(layer, scales).sample(x);
    let ratio = scales.ratio();
    Ok(d.iter()
        .map(|&di| {
            let dx: Vec<f64> = codes.iter().map(|c| di * c).collect();
            assemble(&codes, |j, k| codes[j] * codes[k], &dx, di, ratio)
        })
        .collect())
}

/// Running sums of the sample moments the averaged matrices depend on.
#[derive(Debug, Clone)]
struct Moments {
    count: usize,
    gram: Vec<f64>,
    codes: Vec<f64>,
    d: Vec<f64>,
    d2: Vec<f64>,
    dx: Vec<f64>,
}

impl Moments {
    fn zeros(f: usize, n: usize) -> Self {
        Self {
            count: 0,
            gram: vec![0.0; f * f],
            codes: vec![0.0; f],
            d: vec![0.0; n],
            d2: vec![0.0; n],
            dx: vec![0.0; n * f],
        }
    }

    fn push(&mut self, codes: &[f64], d: &[f64]) {
        let f = codes.len();
        self.count += 1;
        for (j, &cj) in codes.iter().enumerate() {
            self.codes[j] += cj;
            if cj != 0.0 {
                for (g, &ck) in self.gram[j * f..(j + 1) * f].iter_mut().zip(codes) {
                    *g += cj * ck;
                }
            }
        }
        for (i, &di) in d.iter().enumerate() {
            self.d[i] += di;
            self.d2[i] += di * di;
            for (acc, &c) in self.dx[i * f..(i + 1) * f].iter_mut().zip(codes) {
                *acc += di * c;
            }
        }
    }

    fn merge(mut self, other: &Moments) -> Self {
        self.count += other.count;
        for (a, b) in [
            (&mut self.gram, &other.gram),
            (&mut self.codes, &other.codes),
            (&mut self.d, &other.d),
            (&mut self.d2, &other.d2),
            (&mut self.dx, &other.dx),
        ] {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        self
    }

    fn scale(&mut self, factor: f64) {
        for v in self
            .gram
            .iter_mut()
            .chain(&mut self.codes)
            .chain(&mut self.d)
            .chain(&mut self.d2)
            .chain(&mut self.dx)
        {
            *v *= factor;
        }
    }
}

/// Fixed-shape pairwise tree over the samples: the reduction order depends
/// only on the sample count, never on how rayon schedules the halves.
fn accumulate(codes: &LayerCodes<'_>, inputs: &[Vec<f64>]) -> Moments {
    if inputs.len() <= LEAF_SAMPLES {
        let mut m = Moments::zeros(codes.layer.inputs(), codes.layer.outputs());
        for x in inputs {
            let (c, d) = codes.sample(x);
            m.push(&c, &d);
        }
        return m;
    }
    let (left, right) = inputs.split_at(inputs.len() / 2);
    let (a, b) = rayon::join(|| accumulate(codes, left), || accumulate(codes, right));
    a.merge(&b)
}

/// Averaged subproblem matrices `E[S_i]` of one layer.
///
/// Stored as the shared moments; [`SubproblemBatch::subproblem`] assembles a
/// neuron's matrix on demand. Matrices of different neurons differ only on
/// the diagonal.
#[derive(Debug, Clone)]
pub struct SubproblemBatch {
    pub layer: usize,
    inputs: usize,
    outputs: usize,
    samples: usize,
    ratio: f64,
    scale_product: f64,
    gram: Vec<f64>,
    mean_codes: Vec<f64>,
    mean_d: Vec<f64>,
    mean_d2: Vec<f64>,
    mean_dx: Vec<f64>,
}

impl SubproblemBatch {
    pub fn build(layer_index: usize, layer: &DenseLayer, scales: &LayerScales, inputs: &[Vec<f64>]) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::Empty("calibration set"));
        }
        if let Some(x) = inputs.iter().find(|x| x.len() != layer.inputs()) {
            check_width(layer_index, layer.inputs(), x.len())?;
        }
        let codes = LayerCodes::new(layer, scales);
        let mut m = accumulate(&codes, inputs);
        m.scale(1.0 / m.count as f64);
        Ok(Self {
            layer: layer_index,
            inputs: layer.inputs(),
            outputs: layer.outputs(),
            samples: m.count,
            ratio: scales.ratio(),
            scale_product: scales.product(),
            gram: m.gram,
            mean_codes: m.codes,
            mean_d: m.d,
            mean_d2: m.d2,
            mean_dx: m.dx,
        })
    }

    /// Input width `f`; every subproblem has `f + 1` variables.
    pub fn inputs(&self) -> usize {
        self.inputs
    }

    /// Number of subproblems `n`.
    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    /// `s_w s_x`.
    pub fn scale_product(&self) -> f64 {
        self.scale_product
    }

    /// `E[x̃_j x̃_k]`.
    pub fn gram(&self, j: usize, k: usize) -> f64 {
        self.gram[j * self.inputs + k]
    }

    pub fn mean_codes(&self) -> &[f64] {
        &self.mean_codes
    }

    pub fn mean_d(&self) -> &[f64] {
        &self.mean_d
    }

    /// `E[d_i x̃_j]` for neuron `i`.
    pub fn mean_dx(&self, i: usize) -> &[f64] {
        &self.mean_dx[i * self.inputs..(i + 1) * self.inputs]
    }

    /// `E[S_i]`.
    pub fn subproblem(&self, i: usize) -> QuboMatrix {
        assemble(
            &self.mean_codes,
            |j, k| self.gram(j, k),
            self.mean_dx(i),
            self.mean_d[i],
            self.ratio,
        )
    }

    /// Plan-independent part of the averaged error, `E[Σ_i d_i²]`, in
    /// rescaled units.
    pub fn constant_term(&self) -> f64 {
        self.mean_d2.iter().sum()
    }

    /// Mean squared reconstruction error in real units for a given total
    /// layer cost `Σ_i v_iᵀ E[S_i] v_i`.
    pub fn mean_error_for_cost(&self, cost: f64) -> f64 {
        self.scale_product * self.scale_product * (self.constant_term() + cost)
    }

    /// The full `(n f + n)`-square matrix over all rounding bits of the layer,
    /// ordered `v_11..v_1f, .., v_n1..v_nf, v_1..v_n`. Verification only.
    pub fn full_matrix(&self, cap: usize) -> Result<QuboMatrix> {
        let (f, n) = (self.inputs, self.outputs);
        let dim = n * f + n;
        if dim > cap {
            return Err(Error::TooLarge {
                what: "the full layer matrix",
                dim,
                limit: cap,
            });
        }
        let mut m = QuboMatrix::zeros(dim);
        for i in 0..n {
            let s = self.subproblem(i);
            let index = |a: usize| if a < f { i * f + a } else { n * f + i };
            for a in 0..=f {
                for b in 0..=f {
                    m.set(index(a), index(b), s.get(a, b));
                }
            }
        }
        Ok(m)
    }

    /// Index of the neuron-`i` subproblem variables inside the full matrix.
    pub fn full_index(&self, i: usize, a: usize) -> usize {
        if a < self.inputs {
            i * self.inputs + a
        } else {
            self.outputs * self.inputs + i
        }
    }
}

pub fn build_batch(
    layer_index: usize,
    layer: &DenseLayer,
    scales: &LayerScales,
    inputs: &[Vec<f64>],
) -> Result<SubproblemBatch> {
    SubproblemBatch::build(layer_index, layer, scales, inputs)
}

/// Full matrix of a layer, refused above `cap` variables.
pub fn build_full_m(layer: &DenseLayer, scales: &LayerScales, inputs: &[Vec<f64>], cap: usize) -> Result<QuboMatrix> {
    let dim = layer.outputs() * layer.inputs() + layer.outputs();
    if dim > cap {
        return Err(Error::TooLarge {
            what: "the full layer matrix",
            dim,
            limit: cap,
        });
    }
    SubproblemBatch::build(0, layer, scales, inputs)?.full_matrix(cap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Activation;
    use crate::quant::QuantParams;

    fn scales(sw: f64, sb: f64, sx: f64) -> LayerScales {
        LayerScales {
            weight: QuantParams::with_scale(sw, 0, 8).unwrap(),
            bias: QuantParams::with_scale(sb, 0, 8).unwrap(),
            input: QuantParams::with_scale(sx, 0, 8).unwrap(),
        }
    }

    fn scalar_layer(w: f64, b: f64) -> DenseLayer {
        DenseLayer::new(vec![vec![w]], vec![b], Activation::None).unwrap()
    }

    #[test]
    fn residual_of_scalar_layer() {
        let d = residual_d(&scalar_layer(0.3, 0.0), &scales(0.25, 0.0625, 0.25), &[0.25]).unwrap();
        assert!((d.0[0] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn residual_vanishes_on_grid() {
        let layer = DenseLayer::new(vec![vec![0.5, -0.25], vec![0.75, 1.0]], vec![0.125, -0.5], Activation::Relu).unwrap();
        let d = residual_d(&layer, &scales(0.25, 0.125, 0.5), &[1.0, -1.5]).unwrap();
        assert!(d.0.iter().all(|&v| v == 0.0), "{:?}", d.0);
    }

    #[test]
    fn residual_with_zero_input() {
        let layer = DenseLayer::new(vec![vec![0.3, -0.7]], vec![0.33], Activation::None).unwrap();
        let s = scales(0.1, 0.05, 0.2);
        let d = residual_d(&layer, &s, &[0.0, 0.0]).unwrap();
        let expected = 0.33 / s.product() - s.ratio() * (0.33f64 / 0.05).floor();
        assert!((d.0[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn scalar_subproblem_matrix() {
        let s = build_subproblem_sample(&scalar_layer(0.3, 0.0), &scales(0.25, 0.0625, 0.25), &[0.25]).unwrap();
        let m = &s[0];
        // r = 0.0625 / (0.25 * 0.25) = 1
        assert!((m.get(0, 0) - 0.6).abs() < 1e-12);
        assert!((m.get(1, 1) - 0.6).abs() < 1e-12);
        assert_eq!(m.get(0, 1), 1.0);
        assert_eq!(m.get(1, 0), 1.0);
    }

    #[test]
    fn batch_of_one_matches_sample() {
        let layer = DenseLayer::new(vec![vec![0.31, -0.72, 0.05], vec![-0.4, 0.18, 0.9]], vec![0.11, -0.07], Activation::None)
            .unwrap();
        let s = scales(0.07, 0.03, 0.11);
        let x = vec![0.4, -0.9, 1.3];
        let single = build_subproblem_sample(&layer, &s, &x).unwrap();
        let batch = build_batch(0, &layer, &s, std::slice::from_ref(&x)).unwrap();
        let twice = build_batch(0, &layer, &s, &[x.clone(), x]).unwrap();
        for (i, b) in single.iter().enumerate() {
            assert_eq!(&batch.subproblem(i), b);
            let a = twice.subproblem(i);
            for j in 0..4 {
                for k in 0..4 {
                    assert!((a.get(j, k) - b.get(j, k)).abs() <= 1e-12 * b.get(j, k).abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn subproblems_share_off_diagonal() {
        let layer = DenseLayer::new(vec![vec![0.3, -0.2], vec![0.1, 0.5], vec![-0.6, 0.05]], vec![0.2, -0.1, 0.0], Activation::None)
            .unwrap();
        let batch = build_batch(0, &layer, &scales(0.05, 0.02, 0.1), &[vec![0.3, 0.7], vec![-0.2, 0.9]]).unwrap();
        let mats: Vec<QuboMatrix> = (0..3).map(|i| batch.subproblem(i)).collect();
        for m in &mats {
            assert!(m.is_symmetric(0.0));
        }
        for j in 0..3 {
            for k in 0..3 {
                if j != k {
                    assert_eq!(mats[0].get(j, k), mats[1].get(j, k));
                    assert_eq!(mats[0].get(j, k), mats[2].get(j, k));
                }
            }
        }
    }

    #[test]
    fn empty_and_mismatched_calibration() {
        let layer = scalar_layer(0.3, 0.1);
        let s = scales(0.1, 0.1, 0.1);
        assert!(matches!(build_batch(0, &layer, &s, &[]), Err(Error::Empty(_))));
        assert!(matches!(
            build_batch(2, &layer, &s, &[vec![1.0, 2.0]]),
            Err(Error::DimensionMismatch { layer: 2, .. })
        ));
    }

    #[test]
    fn full_matrix_cap_and_single_neuron() {
        let layer = DenseLayer::new(vec![vec![0.3, -0.2, 0.4]], vec![0.2], Activation::None).unwrap();
        let s = scales(0.05, 0.02, 0.1);
        let inputs = vec![vec![0.3, 0.7, -0.1]];
        let m = build_full_m(&layer, &s, &inputs, FULL_MATRIX_CAP).unwrap();
        let batch = build_batch(0, &layer, &s, &inputs).unwrap();
        assert_eq!(m, batch.subproblem(0));
        assert!(matches!(build_full_m(&layer, &s, &inputs, 3), Err(Error::TooLarge { dim: 4, .. })));
    }

    #[test]
    fn from_rows_validates() {
        assert!(QuboMatrix::from_rows(vec![vec![1.0, 2.0], vec![2.0, 1.0]]).is_ok());
        assert!(QuboMatrix::from_rows(vec![vec![1.0, 2.0], vec![3.0, 1.0]]).is_err());
        assert!(QuboMatrix::from_rows(vec![vec![1.0, 2.0]]).is_err());
        assert!(QuboMatrix::from_rows(vec![vec![f64::NAN]]).is_err());
    }
}
