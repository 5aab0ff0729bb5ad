//! QUBO minimization: exhaustive enumeration for small problems and
//! simulated annealing with restarts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::ExactSum;
use crate::qubo::QuboMatrix;

/// Largest dimension [`solve_exact`] accepts.
pub const EXACT_MAX_DIM: usize = 24;

/// Name of the generator behind every random choice, recorded in outputs.
pub const RNG_NAME: &str = "chacha8";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitPolicy {
    /// Start from the supplied seed vector (zeros if none).
    RtnSeed,
    Zeros,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    pub seed: u64,
    pub restarts: usize,
    /// Sweeps per restart; `None` means `100 * dim`.
    pub sweeps: Option<usize>,
    /// Probability of accepting the median uphill move at the start.
    pub initial_acceptance: f64,
    /// Final temperature as a fraction of the initial one.
    pub final_temperature_factor: f64,
    pub init: InitPolicy,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            restarts: 8,
            sweeps: None,
            initial_acceptance: 0.8,
            final_temperature_factor: 1e-3,
            init: InitPolicy::RtnSeed,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::InvalidConfig("restarts must be at least 1".into()));
        }
        if self.sweeps == Some(0) {
            return Err(Error::InvalidConfig("sweeps must be at least 1".into()));
        }
        if !(self.initial_acceptance > 0.0 && self.initial_acceptance < 1.0) {
            return Err(Error::InvalidConfig("initial acceptance must lie in (0, 1)".into()));
        }
        if !(self.final_temperature_factor > 0.0 && self.final_temperature_factor < 1.0) {
            return Err(Error::InvalidConfig("final temperature factor must lie in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn sweeps_for(&self, dim: usize) -> usize {
        self.sweeps.unwrap_or(100 * dim).max(1)
    }

    /// Same settings with the seed mixed with a subproblem identity, so each
    /// subproblem gets an independent stream regardless of solve order.
    pub fn for_subproblem(&self, layer: usize, neuron: usize) -> Self {
        let key = ((layer as u64) << 32) | neuron as u64;
        Self {
            seed: self.seed ^ splitmix64(key),
            ..*self
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Exact,
    Sa,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub v: Vec<u8>,
    pub energy: f64,
    pub solver: SolverKind,
    pub restarts_used: usize,
    pub sweeps_used: usize,
}

/// `vᵀ Q v`, summed exactly (the result is independent of term order).
pub fn energy(q: &QuboMatrix, v: &[u8]) -> f64 {
    assert_eq!(q.dim(), v.len(), "vector length must match matrix dimension");
    let mut acc = ExactSum::new();
    add_energy_terms(&mut acc, q, v, |j| j);
    acc.value()
}

/// Adds the terms of `vᵀ Q v` to `acc`, with `v` indexed through `index`.
pub(crate) fn add_energy_terms(acc: &mut ExactSum, q: &QuboMatrix, v: &[u8], index: impl Fn(usize) -> usize) {
    let dim = q.dim();
    for j in (0..dim).filter(|&j| v[index(j)] != 0) {
        for k in (0..dim).filter(|&k| v[index(k)] != 0) {
            acc.add(q.get(j, k));
        }
    }
}

/// `energy(flip(v, j)) - energy(v)` in `O(dim)` for symmetric `q`.
pub fn delta_energy(q: &QuboMatrix, v: &[u8], j: usize) -> f64 {
    let row = q.row(j);
    let coupling: f64 = row
        .iter()
        .zip(v)
        .enumerate()
        .filter(|&(k, (_, &vk))| k != j && vk != 0)
        .map(|(_, (q, _))| q)
        .sum();
    let sign = if v[j] == 0 { 1.0 } else { -1.0 };
    sign * (row[j] + 2.0 * coupling)
}

/// Incremental state: `field[j] = Σ_{k≠j} Q[j][k] v_k`.
struct FlipState<'a> {
    q: &'a QuboMatrix,
    v: Vec<u8>,
    field: Vec<f64>,
    energy: f64,
}

impl<'a> FlipState<'a> {
    fn new(q: &'a QuboMatrix, v: Vec<u8>) -> Self {
        let dim = q.dim();
        let mut field = vec![0.0; dim];
        for (j, f) in field.iter_mut().enumerate() {
            *f = (0..dim).filter(|&k| k != j && v[k] != 0).map(|k| q.get(j, k)).sum();
        }
        let energy = energy(q, &v);
        Self { q, v, field, energy }
    }

    #[inline]
    fn delta(&self, j: usize) -> f64 {
        let sign = if self.v[j] == 0 { 1.0 } else { -1.0 };
        sign * (self.q.get(j, j) + 2.0 * self.field[j])
    }

    #[inline]
    fn flip(&mut self, j: usize, delta: f64) {
        let step = if self.v[j] == 0 { 1.0 } else { -1.0 };
        self.v[j] ^= 1;
        self.energy += delta;
        for (k, (f, q)) in self.field.iter_mut().zip(self.q.row(j)).enumerate() {
            if k != j {
                *f += step * q;
            }
        }
    }
}

/// True when `a` precedes `b` lexicographically.
fn lex_less(a: &[u8], b: &[u8]) -> bool {
    a < b
}

/// Global minimum by enumeration in Gray-code order. Ties go to the
/// lexicographically smallest vector.
pub fn solve_exact(q: &QuboMatrix) -> Result<Solution> {
    let dim = q.dim();
    if dim > EXACT_MAX_DIM {
        return Err(Error::TooLarge {
            what: "exhaustive search (use simulated annealing)",
            dim,
            limit: EXACT_MAX_DIM,
        });
    }
    // Candidates within `tol` of the running incremental minimum are
    // re-scored exactly, which absorbs drift in the incremental energy.
    let tol = 1e-9 * (1.0 + q.max_abs() * (dim * dim) as f64);
    let mut state = FlipState::new(q, vec![0; dim]);
    let mut best_v = state.v.clone();
    let mut best_exact = state.energy;
    let mut best_running = state.energy;
    for step in 1u64..(1u64 << dim) {
        let j = step.trailing_zeros() as usize;
        let delta = state.delta(j);
        state.flip(j, delta);
        if state.energy <= best_running + tol {
            let exact = energy(q, &state.v);
            if exact < best_exact || (exact == best_exact && lex_less(&state.v, &best_v)) {
                best_exact = exact;
                best_v = state.v.clone();
            }
            best_running = best_running.min(state.energy);
        }
    }
    Ok(Solution {
        v: best_v,
        energy: best_exact,
        solver: SolverKind::Exact,
        restarts_used: 0,
        sweeps_used: 0,
    })
}

/// Initial temperature: the median uphill step over 100 random flips from
/// `start` is accepted with probability `acceptance`.
fn initial_temperature(q: &QuboMatrix, start: &[u8], acceptance: f64, rng: &mut ChaCha8Rng) -> f64 {
    let dim = q.dim();
    let mut state = FlipState::new(q, start.to_vec());
    let mut uphill = Vec::with_capacity(100);
    for _ in 0..100 {
        let j = rng.random_range(0..dim);
        let delta = state.delta(j);
        if delta > 0.0 {
            uphill.push(delta);
        }
        state.flip(j, delta);
    }
    let fallback = q.max_abs().max(f64::MIN_POSITIVE);
    if uphill.is_empty() {
        return fallback;
    }
    uphill.sort_by(f64::total_cmp);
    let median = uphill[uphill.len() / 2];
    if median > 0.0 {
        -median / acceptance.ln()
    } else {
        fallback
    }
}

/// Simulated annealing with restarts and a geometric cooling schedule.
///
/// Every restart runs `sweeps` passes over the variables in index order,
/// cooling from `T0` to `T0 * final_temperature_factor`. The best vector
/// visited across all restarts is returned, and `seed_vector`, when given,
/// is itself a candidate, so the result never scores above it.
pub fn solve_sa(q: &QuboMatrix, cfg: &SolveConfig, seed_vector: Option<&[u8]>) -> Result<Solution> {
    cfg.validate()?;
    let dim = q.dim();
    if let Some(s) = seed_vector {
        if s.len() != dim || s.iter().any(|&b| b > 1) {
            return Err(Error::InvalidConfig("seed vector must be binary with the matrix dimension".into()));
        }
    }
    let sweeps = cfg.sweeps_for(dim);
    let mut best = match seed_vector {
        Some(s) => (s.to_vec(), energy(q, s)),
        None => (vec![0; dim], 0.0),
    };
    if dim == 0 {
        return Ok(Solution {
            v: best.0,
            energy: 0.0,
            solver: SolverKind::Sa,
            restarts_used: cfg.restarts,
            sweeps_used: 0,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 0..cfg.restarts {
        let start: Vec<u8> = match (cfg.init, seed_vector) {
            (InitPolicy::RtnSeed, Some(s)) => s.to_vec(),
            (InitPolicy::RtnSeed, None) | (InitPolicy::Zeros, _) => vec![0; dim],
            (InitPolicy::Random, _) => (0..dim).map(|_| rng.random_range(0..2u8)).collect(),
        };
        let t0 = initial_temperature(q, &start, cfg.initial_acceptance, &mut rng);
        let cooling = if sweeps > 1 {
            cfg.final_temperature_factor.powf(1.0 / (sweeps - 1) as f64)
        } else {
            1.0
        };

        let mut state = FlipState::new(q, start);
        let mut run_best_v = state.v.clone();
        let mut run_best_e = state.energy;
        let mut temperature = t0;
        for _ in 0..sweeps {
            for j in 0..dim {
                let delta = state.delta(j);
                let accept = delta <= 0.0 || rng.random::<f64>() < (-delta / temperature).exp();
                if accept {
                    state.flip(j, delta);
                    if state.energy < run_best_e {
                        run_best_e = state.energy;
                        run_best_v.copy_from_slice(&state.v);
                    }
                }
            }
            temperature *= cooling;
        }

        let exact = energy(q, &run_best_v);
        if exact < best.1 {
            best = (run_best_v, exact);
        }
    }

    Ok(Solution {
        v: best.0,
        energy: best.1,
        solver: SolverKind::Sa,
        restarts_used: cfg.restarts,
        sweeps_used: sweeps,
    })
}
