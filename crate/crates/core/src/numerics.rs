//! Numerically stable primitives, a small dense matrix and seeded random streams.
//!
//! Everything downstream works in 64-bit floats. Binary vectors are stored as
//! `f64` slices holding exactly `0.0` or `1.0` so they can feed matrix products
//! directly.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

/// Clamp applied to every Bernoulli mean before a logarithm is taken.
pub const MEAN_EPS: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("degenerate weight vector")]
    DegenerateWeights,
    #[error("empty input vector")]
    Empty,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

pub(crate) fn check_len(expected: usize, got: usize) -> Result<(), NumericsError> {
    if expected == got {
        Ok(())
    } else {
        Err(NumericsError::DimensionMismatch { expected, got })
    }
}

#[inline]
pub fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn clamp_mean(mu: f64) -> f64 {
    mu.clamp(MEAN_EPS, 1.0 - MEAN_EPS)
}

/// `log Σ exp(v_i)` with max subtraction.
pub fn logsumexp(v: &[f64]) -> Result<f64, NumericsError> {
    if v.is_empty() {
        return Err(NumericsError::Empty);
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() || v.iter().any(|x| x.is_nan()) {
        return Err(NumericsError::DegenerateWeights);
    }
    if v.len() == 1 {
        return Ok(v[0]);
    }
    let sum: f64 = v.iter().map(|&x| (x - max).exp()).sum();
    Ok(max + sum.ln())
}

/// Log-domain importance weights `log w^(k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogWeights(pub Vec<f64>);

impl LogWeights {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Self-normalized weights plus the degeneracy flag raised when the
/// log-weights could not be normalized and uniform weights were substituted.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedWeights {
    pub weights: Vec<f64>,
    pub degenerate: bool,
}

pub fn normalize_log_weights(log_w: &[f64]) -> NormalizedWeights {
    let k = log_w.len();
    match logsumexp(log_w) {
        Ok(total) => NormalizedWeights {
            weights: log_w.iter().map(|&l| (l - total).exp()).collect(),
            degenerate: false,
        },
        Err(_) => NormalizedWeights {
            weights: vec![1.0 / k.max(1) as f64; k],
            degenerate: true,
        },
    }
}

/// Log-pmf of one Bernoulli unit with an already clamped mean.
#[inline]
pub(crate) fn bit_logpmf(bit: f64, mu: f64) -> f64 {
    if bit > 0.5 {
        mu.ln()
    } else {
        (1.0 - mu).ln()
    }
}

/// `Σ_i [b_i ln μ_i + (1 − b_i) ln(1 − μ_i)]` with μ clamped to `[ε, 1 − ε]`.
pub fn bernoulli_logpmf(bits: &[f64], mu: &[f64]) -> Result<f64, NumericsError> {
    check_len(mu.len(), bits.len())?;
    Ok(bits
        .iter()
        .zip(mu)
        .map(|(&b, &m)| bit_logpmf(b, clamp_mean(m)))
        .sum())
}

pub fn bernoulli_sample(mu: &[f64], rng: &mut RandomStream) -> Vec<f64> {
    let mut out = vec![0.0; mu.len()];
    bernoulli_sample_into(mu, rng, &mut out);
    out
}

/// Draws one uniform per unit; bit is set iff `u < μ`, so means of exactly
/// 0 and 1 are deterministic.
pub fn bernoulli_sample_into(mu: &[f64], rng: &mut RandomStream, out: &mut [f64]) {
    debug_assert_eq!(mu.len(), out.len());
    for (o, &m) in out.iter_mut().zip(mu) {
        *o = if rng.uniform() < m { 1.0 } else { 0.0 };
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumericsError> {
        check_len(rows * cols, data.len())?;
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// `out = M v + bias`.
    pub fn affine_into(&self, v: &[f64], bias: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.cols);
        debug_assert_eq!(bias.len(), self.rows);
        debug_assert_eq!(out.len(), self.rows);
        for ((o, row), &b) in out.iter_mut().zip(self.data.chunks_exact(self.cols)).zip(bias) {
            *o = b + dot(row, v);
        }
    }

    /// `out += Mᵀ u`.
    pub fn add_transpose_mul(&self, u: &[f64], out: &mut [f64]) {
        debug_assert_eq!(u.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (row, &ui) in self.data.chunks_exact(self.cols).zip(u) {
            if ui != 0.0 {
                for (o, &m) in out.iter_mut().zip(row) {
                    *o += m * ui;
                }
            }
        }
    }

    /// `M += alpha · u vᵀ`.
    pub fn add_outer(&mut self, alpha: f64, u: &[f64], v: &[f64]) {
        debug_assert_eq!(u.len(), self.rows);
        debug_assert_eq!(v.len(), self.cols);
        let cols = self.cols;
        for (row, &ui) in self.data.chunks_exact_mut(cols).zip(u) {
            let s = alpha * ui;
            if s != 0.0 {
                for (m, &vj) in row.iter_mut().zip(v) {
                    *m += s * vj;
                }
            }
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// Stream tags separating the independent purposes a single item's randomness
// is used for.
pub const TAG_REFINE: u64 = 0x5245_4649;
pub const TAG_GRADIENT: u64 = 0x4752_4144;
pub const TAG_EVAL: u64 = 0x4556_414c;
pub const TAG_SLEEP: u64 = 0x534c_4550;
pub const TAG_SHUFFLE: u64 = 0x5348_5546;
pub const TAG_INIT: u64 = 0x494e_4954;
pub const TAG_DEGRADE: u64 = 0x4445_4752;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A reproducible random stream identified by `(seed, stream_id)`.
///
/// Backed by ChaCha8 with the stream id mapped onto the cipher's stream
/// counter, so distinct ids never overlap and the sequence does not depend on
/// the thread that consumes it.
#[derive(Debug, Clone)]
pub struct RandomStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RandomStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Fresh stream derived from this stream's identity and `tag`; does not
    /// consume state from `self`.
    pub fn substream(&self, tag: u64) -> Self {
        Self::new(self.seed, splitmix64(self.stream_id ^ splitmix64(tag)))
    }

    /// Uniform on `[0, 1)`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        mean + std * self.standard_normal()
    }
}

impl RngCore for RandomStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}
