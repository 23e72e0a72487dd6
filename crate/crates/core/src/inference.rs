//! Importance weighting, bound estimates, effective sample size and adaptive
//! importance refinement (AIR).
//!
//! AIR treats the true posterior mean as an importance-sampling expectation
//! under the current factorized proposal,
//! `μ̂ ≈ Σ_m w̃^(m) h^(m)`, `h^(m) ~ Bernoulli(μ_t)`, and takes a damped step
//! `μ_{t+1} = (1 − γ) μ_t + γ μ̂`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::GenerativeParams;
use crate::numerics::{
    bernoulli_sample_into, clamp_mean, logsumexp, normalize_log_weights, LogWeights, Matrix,
    RandomStream,
};
use crate::recognition::{LogMeans, VariationalState};

/// Which importance weights drive normalization and refinement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightScheme {
    /// `w = p(x, h) / q(h | x)`.
    #[default]
    Standard,
    /// `w = sqrt(p(x, h) / q(h | x))`, the bidirectional Helmholtz machine weights.
    Bihm,
}

impl WeightScheme {
    #[inline]
    fn apply(self, standard_log_w: f64) -> f64 {
        match self {
            WeightScheme::Standard => standard_log_w,
            WeightScheme::Bihm => 0.5 * standard_log_w,
        }
    }
}

/// K latent samples from a proposal with their weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceSet {
    pub samples: Vec<Vec<f64>>,
    /// Standard log-weights `log p(x, h^(k)) − log q(h^(k) | x)`, or the
    /// scheme-transformed weights when built with [`WeightScheme::Bihm`].
    pub log_w: LogWeights,
    pub w_tilde: Vec<f64>,
    pub degenerate: bool,
}

impl ImportanceSet {
    /// Weights given samples that were drawn from the factorized `mu`.
    pub fn from_samples(
        gen: &GenerativeParams,
        x: &[f64],
        mu: &[f64],
        samples: Vec<Vec<f64>>,
        scheme: WeightScheme,
    ) -> Self {
        let q = LogMeans::new(mu);
        let joint = gen.scorer();
        let log_w: Vec<f64> = samples
            .iter()
            .map(|h| scheme.apply(joint.logp(x, h) - q.logpmf(h)))
            .collect();
        Self::from_log_weights(samples, log_w)
    }

    pub fn from_log_weights(samples: Vec<Vec<f64>>, log_w: Vec<f64>) -> Self {
        let norm = normalize_log_weights(&log_w);
        Self {
            samples,
            log_w: LogWeights(log_w),
            w_tilde: norm.weights,
            degenerate: norm.degenerate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

fn check_proposal(gen: &GenerativeParams, x: &[f64], mu: &[f64]) -> Result<()> {
    crate::error::check_dim("observation", gen.visible_dim(), x.len())?;
    crate::error::check_dim("variational means", gen.total_latent(), mu.len())
}

fn draw(mu: &[f64], count: usize, rng: &mut RandomStream) -> Vec<Vec<f64>> {
    let clamped: Vec<f64> = mu.iter().map(|&m| clamp_mean(m)).collect();
    (0..count)
        .map(|_| {
            let mut h = vec![0.0; mu.len()];
            bernoulli_sample_into(&clamped, rng, &mut h);
            h
        })
        .collect()
}

/// Draws `k` samples from `q(·; mu)` and weights them with standard weights.
pub fn importance_set(
    gen: &GenerativeParams,
    x: &[f64],
    mu: &[f64],
    k: usize,
    rng: &mut RandomStream,
) -> Result<ImportanceSet> {
    importance_set_with(gen, x, mu, k, WeightScheme::Standard, rng)
}

pub fn importance_set_with(
    gen: &GenerativeParams,
    x: &[f64],
    mu: &[f64],
    k: usize,
    scheme: WeightScheme,
    rng: &mut RandomStream,
) -> Result<ImportanceSet> {
    check_proposal(gen, x, mu)?;
    if k == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    let samples = draw(mu, k, rng);
    Ok(ImportanceSet::from_samples(gen, x, mu, samples, scheme))
}

/// `(1/K) Σ_k log w^(k)`.
pub fn lowerbound_l1(set: &ImportanceSet) -> f64 {
    let lw = set.log_w.as_slice();
    lw.iter().sum::<f64>() / lw.len() as f64
}

/// `log((1/K) Σ_k w^(k))`; `-inf` when every weight underflowed.
pub fn estimate_lk(set: &ImportanceSet) -> f64 {
    lk_from_log_weights(set.log_w.as_slice())
}

pub fn lk_from_log_weights(log_w: &[f64]) -> f64 {
    match logsumexp(log_w) {
        Ok(t) => t - (log_w.len() as f64).ln(),
        Err(_) => f64::NEG_INFINITY,
    }
}

/// `(Σ w)² / Σ w²` in the log domain, clamped to `[1, K]` against rounding.
pub fn effective_sample_size(set: &ImportanceSet) -> f64 {
    ess_from_log_weights(set.log_w.as_slice())
}

pub fn ess_from_log_weights(log_w: &[f64]) -> f64 {
    let k = log_w.len() as f64;
    let doubled: Vec<f64> = log_w.iter().map(|&l| 2.0 * l).collect();
    match (logsumexp(log_w), logsumexp(&doubled)) {
        (Ok(a), Ok(b)) => (2.0 * a - b).exp().clamp(1.0, k),
        _ => 1.0,
    }
}

/// `0.5 · (log p(x, h) − log q(h | x))` for each sample.
pub fn bihm_log_weights(
    gen: &GenerativeParams,
    x: &[f64],
    samples: &[Vec<f64>],
    mu: &[f64],
) -> LogWeights {
    let q = LogMeans::new(mu);
    let joint = gen.scorer();
    LogWeights(
        samples
            .iter()
            .map(|h| WeightScheme::Bihm.apply(joint.logp(x, h) - q.logpmf(h)))
            .collect(),
    )
}

/// Streaming accumulator for bound and ESS estimates over arbitrarily many
/// log-weights.
#[derive(Debug, Clone)]
pub struct WeightAccumulator {
    count: usize,
    sum_log_w: f64,
    lse: f64,
    lse_sq: f64,
}

impl Default for WeightAccumulator {
    fn default() -> Self {
        Self {
            count: 0,
            sum_log_w: 0.0,
            lse: f64::NEG_INFINITY,
            lse_sq: f64::NEG_INFINITY,
        }
    }
}

#[inline]
fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + (-(a - b).abs()).exp().ln_1p()
}

impl WeightAccumulator {
    pub fn push(&mut self, log_w: f64) {
        self.count += 1;
        self.sum_log_w += log_w;
        self.lse = log_add_exp(self.lse, log_w);
        self.lse_sq = log_add_exp(self.lse_sq, 2.0 * log_w);
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn finish(&self) -> BoundEstimates {
        let k = self.count as f64;
        let ess = if self.lse.is_finite() && self.lse_sq.is_finite() {
            (2.0 * self.lse - self.lse_sq).exp().clamp(1.0, k.max(1.0))
        } else {
            1.0
        };
        BoundEstimates {
            l1: self.sum_log_w / k,
            lk: self.lse - k.ln(),
            ess,
            ess_normalized: ess / k,
        }
    }
}

/// Bound estimates from one set of weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundEstimates {
    /// Mean log-weight.
    pub l1: f64,
    /// Log of the mean weight.
    pub lk: f64,
    pub ess: f64,
    pub ess_normalized: f64,
}

impl BoundEstimates {
    pub fn from_log_weights(log_w: &[f64]) -> Self {
        let mut acc = WeightAccumulator::default();
        log_w.iter().for_each(|&l| acc.push(l));
        acc.finish()
    }
}

/// Draws `k` samples one at a time from `q(·; mu)` and accumulates bound
/// estimates without keeping the samples; memory does not grow with `k`.
pub fn estimate_bounds(
    gen: &GenerativeParams,
    x: &[f64],
    mu: &[f64],
    k: usize,
    scheme: WeightScheme,
    rng: &mut RandomStream,
) -> Result<BoundEstimates> {
    check_proposal(gen, x, mu)?;
    if k == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    let clamped: Vec<f64> = mu.iter().map(|&m| clamp_mean(m)).collect();
    let q = LogMeans::new(&clamped);
    let mut h = vec![0.0; mu.len()];
    let mut acc = WeightAccumulator::default();
    let joint = gen.scorer();
    for _ in 0..k {
        bernoulli_sample_into(&clamped, rng, &mut h);
        acc.push(scheme.apply(joint.logp(x, &h) - q.logpmf(&h)));
    }
    Ok(acc.finish())
}

/// Per-step diagnostics recorded while refining, from the standard weights of
/// the step's samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub l1: f64,
    pub lk: f64,
    pub ess: f64,
    pub ess_normalized: f64,
}

impl From<BoundEstimates> for TraceEntry {
    fn from(b: BoundEstimates) -> Self {
        Self {
            l1: b.l1,
            lk: b.lk,
            ess: b.ess,
            ess_normalized: b.ess_normalized,
        }
    }
}

/// Diagnostics at `t = 0, 1, ..., T`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RefinementTrace {
    pub entries: Vec<TraceEntry>,
}

impl RefinementTrace {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn first(&self) -> &TraceEntry {
        &self.entries[0]
    }

    pub fn last(&self) -> &TraceEntry {
        self.entries.last().expect("trace always has the t = 0 entry")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AirStep {
    pub means: Vec<f64>,
    pub diagnostics: TraceEntry,
    pub degenerate: bool,
}

/// Refinement hyperparameters: `T` steps of rate `γ` with `M` adaptive samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineConfig {
    pub steps: usize,
    pub gamma: f64,
    pub samples: usize,
    pub scheme: WeightScheme,
}

impl RefineConfig {
    pub fn new(steps: usize, gamma: f64, samples: usize) -> Self {
        Self {
            steps,
            gamma,
            samples,
            scheme: WeightScheme::Standard,
        }
    }

    pub fn with_scheme(mut self, scheme: WeightScheme) -> Self {
        self.scheme = scheme;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "inference rate must lie in (0, 1], got {}",
                self.gamma
            )));
        }
        if self.samples == 0 {
            return Err(Error::InvalidArgument("adaptive sample count must be at least 1".into()));
        }
        Ok(())
    }
}

struct StepSamples {
    samples: Vec<Vec<f64>>,
    standard_log_w: Vec<f64>,
}

fn step_samples(
    gen: &GenerativeParams,
    x: &[f64],
    mu: &[f64],
    m: usize,
    rng: &mut RandomStream,
) -> StepSamples {
    let q = LogMeans::new(mu);
    let samples = draw(mu, m, rng);
    let joint = gen.scorer();
    let standard_log_w = samples
        .iter()
        .map(|h| joint.logp(x, h) - q.logpmf(h))
        .collect();
    StepSamples {
        samples,
        standard_log_w,
    }
}

/// `(1 − γ) μ_t + γ Σ_m w̃^(m) h^(m)`, clamped. Degenerate weights leave the
/// means unchanged.
pub fn air_step(
    gen: &GenerativeParams,
    x: &[f64],
    mu: &[f64],
    gamma: f64,
    m: usize,
    scheme: WeightScheme,
    rng: &mut RandomStream,
) -> Result<AirStep> {
    check_proposal(gen, x, mu)?;
    RefineConfig {
        steps: 1,
        gamma,
        samples: m,
        scheme,
    }
    .validate()?;
    Ok(air_step_unchecked(gen, x, mu, gamma, m, scheme, rng))
}

fn air_step_unchecked(
    gen: &GenerativeParams,
    x: &[f64],
    mu: &[f64],
    gamma: f64,
    m: usize,
    scheme: WeightScheme,
    rng: &mut RandomStream,
) -> AirStep {
    let s = step_samples(gen, x, mu, m, rng);
    let diagnostics = BoundEstimates::from_log_weights(&s.standard_log_w).into();
    let active: Vec<f64> = s.standard_log_w.iter().map(|&l| scheme.apply(l)).collect();
    let norm = normalize_log_weights(&active);
    if norm.degenerate {
        return AirStep {
            means: mu.to_vec(),
            diagnostics,
            degenerate: true,
        };
    }
    let mut target = vec![0.0; mu.len()];
    for (h, &w) in s.samples.iter().zip(&norm.weights) {
        for (t, &b) in target.iter_mut().zip(h) {
            *t += w * b;
        }
    }
    let means = mu
        .iter()
        .zip(&target)
        .map(|(&old, &est)| clamp_mean((1.0 - gamma) * old + gamma * est))
        .collect();
    AirStep {
        means,
        diagnostics,
        degenerate: false,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    pub means: Vec<f64>,
    pub trace: RefinementTrace,
    pub degenerate_steps: usize,
}

/// Applies `T` AIR steps from `mu0`. The trace has `T + 1` entries; the last
/// one comes from an extra set of `M` samples drawn at `μ_T`.
pub fn refine(
    gen: &GenerativeParams,
    x: &[f64],
    mu0: &[f64],
    config: &RefineConfig,
    rng: &mut RandomStream,
) -> Result<Refinement> {
    check_proposal(gen, x, mu0)?;
    config.validate()?;
    let mut mu: Vec<f64> = mu0.iter().map(|&m| clamp_mean(m)).collect();
    let mut entries = Vec::with_capacity(config.steps + 1);
    let mut degenerate_steps = 0;
    for _ in 0..config.steps {
        let step = air_step_unchecked(gen, x, &mu, config.gamma, config.samples, config.scheme, rng);
        entries.push(step.diagnostics);
        degenerate_steps += step.degenerate as usize;
        mu = step.means;
    }
    let last = step_samples(gen, x, &mu, config.samples, rng);
    entries.push(BoundEstimates::from_log_weights(&last.standard_log_w).into());
    Ok(Refinement {
        means: mu,
        trace: RefinementTrace { entries },
        degenerate_steps,
    })
}

/// Final means and degenerate-step count of `T` AIR steps, without the
/// diagnostics trace.
pub fn refine_means(
    gen: &GenerativeParams,
    x: &[f64],
    mu0: &[f64],
    config: &RefineConfig,
    rng: &mut RandomStream,
) -> Result<(Vec<f64>, usize)> {
    check_proposal(gen, x, mu0)?;
    if config.steps == 0 {
        return Ok((mu0.iter().map(|&m| clamp_mean(m)).collect(), 0));
    }
    config.validate()?;
    let mut mu: Vec<f64> = mu0.iter().map(|&m| clamp_mean(m)).collect();
    let mut degenerate = 0;
    // Same arithmetic as repeated `air_step`, without per-sample allocation
    // or diagnostics.
    let (d, m) = (mu.len(), config.samples);
    let joint = gen.scorer();
    let mut h = vec![0.0; d * m];
    let mut log_w = vec![0.0; m];
    let mut target = vec![0.0; d];
    for _ in 0..config.steps {
        let q = LogMeans::new(&mu);
        for (hs, lw) in h.chunks_exact_mut(d).zip(log_w.iter_mut()) {
            bernoulli_sample_into(&mu, rng, hs);
            *lw = config.scheme.apply(joint.logp(x, hs) - q.logpmf(hs));
        }
        let norm = normalize_log_weights(&log_w);
        if norm.degenerate {
            degenerate += 1;
            continue;
        }
        target.fill(0.0);
        for (hs, &w) in h.chunks_exact(d).zip(&norm.weights) {
            for (t, &b) in target.iter_mut().zip(hs) {
                *t += w * b;
            }
        }
        for (old, &est) in mu.iter_mut().zip(&target) {
            *old = clamp_mean((1.0 - config.gamma) * *old + config.gamma * est);
        }
    }
    Ok((mu, degenerate))
}

/// Refines every row of `state` independently; `stream(i)` supplies item
/// `i`'s random stream, so results do not depend on scheduling.
pub fn refine_state(
    gen: &GenerativeParams,
    x: &Matrix,
    state: &VariationalState,
    config: &RefineConfig,
    stream: impl Fn(usize) -> RandomStream + Sync,
) -> Result<(VariationalState, Vec<RefinementTrace>)> {
    crate::error::check_dim("batch size", x.rows(), state.batch_size())?;
    let results: Vec<Result<Refinement>> = (0..x.rows())
        .into_par_iter()
        .map(|i| refine(gen, x.row(i), state.item(i), config, &mut stream(i)))
        .collect();
    let mut out = state.clone();
    let mut traces = Vec::with_capacity(results.len());
    for (i, r) in results.into_iter().enumerate() {
        let r = r?;
        out.set_item(i, &r.means);
        traces.push(r.trace);
    }
    Ok((out, traces))
}
