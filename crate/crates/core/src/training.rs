//! Gradient estimators, the refine-then-update training step, the reweighted
//! wake-sleep baseline, and optimizers.
//!
//! All gradients here are ascent directions on the objective. Optimizers
//! apply them as descent on the negation.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::inference::{refine_means, BoundEstimates, ImportanceSet, RefineConfig};
use crate::model::GenerativeParams;
use crate::numerics::{Matrix, RandomStream, TAG_GRADIENT, TAG_REFINE, TAG_SLEEP};
use crate::params::Parameters;
use crate::recognition::{center_row, RecognitionParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Estimator {
    /// Uniform θ-gradient and exclusive-KL φ-gradient from refined samples.
    #[default]
    Air,
    /// Reweighted θ-gradient and exclusive-KL φ-gradient.
    AirRw,
    /// Reweighted θ-gradient and inclusive-KL φ-gradient.
    AirRwIkl,
    /// Reweighted wake-sleep: no refinement, wake updates from `q_0`.
    Rws,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Air => "air",
            Estimator::AirRw => "air_rw",
            Estimator::AirRwIkl => "air_rw_ikl",
            Estimator::Rws => "rws",
        }
    }

    fn reweighted_theta(self) -> bool {
        !matches!(self, Estimator::Air)
    }

    fn inclusive_phi(self) -> bool {
        matches!(self, Estimator::AirRwIkl | Estimator::Rws)
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "air" => Ok(Estimator::Air),
            "air_rw" => Ok(Estimator::AirRw),
            "air_rw_ikl" => Ok(Estimator::AirRwIkl),
            "rws" => Ok(Estimator::Rws),
            other => Err(Error::InvalidArgument(format!("unknown estimator {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub theta: GenerativeParams,
    pub phi: RecognitionParams,
    pub estimator: Estimator,
}

impl GradientBundle {
    pub fn zeros(gen: &GenerativeParams, rec: &RecognitionParams, estimator: Estimator) -> Self {
        Self {
            theta: gen.zeros_like(),
            phi: rec.zeros_like(),
            estimator,
        }
    }

    fn add(&mut self, other: &Self) {
        self.theta.add_scaled(1.0, &other.theta);
        self.phi.add_scaled(1.0, &other.phi);
    }

    /// Name of the first tensor holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<String> {
        self.theta.first_non_finite().or_else(|| self.phi.first_non_finite())
    }
}

/// `(1/N) Σ_n ∇_θ log p(x, h^(n))`.
pub fn grad_theta_uniform(gen: &GenerativeParams, x: &[f64], samples: &[Vec<f64>]) -> GenerativeParams {
    let mut g = gen.zeros_like();
    let scale = 1.0 / samples.len() as f64;
    for h in samples {
        gen.accumulate_joint_grad(x, h, scale, &mut g);
    }
    g
}

/// `Σ_k w̃^(k) ∇_θ log p(x, h^(k))`.
pub fn grad_theta_reweighted(gen: &GenerativeParams, x: &[f64], set: &ImportanceSet) -> GenerativeParams {
    let mut g = gen.zeros_like();
    for (h, &w) in set.samples.iter().zip(&set.w_tilde) {
        gen.accumulate_joint_grad(x, h, w, &mut g);
    }
    g
}

/// `(1/N) Σ_n ∇_φ log q_0(h^(n) | x)`, with the samples treated as constants.
pub fn grad_phi_exclusive(rec: &RecognitionParams, x_centered: &[f64], samples: &[Vec<f64>]) -> RecognitionParams {
    let mut g = rec.zeros_like();
    let scale = 1.0 / samples.len() as f64;
    for h in samples {
        rec.accumulate_score_grad(x_centered, h, scale, &mut g);
    }
    g
}

/// `Σ_k w̃^(k) ∇_φ log q_0(h^(k) | x)`.
pub fn grad_phi_inclusive(rec: &RecognitionParams, x_centered: &[f64], set: &ImportanceSet) -> RecognitionParams {
    let mut g = rec.zeros_like();
    for (h, &w) in set.samples.iter().zip(&set.w_tilde) {
        rec.accumulate_score_grad(x_centered, h, w, &mut g);
    }
    g
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub estimator: Estimator,
    /// Refinement steps `T`, rate `γ` and adaptive samples `M`.
    pub refine: RefineConfig,
    /// Gradient samples `N` drawn from the refined posterior.
    pub grad_samples: usize,
    /// Adds a sleep-phase recognition update to the wake-sleep baseline.
    pub sleep: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            estimator: Estimator::Air,
            refine: RefineConfig::new(20, 0.1, 20),
            grad_samples: 20,
            sleep: false,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.grad_samples == 0 {
            return Err(Error::InvalidArgument("gradient sample count must be at least 1".into()));
        }
        Ok(())
    }

    fn effective_refine(&self) -> RefineConfig {
        let mut r = self.refine;
        if self.estimator == Estimator::Rws {
            r.steps = 0;
        }
        r
    }
}

/// Batch-mean diagnostics of one training step, from the weights of the
/// gradient samples.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepMetrics {
    pub l1: f64,
    pub lk: f64,
    pub ess_normalized: f64,
    /// Weight sets (refinement steps plus gradient sets) that were degenerate.
    pub degenerate: usize,
    pub weight_sets: usize,
    pub items: usize,
}

impl StepMetrics {
    pub fn degenerate_frac(&self) -> f64 {
        if self.weight_sets == 0 {
            0.0
        } else {
            self.degenerate as f64 / self.weight_sets as f64
        }
    }

    fn add(&mut self, other: &Self) {
        self.l1 += other.l1;
        self.lk += other.lk;
        self.ess_normalized += other.ess_normalized;
        self.degenerate += other.degenerate;
        self.weight_sets += other.weight_sets;
        self.items += other.items;
    }

    fn finish(mut self) -> Self {
        let n = self.items.max(1) as f64;
        self.l1 /= n;
        self.lk /= n;
        self.ess_normalized /= n;
        self
    }
}

/// Per-item random stream within a batch stream. Refinement, gradient
/// sampling and sleep sampling draw from separate sub-streams of it.
pub fn item_stream(batch: &RandomStream, item: usize) -> RandomStream {
    batch.substream(item as u64)
}

const CHUNK: usize = 8;

/// Everything the update needs for one batch, computed without touching the
/// parameters. `mean_image` is required only for the sleep phase.
pub fn compute_bundle(
    gen: &GenerativeParams,
    rec: &RecognitionParams,
    x: &Matrix,
    x_centered: &Matrix,
    mean_image: Option<&[f64]>,
    config: &TrainConfig,
    batch_stream: &RandomStream,
) -> Result<(GradientBundle, StepMetrics)> {
    config.validate()?;
    crate::error::check_dim("centered batch", x.rows(), x_centered.rows())?;
    rec.check_compatible(&gen.layout())?;
    let sleep = config.sleep && config.estimator == Estimator::Rws;
    if sleep && mean_image.is_none() {
        return Err(Error::InvalidArgument("sleep phase needs the mean image".into()));
    }
    let refine_cfg = config.effective_refine();
    let n = x.rows();
    if n == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let scale = 1.0 / n as f64;
    let chunks: Vec<usize> = (0..n).step_by(CHUNK).collect();
    let partials: Vec<Result<(GradientBundle, StepMetrics)>> = chunks
        .into_par_iter()
        .map(|start| {
            let mut acc = GradientBundle::zeros(gen, rec, config.estimator);
            let mut metrics = StepMetrics::default();
            for i in start..(start + CHUNK).min(n) {
                let stream = item_stream(batch_stream, i);
                let xi = x.row(i);
                let xci = x_centered.row(i);
                let mu0 = rec.initial_means_row(xci)?;
                let (mu_t, deg) = refine_means(gen, xi, &mu0, &refine_cfg, &mut stream.substream(TAG_REFINE))?;
                let mut grng = stream.substream(TAG_GRADIENT);
                let set = crate::inference::importance_set(gen, xi, &mu_t, config.grad_samples, &mut grng)?;
                if config.estimator.reweighted_theta() {
                    for (h, &w) in set.samples.iter().zip(&set.w_tilde) {
                        gen.accumulate_joint_grad(xi, h, scale * w, &mut acc.theta);
                    }
                } else {
                    let s = scale / set.len() as f64;
                    for h in &set.samples {
                        gen.accumulate_joint_grad(xi, h, s, &mut acc.theta);
                    }
                }
                if config.estimator.inclusive_phi() {
                    for (h, &w) in set.samples.iter().zip(&set.w_tilde) {
                        rec.accumulate_score_grad(xci, h, scale * w, &mut acc.phi);
                    }
                } else {
                    let s = scale / set.len() as f64;
                    for h in &set.samples {
                        rec.accumulate_score_grad(xci, h, s, &mut acc.phi);
                    }
                }
                if sleep {
                    let (xs, hs) = gen.ancestral_sample(&mut stream.substream(TAG_SLEEP));
                    let xcs = center_row(&xs, mean_image.unwrap_or_default());
                    rec.accumulate_score_grad(&xcs, &hs, scale, &mut acc.phi);
                }
                let b = BoundEstimates::from_log_weights(set.log_w.as_slice());
                metrics.add(&StepMetrics {
                    l1: b.l1,
                    lk: b.lk,
                    ess_normalized: b.ess_normalized,
                    degenerate: deg + set.degenerate as usize,
                    weight_sets: refine_cfg.steps + 1,
                    items: 1,
                });
            }
            Ok((acc, metrics))
        })
        .collect();
    let mut bundle = GradientBundle::zeros(gen, rec, config.estimator);
    let mut metrics = StepMetrics::default();
    for p in partials {
        let (b, m) = p?;
        bundle.add(&b);
        metrics.add(&m);
    }
    Ok((bundle, metrics.finish()))
}

/// Optimizer state for both parameter containers.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub theta_opt: Optimizer,
    pub phi_opt: Optimizer,
}

impl TrainState {
    pub fn rmsprop(lr: f64) -> Self {
        Self {
            theta_opt: Optimizer::Rmsprop(Rmsprop::new(lr)),
            phi_opt: Optimizer::Rmsprop(Rmsprop::new(lr)),
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.theta_opt.set_lr(lr);
        self.phi_opt.set_lr(lr);
    }
}

/// One E-step/M-step update on a batch. Fails without modifying anything if
/// any gradient entry is not finite.
pub fn train_step(
    gen: &mut GenerativeParams,
    rec: &mut RecognitionParams,
    x: &Matrix,
    x_centered: &Matrix,
    mean_image: Option<&[f64]>,
    config: &TrainConfig,
    batch_stream: &RandomStream,
    state: &mut TrainState,
) -> Result<StepMetrics> {
    let (bundle, metrics) = compute_bundle(gen, rec, x, x_centered, mean_image, config, batch_stream)?;
    if let Some(name) = bundle.first_non_finite() {
        return Err(Error::NonFiniteGradient { name });
    }
    state.theta_opt.ascend(gen, &bundle.theta);
    state.phi_opt.ascend(rec, &bundle.phi);
    gen.enforce_structure();
    Ok(metrics)
}

/// [`train_step`] restricted to the refinement-based estimators.
pub fn air_train_step(
    gen: &mut GenerativeParams,
    rec: &mut RecognitionParams,
    x: &Matrix,
    x_centered: &Matrix,
    config: &TrainConfig,
    batch_stream: &RandomStream,
    state: &mut TrainState,
) -> Result<StepMetrics> {
    if config.estimator == Estimator::Rws {
        return Err(Error::InvalidArgument("use rws_train_step for the wake-sleep baseline".into()));
    }
    train_step(gen, rec, x, x_centered, None, config, batch_stream, state)
}

/// Reweighted wake-sleep: importance-weighted wake updates from `q_0` for
/// both parameter sets, with an optional sleep phase.
pub fn rws_train_step(
    gen: &mut GenerativeParams,
    rec: &mut RecognitionParams,
    x: &Matrix,
    x_centered: &Matrix,
    mean_image: Option<&[f64]>,
    config: &TrainConfig,
    batch_stream: &RandomStream,
    state: &mut TrainState,
) -> Result<StepMetrics> {
    let cfg = TrainConfig {
        estimator: Estimator::Rws,
        ..*config
    };
    train_step(gen, rec, x, x_centered, mean_image, &cfg, batch_stream, state)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rmsprop {
    pub rho: f64,
    pub eps: f64,
    pub lr: f64,
    pub step: u64,
    /// Running mean of squared gradients, one vector per tensor, allocated on
    /// the first update.
    pub accum: Vec<Vec<f64>>,
}

impl Rmsprop {
    pub fn new(lr: f64) -> Self {
        Self {
            rho: 0.9,
            eps: 1e-6,
            lr,
            step: 0,
            accum: Vec::new(),
        }
    }

    /// Descent step `p ← p − lr · g / (√a + ε)`.
    pub fn descend<P: Parameters>(&mut self, params: &mut P, grad: &P) {
        self.apply(params, grad, 1.0);
    }

    fn apply<P: Parameters>(&mut self, params: &mut P, grad: &P, sign: f64) {
        let grads = grad.tensors();
        if self.accum.is_empty() {
            self.accum = grads.iter().map(|t| vec![0.0; t.data.len()]).collect();
        }
        for (((_, p), g), a) in params.tensors_mut().into_iter().zip(&grads).zip(&mut self.accum) {
            for ((pv, &gv), av) in p.iter_mut().zip(g.data).zip(a.iter_mut()) {
                let g = sign * gv;
                *av = self.rho * *av + (1.0 - self.rho) * g * g;
                *pv -= self.lr * g / (av.sqrt() + self.eps);
            }
        }
        self.step += 1;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    Rmsprop(Rmsprop),
    Sgd(Sgd),
}

impl Optimizer {
    pub fn lr(&self) -> f64 {
        match self {
            Optimizer::Rmsprop(o) => o.lr,
            Optimizer::Sgd(o) => o.lr,
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        match self {
            Optimizer::Rmsprop(o) => o.lr = lr,
            Optimizer::Sgd(o) => o.lr = lr,
        }
    }

    pub fn step(&self) -> u64 {
        match self {
            Optimizer::Rmsprop(o) => o.step,
            Optimizer::Sgd(o) => o.step,
        }
    }

    /// Moves `params` along the ascent direction `grad`, implemented as
    /// descent on `−grad`.
    pub fn ascend<P: Parameters>(&mut self, params: &mut P, grad: &P) {
        match self {
            Optimizer::Rmsprop(o) => o.apply(params, grad, -1.0),
            Optimizer::Sgd(o) => {
                params.add_scaled(o.lr, grad);
                o.step += 1;
            }
        }
    }
}

/// Constant `lr` during the main phase, then `lr / (1 + decay · (epoch − main_epochs))`.
pub fn finetune_schedule(epoch: usize, main_epochs: usize, lr: f64, decay: f64) -> f64 {
    if epoch < main_epochs {
        lr
    } else {
        lr / (1.0 + decay * (epoch - main_epochs) as f64)
    }
}

/// Tracks the best validation bound. Epochs are 0-based.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    since_best: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopDecision {
    pub stop: bool,
    pub improved: bool,
    pub best_epoch: usize,
    pub best_value: f64,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            since_best: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, value: f64) -> StopDecision {
        let improved = match self.best {
            Some((_, b)) => value > b,
            None => true,
        };
        if improved {
            self.best = Some((epoch, value));
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        let (best_epoch, best_value) = self.best.expect("set on first observation");
        StopDecision {
            stop: self.patience > 0 && self.since_best >= self.patience,
            improved,
            best_epoch,
            best_value,
        }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.map(|(e, _)| e)
    }
}

/// Replays a history; returns the epoch at which training stops, if any,
/// and the best epoch seen up to then.
pub fn early_stopping(history: &[f64], patience: usize) -> (Option<usize>, usize) {
    let mut es = EarlyStopping::new(patience);
    let mut best = 0;
    for (epoch, &v) in history.iter().enumerate() {
        let d = es.observe(epoch, v);
        best = d.best_epoch;
        if d.stop {
            return (Some(epoch), best);
        }
    }
    (None, best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Architecture;

    fn scalar_params(v: f64) -> RecognitionParams {
        let mut r = RecognitionParams::zeros(&Architecture::sbn(1, &[1]));
        r.stages[0].out.bias[0] = v;
        r
    }

    #[test]
    fn rmsprop_zero_gradient_is_noop() {
        let mut p = scalar_params(0.7);
        let g = p.zeros_like();
        let mut o = Rmsprop::new(0.1);
        o.descend(&mut p, &g);
        assert_eq!(p, scalar_params(0.7));
    }

    #[test]
    fn rmsprop_two_steps_by_hand() {
        let mut p = scalar_params(1.0);
        let mut g = p.zeros_like();
        g.stages[0].out.bias[0] = 2.0;
        let mut o = Rmsprop::new(0.01);
        o.descend(&mut p, &g);
        // a1 = 0.1·4 = 0.4
        let p1 = 1.0 - 0.01 * 2.0 / (0.4f64.sqrt() + 1e-6);
        assert!((p.stages[0].out.bias[0] - p1).abs() < 1e-15);
        g.stages[0].out.bias[0] = -1.0;
        o.descend(&mut p, &g);
        // a2 = 0.9·0.4 + 0.1·1 = 0.46
        let p2 = p1 + 0.01 / (0.46f64.sqrt() + 1e-6);
        assert!((p.stages[0].out.bias[0] - p2).abs() < 1e-15);
        assert_eq!(o.step, 2);
    }

    #[test]
    fn rmsprop_constant_gradient_step_tends_to_lr() {
        let mut p = scalar_params(0.0);
        let mut g = p.zeros_like();
        g.stages[0].out.bias[0] = 3.0;
        let mut o = Rmsprop::new(0.05);
        for _ in 0..500 {
            o.descend(&mut p, &g);
        }
        let before = p.stages[0].out.bias[0];
        o.descend(&mut p, &g);
        let step = before - p.stages[0].out.bias[0];
        assert!((step - 0.05).abs() < 1e-6);
        assert!(o.accum.iter().flatten().all(|&a| a >= 0.0));
    }

    #[test]
    fn ascend_moves_up() {
        let mut p = scalar_params(0.0);
        let mut g = p.zeros_like();
        g.stages[0].out.bias[0] = 1.0;
        let mut o = Optimizer::Rmsprop(Rmsprop::new(0.1));
        o.ascend(&mut p, &g);
        assert!(p.stages[0].out.bias[0] > 0.0);
        let mut s = Optimizer::Sgd(Sgd { lr: 0.5, step: 0 });
        s.ascend(&mut p, &g);
        assert_eq!(s.step(), 1);
    }

    #[test]
    fn schedule_examples() {
        assert_eq!(finetune_schedule(3, 10, 0.2, 0.5), 0.2);
        assert_eq!(finetune_schedule(1000, 10, 0.2, 0.0), 0.2);
        assert!((finetune_schedule(110, 10, 0.2, 0.01) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn early_stopping_examples() {
        let improving: Vec<f64> = (0..30).map(|i| -100.0 + i as f64).collect();
        assert_eq!(early_stopping(&improving, 10), (None, 29));
        assert_eq!(early_stopping(&[-50.0; 20], 10), (Some(10), 0));
        let mut h = vec![-100.0, -95.0, -96.0, -94.0, -97.0];
        h.extend(std::iter::repeat(-98.0).take(16));
        let (stop, best) = early_stopping(&h, 10);
        assert_eq!(best, 3);
        assert_eq!(stop, Some(13));
    }

    #[test]
    fn estimator_names_round_trip() {
        for e in [Estimator::Air, Estimator::AirRw, Estimator::AirRwIkl, Estimator::Rws] {
            assert_eq!(e.name().parse::<Estimator>().unwrap(), e);
        }
        assert!("vimco".parse::<Estimator>().is_err());
    }

    #[test]
    fn reweighted_matches_uniform_on_equal_weights() {
        let mut rng = RandomStream::new(1, 0);
        let gen = GenerativeParams::init(&Architecture::sbn(3, &[2, 2]), 0.5, &mut rng);
        let rec = RecognitionParams::init(&Architecture::sbn(3, &[2, 2]), 0.5, &mut rng);
        let x = [1.0, 0.0, 1.0];
        let samples = vec![vec![1.0, 0.0, 1.0, 1.0], vec![0.0, 0.0, 1.0, 0.0], vec![1.0, 1.0, 0.0, 0.0]];
        let set = ImportanceSet::from_log_weights(samples.clone(), vec![-1.0; 3]);
        let a = grad_theta_uniform(&gen, &x, &samples).flatten();
        let b = grad_theta_reweighted(&gen, &x, &set).flatten();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-14);
        }
        let a = grad_phi_exclusive(&rec, &x, &samples).flatten();
        let b = grad_phi_inclusive(&rec, &x, &set).flatten();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-14);
        }
        // one sample carries weight one
        let single = ImportanceSet::from_log_weights(samples[..1].to_vec(), vec![-4.0]);
        assert_eq!(
            grad_theta_reweighted(&gen, &x, &single).flatten(),
            grad_theta_uniform(&gen, &x, &samples[..1]).flatten()
        );
    }

    #[test]
    fn zero_model_visible_bias_gradient() {
        let gen = GenerativeParams::zeros(&Architecture::sbn(4, &[2]));
        let x = [1.0, 0.0, 1.0, 1.0];
        let samples = vec![vec![0.0, 1.0], vec![1.0, 1.0]];
        let g = grad_theta_uniform(&gen, &x, &samples);
        for i in 0..4 {
            assert!((g.layers[0].out.bias[i] - (x[i] - 0.5)).abs() < 1e-15);
        }
    }

    #[test]
    fn single_unit_recognition_bias_gradient() {
        let mut rec = RecognitionParams::zeros(&Architecture::sbn(2, &[1]));
        rec.stages[0].out.bias[0] = 0.4;
        let mu0 = crate::numerics::sigmoid(0.4);
        let samples = vec![vec![1.0], vec![0.0], vec![1.0], vec![1.0]];
        let g = grad_phi_exclusive(&rec, &[0.0, 0.0], &samples);
        assert!((g.stages[0].out.bias[0] - (0.75 - mu0)).abs() < 1e-15);
    }

    fn toy_setup() -> (GenerativeParams, RecognitionParams, Matrix) {
        let arch = Architecture::sbn(5, &[3, 2]);
        let mut rng = RandomStream::new(2, 0);
        let gen = GenerativeParams::init(&arch, 1.0, &mut rng);
        let rec = RecognitionParams::init(&arch, 0.5, &mut rng);
        let x = Matrix::from_fn(19, 5, |i, j| ((i * 3 + j * 5 + i * j) % 3 == 0) as u8 as f64);
        (gen, rec, x)
    }

    #[test]
    fn rws_wake_equals_air_rw_ikl_without_refinement() {
        let (gen, rec, x) = toy_setup();
        let stream = RandomStream::new(3, 7);
        let mut cfg = TrainConfig {
            estimator: Estimator::AirRwIkl,
            refine: RefineConfig::new(0, 0.1, 20),
            grad_samples: 10,
            sleep: false,
        };
        let (a, ma) = compute_bundle(&gen, &rec, &x, &x, None, &cfg, &stream).unwrap();
        cfg.estimator = Estimator::Rws;
        cfg.refine.steps = 20;
        let (b, mb) = compute_bundle(&gen, &rec, &x, &x, None, &cfg, &stream).unwrap();
        assert_eq!(a.theta.flatten(), b.theta.flatten());
        assert_eq!(a.phi.flatten(), b.phi.flatten());
        assert_eq!(ma.lk, mb.lk);
    }

    #[test]
    fn bundle_independent_of_thread_count() {
        let (gen, rec, x) = toy_setup();
        let stream = RandomStream::new(4, 1);
        let cfg = TrainConfig {
            refine: RefineConfig::new(5, 0.1, 10),
            ..TrainConfig::default()
        };
        let (a, _) = compute_bundle(&gen, &rec, &x, &x, None, &cfg, &stream).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let (b, _) = pool.install(|| compute_bundle(&gen, &rec, &x, &x, None, &cfg, &stream).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn non_finite_gradient_aborts_step() {
        let (mut gen, mut rec, x) = toy_setup();
        gen.layers[0].out.weights.set(0, 0, f64::NAN);
        let before = (gen.clone(), rec.clone());
        let mut state = TrainState::rmsprop(0.01);
        let err = train_step(
            &mut gen,
            &mut rec,
            &x,
            &x,
            None,
            &TrainConfig::default(),
            &RandomStream::new(0, 0),
            &mut state,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { .. }), "{err}");
        let bits = |g: &GenerativeParams| g.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&gen), bits(&before.0));
        assert_eq!(rec, before.1);
    }

    #[test]
    fn sleep_phase_requires_mean_image() {
        let (gen, rec, x) = toy_setup();
        let cfg = TrainConfig {
            estimator: Estimator::Rws,
            sleep: true,
            ..TrainConfig::default()
        };
        assert!(compute_bundle(&gen, &rec, &x, &x, None, &cfg, &RandomStream::new(0, 0)).is_err());
        let mean = vec![0.5; 5];
        let (with_sleep, _) = compute_bundle(&gen, &rec, &x, &x, Some(&mean), &cfg, &RandomStream::new(0, 0)).unwrap();
        let wake = TrainConfig { sleep: false, ..cfg };
        let (without, _) = compute_bundle(&gen, &rec, &x, &x, None, &wake, &RandomStream::new(0, 0)).unwrap();
        assert_eq!(with_sleep.theta, without.theta);
        assert_ne!(with_sleep.phi, without.phi);
    }
}
