//! The layered generative model `p(x, h) = p(x | h_1) p(h_L) Π_l p(h_l | h_{l+1})`.
//!
//! Latent vectors are flat: `h = [h_1, h_2, ..., h_L]`, with [`LatentLayout`]
//! mapping layers to index ranges. `layers[0]` produces the observation means,
//! `layers[l]` the means of `h_l` given `h_{l+1}`.

use std::ops::Range;

use crate::error::{check_dim, Error, Result};
use crate::numerics::{bit_logpmf, clamp_mean, dot, sigmoid, Matrix, RandomStream};
use crate::params::{Parameters, TensorView};
use crate::recognition::LogMeans;

/// Refuse exact enumeration above this many latent bits.
pub const ENUMERATION_CAP: usize = 20;

/// Affine map `W v + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weights: Matrix::zeros(out_dim, in_dim),
            bias: vec![0.0; out_dim],
        }
    }

    /// Gaussian weights with the given standard deviation, zero biases.
    pub fn gaussian(out_dim: usize, in_dim: usize, std: f64, rng: &mut RandomStream) -> Self {
        Self {
            weights: Matrix::from_fn(out_dim, in_dim, |_, _| rng.normal(0.0, std)),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn new(weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        check_dim("dense bias", weights.rows(), bias.len())?;
        Ok(Self { weights, bias })
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn forward_into(&self, input: &[f64], out: &mut [f64]) {
        self.weights.affine_into(input, &self.bias, out);
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.out_dim()];
        self.forward_into(input, &mut out);
        out
    }

    fn push_tensors<'a>(&'a self, prefix: &str, out: &mut Vec<TensorView<'a>>) {
        out.push(TensorView {
            name: format!("{prefix}.w"),
            dims: vec![self.weights.rows(), self.weights.cols()],
            data: self.weights.as_slice(),
        });
        out.push(TensorView {
            name: format!("{prefix}.b"),
            dims: vec![self.bias.len()],
            data: &self.bias,
        });
    }

    fn push_tensors_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut [f64])>) {
        out.push((format!("{prefix}.w"), self.weights.as_mut_slice()));
        out.push((format!("{prefix}.b"), &mut self.bias));
    }
}

/// Cached activations of one [`LayerParams`] evaluation.
#[derive(Debug, Clone, Default)]
pub struct LayerForward {
    /// `tanh` activations of the deterministic stage, when present.
    pub hidden: Option<Vec<f64>>,
    /// Pre-activations of the Bernoulli output units.
    pub pre: Vec<f64>,
}

impl LayerForward {
    /// Clamped Bernoulli means.
    pub fn means(&self) -> Vec<f64> {
        self.pre.iter().map(|&a| clamp_mean(sigmoid(a))).collect()
    }
}

/// A Bernoulli conditional layer, `P(out_i = 1 | in) = σ(W_i · z + b_i)` with
/// `z = in`, or `z = tanh(W' in + b')` when a deterministic stage is present.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub hidden: Option<Dense>,
    pub out: Dense,
}

impl LayerParams {
    pub fn new(out: Dense) -> Self {
        Self { hidden: None, out }
    }

    pub fn with_hidden(hidden: Dense, out: Dense) -> Result<Self> {
        check_dim("deterministic stage width", out.in_dim(), hidden.out_dim())?;
        Ok(Self {
            hidden: Some(hidden),
            out,
        })
    }

    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self::new(Dense::zeros(out_dim, in_dim))
    }

    pub fn input_dim(&self) -> usize {
        match &self.hidden {
            Some(h) => h.in_dim(),
            None => self.out.in_dim(),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.out.out_dim()
    }

    pub fn forward(&self, input: &[f64]) -> LayerForward {
        match &self.hidden {
            Some(h) => {
                let mut z = h.forward(input);
                z.iter_mut().for_each(|v| *v = v.tanh());
                let pre = self.out.forward(&z);
                LayerForward {
                    hidden: Some(z),
                    pre,
                }
            }
            None => LayerForward {
                hidden: None,
                pre: self.out.forward(input),
            },
        }
    }

    /// Clamped means `σ(W h + b)`.
    pub fn mean(&self, input: &[f64]) -> Result<Vec<f64>> {
        check_dim("layer input", self.input_dim(), input.len())?;
        Ok(self.forward(input).means())
    }

    /// `log p(target | input)` without dimension checks.
    pub(crate) fn log_prob_fast(&self, target: &[f64], input: &[f64]) -> f64 {
        match &self.hidden {
            None => {
                let w = &self.out.weights;
                let mut lp = 0.0;
                for (i, (&t, &b)) in target.iter().zip(&self.out.bias).enumerate() {
                    let a = b + dot(w.row(i), input);
                    lp += bit_logpmf(t, clamp_mean(sigmoid(a)));
                }
                lp
            }
            Some(_) => {
                let fwd = self.forward(input);
                target
                    .iter()
                    .zip(&fwd.pre)
                    .map(|(&t, &a)| bit_logpmf(t, clamp_mean(sigmoid(a))))
                    .sum()
            }
        }
    }

    pub fn log_prob(&self, target: &[f64], input: &[f64]) -> Result<f64> {
        check_dim("layer input", self.input_dim(), input.len())?;
        check_dim("layer target", self.output_dim(), target.len())?;
        Ok(self.log_prob_fast(target, input))
    }

    /// Backpropagates `delta = ∂f/∂pre` into `grad` scaled by `scale`, and
    /// optionally accumulates `∂f/∂input` into `d_input`.
    pub fn backward(
        &self,
        input: &[f64],
        fwd: &LayerForward,
        delta: &[f64],
        scale: f64,
        grad: &mut LayerParams,
        d_input: Option<&mut [f64]>,
    ) {
        match (&self.hidden, &fwd.hidden) {
            (Some(hidden), Some(z)) => {
                grad.out.weights.add_outer(scale, delta, z);
                for (g, &d) in grad.out.bias.iter_mut().zip(delta) {
                    *g += scale * d;
                }
                let mut dz = vec![0.0; z.len()];
                self.out.weights.add_transpose_mul(delta, &mut dz);
                for (d, &zv) in dz.iter_mut().zip(z) {
                    *d *= 1.0 - zv * zv;
                }
                let gh = grad
                    .hidden
                    .as_mut()
                    .expect("gradient container mirrors parameter shape");
                gh.weights.add_outer(scale, &dz, input);
                for (g, &d) in gh.bias.iter_mut().zip(&dz) {
                    *g += scale * d;
                }
                if let Some(di) = d_input {
                    hidden.weights.add_transpose_mul(&dz, di);
                }
            }
            _ => {
                grad.out.weights.add_outer(scale, delta, input);
                for (g, &d) in grad.out.bias.iter_mut().zip(delta) {
                    *g += scale * d;
                }
                if let Some(di) = d_input {
                    self.out.weights.add_transpose_mul(delta, di);
                }
            }
        }
    }

    /// Adds `scale · ∇ log p(target | input)`; the output delta is `t − σ(a)`.
    pub fn accumulate_log_prob_grad(
        &self,
        target: &[f64],
        input: &[f64],
        scale: f64,
        grad: &mut LayerParams,
    ) {
        let fwd = self.forward(input);
        let delta: Vec<f64> = target
            .iter()
            .zip(&fwd.pre)
            .map(|(&t, &a)| t - sigmoid(a))
            .collect();
        self.backward(input, &fwd, &delta, scale, grad, None);
    }

    pub fn sample(&self, input: &[f64], rng: &mut RandomStream) -> Vec<f64> {
        self.forward(input)
            .means()
            .iter()
            .map(|&m| if rng.uniform() < m { 1.0 } else { 0.0 })
            .collect()
    }

    pub(crate) fn push_tensors<'a>(&'a self, prefix: &str, out: &mut Vec<TensorView<'a>>) {
        if let Some(h) = &self.hidden {
            h.push_tensors(&format!("{prefix}.hidden"), out);
        }
        self.out.push_tensors(prefix, out);
    }

    pub(crate) fn push_tensors_mut<'a>(
        &'a mut self,
        prefix: &str,
        out: &mut Vec<(String, &'a mut [f64])>,
    ) {
        if let Some(h) = &mut self.hidden {
            h.push_tensors_mut(&format!("{prefix}.hidden"), out);
        }
        self.out.push_tensors_mut(prefix, out);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorizedPrior {
    pub bias: Vec<f64>,
}

/// Autoregressive prior `P(h_i = 1) = σ(Σ_{j<i} W_r[i,j] h_j + b_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoregressivePrior {
    weights: Matrix,
    pub bias: Vec<f64>,
}

impl AutoregressivePrior {
    pub fn new(weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        check_dim("autoregressive prior", weights.rows(), bias.len())?;
        check_dim("autoregressive prior", weights.rows(), weights.cols())?;
        let prior = Self { weights, bias };
        if !prior.is_strictly_lower() {
            return Err(Error::Structure(
                "autoregressive weights must be strictly lower-triangular".into(),
            ));
        }
        Ok(prior)
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            weights: Matrix::zeros(dim, dim),
            bias: vec![0.0; dim],
        }
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn set_weight(&mut self, i: usize, j: usize, v: f64) -> Result<()> {
        if j >= i {
            return Err(Error::Structure(format!(
                "autoregressive weight ({i},{j}) is on or above the diagonal"
            )));
        }
        self.weights.set(i, j, v);
        Ok(())
    }

    pub fn is_strictly_lower(&self) -> bool {
        let n = self.weights.rows();
        (0..n).all(|i| (i..n).all(|j| self.weights.get(i, j) == 0.0))
    }

    /// Zeroes every entry on or above the diagonal.
    pub fn mask_upper(m: &mut Matrix) {
        let n = m.rows();
        for i in 0..n {
            for j in i..n {
                m.set(i, j, 0.0);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Prior {
    Factorized(FactorizedPrior),
    Autoregressive(AutoregressivePrior),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorKind {
    Factorized,
    Autoregressive,
}

impl Prior {
    pub fn zeros(kind: PriorKind, dim: usize) -> Self {
        match kind {
            PriorKind::Factorized => Prior::Factorized(FactorizedPrior {
                bias: vec![0.0; dim],
            }),
            PriorKind::Autoregressive => Prior::Autoregressive(AutoregressivePrior::zeros(dim)),
        }
    }

    pub fn kind(&self) -> PriorKind {
        match self {
            Prior::Factorized(_) => PriorKind::Factorized,
            Prior::Autoregressive(_) => PriorKind::Autoregressive,
        }
    }

    pub fn dim(&self) -> usize {
        self.bias().len()
    }

    pub fn bias(&self) -> &[f64] {
        match self {
            Prior::Factorized(p) => &p.bias,
            Prior::Autoregressive(p) => &p.bias,
        }
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        match self {
            Prior::Factorized(p) => &mut p.bias,
            Prior::Autoregressive(p) => &mut p.bias,
        }
    }

    /// Pre-activation of unit `i` given the preceding units of `h`.
    #[inline]
    fn logit(&self, i: usize, h: &[f64]) -> f64 {
        match self {
            Prior::Factorized(p) => p.bias[i],
            Prior::Autoregressive(p) => p.bias[i] + dot(&p.weights.row(i)[..i], &h[..i]),
        }
    }

    pub(crate) fn log_prob_fast(&self, h: &[f64]) -> f64 {
        h.iter()
            .enumerate()
            .map(|(i, &b)| bit_logpmf(b, clamp_mean(sigmoid(self.logit(i, h)))))
            .sum()
    }

    pub fn log_prob(&self, h: &[f64]) -> Result<f64> {
        check_dim("prior", self.dim(), h.len())?;
        Ok(self.log_prob_fast(h))
    }

    /// Unit-by-unit in index order.
    pub fn sample(&self, rng: &mut RandomStream) -> Vec<f64> {
        let n = self.dim();
        let mut h = vec![0.0; n];
        for i in 0..n {
            let m = clamp_mean(sigmoid(self.logit(i, &h)));
            h[i] = if rng.uniform() < m { 1.0 } else { 0.0 };
        }
        h
    }

    pub fn accumulate_log_prob_grad(&self, h: &[f64], scale: f64, grad: &mut Prior) {
        match (self, grad) {
            (Prior::Factorized(p), Prior::Factorized(g)) => {
                for ((gb, &b), &hi) in g.bias.iter_mut().zip(&p.bias).zip(h) {
                    *gb += scale * (hi - sigmoid(b));
                }
            }
            (Prior::Autoregressive(_), Prior::Autoregressive(g)) => {
                for i in 0..h.len() {
                    let d = scale * (h[i] - sigmoid(self.logit(i, h)));
                    g.bias[i] += d;
                    if d != 0.0 {
                        let row = g.weights.row_mut(i);
                        for j in 0..i {
                            row[j] += d * h[j];
                        }
                    }
                }
            }
            _ => panic!("gradient container mirrors parameter shape"),
        }
    }

    /// Re-establishes strict lower-triangularity after an update.
    pub fn enforce_structure(&mut self) {
        if let Prior::Autoregressive(p) = self {
            AutoregressivePrior::mask_upper(&mut p.weights);
        }
    }
}

/// Layer widths of the flat latent vector `[h_1, ..., h_L]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatentLayout {
    widths: Vec<usize>,
    offsets: Vec<usize>,
}

impl LatentLayout {
    pub fn new(widths: Vec<usize>) -> Self {
        let mut offsets = Vec::with_capacity(widths.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for w in &widths {
            acc += w;
            offsets.push(acc);
        }
        Self { widths, offsets }
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len()
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn total(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn range(&self, layer: usize) -> Range<usize> {
        self.offsets[layer]..self.offsets[layer + 1]
    }

    pub fn layer<'a>(&self, h: &'a [f64], layer: usize) -> &'a [f64] {
        &h[self.range(layer)]
    }
}

/// All generative parameters θ.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerativeParams {
    pub layers: Vec<LayerParams>,
    pub prior: Prior,
}

/// Architecture description used to build fresh parameter sets.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub visible: usize,
    /// Stochastic latent widths, bottom (`h_1`) to top (`h_L`).
    pub latent: Vec<usize>,
    pub prior: PriorKind,
    /// Width of a deterministic `tanh` stage between `h_1` and `x` in the
    /// generative network.
    pub gen_hidden: Option<usize>,
    /// Width of a deterministic `tanh` stage between `x` and `μ^(1)` in the
    /// recognition network.
    pub rec_hidden: Option<usize>,
}

impl Architecture {
    pub fn sbn(visible: usize, latent: &[usize]) -> Self {
        Self {
            visible,
            latent: latent.to_vec(),
            prior: PriorKind::Factorized,
            gen_hidden: None,
            rec_hidden: None,
        }
    }

    pub fn with_prior(mut self, prior: PriorKind) -> Self {
        self.prior = prior;
        self
    }

    pub fn total_latent(&self) -> usize {
        self.latent.iter().sum()
    }
}

impl GenerativeParams {
    pub fn new(layers: Vec<LayerParams>, prior: Prior) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Structure("at least one stochastic layer required".into()));
        }
        for w in layers.windows(2) {
            check_dim("generative chain", w[0].input_dim(), w[1].output_dim())?;
        }
        check_dim("prior width", layers.last().unwrap().input_dim(), prior.dim())?;
        if let Prior::Autoregressive(p) = &prior {
            if !p.is_strictly_lower() {
                return Err(Error::Structure(
                    "autoregressive weights must be strictly lower-triangular".into(),
                ));
            }
        }
        Ok(Self { layers, prior })
    }

    pub fn zeros(arch: &Architecture) -> Self {
        Self::build(arch, |o, i| Dense::zeros(o, i))
    }

    /// Zero-mean Gaussian weights with the given standard deviation, zero
    /// biases, zero prior parameters.
    pub fn init(arch: &Architecture, std: f64, rng: &mut RandomStream) -> Self {
        Self::build(arch, |o, i| Dense::gaussian(o, i, std, rng))
    }

    fn build(arch: &Architecture, mut dense: impl FnMut(usize, usize) -> Dense) -> Self {
        assert!(!arch.latent.is_empty(), "at least one latent layer");
        let mut layers = Vec::with_capacity(arch.latent.len());
        let mut below = arch.visible;
        for (l, &width) in arch.latent.iter().enumerate() {
            let layer = match (l, arch.gen_hidden) {
                (0, Some(hid)) => LayerParams {
                    hidden: Some(dense(hid, width)),
                    out: dense(below, hid),
                },
                _ => LayerParams::new(dense(below, width)),
            };
            layers.push(layer);
            below = width;
        }
        let prior = Prior::zeros(arch.prior, below);
        Self { layers, prior }
    }

    pub fn visible_dim(&self) -> usize {
        self.layers[0].output_dim()
    }

    pub fn layout(&self) -> LatentLayout {
        LatentLayout::new(self.layers.iter().map(|l| l.input_dim()).collect())
    }

    pub fn total_latent(&self) -> usize {
        self.layers.iter().map(|l| l.input_dim()).sum()
    }

    /// Input of `layers[l]`, i.e. `h_{l+1}` within the flat latent.
    fn layer_input<'a>(&self, h: &'a [f64], l: usize, offsets: &[usize]) -> &'a [f64] {
        &h[offsets[l]..offsets[l + 1]]
    }

    fn offsets(&self) -> Vec<usize> {
        let mut offs = Vec::with_capacity(self.layers.len() + 1);
        offs.push(0);
        for l in &self.layers {
            offs.push(offs.last().unwrap() + l.input_dim());
        }
        offs
    }

    /// `log p(x, h)` without dimension checks.
    pub(crate) fn joint_logp_fast(&self, x: &[f64], h: &[f64]) -> f64 {
        let mut lp = 0.0;
        let mut start = 0;
        let mut target = x;
        for layer in &self.layers {
            let end = start + layer.input_dim();
            let input = &h[start..end];
            lp += layer.log_prob_fast(target, input);
            target = input;
            start = end;
        }
        lp + self.prior.log_prob_fast(target)
    }

    /// Scorer for many `log p(x, h)` evaluations under fixed parameters.
    pub(crate) fn scorer(&self) -> JointScorer<'_> {
        let prior_logs = match &self.prior {
            Prior::Factorized(p) => Some(LogMeans::new(&p.bias.iter().map(|&b| sigmoid(b)).collect::<Vec<_>>())),
            Prior::Autoregressive(_) => None,
        };
        JointScorer { gen: self, prior_logs }
    }

    pub fn joint_logp(&self, x: &[f64], h: &[f64]) -> Result<f64> {
        check_dim("observation", self.visible_dim(), x.len())?;
        check_dim("latent", self.total_latent(), h.len())?;
        Ok(self.joint_logp_fast(x, h))
    }

    /// `log p(x | h_1)`.
    pub fn observation_logp(&self, x: &[f64], h: &[f64]) -> f64 {
        let w = self.layers[0].input_dim();
        self.layers[0].log_prob_fast(x, &h[..w])
    }

    /// Clamped means of `p(x | h_1)`.
    pub fn observation_means(&self, h: &[f64]) -> Vec<f64> {
        let w = self.layers[0].input_dim();
        self.layers[0].forward(&h[..w]).means()
    }

    pub fn ancestral_sample(&self, rng: &mut RandomStream) -> (Vec<f64>, Vec<f64>) {
        let offs = self.offsets();
        let mut h = vec![0.0; self.total_latent()];
        let top = self.prior.sample(rng);
        h[offs[self.layers.len() - 1]..].copy_from_slice(&top);
        for l in (1..self.layers.len()).rev() {
            let (lower, upper) = h.split_at_mut(offs[l]);
            let input = &upper[..offs[l + 1] - offs[l]];
            let s = self.layers[l].sample(input, rng);
            lower[offs[l - 1]..].copy_from_slice(&s);
        }
        let x = self.layers[0].sample(self.layer_input(&h, 0, &offs), rng);
        (x, h)
    }

    /// Adds `scale · ∇_θ log p(x, h)` into `grad`.
    pub fn accumulate_joint_grad(&self, x: &[f64], h: &[f64], scale: f64, grad: &mut Self) {
        let offs = self.offsets();
        let mut target = x;
        for (l, (layer, g)) in self.layers.iter().zip(grad.layers.iter_mut()).enumerate() {
            let input = self.layer_input(h, l, &offs);
            layer.accumulate_log_prob_grad(target, input, scale, g);
            target = input;
        }
        self.prior
            .accumulate_log_prob_grad(target, scale, &mut grad.prior);
        if let Prior::Autoregressive(p) = &mut grad.prior {
            AutoregressivePrior::mask_upper(&mut p.weights);
        }
    }

    pub fn enforce_structure(&mut self) {
        self.prior.enforce_structure();
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            visible: self.visible_dim(),
            latent: self.layers.iter().map(|l| l.input_dim()).collect(),
            prior: self.prior.kind(),
            gen_hidden: self.layers[0].hidden.as_ref().map(|h| h.out_dim()),
            rec_hidden: None,
        }
    }
}

impl Parameters for GenerativeParams {
    fn tensors(&self) -> Vec<TensorView<'_>> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            layer.push_tensors(&format!("gen.layer{l}"), &mut out);
        }
        match &self.prior {
            Prior::Factorized(p) => out.push(TensorView {
                name: "gen.prior.b".into(),
                dims: vec![p.bias.len()],
                data: &p.bias,
            }),
            Prior::Autoregressive(p) => {
                out.push(TensorView {
                    name: "gen.prior.w".into(),
                    dims: vec![p.weights.rows(), p.weights.cols()],
                    data: p.weights.as_slice(),
                });
                out.push(TensorView {
                    name: "gen.prior.b".into(),
                    dims: vec![p.bias.len()],
                    data: &p.bias,
                });
            }
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter_mut().enumerate() {
            layer.push_tensors_mut(&format!("gen.layer{l}"), &mut out);
        }
        match &mut self.prior {
            Prior::Factorized(p) => out.push(("gen.prior.b".into(), &mut p.bias[..])),
            Prior::Autoregressive(p) => {
                out.push(("gen.prior.w".into(), p.weights.as_mut_slice()));
                out.push(("gen.prior.b".into(), &mut p.bias[..]));
            }
        }
        out
    }
}

/// Caches the factorized prior's log-probabilities, which do not depend on
/// `h`. Gives the same values as [`GenerativeParams::joint_logp`].
pub(crate) struct JointScorer<'a> {
    gen: &'a GenerativeParams,
    prior_logs: Option<LogMeans>,
}

impl JointScorer<'_> {
    #[inline]
    pub(crate) fn logp(&self, x: &[f64], h: &[f64]) -> f64 {
        let Some(prior) = &self.prior_logs else {
            return self.gen.joint_logp_fast(x, h);
        };
        let mut lp = 0.0;
        let mut start = 0;
        let mut target = x;
        for layer in &self.gen.layers {
            let end = start + layer.input_dim();
            let input = &h[start..end];
            lp += layer.log_prob_fast(target, input);
            target = input;
            start = end;
        }
        lp + prior.logpmf(target)
    }
}
