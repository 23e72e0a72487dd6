//! Recognition network `μ_0 = f(x; φ)` and the factorized approximate posterior.
//!
//! Stage 0 maps the centered observation to `μ^(1)_0`; every deeper stage maps
//! the previous layer's *means* to the next layer's means, so the whole chain
//! is deterministic.

use crate::error::{check_dim, Error, Result};
use crate::model::{Architecture, Dense, LatentLayout, LayerForward, LayerParams};
use crate::numerics::{bernoulli_sample_into, bit_logpmf, clamp_mean, sigmoid, Matrix, RandomStream};
use crate::params::{Parameters, TensorView};

#[derive(Debug, Clone, PartialEq)]
pub struct RecognitionParams {
    pub stages: Vec<LayerParams>,
}

/// `x − mean_image`, row by row. Only the recognition network sees centered
/// inputs; generative densities always use the raw binary rows.
pub fn center(x: &Matrix, mean_image: &[f64]) -> Result<Matrix> {
    check_dim("mean image", x.cols(), mean_image.len())?;
    let mut out = x.clone();
    for i in 0..out.rows() {
        for (v, &m) in out.row_mut(i).iter_mut().zip(mean_image) {
            *v -= m;
        }
    }
    Ok(out)
}

pub fn center_row(x: &[f64], mean_image: &[f64]) -> Vec<f64> {
    x.iter().zip(mean_image).map(|(a, m)| a - m).collect()
}

impl RecognitionParams {
    pub fn new(stages: Vec<LayerParams>) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::Structure("recognition network needs a stage".into()));
        }
        for w in stages.windows(2) {
            check_dim("recognition chain", w[0].output_dim(), w[1].input_dim())?;
        }
        Ok(Self { stages })
    }

    pub fn zeros(arch: &Architecture) -> Self {
        Self::build(arch, |o, i| Dense::zeros(o, i))
    }

    pub fn init(arch: &Architecture, std: f64, rng: &mut RandomStream) -> Self {
        Self::build(arch, |o, i| Dense::gaussian(o, i, std, rng))
    }

    fn build(arch: &Architecture, mut dense: impl FnMut(usize, usize) -> Dense) -> Self {
        let mut stages = Vec::with_capacity(arch.latent.len());
        let mut input = arch.visible;
        for (l, &width) in arch.latent.iter().enumerate() {
            let stage = match (l, arch.rec_hidden) {
                (0, Some(hid)) => LayerParams {
                    hidden: Some(dense(hid, input)),
                    out: dense(width, hid),
                },
                _ => LayerParams::new(dense(width, input)),
            };
            stages.push(stage);
            input = width;
        }
        Self { stages }
    }

    pub fn input_dim(&self) -> usize {
        self.stages[0].input_dim()
    }

    pub fn layout(&self) -> LatentLayout {
        LatentLayout::new(self.stages.iter().map(|s| s.output_dim()).collect())
    }

    pub fn total_latent(&self) -> usize {
        self.stages.iter().map(|s| s.output_dim()).sum()
    }

    /// Checks the stage widths against a generative layout.
    pub fn check_compatible(&self, layout: &LatentLayout) -> Result<()> {
        check_dim("recognition depth", layout.num_layers(), self.stages.len())?;
        for (s, &w) in self.stages.iter().zip(layout.widths()) {
            check_dim("recognition stage width", w, s.output_dim())?;
        }
        Ok(())
    }

    fn forward_chain(&self, x_centered: &[f64]) -> (Vec<LayerForward>, Vec<f64>) {
        let mut fwds = Vec::with_capacity(self.stages.len());
        let mut means = Vec::with_capacity(self.total_latent());
        let mut prev = 0..0;
        for (l, stage) in self.stages.iter().enumerate() {
            let fwd = if l == 0 {
                stage.forward(x_centered)
            } else {
                stage.forward(&means[prev.clone()])
            };
            let start = means.len();
            means.extend(fwd.means());
            prev = start..means.len();
            fwds.push(fwd);
        }
        (fwds, means)
    }

    /// Flat clamped means `[μ^(1)_0, ..., μ^(L)_0]` for one centered row.
    pub fn initial_means_row(&self, x_centered: &[f64]) -> Result<Vec<f64>> {
        check_dim("recognition input", self.input_dim(), x_centered.len())?;
        Ok(self.forward_chain(x_centered).1)
    }

    pub fn initial_means(&self, x_centered: &Matrix) -> Result<VariationalState> {
        check_dim("recognition input", self.input_dim(), x_centered.cols())?;
        let layout = self.layout();
        let mut means = Matrix::zeros(x_centered.rows(), layout.total());
        for i in 0..x_centered.rows() {
            means
                .row_mut(i)
                .copy_from_slice(&self.forward_chain(x_centered.row(i)).1);
        }
        Ok(VariationalState { layout, means })
    }

    /// Adds `scale · ∇_φ log q_0(h | x; φ)`, backpropagating through the
    /// deterministic mean chain.
    pub fn accumulate_score_grad(&self, x_centered: &[f64], h: &[f64], scale: f64, grad: &mut Self) {
        let (fwds, means) = self.forward_chain(x_centered);
        let layout = self.layout();
        let n = self.stages.len();
        // ∂ log q / ∂ μ_l contributed by the stages above l
        let mut d_means: Vec<Vec<f64>> = layout.widths().iter().map(|&w| vec![0.0; w]).collect();
        for l in (0..n).rev() {
            let r = layout.range(l);
            let hl = &h[r.clone()];
            let delta: Vec<f64> = fwds[l]
                .pre
                .iter()
                .zip(hl)
                .zip(&d_means[l])
                .map(|((&a, &t), &dm)| {
                    let s = sigmoid(a);
                    (t - s) + s * (1.0 - s) * dm
                })
                .collect();
            if l == 0 {
                self.stages[0].backward(x_centered, &fwds[0], &delta, scale, &mut grad.stages[0], None);
            } else {
                let input = &means[layout.range(l - 1)];
                let (below, _) = d_means.split_at_mut(l);
                self.stages[l].backward(
                    input,
                    &fwds[l],
                    &delta,
                    scale,
                    &mut grad.stages[l],
                    Some(&mut below[l - 1]),
                );
            }
        }
    }
}

impl Parameters for RecognitionParams {
    fn tensors(&self) -> Vec<TensorView<'_>> {
        let mut out = Vec::new();
        for (l, s) in self.stages.iter().enumerate() {
            s.push_tensors(&format!("rec.stage{l}"), &mut out);
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        for (l, s) in self.stages.iter_mut().enumerate() {
            s.push_tensors_mut(&format!("rec.stage{l}"), &mut out);
        }
        out
    }
}

/// Bernoulli means of the factorized posterior for a batch, one row per item.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalState {
    pub layout: LatentLayout,
    means: Matrix,
}

impl VariationalState {
    /// Entries are clamped to `[ε, 1 − ε]`.
    pub fn from_rows(layout: LatentLayout, rows: &[Vec<f64>]) -> Result<Self> {
        let mut means = Matrix::zeros(rows.len(), layout.total());
        for (i, r) in rows.iter().enumerate() {
            check_dim("variational row", layout.total(), r.len())?;
            for (m, &v) in means.row_mut(i).iter_mut().zip(r) {
                *m = clamp_mean(v);
            }
        }
        Ok(Self { layout, means })
    }

    pub fn batch_size(&self) -> usize {
        self.means.rows()
    }

    pub fn item(&self, i: usize) -> &[f64] {
        self.means.row(i)
    }

    pub fn set_item(&mut self, i: usize, mu: &[f64]) {
        for (m, &v) in self.means.row_mut(i).iter_mut().zip(mu) {
            *m = clamp_mean(v);
        }
    }

    pub fn layer_means(&self, item: usize, layer: usize) -> &[f64] {
        &self.means.row(item)[self.layout.range(layer)]
    }

    pub fn q_logpmf(&self, h: &[f64], item: usize) -> Result<f64> {
        check_dim("latent sample", self.layout.total(), h.len())?;
        Ok(q_logpmf(self.item(item), h))
    }

    pub fn q_sample(&self, item: usize, count: usize, rng: &mut RandomStream) -> Vec<Vec<f64>> {
        q_sample(self.item(item), count, rng)
    }
}

/// `Σ_l log Bernoulli(h_l; μ_l)` over the flat latent.
pub fn q_logpmf(mu: &[f64], h: &[f64]) -> f64 {
    h.iter()
        .zip(mu)
        .map(|(&b, &m)| bit_logpmf(b, clamp_mean(m)))
        .sum()
}

/// Precomputed `ln μ`, `ln(1 − μ)` for repeated evaluation under fixed means.
#[derive(Debug, Clone)]
pub(crate) struct LogMeans {
    log_on: Vec<f64>,
    log_off: Vec<f64>,
}

impl LogMeans {
    pub(crate) fn new(mu: &[f64]) -> Self {
        Self {
            log_on: mu.iter().map(|&m| clamp_mean(m).ln()).collect(),
            log_off: mu.iter().map(|&m| (1.0 - clamp_mean(m)).ln()).collect(),
        }
    }

    #[inline]
    pub(crate) fn logpmf(&self, h: &[f64]) -> f64 {
        let mut s = 0.0;
        for ((&b, &on), &off) in h.iter().zip(&self.log_on).zip(&self.log_off) {
            s += if b > 0.5 { on } else { off };
        }
        s
    }
}

pub fn q_sample(mu: &[f64], count: usize, rng: &mut RandomStream) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| {
            let mut h = vec![0.0; mu.len()];
            bernoulli_sample_into(mu, rng, &mut h);
            h
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decode(code: usize, out: &mut [f64]) {
        for (i, b) in out.iter_mut().enumerate() {
            *b = ((code >> i) & 1) as f64;
        }
    }

    #[test]
    fn center_examples() {
        let x = Matrix::from_vec(2, 2, vec![0.25, 0.75, 0.25, 0.75]).unwrap();
        let c = center(&x, &[0.25, 0.75]).unwrap();
        assert_eq!(c.as_slice(), &[0.0; 4]);
        let c = center(&x, &[0.0, 0.0]).unwrap();
        assert_eq!(c, x);
        let bin = Matrix::from_vec(1, 3, vec![0.0, 1.0, 1.0]).unwrap();
        let c = center(&bin, &[0.5; 3]).unwrap();
        assert_eq!(c.as_slice(), &[-0.5, 0.5, 0.5]);
        assert!(center(&bin, &[0.5]).is_err());
    }

    #[test]
    fn zero_weights_give_half_means() {
        let rec = RecognitionParams::zeros(&Architecture::sbn(5, &[3, 2, 4]));
        let m = rec.initial_means_row(&[0.5, -0.5, 0.5, 0.1, 0.0]).unwrap();
        assert_eq!(m, vec![0.5; 9]);
    }

    #[test]
    fn single_stage_is_layer_mean() {
        let mut rng = RandomStream::new(4, 0);
        let rec = RecognitionParams::init(&Architecture::sbn(4, &[3]), 1.0, &mut rng);
        let xc = [0.5, -0.5, -0.5, 0.5];
        assert_eq!(rec.initial_means_row(&xc).unwrap(), rec.stages[0].mean(&xc).unwrap());
    }

    #[test]
    fn two_stage_chain_uses_means() {
        let mut rec = RecognitionParams::zeros(&Architecture::sbn(1, &[1, 1]));
        rec.stages[0].out.weights.set(0, 0, 1.5);
        rec.stages[0].out.bias[0] = -0.25;
        rec.stages[1].out.weights.set(0, 0, -2.0);
        rec.stages[1].out.bias[0] = 0.5;
        let x = 0.5;
        let m1 = sigmoid(1.5 * x - 0.25);
        let m2 = sigmoid(-2.0 * m1 + 0.5);
        let got = rec.initial_means_row(&[x]).unwrap();
        assert!((got[0] - m1).abs() < 1e-15);
        assert!((got[1] - m2).abs() < 1e-15);
    }

    #[test]
    fn q_logpmf_examples() {
        let layout = LatentLayout::new(vec![2, 3]);
        let s = VariationalState::from_rows(layout.clone(), &[vec![0.5; 5]]).unwrap();
        let lp = s.q_logpmf(&[1.0, 0.0, 1.0, 1.0, 0.0], 0).unwrap();
        assert!((lp - 5.0 * 0.5f64.ln()).abs() < 1e-14);

        let s = VariationalState::from_rows(layout, &[vec![0.9, 0.2, 0.6, 0.3, 0.7]]).unwrap();
        let lp = s.q_logpmf(&[1.0, 1.0, 0.0, 0.0, 1.0], 0).unwrap();
        let layer1 = 0.9f64.ln() + 0.2f64.ln();
        let layer2 = 0.4f64.ln() + 0.7f64.ln() + 0.7f64.ln();
        assert!((lp - (layer1 + layer2)).abs() < 1e-14);
        assert!(s.q_logpmf(&[1.0], 0).is_err());

        let mut h = [0.0; 5];
        let total: f64 = (0..32)
            .map(|c| {
                decode(c, &mut h);
                s.q_logpmf(&h, 0).unwrap().exp()
            })
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn q_sample_examples() {
        let mut rng = RandomStream::new(2, 2);
        assert!(q_sample(&[0.0; 6], 50, &mut rng).iter().all(|h| h.iter().all(|&b| b == 0.0)));
        assert!(q_sample(&[1.0; 6], 50, &mut rng).iter().all(|h| h.iter().all(|&b| b == 1.0)));

        let mu = [0.1, 0.35, 0.5, 0.8, 0.97];
        let k = 100_000;
        let samples = q_sample(&mu, k, &mut rng);
        for (i, &m) in mu.iter().enumerate() {
            let freq = samples.iter().map(|h| h[i]).sum::<f64>() / k as f64;
            let se = (m * (1.0 - m) / k as f64).sqrt();
            assert!((freq - m).abs() < 3.0 * se, "unit {i}: {freq} vs {m}");
        }
    }

    #[test]
    fn q_histogram_matches_pmf() {
        let mu = [0.2, 0.7, 0.45, 0.9];
        let n = 200_000;
        let mut rng = RandomStream::new(8, 1);
        let mut counts = [0usize; 16];
        for h in q_sample(&mu, n, &mut rng) {
            let code: usize = h.iter().enumerate().map(|(i, &b)| (b as usize) << i).sum();
            counts[code] += 1;
        }
        let mut h = [0.0; 4];
        for (code, &c) in counts.iter().enumerate() {
            decode(code, &mut h);
            let p = q_logpmf(&mu, &h).exp();
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((c as f64 / n as f64 - p).abs() < 4.0 * se);
        }
    }

    #[test]
    fn log_means_cache_agrees() {
        let mu = [0.2, 1.0, 0.0, 0.6];
        let cache = LogMeans::new(&mu);
        let h = [1.0, 0.0, 1.0, 0.0];
        assert!((cache.logpmf(&h) - q_logpmf(&mu, &h)).abs() < 1e-14);
    }

    #[test]
    fn deterministic_outputs() {
        let mut rng = RandomStream::new(10, 0);
        let rec = RecognitionParams::init(&Architecture::sbn(6, &[4, 3]), 0.7, &mut rng);
        let x = Matrix::from_fn(3, 6, |i, j| ((i + j) % 2) as f64 - 0.5);
        assert_eq!(rec.initial_means(&x).unwrap(), rec.initial_means(&x).unwrap());
    }
}
