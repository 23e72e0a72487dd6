//! Gradient-ascent refinement (GDIR) of a diagonal Gaussian posterior on a
//! small continuous-latent model with a standard-normal prior and a
//! Bernoulli decoder.
//!
//! The objective is the reparameterized bound
//! `(1/S) Σ_s log p(x | μ + σ ⊙ ε_s) − KL(q ‖ N(0, I))` with the KL term in
//! closed form. Holding `ε` fixed across steps makes it a deterministic
//! function of `(μ, log σ)`.

use crate::error::{Error, Result};
use crate::model::Dense;
use crate::numerics::RandomStream;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianVariationalState {
    pub mu: Vec<f64>,
    pub log_sigma: Vec<f64>,
}

impl GaussianVariationalState {
    /// `μ = 0`, `σ = 1`.
    pub fn standard(dim: usize) -> Self {
        Self {
            mu: vec![0.0; dim],
            log_sigma: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.log_sigma.iter().map(|l| l.exp()).collect()
    }

    fn is_finite(&self) -> bool {
        self.mu.iter().chain(&self.log_sigma).all(|v| v.is_finite())
    }

    fn add_scaled(&self, gamma: f64, grad: &Self) -> Self {
        Self {
            mu: self.mu.iter().zip(&grad.mu).map(|(a, g)| a + gamma * g).collect(),
            log_sigma: self
                .log_sigma
                .iter()
                .zip(&grad.log_sigma)
                .map(|(a, g)| a + gamma * g)
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianLatentModel {
    /// Maps `z` to visible logits.
    pub decoder: Dense,
}

#[inline]
fn softplus(a: f64) -> f64 {
    if a > 0.0 {
        a + (-a).exp().ln_1p()
    } else {
        a.exp().ln_1p()
    }
}

impl GaussianLatentModel {
    pub fn new(decoder: Dense) -> Self {
        Self { decoder }
    }

    pub fn random(visible: usize, latent: usize, std: f64, rng: &mut RandomStream) -> Self {
        let mut decoder = Dense::gaussian(visible, latent, std, rng);
        for b in decoder.bias.iter_mut() {
            *b = std * rng.standard_normal();
        }
        Self { decoder }
    }

    pub fn visible_dim(&self) -> usize {
        self.decoder.out_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.decoder.in_dim()
    }

    /// `log p(x | z) = Σ_i x_i a_i − softplus(a_i)`, `a = W z + b`.
    pub fn log_likelihood(&self, x: &[f64], z: &[f64]) -> f64 {
        self.decoder
            .forward(z)
            .iter()
            .zip(x)
            .map(|(&a, &t)| t * a - softplus(a))
            .sum()
    }

    /// `∇_z log p(x | z) = Wᵀ (x − σ(W z + b))`.
    pub fn grad_z(&self, x: &[f64], z: &[f64]) -> Vec<f64> {
        let delta: Vec<f64> = self
            .decoder
            .forward(z)
            .iter()
            .zip(x)
            .map(|(&a, &t)| t - crate::numerics::sigmoid(a))
            .collect();
        let mut g = vec![0.0; z.len()];
        self.decoder.weights.add_transpose_mul(&delta, &mut g);
        g
    }

    fn check(&self, x: &[f64], state: &GaussianVariationalState) -> Result<()> {
        crate::error::check_dim("observation", self.visible_dim(), x.len())?;
        crate::error::check_dim("gaussian means", self.latent_dim(), state.mu.len())?;
        crate::error::check_dim("gaussian log-scales", self.latent_dim(), state.log_sigma.len())
    }
}

/// `z = μ + exp(log σ) ⊙ ε`.
pub fn reparam_with(state: &GaussianVariationalState, eps: &[f64]) -> Vec<f64> {
    state
        .mu
        .iter()
        .zip(&state.log_sigma)
        .zip(eps)
        .map(|((&m, &ls), &e)| m + ls.exp() * e)
        .collect()
}

pub fn reparam_sample(state: &GaussianVariationalState, rng: &mut RandomStream) -> Vec<f64> {
    let eps: Vec<f64> = (0..state.dim()).map(|_| rng.standard_normal()).collect();
    reparam_with(state, &eps)
}

/// `Σ_i (σ_i² + μ_i² − 1)/2 − log σ_i`.
pub fn kl_analytic(state: &GaussianVariationalState) -> f64 {
    state
        .mu
        .iter()
        .zip(&state.log_sigma)
        .map(|(&m, &ls)| 0.5 * ((2.0 * ls).exp() + m * m - 1.0) - ls)
        .sum()
}

/// `S` noise vectors of width `dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Noise(pub Vec<Vec<f64>>);

impl Noise {
    pub fn draw(samples: usize, dim: usize, rng: &mut RandomStream) -> Self {
        Noise(
            (0..samples)
                .map(|_| (0..dim).map(|_| rng.standard_normal()).collect())
                .collect(),
        )
    }
}

/// Reparameterized bound estimate under the given noise.
pub fn objective(model: &GaussianLatentModel, x: &[f64], state: &GaussianVariationalState, noise: &Noise) -> f64 {
    let s = noise.0.len() as f64;
    let ll: f64 = noise
        .0
        .iter()
        .map(|eps| model.log_likelihood(x, &reparam_with(state, eps)))
        .sum();
    ll / s - kl_analytic(state)
}

/// Bound estimate from `samples` fresh noise draws.
pub fn gaussian_l1(
    model: &GaussianLatentModel,
    x: &[f64],
    state: &GaussianVariationalState,
    samples: usize,
    rng: &mut RandomStream,
) -> Result<f64> {
    model.check(x, state)?;
    if samples == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    Ok(objective(model, x, state, &Noise::draw(samples, state.dim(), rng)))
}

/// Pathwise gradient of [`objective`] with respect to `μ` and `log σ`.
pub fn objective_grad(
    model: &GaussianLatentModel,
    x: &[f64],
    state: &GaussianVariationalState,
    noise: &Noise,
) -> GaussianVariationalState {
    let h = state.dim();
    let s = noise.0.len() as f64;
    let sigma = state.sigma();
    let mut d_mu = vec![0.0; h];
    let mut d_ls = vec![0.0; h];
    for eps in &noise.0 {
        let g = model.grad_z(x, &reparam_with(state, eps));
        for i in 0..h {
            d_mu[i] += g[i] / s;
            d_ls[i] += g[i] * eps[i] * sigma[i] / s;
        }
    }
    for i in 0..h {
        d_mu[i] -= state.mu[i];
        d_ls[i] -= sigma[i] * sigma[i] - 1.0;
    }
    GaussianVariationalState {
        mu: d_mu,
        log_sigma: d_ls,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GdirStep {
    pub state: GaussianVariationalState,
    /// Rate actually applied after any halving; zero if no step was accepted.
    pub gamma: f64,
    pub before: f64,
    pub after: f64,
    pub halvings: usize,
}

const MAX_HALVINGS: usize = 40;

/// One ascent step `(μ, log σ) += γ ∇`, halving `γ` while the objective
/// under `noise` would decrease. Leaves the state unchanged if no halving
/// helps.
pub fn gdir_step(
    model: &GaussianLatentModel,
    x: &[f64],
    state: &GaussianVariationalState,
    gamma: f64,
    noise: &Noise,
) -> Result<GdirStep> {
    model.check(x, state)?;
    if !(gamma >= 0.0) {
        return Err(Error::InvalidArgument(format!("step size must be non-negative, got {gamma}")));
    }
    let before = objective(model, x, state, noise);
    if gamma == 0.0 {
        return Ok(GdirStep {
            state: state.clone(),
            gamma,
            before,
            after: before,
            halvings: 0,
        });
    }
    let grad = objective_grad(model, x, state, noise);
    if !grad.is_finite() {
        return Err(Error::NonFiniteGradient {
            name: "gdir.variational".into(),
        });
    }
    let mut g = gamma;
    for halvings in 0..=MAX_HALVINGS {
        let proposal = state.add_scaled(g, &grad);
        let after = objective(model, x, &proposal, noise);
        if after >= before {
            return Ok(GdirStep {
                state: proposal,
                gamma: g,
                before,
                after,
                halvings,
            });
        }
        g *= 0.5;
    }
    Ok(GdirStep {
        state: state.clone(),
        gamma: 0.0,
        before,
        after: before,
        halvings: MAX_HALVINGS + 1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseMode {
    /// One noise draw shared by every step.
    Frozen,
    /// New noise for every step.
    Fresh,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GdirConfig {
    pub steps: usize,
    pub gamma: f64,
    pub samples: usize,
    pub noise: NoiseMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GdirRun {
    pub state: GaussianVariationalState,
    /// Objective before the first step and after each step, each measured
    /// under the noise of the step that produced it.
    pub objectives: Vec<f64>,
    pub final_gamma: f64,
}

/// `steps` GDIR steps. A halved rate is carried into later steps.
pub fn gdir(
    model: &GaussianLatentModel,
    x: &[f64],
    init: &GaussianVariationalState,
    config: &GdirConfig,
    rng: &mut RandomStream,
) -> Result<GdirRun> {
    model.check(x, init)?;
    if config.samples == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    let mut noise = Noise::draw(config.samples, init.dim(), rng);
    let mut state = init.clone();
    let mut gamma = config.gamma;
    let mut objectives = vec![objective(model, x, &state, &noise)];
    for _ in 0..config.steps {
        if config.noise == NoiseMode::Fresh {
            noise = Noise::draw(config.samples, init.dim(), rng);
        }
        let step = gdir_step(model, x, &state, gamma, &noise)?;
        if step.gamma > 0.0 {
            gamma = step.gamma;
        }
        objectives.push(step.after);
        state = step.state;
    }
    Ok(GdirRun {
        state,
        objectives,
        final_gamma: gamma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Matrix;

    fn toy(seed: u64) -> GaussianLatentModel {
        GaussianLatentModel::random(8, 4, 1.0, &mut RandomStream::new(seed, 0))
    }

    fn constant_decoder() -> GaussianLatentModel {
        GaussianLatentModel::new(Dense::new(Matrix::zeros(3, 2), vec![0.5, -1.0, 2.0]).unwrap())
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_analytic(&GaussianVariationalState::standard(3)), 0.0);
        let s = GaussianVariationalState {
            mu: vec![1.0],
            log_sigma: vec![0.0],
        };
        assert!((kl_analytic(&s) - 0.5).abs() < 1e-15);
        let mut rng = RandomStream::new(1, 0);
        for _ in 0..1000 {
            let s = GaussianVariationalState {
                mu: vec![rng.normal(0.0, 2.0)],
                log_sigma: vec![rng.normal(0.0, 1.0)],
            };
            assert!(kl_analytic(&s) > 0.0);
        }
    }

    #[test]
    fn reparam_limits() {
        let mut rng = RandomStream::new(2, 0);
        let tight = GaussianVariationalState {
            mu: vec![0.3, -1.2],
            log_sigma: vec![-60.0, -60.0],
        };
        let z = reparam_sample(&tight, &mut rng);
        assert!((z[0] - 0.3).abs() < 1e-20 && (z[1] + 1.2).abs() < 1e-20);
        let eps = [0.7, -0.4];
        let base = GaussianVariationalState {
            mu: vec![0.0, 0.0],
            log_sigma: vec![0.2, -0.3],
        };
        let shifted = GaussianVariationalState {
            mu: vec![1.5, -2.0],
            ..base.clone()
        };
        let (a, b) = (reparam_with(&base, &eps), reparam_with(&shifted, &eps));
        assert!((b[0] - a[0] - 1.5).abs() < 1e-15 && (b[1] - a[1] + 2.0).abs() < 1e-15);
    }

    #[test]
    fn reparam_moments() {
        let mut rng = RandomStream::new(3, 0);
        let n = 100_000;
        let s = GaussianVariationalState::standard(1);
        let z: Vec<f64> = (0..n).map(|_| reparam_sample(&s, &mut rng)[0]).collect();
        let mean = z.iter().sum::<f64>() / n as f64;
        let m2 = z.iter().map(|v| v * v).sum::<f64>() / n as f64;
        // standard errors: 1/√n for the mean, √2/√n for the second moment
        assert!(mean.abs() < 3.0 / (n as f64).sqrt());
        assert!((m2 - 1.0).abs() < 3.0 * 2f64.sqrt() / (n as f64).sqrt());
    }

    #[test]
    fn pathwise_gradient_matches_finite_differences() {
        let model = toy(4);
        let mut rng = RandomStream::new(5, 0);
        let x: Vec<f64> = (0..8).map(|i| (i % 3 == 0) as u8 as f64).collect();
        let state = GaussianVariationalState {
            mu: (0..4).map(|_| rng.normal(0.0, 0.5)).collect(),
            log_sigma: (0..4).map(|_| rng.normal(-0.5, 0.3)).collect(),
        };
        let noise = Noise::draw(7, 4, &mut rng);
        let grad = objective_grad(&model, &x, &state, &noise);
        let d = 1e-5;
        for i in 0..4 {
            for which in 0..2 {
                let mut p = state.clone();
                let mut m = state.clone();
                let (pv, mv, g) = if which == 0 {
                    (&mut p.mu, &mut m.mu, grad.mu[i])
                } else {
                    (&mut p.log_sigma, &mut m.log_sigma, grad.log_sigma[i])
                };
                pv[i] += d;
                mv[i] -= d;
                let fd = (objective(&model, &x, &p, &noise) - objective(&model, &x, &m, &noise)) / (2.0 * d);
                assert!((fd - g).abs() <= 1e-5 * g.abs().max(1e-3), "{which}/{i}: {fd} vs {g}");
            }
        }
    }

    #[test]
    fn constant_decoder_flows_to_prior() {
        let model = constant_decoder();
        let x = [1.0, 0.0, 1.0];
        let mut rng = RandomStream::new(6, 0);
        let init = GaussianVariationalState {
            mu: vec![1.5, -0.8],
            log_sigma: vec![0.9, -1.1],
        };
        let cfg = GdirConfig {
            steps: 400,
            gamma: 0.05,
            samples: 3,
            noise: NoiseMode::Fresh,
        };
        let run = gdir(&model, &x, &init, &cfg, &mut rng).unwrap();
        for i in 0..2 {
            assert!(run.state.mu[i].abs() < 1e-6);
            assert!(run.state.log_sigma[i].abs() < 1e-6);
        }
        let ll = model.log_likelihood(&x, &[0.0, 0.0]);
        let l1 = gaussian_l1(&model, &x, &run.state, 5, &mut rng).unwrap();
        assert!((l1 - ll).abs() < 1e-9);
    }

    #[test]
    fn zero_rate_is_identity() {
        let model = toy(7);
        let x = [1.0; 8];
        let s = GaussianVariationalState {
            mu: vec![0.1, 0.2, 0.3, 0.4],
            log_sigma: vec![-0.1; 4],
        };
        let noise = Noise::draw(4, 4, &mut RandomStream::new(0, 0));
        assert_eq!(gdir_step(&model, &x, &s, 0.0, &noise).unwrap().state, s);
        assert!(gdir_step(&model, &x, &s, -0.1, &noise).is_err());
    }

    #[test]
    fn frozen_noise_objective_never_decreases() {
        let model = toy(8);
        let x: Vec<f64> = (0..8).map(|i| (i % 2) as f64).collect();
        let cfg = GdirConfig {
            steps: 50,
            gamma: 0.5,
            samples: 10,
            noise: NoiseMode::Frozen,
        };
        let run = gdir(&model, &x, &GaussianVariationalState::standard(4), &cfg, &mut RandomStream::new(9, 0)).unwrap();
        for w in run.objectives.windows(2) {
            assert!(w[1] >= w[0] - 1e-12);
        }
        assert!(run.objectives[50] > run.objectives[0]);
    }
}
