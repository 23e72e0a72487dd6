//! Exact quantities by enumerating every latent configuration.
//!
//! Configuration `code` maps to the flat latent `h` with `h[i] = (code >> i) & 1`.
//! All tables are indexed by code. Enumeration goes through the same
//! `joint_logp` and `q` evaluation as the estimators. Work is sharded across
//! threads but reductions always run sequentially in code order, so results
//! do not depend on the worker count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::inference::WeightScheme;
use crate::model::{GenerativeParams, LatentLayout, ENUMERATION_CAP};
use crate::numerics::logsumexp;
use crate::params::Parameters;
use crate::recognition::{LogMeans, RecognitionParams};

pub fn check_cap(bits: usize) -> Result<()> {
    if bits > ENUMERATION_CAP {
        return Err(Error::EnumerationCap {
            bits,
            cap: ENUMERATION_CAP,
        });
    }
    Ok(())
}

pub fn config(code: usize, bits: usize) -> Vec<f64> {
    (0..bits).map(|i| ((code >> i) & 1) as f64).collect()
}

fn fill_config(code: usize, out: &mut [f64]) {
    for (i, b) in out.iter_mut().enumerate() {
        *b = ((code >> i) & 1) as f64;
    }
}

fn num_configs(bits: usize) -> usize {
    1usize << bits
}

/// `log p(x, h)` for every configuration, in code order.
pub fn joint_table(gen: &GenerativeParams, x: &[f64]) -> Result<Vec<f64>> {
    let bits = gen.total_latent();
    check_cap(bits)?;
    crate::error::check_dim("observation", gen.visible_dim(), x.len())?;
    let joint = gen.scorer();
    Ok((0..num_configs(bits))
        .into_par_iter()
        .map_init(
            || vec![0.0; bits],
            |h, code| {
                fill_config(code, h);
                joint.logp(x, h)
            },
        )
        .collect())
}

/// `q(h)` for every configuration under factorized means `mu`.
pub fn q_table(mu: &[f64]) -> Result<Vec<f64>> {
    let bits = mu.len();
    check_cap(bits)?;
    let q = LogMeans::new(mu);
    Ok((0..num_configs(bits))
        .into_par_iter()
        .map_init(
            || vec![0.0; bits],
            |h, code| {
                fill_config(code, h);
                q.logpmf(h).exp()
            },
        )
        .collect())
}

/// `log p(x) = log Σ_h p(x, h)`.
pub fn exact_logp(gen: &GenerativeParams, x: &[f64]) -> Result<f64> {
    Ok(logsumexp(&joint_table(gen, x)?)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExactSummary {
    pub logp_x: f64,
    pub layout: LatentLayout,
    /// `p(h | x)` indexed by configuration code.
    pub posterior: Vec<f64>,
    /// `E_{p(h|x)}[h]` over the flat latent.
    pub posterior_mean: Vec<f64>,
}

impl ExactSummary {
    pub fn layer_mean(&self, layer: usize) -> &[f64] {
        &self.posterior_mean[self.layout.range(layer)]
    }
}

pub fn exact_posterior(gen: &GenerativeParams, x: &[f64]) -> Result<ExactSummary> {
    let joint = joint_table(gen, x)?;
    let logp_x = logsumexp(&joint)?;
    let posterior: Vec<f64> = joint.iter().map(|&lj| (lj - logp_x).exp()).collect();
    let posterior_mean = weighted_mean(&posterior, gen.total_latent());
    Ok(ExactSummary {
        logp_x,
        layout: gen.layout(),
        posterior,
        posterior_mean,
    })
}

fn weighted_mean(probs: &[f64], bits: usize) -> Vec<f64> {
    let mut mean = vec![0.0; bits];
    for (code, &p) in probs.iter().enumerate() {
        for (i, m) in mean.iter_mut().enumerate() {
            if (code >> i) & 1 == 1 {
                *m += p;
            }
        }
    }
    mean
}

/// `E_q[log p(x, h) − log q(h)]` for factorized `mu`.
pub fn exact_l1(gen: &GenerativeParams, x: &[f64], mu: &[f64]) -> Result<f64> {
    crate::error::check_dim("variational means", gen.total_latent(), mu.len())?;
    let joint = joint_table(gen, x)?;
    let q = LogMeans::new(mu);
    let mut h = vec![0.0; mu.len()];
    let mut total = 0.0;
    for (code, &lj) in joint.iter().enumerate() {
        fill_config(code, &mut h);
        let lq = q.logpmf(&h);
        total += lq.exp() * (lj - lq);
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KlDirection {
    /// `KL(q ‖ p(h|x))`.
    Exclusive,
    /// `KL(p(h|x) ‖ q)`.
    Inclusive,
}

pub fn exact_kl(gen: &GenerativeParams, x: &[f64], mu: &[f64], direction: KlDirection) -> Result<f64> {
    crate::error::check_dim("variational means", gen.total_latent(), mu.len())?;
    let joint = joint_table(gen, x)?;
    let logp_x = logsumexp(&joint)?;
    let q = LogMeans::new(mu);
    let mut h = vec![0.0; mu.len()];
    let mut total = 0.0;
    for (code, &lj) in joint.iter().enumerate() {
        fill_config(code, &mut h);
        let lq = q.logpmf(&h);
        let lp = lj - logp_x;
        total += match direction {
            KlDirection::Exclusive => lq.exp() * (lq - lp),
            KlDirection::Inclusive => lp.exp() * (lp - lq),
        };
    }
    Ok(total)
}

/// `Σ_h c(h) ∇_θ log p(x, h)` for per-configuration coefficients `c`.
pub fn exact_grad_theta_weighted(
    gen: &GenerativeParams,
    x: &[f64],
    coeffs: &[f64],
) -> Result<GenerativeParams> {
    let bits = gen.total_latent();
    check_cap(bits)?;
    crate::error::check_dim("coefficient table", num_configs(bits), coeffs.len())?;
    let mut grad = gen.zeros_like();
    let mut h = vec![0.0; bits];
    for (code, &c) in coeffs.iter().enumerate() {
        if c != 0.0 {
            fill_config(code, &mut h);
            gen.accumulate_joint_grad(x, &h, c, &mut grad);
        }
    }
    Ok(grad)
}

/// `Σ_h c(h) ∇_φ log q_0(h | x; φ)`.
pub fn exact_grad_phi_weighted(
    rec: &RecognitionParams,
    x_centered: &[f64],
    coeffs: &[f64],
) -> Result<RecognitionParams> {
    let bits = rec.total_latent();
    check_cap(bits)?;
    crate::error::check_dim("coefficient table", num_configs(bits), coeffs.len())?;
    crate::error::check_dim("recognition input", rec.input_dim(), x_centered.len())?;
    let mut grad = rec.zeros_like();
    let mut h = vec![0.0; bits];
    for (code, &c) in coeffs.iter().enumerate() {
        if c != 0.0 {
            fill_config(code, &mut h);
            rec.accumulate_score_grad(x_centered, &h, c, &mut grad);
        }
    }
    Ok(grad)
}

/// `E_q[∇_θ log p(x, h)]`, which is also `∇_θ` of [`exact_l1`].
pub fn exact_grad_theta_l1(gen: &GenerativeParams, x: &[f64], mu: &[f64]) -> Result<GenerativeParams> {
    crate::error::check_dim("variational means", gen.total_latent(), mu.len())?;
    exact_grad_theta_weighted(gen, x, &q_table(mu)?)
}

/// `E_{p(h|x)}[∇_θ log p(x, h)] = ∇_θ log p(x)`, the many-sample limit of the
/// self-normalized estimator.
pub fn exact_grad_theta_posterior(gen: &GenerativeParams, x: &[f64]) -> Result<GenerativeParams> {
    let post = exact_posterior(gen, x)?;
    exact_grad_theta_weighted(gen, x, &post.posterior)
}

/// `E_{q(·; mu)}[∇_φ log q_0(h | x; φ)]` with samples from `mu` held fixed.
pub fn exact_grad_phi_score(rec: &RecognitionParams, x_centered: &[f64], mu: &[f64]) -> Result<RecognitionParams> {
    crate::error::check_dim("variational means", rec.total_latent(), mu.len())?;
    exact_grad_phi_weighted(rec, x_centered, &q_table(mu)?)
}

/// `E_{p(h|x)}[∇_φ log q_0(h | x; φ)]`, the many-sample limit of the
/// inclusive-KL estimator.
pub fn exact_grad_phi_inclusive(
    rec: &RecognitionParams,
    x_centered: &[f64],
    gen: &GenerativeParams,
    x: &[f64],
) -> Result<RecognitionParams> {
    let post = exact_posterior(gen, x)?;
    exact_grad_phi_weighted(rec, x_centered, &post.posterior)
}

/// Exact expectation of `Σ_k w̃^(k) 1[h^(k) = h]` for `k` independent draws
/// from `q(·; mu)`, per configuration `h`.
///
/// Any self-normalized estimator `Σ_k w̃^(k) g(h^(k))` then has expectation
/// `Σ_h c(h) g(h)`. Enumerates all `k`-tuples, so `k · bits` must stay
/// within the enumeration cap.
pub fn selfnorm_coefficients(
    gen: &GenerativeParams,
    x: &[f64],
    mu: &[f64],
    k: usize,
    scheme: WeightScheme,
) -> Result<Vec<f64>> {
    let bits = gen.total_latent();
    crate::error::check_dim("variational means", bits, mu.len())?;
    if k == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    check_cap(bits * k)?;
    let joint = joint_table(gen, x)?;
    let q = q_table(mu)?;
    let half = matches!(scheme, WeightScheme::Bihm);
    let log_w: Vec<f64> = joint
        .iter()
        .zip(&q)
        .map(|(&lj, &qh)| {
            let lw = lj - qh.ln();
            if half {
                0.5 * lw
            } else {
                lw
            }
        })
        .collect();
    let n = num_configs(bits);
    let others = k - 1;
    let tuples = n.pow(others as u32);
    // by exchangeability, c(h) = k · q(h) · E[w̃^(1) | h^(1) = h]
    let coeffs = (0..n)
        .into_par_iter()
        .map(|code| {
            let mut expect = 0.0;
            let mut lw = vec![0.0; k];
            for t in 0..tuples {
                let mut rest = t;
                let mut prob = 1.0;
                lw[0] = log_w[code];
                for slot in lw.iter_mut().skip(1) {
                    let c = rest % n;
                    rest /= n;
                    prob *= q[c];
                    *slot = log_w[c];
                }
                let m = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let denom: f64 = lw.iter().map(|&l| (l - m).exp()).sum();
                expect += prob * (lw[0] - m).exp() / denom;
            }
            k as f64 * q[code] * expect
        })
        .collect();
    Ok(coeffs)
}

/// Expected AIR target `E[Σ_m w̃^(m) h^(m)]` for `m` draws from `mu`.
pub fn expected_air_target(
    gen: &GenerativeParams,
    x: &[f64],
    mu: &[f64],
    m: usize,
    scheme: WeightScheme,
) -> Result<Vec<f64>> {
    let c = selfnorm_coefficients(gen, x, mu, m, scheme)?;
    Ok(weighted_mean(&c, mu.len()))
}
