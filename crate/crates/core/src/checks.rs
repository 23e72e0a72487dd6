//! Oracle-versus-estimator checks: finite differences, replicate means
//! against enumeration, and a battery that runs them all on one model.

use crate::error::Result;
use crate::inference::{air_step, estimate_lk, importance_set, ImportanceSet, WeightScheme};
use crate::model::{GenerativeParams, Prior};
use crate::numerics::{Matrix, RandomStream};
use crate::oracle;
use crate::params::Parameters;
use crate::recognition::{q_logpmf, RecognitionParams};
use crate::training::{grad_phi_exclusive, grad_phi_inclusive, grad_theta_reweighted, grad_theta_uniform};

/// Smallest magnitude used as the denominator of a relative error.
pub const RELATIVE_FLOOR: f64 = 1e-3;

pub fn relative_error(approx: f64, exact: f64) -> f64 {
    (approx - exact).abs() / exact.abs().max(approx.abs()).max(RELATIVE_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub coords: usize,
}

/// Central differences of `f` against `analytic`, tensor by tensor.
/// Upper-triangular autoregressive prior weights are structural zeros and
/// are skipped.
pub fn finite_difference<P: Parameters>(
    params: &P,
    analytic: &P,
    delta: f64,
    f: impl Fn(&P) -> f64,
) -> Vec<TensorCheck> {
    let names: Vec<(String, Vec<usize>)> = params.tensors().into_iter().map(|t| (t.name, t.dims)).collect();
    let grads: Vec<Vec<f64>> = analytic.tensors().into_iter().map(|t| t.data.to_vec()).collect();
    let mut out = Vec::new();
    for (t, ((name, dims), g)) in names.iter().zip(&grads).enumerate() {
        let mut worst: f64 = 0.0;
        let mut coords = 0;
        for j in 0..g.len() {
            if name == "gen.prior.w" && dims.len() == 2 && j % dims[1] >= j / dims[1] {
                continue;
            }
            let eval = |shift: f64| {
                let mut p = params.clone();
                p.tensors_mut()[t].1[j] += shift;
                f(&p)
            };
            let fd = (eval(delta) - eval(-delta)) / (2.0 * delta);
            worst = worst.max(relative_error(g[j], fd));
            coords += 1;
        }
        out.push(TensorCheck {
            name: name.clone(),
            max_rel_error: worst,
            coords,
        });
    }
    out
}

/// Per-coordinate replicate mean and standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateStats {
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
    pub replicates: usize,
}

impl ReplicateStats {
    pub fn collect(replicates: usize, mut draw: impl FnMut(usize) -> Vec<f64>) -> Self {
        let mut sum: Vec<f64> = Vec::new();
        let mut sum_sq: Vec<f64> = Vec::new();
        for r in 0..replicates {
            let v = draw(r);
            if sum.is_empty() {
                sum = vec![0.0; v.len()];
                sum_sq = vec![0.0; v.len()];
            }
            for ((s, q), x) in sum.iter_mut().zip(sum_sq.iter_mut()).zip(&v) {
                *s += x;
                *q += x * x;
            }
        }
        let n = replicates as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std_error = sum_sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| ((q / n - m * m).max(0.0) * n / (n - 1.0) / n).sqrt())
            .collect();
        Self {
            mean,
            std_error,
            replicates,
        }
    }

    /// Coordinates where the mean is more than `z` standard errors from
    /// `exact`. A zero standard error requires agreement to `1e-12`.
    pub fn outliers(&self, exact: &[f64], z: f64) -> Vec<usize> {
        self.mean
            .iter()
            .zip(&self.std_error)
            .zip(exact)
            .enumerate()
            .filter(|(_, ((m, se), e))| (*m - *e).abs() > (z * *se).max(1e-12))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn max_z(&self, exact: &[f64]) -> f64 {
        self.mean
            .iter()
            .zip(&self.std_error)
            .zip(exact)
            .map(|((m, se), e)| {
                let d = (m - e).abs();
                if *se > 0.0 {
                    d / se
                } else if d <= 1e-12 {
                    0.0
                } else {
                    f64::INFINITY
                }
            })
            .fold(0.0, f64::max)
    }
}

/// `E_{q}[log q_0(h | x; φ)]` with `q` fixed: the objective whose gradient
/// is the score gradient under `q`.
pub fn expected_recognition_logq(rec: &RecognitionParams, x_centered: &[f64], probs: &[f64]) -> f64 {
    let mu0 = rec.initial_means_row(x_centered).expect("recognition input width");
    probs
        .iter()
        .enumerate()
        .filter(|(_, &p)| p != 0.0)
        .map(|(code, &p)| p * q_logpmf(&mu0, &oracle::config(code, mu0.len())))
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    /// The statistic compared against its threshold.
    pub value: f64,
    pub threshold: f64,
}

impl CheckOutcome {
    fn at_most(name: &str, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            passed: value <= threshold,
            value,
            threshold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatteryOptions {
    pub replicates: usize,
    pub fd_delta: f64,
    pub fd_tolerance: f64,
    /// Family-wise z threshold for replicate means.
    pub z: f64,
    /// Scales the normalized weights by 1.5 before use, so self-normalized
    /// checks should fail.
    pub corrupt_weight_normalization: bool,
}

impl Default for BatteryOptions {
    fn default() -> Self {
        Self {
            replicates: 4000,
            fd_delta: 1e-5,
            fd_tolerance: 1e-4,
            z: 4.5,
            corrupt_weight_normalization: false,
        }
    }
}

fn corrupt(mut set: ImportanceSet, on: bool) -> ImportanceSet {
    if on {
        set.w_tilde.iter_mut().for_each(|w| *w *= 1.5);
    }
    set
}

/// Runs every oracle comparison on `gen`/`rec` at each row of `x`
/// (recognition inputs `x_centered`).
pub fn run_battery(
    gen: &GenerativeParams,
    rec: &RecognitionParams,
    x: &Matrix,
    x_centered: &Matrix,
    options: &BatteryOptions,
    rng: &RandomStream,
) -> Result<Vec<CheckOutcome>> {
    oracle::check_cap(2 * gen.total_latent())?;
    let mut out = Vec::new();
    let reps = options.replicates;
    let mut gap_err: f64 = 0.0;
    let mut order_violation: f64 = 0.0;
    let mut lk_z: f64 = 0.0;
    let mut fd_theta: f64 = 0.0;
    let mut fd_phi: f64 = 0.0;
    let mut score: f64 = 0.0;
    let mut z_uniform: f64 = 0.0;
    let mut z_reweighted: f64 = 0.0;
    let mut z_exclusive: f64 = 0.0;
    let mut z_inclusive: f64 = 0.0;
    let mut z_air: f64 = 0.0;
    for i in 0..x.rows() {
        let xi = x.row(i);
        let xc = x_centered.row(i);
        let item_rng = rng.substream(i as u64);
        let mu = rec.initial_means_row(xc)?;
        let logp = oracle::exact_logp(gen, xi)?;
        let l1 = oracle::exact_l1(gen, xi, &mu)?;
        let kl = oracle::exact_kl(gen, xi, &mu, oracle::KlDirection::Exclusive)?;
        gap_err = gap_err.max((logp - l1 - kl).abs());
        order_violation = order_violation.max(l1 - logp);

        for (slot, k) in [1usize, 10, 100].into_iter().enumerate() {
            let mut s = item_rng.substream(10 + slot as u64);
            let stats = ReplicateStats::collect(reps, |_| {
                let set = importance_set(gen, xi, &mu, k, &mut s).expect("valid proposal");
                vec![estimate_lk(&set).exp()]
            });
            lk_z = lk_z.max(stats.max_z(&[logp.exp()]));
        }

        let exact_theta = oracle::exact_grad_theta_l1(gen, xi, &mu)?;
        for c in finite_difference(gen, &exact_theta, options.fd_delta, |g| {
            oracle::exact_l1(g, xi, &mu).expect("within cap")
        }) {
            fd_theta = fd_theta.max(c.max_rel_error);
        }
        let q = oracle::q_table(&mu)?;
        let exact_phi = oracle::exact_grad_phi_weighted(rec, xc, &q)?;
        for c in finite_difference(rec, &exact_phi, options.fd_delta, |r| expected_recognition_logq(r, xc, &q)) {
            fd_phi = fd_phi.max(c.max_rel_error);
        }
        score = score.max(exact_phi.flatten().iter().fold(0.0f64, |m, v| m.max(v.abs())));

        let mut s = item_rng.substream(20);
        let st = ReplicateStats::collect(reps, |_| {
            let set = importance_set(gen, xi, &mu, 1, &mut s).expect("valid proposal");
            grad_theta_uniform(gen, xi, &set.samples).flatten()
        });
        z_uniform = z_uniform.max(st.max_z(&exact_theta.flatten()));

        let mut s = item_rng.substream(21);
        let st = ReplicateStats::collect(reps, |_| {
            let set = importance_set(gen, xi, &mu, 1, &mut s).expect("valid proposal");
            grad_phi_exclusive(rec, xc, &set.samples).flatten()
        });
        z_exclusive = z_exclusive.max(st.max_z(&exact_phi.flatten()));

        let coeffs = oracle::selfnorm_coefficients(gen, xi, &mu, 2, WeightScheme::Standard)?;
        let exact_rw = oracle::exact_grad_theta_weighted(gen, xi, &coeffs)?.flatten();
        let exact_incl = oracle::exact_grad_phi_weighted(rec, xc, &coeffs)?.flatten();
        let mut s = item_rng.substream(22);
        let st = ReplicateStats::collect(reps, |_| {
            let set = corrupt(importance_set(gen, xi, &mu, 2, &mut s).expect("valid proposal"), options.corrupt_weight_normalization);
            let mut v = grad_theta_reweighted(gen, xi, &set).flatten();
            v.extend(grad_phi_inclusive(rec, xc, &set).flatten());
            v
        });
        let split = exact_rw.len();
        let both: Vec<f64> = exact_rw.iter().chain(&exact_incl).copied().collect();
        let partial = |lo: usize, hi: usize| ReplicateStats {
            mean: st.mean[lo..hi].to_vec(),
            std_error: st.std_error[lo..hi].to_vec(),
            replicates: st.replicates,
        };
        z_reweighted = z_reweighted.max(partial(0, split).max_z(&both[..split]));
        z_inclusive = z_inclusive.max(partial(split, both.len()).max_z(&both[split..]));

        let target = oracle::expected_air_target(gen, xi, &mu, 2, WeightScheme::Standard)?;
        let gamma = 0.5;
        let expected: Vec<f64> = mu.iter().zip(&target).map(|(m, t)| (1.0 - gamma) * m + gamma * t).collect();
        let mut s = item_rng.substream(23);
        let st = ReplicateStats::collect(reps, |_| {
            let step = air_step(gen, xi, &mu, gamma, 2, WeightScheme::Standard, &mut s).expect("valid step");
            if options.corrupt_weight_normalization {
                step.means.iter().zip(&mu).map(|(n, m)| m + 1.5 * (n - m)).collect()
            } else {
                step.means
            }
        });
        z_air = z_air.max(st.max_z(&expected));
    }
    out.push(CheckOutcome::at_most("bound_gap_equals_exclusive_kl", gap_err, 1e-9));
    out.push(CheckOutcome::at_most("l1_below_logp", order_violation, 1e-12));
    out.push(CheckOutcome::at_most("lk_unbiased_in_probability", lk_z, options.z));
    out.push(CheckOutcome::at_most("fd_theta_l1", fd_theta, options.fd_tolerance));
    out.push(CheckOutcome::at_most("fd_phi_score", fd_phi, options.fd_tolerance));
    out.push(CheckOutcome::at_most("score_identity", score, 1e-10));
    out.push(CheckOutcome::at_most("uniform_theta_unbiased", z_uniform, options.z));
    out.push(CheckOutcome::at_most("exclusive_phi_unbiased", z_exclusive, options.z));
    out.push(CheckOutcome::at_most("reweighted_theta_matches_k2", z_reweighted, options.z));
    out.push(CheckOutcome::at_most("inclusive_phi_matches_k2", z_inclusive, options.z));
    out.push(CheckOutcome::at_most("air_step_matches_m2", z_air, options.z));
    let structural = match &gen.prior {
        Prior::Autoregressive(p) => p.is_strictly_lower(),
        Prior::Factorized(_) => true,
    };
    out.push(CheckOutcome {
        name: "prior_structure".into(),
        passed: structural,
        value: if structural { 0.0 } else { 1.0 },
        threshold: 0.0,
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Architecture, PriorKind};

    fn setup(prior: PriorKind) -> (GenerativeParams, RecognitionParams, Matrix) {
        let arch = Architecture::sbn(4, &[3, 3]).with_prior(prior);
        let mut rng = RandomStream::new(31, 0);
        let gen = GenerativeParams::init(&arch, 0.8, &mut rng);
        let rec = RecognitionParams::init(&arch, 0.8, &mut rng);
        let x = Matrix::from_fn(2, 4, |i, j| ((i + j) % 2) as f64);
        (gen, rec, x)
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(1e-9, 0.0) - 1e-6).abs() < 1e-18);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn replicate_stats_of_constant() {
        let s = ReplicateStats::collect(10, |_| vec![2.0, -1.0]);
        assert_eq!(s.mean, vec![2.0, -1.0]);
        assert!(s.std_error.iter().all(|&v| v < 1e-12));
        assert!(s.outliers(&[2.0, -1.0], 3.0).is_empty());
        assert_eq!(s.outliers(&[2.0, -0.5], 3.0), vec![1]);
    }

    #[test]
    fn battery_passes_on_healthy_model() {
        for prior in [PriorKind::Factorized, PriorKind::Autoregressive] {
            let (gen, rec, x) = setup(prior);
            let opts = BatteryOptions {
                replicates: 1500,
                ..BatteryOptions::default()
            };
            let report = run_battery(&gen, &rec, &x, &x, &opts, &RandomStream::new(1, 0)).unwrap();
            for c in &report {
                assert!(c.passed, "{} = {} > {}", c.name, c.value, c.threshold);
            }
        }
    }

    #[test]
    fn corrupted_normalization_is_caught() {
        let (gen, rec, x) = setup(PriorKind::Factorized);
        let opts = BatteryOptions {
            replicates: 1500,
            corrupt_weight_normalization: true,
            ..BatteryOptions::default()
        };
        let report = run_battery(&gen, &rec, &x, &x, &opts, &RandomStream::new(1, 0)).unwrap();
        let failed: Vec<&str> = report.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        assert!(failed.contains(&"reweighted_theta_matches_k2"), "{failed:?}");
        assert!(!failed.contains(&"fd_theta_l1"));
    }
}
