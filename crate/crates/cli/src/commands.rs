//! The `train`, `eval`, `refine`, `sample` and `oracle-check` commands.
//!
//! Each command has a library entry point returning a structured result and
//! writing its files under the configured output directory; `main` only
//! parses flags and prints.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use irvi_core::checks::{run_battery, BatteryOptions, CheckOutcome};
use irvi_core::data::{self, Splits};
use irvi_core::inference::{estimate_bounds, refine, BoundEstimates, RefineConfig, RefinementTrace};
use irvi_core::model::{Architecture, ENUMERATION_CAP};
use irvi_core::numerics::{TAG_DEGRADE, TAG_EVAL, TAG_INIT, TAG_REFINE};
use irvi_core::oracle;
use irvi_core::recognition::{center, center_row, q_logpmf};
use irvi_core::training::{
    finetune_schedule, train_step, EarlyStopping, Optimizer, Rmsprop, Sgd, StepMetrics, TrainState,
};
use irvi_core::{GenerativeParams, Matrix, Parameters, RandomStream, RecognitionParams, WeightScheme};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::checkpoint::Checkpoint;
use crate::config::{DataSource, ExperimentConfig, FinetuneOptimizer};
use crate::error::{CliError, ModelContext};
use crate::metrics::{MetricsRow, MetricsWriter};

/// Stream ids separating the top-level uses of the run seed.
const STREAM_TRAIN: u64 = 1;
const STREAM_VALID: u64 = 2;
const STREAM_EVAL: u64 = 3;
const STREAM_REFINE: u64 = 4;
const STREAM_SAMPLE: u64 = 5;
const STREAM_ORACLE: u64 = 6;

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

/// Adds `N(0, std²)` noise to every parameter, then restores structure.
pub fn randomize(gen: &mut GenerativeParams, std: f64, rng: &mut RandomStream) {
    for (_, t) in gen.tensors_mut() {
        for v in t.iter_mut() {
            *v += rng.normal(0.0, std);
        }
    }
    gen.enforce_structure();
}

/// The frozen teacher network named by the `teacher.*` keys.
pub fn teacher_model(cfg: &ExperimentConfig) -> GenerativeParams {
    let arch = Architecture::sbn(cfg.teacher_visible, &cfg.teacher_latent);
    let mut gen = GenerativeParams::zeros(&arch);
    randomize(&mut gen, cfg.teacher_std, &mut RandomStream::new(cfg.teacher_seed, 0).substream(TAG_INIT));
    gen
}

#[derive(Debug, Clone)]
pub struct RunData {
    pub splits: Splits,
    pub teacher: Option<GenerativeParams>,
}

pub fn load_data(cfg: &ExperimentConfig) -> Result<RunData, CliError> {
    match cfg.data {
        DataSource::Teacher => {
            let teacher = teacher_model(cfg);
            let splits = data::synth_teacher(
                &teacher,
                cfg.teacher_train,
                cfg.teacher_valid,
                cfg.teacher_test,
                &RandomStream::new(cfg.teacher_seed, 1),
            );
            Ok(RunData {
                splits,
                teacher: Some(teacher),
            })
        }
        DataSource::Files => {
            let train_path = cfg
                .train_path
                .as_ref()
                .ok_or_else(|| CliError::Config("data.train is required".into()))?;
            let train = data::load_binary_matrix(train_path)?;
            let test = match &cfg.test_path {
                Some(p) => data::load_binary_matrix(p)?,
                None => Matrix::zeros(0, train.cols()),
            };
            let splits = match &cfg.valid_path {
                Some(p) => Splits::new(train, data::load_binary_matrix(p)?, test)?,
                None => Splits::holdout(&train, cfg.valid_rows.min(train.rows() / 2), test)?,
            };
            Ok(RunData { splits, teacher: None })
        }
    }
}

fn initial_state(cfg: &ExperimentConfig) -> TrainState {
    let rms = |lr| {
        Optimizer::Rmsprop(Rmsprop {
            rho: cfg.rmsprop_rho,
            eps: cfg.rmsprop_eps,
            ..Rmsprop::new(lr)
        })
    };
    TrainState {
        theta_opt: rms(cfg.lr),
        phi_opt: rms(cfg.lr),
    }
}

fn finetune_state(cfg: &ExperimentConfig, state: &TrainState) -> TrainState {
    match cfg.finetune_optimizer {
        FinetuneOptimizer::Rmsprop => state.clone(),
        FinetuneOptimizer::Sgd => TrainState {
            theta_opt: Optimizer::Sgd(Sgd {
                lr: cfg.finetune_lr,
                step: 0,
            }),
            phi_opt: Optimizer::Sgd(Sgd {
                lr: cfg.finetune_lr,
                step: 0,
            }),
        },
    }
}

/// Mean bound estimates over rows from the unrefined recognition posterior.
pub fn validation_bounds(
    gen: &GenerativeParams,
    rec: &RecognitionParams,
    x: &Matrix,
    x_centered: &Matrix,
    k: usize,
    stream: &RandomStream,
) -> Result<BoundEstimates, CliError> {
    let rows: Vec<Result<BoundEstimates, irvi_core::Error>> = (0..x.rows())
        .into_par_iter()
        .map(|i| {
            let mu = rec.initial_means_row(x_centered.row(i))?;
            estimate_bounds(gen, x.row(i), &mu, k, WeightScheme::Standard, &mut stream.substream(i as u64))
        })
        .collect();
    mean_bounds(rows.into_iter().collect::<Result<Vec<_>, _>>().context("validation")?.iter())
}

fn mean_bounds<'a>(rows: impl Iterator<Item = &'a BoundEstimates>) -> Result<BoundEstimates, CliError> {
    let mut acc = BoundEstimates {
        l1: 0.0,
        lk: 0.0,
        ess: 0.0,
        ess_normalized: 0.0,
    };
    let mut n = 0usize;
    for r in rows {
        acc.l1 += r.l1;
        acc.lk += r.lk;
        acc.ess += r.ess;
        acc.ess_normalized += r.ess_normalized;
        n += 1;
    }
    if n == 0 {
        return Ok(acc);
    }
    let d = n as f64;
    acc.l1 /= d;
    acc.lk /= d;
    acc.ess /= d;
    acc.ess_normalized /= d;
    Ok(acc)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub last: Checkpoint,
    pub best: Checkpoint,
    pub rows: Vec<MetricsRow>,
    pub stopped_at: Option<usize>,
}

/// Trains on `data`, writing `metrics.csv`, `best.ckpt` and `last.ckpt` into
/// `cfg.out`.
pub fn train(cfg: &ExperimentConfig, data: &RunData) -> Result<TrainOutcome, CliError> {
    cfg.validate()?;
    ensure_dir(&cfg.out)?;
    let splits = &data.splits;
    let arch = cfg.architecture(splits.train.dim());
    let mut init_rng = RandomStream::new(cfg.seed, 0).substream(TAG_INIT);
    let mut gen = GenerativeParams::init(&arch, cfg.init_std, &mut init_rng);
    let mut rec = RecognitionParams::init(&arch, cfg.init_std, &mut init_rng);
    let mut state = initial_state(cfg);
    let mean_image = splits.train.mean_image.clone();
    let train_x = &splits.train.rows;
    let train_xc = splits.train.centered();
    let valid_x = &splits.valid.rows;
    let valid_xc = splits.valid.centered();
    let tc = cfg.train_config();
    let total_epochs = cfg.epochs + cfg.finetune_epochs;
    let started = Instant::now();
    let wall = |t: &Instant| if cfg.wall_clock { t.elapsed().as_secs_f64() } else { 0.0 };

    let metrics_path = cfg.out.join("metrics.csv");
    let mut writer = MetricsWriter::create(&metrics_path)?;
    let mut rows = Vec::new();
    // The output directory is a property of the run, not the model, so it is
    // dropped to keep checkpoints comparable across locations.
    let stored = ExperimentConfig { out: ExperimentConfig::default().out, ..cfg.clone() };
    let snapshot = |gen: &GenerativeParams, rec: &RecognitionParams, state: &TrainState, epoch: usize| Checkpoint {
        config: stored.clone(),
        gen: gen.clone(),
        rec: rec.clone(),
        state: state.clone(),
        mean_image: mean_image.clone(),
        epoch,
        rng_seed: cfg.seed,
    };
    let mut best = snapshot(&gen, &rec, &state, 0);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut stopped_at = None;

    for epoch in 0..total_epochs {
        let finetune = epoch >= cfg.epochs;
        if epoch == cfg.epochs && epoch > 0 {
            state = finetune_state(cfg, &state);
        }
        let lr = if finetune {
            finetune_schedule(epoch, cfg.epochs, cfg.finetune_lr, cfg.finetune_decay)
        } else {
            cfg.lr
        };
        state.set_lr(lr);
        let epoch_stream = RandomStream::new(cfg.seed, STREAM_TRAIN).substream(epoch as u64);
        let mut totals = StepMetrics::default();
        let (mut l1, mut lk, mut ess) = (0.0, 0.0, 0.0);
        for (b, idx) in data::batches(train_x.rows(), cfg.batch_size, &epoch_stream, true)
            .into_iter()
            .enumerate()
        {
            let x = splits.train.select(&idx);
            let xc = select_rows(&train_xc, &idx);
            let batch_stream = epoch_stream.substream(b as u64 + 1);
            let m = train_step(&mut gen, &mut rec, &x, &xc, Some(&mean_image), &tc, &batch_stream, &mut state)
                .context(format!("epoch {epoch}, batch {b}"))?;
            let w = m.items as f64;
            l1 += m.l1 * w;
            lk += m.lk * w;
            ess += m.ess_normalized * w;
            totals.degenerate += m.degenerate;
            totals.weight_sets += m.weight_sets;
            totals.items += m.items;
        }
        let n = totals.items.max(1) as f64;
        let phase = if finetune { "finetune" } else { "main" };
        let train_row = MetricsRow {
            phase: phase.into(),
            epoch,
            split: "train".into(),
            estimator: cfg.estimator.name().into(),
            l1: l1 / n,
            lk: lk / n,
            ess_norm: ess / n,
            degenerate_frac: totals.degenerate_frac(),
            lr,
            wall_s: wall(&started),
        };
        writer.write(&train_row)?;
        rows.push(train_row);
        if valid_x.rows() > 0 {
            let vs = RandomStream::new(cfg.seed, STREAM_VALID).substream(epoch as u64);
            let v = validation_bounds(&gen, &rec, valid_x, &valid_xc, cfg.valid_samples, &vs)?;
            let row = MetricsRow {
                phase: phase.into(),
                epoch,
                split: "valid".into(),
                estimator: cfg.estimator.name().into(),
                l1: v.l1,
                lk: v.lk,
                ess_norm: v.ess_normalized,
                degenerate_frac: 0.0,
                lr,
                wall_s: wall(&started),
            };
            writer.write(&row)?;
            rows.push(row);
            let d = stopper.observe(epoch, v.lk);
            if d.improved {
                best = snapshot(&gen, &rec, &state, epoch + 1);
            }
            if d.stop {
                stopped_at = Some(epoch);
                break;
            }
        } else {
            best = snapshot(&gen, &rec, &state, epoch + 1);
        }
    }
    let epochs_done = stopped_at.map_or(total_epochs, |e| e + 1);
    let last = snapshot(&gen, &rec, &state, epochs_done);
    if total_epochs == 0 {
        best = last.clone();
    }
    last.save(&cfg.out.join("last.ckpt"))?;
    best.save(&cfg.out.join("best.ckpt"))?;
    write_file(&cfg.out.join("config.txt"), cfg.to_text())?;
    Ok(TrainOutcome {
        last,
        best,
        rows,
        stopped_at,
    })
}

fn select_rows(m: &Matrix, idx: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(idx.len(), m.cols());
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).copy_from_slice(m.row(i));
    }
    out
}

/// First `limit` rows, or all of them when `limit` is zero.
pub fn head_rows(m: &Matrix, limit: usize) -> Matrix {
    let n = if limit == 0 { m.rows() } else { limit.min(m.rows()) };
    select_rows(m, &(0..n).collect::<Vec<_>>())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowEval {
    pub unrefined: BoundEstimates,
    /// Present when refinement steps were requested.
    pub refined: Option<BoundEstimates>,
    /// Exact `log p(x)` when the model is small enough to enumerate.
    pub exact: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<RowEval>,
    pub samples: usize,
    pub steps: usize,
    pub unrefined: BoundEstimates,
    pub refined: Option<BoundEstimates>,
    pub exact: Option<f64>,
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "samples = {}", self.samples);
        let _ = writeln!(s, "steps = {}", self.steps);
        let line = |s: &mut String, tag: &str, b: &BoundEstimates| {
            let _ = writeln!(s, "{tag}.L1_hat = {}", b.l1);
            let _ = writeln!(s, "{tag}.LK_hat = {}", b.lk);
            let _ = writeln!(s, "{tag}.ess_norm = {}", b.ess_normalized);
        };
        line(&mut s, "unrefined", &self.unrefined);
        if let Some(r) = &self.refined {
            line(&mut s, "refined", r);
        }
        if let Some(e) = self.exact {
            let _ = writeln!(s, "exact.logp = {e}");
        }
        s
    }

    pub fn rows_csv(&self) -> String {
        let mut s = String::from("row,L1_hat,LK_hat,ess_norm,refined_L1_hat,refined_LK_hat,refined_ess_norm,exact_logp\n");
        for (i, r) in self.rows.iter().enumerate() {
            let (a, b, c) = r
                .refined
                .map_or((String::new(), String::new(), String::new()), |b| {
                    (b.l1.to_string(), b.lk.to_string(), b.ess_normalized.to_string())
                });
            let e = r.exact.map_or(String::new(), |v| v.to_string());
            let _ = writeln!(
                s,
                "{i},{},{},{},{a},{b},{c},{e}",
                r.unrefined.l1, r.unrefined.lk, r.unrefined.ess_normalized
            );
        }
        s
    }
}

/// Bound estimates at `k` samples per row from `μ_0` and, if `refine_cfg`
/// has steps, from the refined `μ_T`. Both use the same evaluation stream
/// per row, so the comparison uses common random numbers.
pub fn evaluate(
    gen: &GenerativeParams,
    rec: &RecognitionParams,
    mean_image: &[f64],
    x: &Matrix,
    k: usize,
    refine_cfg: &RefineConfig,
    scheme: WeightScheme,
    seed: u64,
) -> Result<EvalReport, CliError> {
    let xc = center(x, mean_image).context("centering")?;
    let exact_ok = gen.total_latent() <= ENUMERATION_CAP;
    let base = RandomStream::new(seed, STREAM_EVAL);
    let rows: Vec<Result<RowEval, irvi_core::Error>> = (0..x.rows())
        .into_par_iter()
        .map(|i| {
            let s = base.substream(i as u64);
            let xi = x.row(i);
            let mu0 = rec.initial_means_row(xc.row(i))?;
            let unrefined = estimate_bounds(gen, xi, &mu0, k, scheme, &mut s.substream(TAG_EVAL))?;
            let refined = if refine_cfg.steps > 0 {
                let r = refine(gen, xi, &mu0, refine_cfg, &mut s.substream(TAG_REFINE))?;
                Some(estimate_bounds(gen, xi, &r.means, k, scheme, &mut s.substream(TAG_EVAL))?)
            } else {
                None
            };
            let exact = if exact_ok { Some(oracle::exact_logp(gen, xi)?) } else { None };
            Ok(RowEval {
                unrefined,
                refined,
                exact,
            })
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>, _>>().context("evaluation")?;
    let unrefined = mean_bounds(rows.iter().map(|r| &r.unrefined))?;
    let refined = if refine_cfg.steps > 0 {
        Some(mean_bounds(rows.iter().filter_map(|r| r.refined.as_ref()))?)
    } else {
        None
    };
    let exact = exact_ok.then(|| rows.iter().filter_map(|r| r.exact).sum::<f64>() / rows.len().max(1) as f64);
    Ok(EvalReport {
        rows,
        samples: k,
        steps: refine_cfg.steps,
        unrefined,
        refined,
        exact,
    })
}

/// Evaluates a checkpoint on its test split; writes `eval.txt`, `eval_rows.csv`
/// and an `eval` row in `metrics.csv` under `out`.
pub fn cmd_eval(ckpt: &Checkpoint, cfg: &ExperimentConfig, out: &Path) -> Result<EvalReport, CliError> {
    let data = load_data(cfg)?;
    let x = head_rows(&data.splits.test.rows, cfg.eval_rows);
    let report = evaluate(
        &ckpt.gen,
        &ckpt.rec,
        &ckpt.mean_image,
        &x,
        cfg.eval_samples,
        &cfg.refine_config(cfg.eval_steps),
        WeightScheme::Standard,
        cfg.seed,
    )?;
    ensure_dir(out)?;
    write_file(&out.join("eval.txt"), report.to_text())?;
    write_file(&out.join("eval_rows.csv"), report.rows_csv())?;
    let best = report.refined.unwrap_or(report.unrefined);
    MetricsWriter::append(&out.join("metrics.csv"))?.write(&MetricsRow {
        phase: "eval".into(),
        epoch: ckpt.epoch,
        split: "test".into(),
        estimator: ckpt.config.estimator.name().into(),
        l1: best.l1,
        lk: best.lk,
        ess_norm: best.ess_normalized,
        degenerate_frac: 0.0,
        lr: 0.0,
        wall_s: 0.0,
    })?;
    Ok(report)
}

/// Sets `round(fraction · H)` entries of `mu`, chosen uniformly, to 0.5.
pub fn degrade_means(mu: &mut [f64], fraction: f64, rng: &mut RandomStream) {
    let count = ((fraction.clamp(0.0, 1.0) * mu.len() as f64).round() as usize).min(mu.len());
    let mut idx: Vec<usize> = (0..mu.len()).collect();
    idx.shuffle(rng);
    for &i in &idx[..count] {
        mu[i] = 0.5;
    }
}

/// `E_q[p(x | h_1)]` means and `E_q[−log p(x | h_1)]`, exact by enumerating
/// the first latent layer when it is small enough, otherwise from `samples`
/// draws.
pub fn expected_reconstruction(
    gen: &GenerativeParams,
    x: &[f64],
    mu: &[f64],
    samples: usize,
    rng: &mut RandomStream,
) -> (Vec<f64>, f64) {
    let w = gen.layout().widths()[0];
    let mu1 = &mu[..w];
    let mut h = mu.to_vec();
    let mut mean = vec![0.0; x.len()];
    let mut err = 0.0;
    let mut add = |h1: &[f64], weight: f64, h: &mut Vec<f64>| {
        h[..w].copy_from_slice(h1);
        let m = gen.observation_means(h);
        for (a, v) in mean.iter_mut().zip(&m) {
            *a += weight * v;
        }
        err -= weight * gen.observation_logp(x, h);
    };
    if w <= ENUMERATION_CAP.min(16) {
        for code in 0..1usize << w {
            let h1 = oracle::config(code, w);
            add(&h1, q_logpmf(mu1, &h1).exp(), &mut h);
        }
    } else {
        for _ in 0..samples {
            let h1 = irvi_core::recognition::q_sample(mu1, 1, rng).remove(0);
            add(&h1, 1.0 / samples as f64, &mut h);
        }
    }
    (mean, err)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineRow {
    pub mu0: Vec<f64>,
    pub mu_t: Vec<f64>,
    pub trace: RefinementTrace,
    pub recon_before: Vec<f64>,
    pub recon_after: Vec<f64>,
    pub error_before: f64,
    pub error_after: f64,
}

/// Refines each row from `μ_0` (optionally degraded) and records traces and
/// expected reconstructions before and after.
pub fn refine_rows(
    gen: &GenerativeParams,
    rec: &RecognitionParams,
    mean_image: &[f64],
    x: &Matrix,
    refine_cfg: &RefineConfig,
    degrade: Option<f64>,
    recon_samples: usize,
    seed: u64,
) -> Result<Vec<RefineRow>, CliError> {
    let base = RandomStream::new(seed, STREAM_REFINE);
    let rows: Vec<Result<RefineRow, irvi_core::Error>> = (0..x.rows())
        .into_par_iter()
        .map(|i| {
            let s = base.substream(i as u64);
            let xi = x.row(i);
            let mut mu0 = rec.initial_means_row(&center_row(xi, mean_image))?;
            if let Some(f) = degrade {
                degrade_means(&mut mu0, f, &mut s.substream(TAG_DEGRADE));
            }
            let r = refine(gen, xi, &mu0, refine_cfg, &mut s.substream(TAG_REFINE))?;
            let (recon_before, error_before) = expected_reconstruction(gen, xi, &mu0, recon_samples, &mut s.substream(TAG_EVAL));
            let (recon_after, error_after) = expected_reconstruction(gen, xi, &r.means, recon_samples, &mut s.substream(TAG_EVAL));
            Ok(RefineRow {
                mu0,
                mu_t: r.means,
                trace: r.trace,
                recon_before,
                recon_after,
                error_before,
                error_after,
            })
        })
        .collect();
    rows.into_iter().collect::<Result<Vec<_>, _>>().context("refinement")
}

/// Refines test rows of a checkpoint; writes `refine_trace.csv` and
/// `reconstructions.csv` under `out`.
pub fn cmd_refine(
    ckpt: &Checkpoint,
    cfg: &ExperimentConfig,
    steps: usize,
    degrade: Option<f64>,
    out: &Path,
) -> Result<Vec<RefineRow>, CliError> {
    if let Some(f) = degrade {
        if !(0.0..=1.0).contains(&f) {
            return Err(CliError::Config(format!("--degrade must lie in [0, 1], got {f}")));
        }
    }
    let data = load_data(cfg)?;
    let x = head_rows(&data.splits.test.rows, cfg.eval_rows);
    let refine_cfg = cfg.refine_config(steps);
    if steps > 0 && !(refine_cfg.gamma > 0.0 && refine_cfg.gamma <= 1.0) {
        return Err(CliError::Config("gamma must lie in (0, 1]".into()));
    }
    let rows = refine_rows(&ckpt.gen, &ckpt.rec, &ckpt.mean_image, &x, &refine_cfg, degrade, 100, cfg.seed)?;
    ensure_dir(out)?;
    let mut trace = String::from("row,t,L1_hat,LK_hat,ess,ess_norm\n");
    let mut recon = String::from("row,stage,expected_error,means\n");
    for (i, r) in rows.iter().enumerate() {
        for (t, e) in r.trace.entries.iter().enumerate() {
            let _ = writeln!(trace, "{i},{t},{},{},{},{}", e.l1, e.lk, e.ess, e.ess_normalized);
        }
        for (stage, m, err) in [("before", &r.recon_before, r.error_before), ("after", &r.recon_after, r.error_after)] {
            let vals: Vec<String> = m.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(recon, "{i},{stage},{err},{}", vals.join(" "));
        }
    }
    write_file(&out.join("refine_trace.csv"), trace)?;
    write_file(&out.join("reconstructions.csv"), recon)?;
    Ok(rows)
}

/// Draws `n` ancestral samples and writes them to `samples.bmat` under `out`.
pub fn cmd_sample(ckpt: &Checkpoint, n: usize, seed: u64, out: &Path) -> Result<Matrix, CliError> {
    let mut rng = RandomStream::new(seed, STREAM_SAMPLE);
    let mut m = Matrix::zeros(n, ckpt.gen.visible_dim());
    for i in 0..n {
        let (x, _) = ckpt.gen.ancestral_sample(&mut rng);
        m.row_mut(i).copy_from_slice(&x);
    }
    ensure_dir(out)?;
    data::save_bmat(&out.join("samples.bmat"), &m)?;
    Ok(m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub checks: Vec<CheckOutcome>,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// One `check <name> <pass|fail> value=<v> threshold=<t>` line per check,
    /// then `verdict <pass|fail>`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let _ = writeln!(
                s,
                "check {} {} value={:e} threshold={:e}",
                c.name,
                if c.passed { "pass" } else { "fail" },
                c.value,
                c.threshold
            );
        }
        let _ = writeln!(s, "verdict {}", if self.passed() { "pass" } else { "fail" });
        s
    }
}

/// Runs the oracle battery on a checkpoint's model, or on a fresh random
/// model built from `cfg` (visible width `teacher.visible`, scale
/// `teacher.std`).
pub fn cmd_oracle_check(ckpt: Option<&Checkpoint>, cfg: &ExperimentConfig) -> Result<OracleReport, CliError> {
    let (gen, rec, mean_image) = match ckpt {
        Some(c) => (c.gen.clone(), c.rec.clone(), c.mean_image.clone()),
        None => {
            let arch = cfg.architecture(cfg.teacher_visible);
            let mut rng = RandomStream::new(cfg.seed, STREAM_ORACLE).substream(TAG_INIT);
            let mut gen = GenerativeParams::zeros(&arch);
            randomize(&mut gen, cfg.teacher_std, &mut rng);
            let rec = RecognitionParams::init(&arch, cfg.teacher_std, &mut rng);
            (gen, rec, vec![0.5; arch.visible])
        }
    };
    oracle::check_cap(2 * gen.total_latent()).context("oracle-check")?;
    let mut rng = RandomStream::new(cfg.seed, STREAM_ORACLE).substream(1);
    let x = Matrix::from_fn(3, gen.visible_dim(), |_, _| (rng.uniform() < 0.5) as u8 as f64);
    let xc = center(&x, &mean_image).context("centering")?;
    let options = BatteryOptions {
        corrupt_weight_normalization: cfg.corrupt_weights,
        ..BatteryOptions::default()
    };
    let checks = run_battery(&gen, &rec, &x, &xc, &options, &RandomStream::new(cfg.seed, STREAM_ORACLE))
        .context("oracle battery")?;
    Ok(OracleReport { checks })
}

/// Output directory for a command: `--out`, else the config's `out`.
pub fn resolve_out(flag: Option<&PathBuf>, cfg: &ExperimentConfig) -> PathBuf {
    flag.cloned().unwrap_or_else(|| cfg.out.clone())
}
