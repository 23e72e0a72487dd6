use std::path::Path;
use std::process::Command;

use irvi_cli::checkpoint::Checkpoint;
use irvi_cli::commands;
use irvi_cli::metrics::HEADER;
use irvi_cli::ExperimentConfig;

fn tiny(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    for kv in [
        "data.source=teacher",
        "teacher.visible=6",
        "teacher.latent=4",
        "teacher.train_rows=200",
        "teacher.valid_rows=40",
        "teacher.test_rows=20",
        "model.latent=4",
        "train.batch_size=50",
        "train.epochs=2",
        "train.finetune_epochs=1",
        "train.steps=3",
        "train.adaptive_samples=5",
        "train.grad_samples=5",
        "train.valid_samples=20",
        "eval.samples=500",
        "eval.steps=5",
    ] {
        cfg.apply_override(kv).unwrap();
    }
    cfg.out = out.to_path_buf();
    cfg
}

fn train_in_pool(cfg: &ExperimentConfig, threads: usize) -> Vec<u8> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| {
        let data = commands::load_data(cfg).unwrap();
        commands::train(cfg, &data).unwrap();
    });
    std::fs::read(cfg.out.join("metrics.csv")).unwrap()
}

#[test]
fn training_is_deterministic_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let a = tiny(&dir.path().join("a"));
    let b = tiny(&dir.path().join("b"));
    let ma = train_in_pool(&a, 1);
    let mb = train_in_pool(&b, 3);
    assert_eq!(ma, mb);
    let ca = std::fs::read(a.out.join("last.ckpt")).unwrap();
    let cb = std::fs::read(b.out.join("last.ckpt")).unwrap();
    assert_eq!(ca, cb);
    let text = String::from_utf8(ma).unwrap();
    assert_eq!(text.lines().next(), Some(HEADER));
    // 3 epochs, each with a train and a valid row.
    assert_eq!(text.lines().count(), 7);
    assert!(text.contains("finetune,2,train"));
}

#[test]
fn zero_epochs_writes_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.epochs = 0;
    cfg.finetune_epochs = 0;
    let data = commands::load_data(&cfg).unwrap();
    let out = commands::train(&cfg, &data).unwrap();
    assert_eq!(out.last.epoch, 0);
    let loaded = Checkpoint::load(&dir.path().join("last.ckpt")).unwrap();
    assert_eq!(loaded, out.last);
    assert!(Checkpoint::load(&dir.path().join("best.ckpt")).is_ok());
    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(metrics.trim(), HEADER);
}

fn trained(dir: &Path) -> (ExperimentConfig, Checkpoint) {
    let cfg = tiny(dir);
    let data = commands::load_data(&cfg).unwrap();
    let out = commands::train(&cfg, &data).unwrap();
    (cfg, out.last)
}

#[test]
fn eval_without_refinement_is_plain_recognition() {
    let dir = tempfile::tempdir().unwrap();
    let (mut cfg, ckpt) = trained(dir.path());
    cfg.eval_steps = 0;
    let r0 = commands::cmd_eval(&ckpt, &cfg, &dir.path().join("e0")).unwrap();
    assert!(r0.refined.is_none());
    cfg.eval_steps = 5;
    let r5 = commands::cmd_eval(&ckpt, &cfg, &dir.path().join("e5")).unwrap();
    // Unrefined numbers come from the same evaluation streams either way.
    assert_eq!(r0.unrefined, r5.unrefined);
    assert!(r5.refined.is_some());
    let again = commands::cmd_eval(&ckpt, &cfg, &dir.path().join("e5b")).unwrap();
    assert_eq!(r5, again);
    let a = std::fs::read(dir.path().join("e5/eval.txt")).unwrap();
    let b = std::fs::read(dir.path().join("e5b/eval.txt")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn refine_with_zero_steps_keeps_reconstructions() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, ckpt) = trained(dir.path());
    let rows = commands::cmd_refine(&ckpt, &cfg, 0, None, &dir.path().join("r")).unwrap();
    assert_eq!(rows.len(), 20);
    for r in &rows {
        assert_eq!(r.mu0, r.mu_t);
        assert_eq!(r.recon_before, r.recon_after);
        assert_eq!(r.error_before, r.error_after);
    }
}

#[test]
fn full_degradation_starts_from_uniform_means() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, ckpt) = trained(dir.path());
    let rows = commands::cmd_refine(&ckpt, &cfg, 3, Some(1.0), &dir.path().join("r")).unwrap();
    for r in &rows {
        assert!(r.mu0.iter().all(|&m| m == 0.5));
        assert_eq!(r.trace.entries.len(), 4);
    }
    assert!(commands::cmd_refine(&ckpt, &cfg, 3, Some(1.5), dir.path()).is_err());
}

#[test]
fn partial_degradation_count() {
    let mut rng = irvi_core::RandomStream::new(1, 2);
    let mut mu = vec![0.9; 10];
    commands::degrade_means(&mut mu, 0.8, &mut rng);
    assert_eq!(mu.iter().filter(|&&m| m == 0.5).count(), 8);
}

#[test]
fn samples_are_binary() {
    let dir = tempfile::tempdir().unwrap();
    let (_, ckpt) = trained(dir.path());
    let m = commands::cmd_sample(&ckpt, 7, 3, dir.path()).unwrap();
    let back = irvi_core::data::load_bmat(&dir.path().join("samples.bmat")).unwrap();
    assert_eq!(m, back);
    assert!(back.as_slice().iter().all(|&v| v == 0.0 || v == 1.0));
}

fn oracle_cfg() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    for kv in ["model.latent=3,3", "teacher.visible=4", "teacher.std=1.0"] {
        cfg.apply_override(kv).unwrap();
    }
    cfg
}

const CHECK_NAMES: [&str; 12] = [
    "bound_gap_equals_exclusive_kl",
    "l1_below_logp",
    "lk_unbiased_in_probability",
    "fd_theta_l1",
    "fd_phi_score",
    "score_identity",
    "uniform_theta_unbiased",
    "exclusive_phi_unbiased",
    "reweighted_theta_matches_k2",
    "inclusive_phi_matches_k2",
    "air_step_matches_m2",
    "prior_structure",
];

fn schema(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| {
            let f: Vec<&str> = l.split(' ').collect();
            match f[0] {
                "check" => {
                    assert_eq!(f.len(), 5, "{l}");
                    assert!(f[3].starts_with("value=") && f[4].starts_with("threshold="), "{l}");
                    format!("check {}", f[1])
                }
                "verdict" => "verdict".to_string(),
                other => panic!("unexpected line kind {other}"),
            }
        })
        .collect()
}

#[test]
fn fresh_model_passes_with_stable_schema() {
    let cfg = oracle_cfg();
    let a = commands::cmd_oracle_check(None, &cfg).unwrap();
    let b = commands::cmd_oracle_check(None, &cfg).unwrap();
    assert!(a.passed(), "{}", a.to_text());
    assert_eq!(a.to_text(), b.to_text());
    let mut golden: Vec<String> = CHECK_NAMES.iter().map(|n| format!("check {n}")).collect();
    golden.push("verdict".into());
    assert_eq!(schema(&a.to_text()), golden);
    assert!(a.to_text().ends_with("verdict pass\n"));
}

#[test]
fn corrupted_normalization_fails_named_check() {
    let mut cfg = oracle_cfg();
    cfg.corrupt_weights = true;
    let r = commands::cmd_oracle_check(None, &cfg).unwrap();
    assert!(!r.passed());
    let failing: Vec<&str> = r.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    assert!(failing.contains(&"reweighted_theta_matches_k2"), "{failing:?}");
    assert!(r.to_text().ends_with("verdict fail\n"));
}

fn irvi(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_irvi")).args(args).output().unwrap()
}

#[test]
fn binary_exit_codes() {
    let ok = irvi(&["oracle-check", "--set", "model.latent=3,3", "--set", "teacher.visible=4", "--set", "teacher.std=1.0"]);
    assert_eq!(ok.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("verdict pass"));

    let bad = irvi(&["oracle-check", "--set", "train.nonsense=1"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("error[config]"));

    let failed = irvi(&[
        "oracle-check",
        "--set",
        "model.latent=3,3",
        "--set",
        "teacher.visible=4",
        "--set",
        "teacher.std=1.0",
        "--set",
        "oracle.corrupt_weights=true",
    ]);
    assert_eq!(failed.status.code(), Some(7));
    assert!(String::from_utf8_lossy(&failed.stderr).contains("error[check]"));

    let cap = irvi(&["oracle-check", "--set", "model.latent=30"]);
    assert_eq!(cap.status.code(), Some(6));

    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.ckpt");
    let nock = irvi(&["eval", "--checkpoint", missing.to_str().unwrap()]);
    assert_eq!(nock.status.code(), Some(4));
}

#[test]
fn binary_train_eval_refine_sample() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let run_s = run.to_str().unwrap();
    let common = [
        "--set",
        "data.source=teacher",
        "--set",
        "teacher.visible=6",
        "--set",
        "teacher.latent=4",
        "--set",
        "teacher.train_rows=100",
        "--set",
        "teacher.test_rows=10",
        "--set",
        "model.latent=4",
        "--set",
        "train.epochs=1",
        "--set",
        "train.finetune_epochs=0",
    ];
    let mut args = vec!["train", "--out", run_s, "--seed", "5", "--steps", "2", "--samples", "4"];
    args.extend(common);
    let t = irvi(&args);
    assert_eq!(t.status.code(), Some(0), "{}", String::from_utf8_lossy(&t.stderr));
    let ckpt = run.join("last.ckpt");
    let ck = ckpt.to_str().unwrap();
    let e = irvi(&["eval", "--checkpoint", ck, "--out", run_s, "--eval-samples", "200", "--steps", "2"]);
    assert_eq!(e.status.code(), Some(0), "{}", String::from_utf8_lossy(&e.stderr));
    let out = String::from_utf8_lossy(&e.stdout);
    assert!(out.contains("refined.LK_hat") && out.contains("exact.logp"), "{out}");
    let r = irvi(&["refine", "--checkpoint", ck, "--out", run_s, "--steps", "2", "--gamma", "0.2", "--degrade", "0.5"]);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    assert!(run.join("refine_trace.csv").exists() && run.join("reconstructions.csv").exists());
    let s = irvi(&["sample", "--checkpoint", ck, "--out", run_s, "--samples", "3"]);
    assert_eq!(s.status.code(), Some(0));
    assert!(run.join("samples.bmat").exists());
    let metrics = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert!(metrics.lines().last().unwrap().starts_with("eval,"));
}
