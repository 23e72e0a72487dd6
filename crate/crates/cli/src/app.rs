//! Flag parsing and dispatch for the `irvi` binary.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::Checkpoint;
use crate::commands;
use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::presets;

#[derive(Debug, Parser)]
#[command(name = "irvi", version, about = "Train and evaluate sigmoid belief networks with iterative posterior refinement")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write metrics and checkpoints.
    Train(CommonArgs),
    /// Estimate test-set bounds from a checkpoint, with and without refinement.
    Eval(CommonArgs),
    /// Refine posteriors of test rows and write traces and reconstructions.
    Refine(CommonArgs),
    /// Draw samples from a checkpoint's generative model.
    Sample(CommonArgs),
    /// Compare estimators against exact enumeration.
    OracleCheck(CommonArgs),
}

#[derive(Debug, Args, Default)]
pub struct CommonArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Bundled config: teacher-student, exact-check-20 or sbn200-mnist.
    #[arg(long)]
    pub preset: Option<String>,
    /// Override one config key, `key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Refinement steps T.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Refinement damping in (0, 1].
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Samples per refinement step M; for `sample`, the number of draws.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Evaluation sample count K.
    #[arg(long = "eval-samples")]
    pub eval_samples: Option<usize>,
    /// Fraction of initial means set to 0.5 before refining.
    #[arg(long)]
    pub degrade: Option<f64>,
}

impl CommonArgs {
    /// Base config (checkpoint's, else defaults), then preset, config file,
    /// `--set` overrides and the dedicated flags, in that order.
    pub fn resolve(&self, ckpt: Option<&Checkpoint>) -> Result<ExperimentConfig, CliError> {
        let mut cfg = ckpt.map_or_else(ExperimentConfig::default, |c| c.config.clone());
        if let Some(name) = &self.preset {
            let text = presets::get(name).ok_or_else(|| {
                CliError::Config(format!("unknown preset {name:?}; known: {}", presets::NAMES.join(", ")))
            })?;
            cfg.apply_text(text)?;
        }
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            cfg.apply_text(&text)?;
        }
        for s in &self.set {
            cfg.apply_override(s)?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        if let Some(g) = self.gamma {
            cfg.gamma = g;
        }
        if let Some(k) = self.eval_samples {
            cfg.eval_samples = k;
        }
        Ok(cfg)
    }

    fn load_checkpoint(&self) -> Result<Option<Checkpoint>, CliError> {
        match &self.checkpoint {
            Some(p) => Ok(Some(Checkpoint::load(p)?)),
            None => Ok(None),
        }
    }

    fn require_checkpoint(&self) -> Result<Checkpoint, CliError> {
        self.load_checkpoint()?
            .ok_or_else(|| CliError::Config("--checkpoint is required".into()))
    }
}

/// Runs one command and returns the text to print on success.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    match &cli.command {
        Command::Train(a) => {
            let mut cfg = a.resolve(None)?;
            if let Some(t) = a.steps {
                cfg.steps = t;
            }
            if let Some(m) = a.samples {
                cfg.adaptive_samples = m;
            }
            let data = commands::load_data(&cfg)?;
            let outcome = commands::train(&cfg, &data)?;
            let mut s = format!("trained {} epochs into {}\n", outcome.last.epoch, cfg.out.display());
            if let Some(e) = outcome.stopped_at {
                s.push_str(&format!("early stop at epoch {e}\n"));
            }
            Ok(s)
        }
        Command::Eval(a) => {
            let ckpt = a.require_checkpoint()?;
            let mut cfg = a.resolve(Some(&ckpt))?;
            if let Some(t) = a.steps {
                cfg.eval_steps = t;
            }
            if let Some(m) = a.samples {
                cfg.adaptive_samples = m;
            }
            let report = commands::cmd_eval(&ckpt, &cfg, &cfg.out)?;
            Ok(report.to_text())
        }
        Command::Refine(a) => {
            let ckpt = a.require_checkpoint()?;
            let mut cfg = a.resolve(Some(&ckpt))?;
            if let Some(m) = a.samples {
                cfg.adaptive_samples = m;
            }
            let steps = a.steps.unwrap_or(cfg.eval_steps);
            let rows = commands::cmd_refine(&ckpt, &cfg, steps, a.degrade, &cfg.out)?;
            let n = rows.len().max(1) as f64;
            let before = rows.iter().map(|r| r.error_before).sum::<f64>() / n;
            let after = rows.iter().map(|r| r.error_after).sum::<f64>() / n;
            Ok(format!(
                "rows = {}\nsteps = {steps}\nreconstruction_error.before = {before}\nreconstruction_error.after = {after}\n",
                rows.len()
            ))
        }
        Command::Sample(a) => {
            let ckpt = a.require_checkpoint()?;
            let cfg = a.resolve(Some(&ckpt))?;
            let n = a.samples.unwrap_or(100);
            commands::cmd_sample(&ckpt, n, cfg.seed, &cfg.out)?;
            Ok(format!("wrote {n} samples to {}\n", cfg.out.join("samples.bmat").display()))
        }
        Command::OracleCheck(a) => {
            let ckpt = a.load_checkpoint()?;
            let cfg = a.resolve(ckpt.as_ref())?;
            let report = commands::cmd_oracle_check(ckpt.as_ref(), &cfg)?;
            let text = report.to_text();
            if report.passed() {
                Ok(text)
            } else {
                let failed: Vec<&str> = report
                    .checks
                    .iter()
                    .filter(|c| !c.passed)
                    .map(|c| c.name.as_str())
                    .collect();
                print!("{text}");
                Err(CliError::CheckFailed(failed.join(", ")))
            }
        }
    }
}
