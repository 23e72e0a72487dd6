//! Flat `key = value` experiment configuration.
//!
//! Lines are `key = value`; `#` starts a comment. Later assignments win, and
//! `--set key=value` overrides are applied after the file. Unknown keys are
//! rejected so typos do not silently fall back to defaults.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use irvi_core::{Architecture, Estimator, PriorKind, RefineConfig, TrainConfig, WeightScheme};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Sbn,
    Darn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataSource {
    /// Samples from a randomly drawn teacher network.
    Teacher,
    /// Files named by `data.train`, `data.valid`, `data.test` (BMAT or IDX).
    Files,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FinetuneOptimizer {
    Sgd,
    Rmsprop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model_kind: ModelKind,
    pub latent: Vec<usize>,
    pub prior: PriorKind,
    pub gen_hidden: usize,
    pub rec_hidden: usize,
    pub init_std: f64,

    pub estimator: Estimator,
    pub steps: usize,
    pub gamma: f64,
    pub adaptive_samples: usize,
    pub grad_samples: usize,
    pub weights: WeightScheme,
    pub sleep: bool,
    pub batch_size: usize,
    pub epochs: usize,
    pub finetune_epochs: usize,
    pub lr: f64,
    pub finetune_lr: f64,
    pub finetune_decay: f64,
    pub finetune_optimizer: FinetuneOptimizer,
    pub rmsprop_rho: f64,
    pub rmsprop_eps: f64,
    pub patience: usize,
    pub valid_samples: usize,

    pub eval_samples: usize,
    pub eval_steps: usize,
    pub eval_rows: usize,

    pub seed: u64,
    pub data: DataSource,
    pub train_path: Option<PathBuf>,
    pub valid_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub valid_rows: usize,
    pub teacher_visible: usize,
    pub teacher_latent: Vec<usize>,
    pub teacher_std: f64,
    pub teacher_seed: u64,
    pub teacher_train: usize,
    pub teacher_valid: usize,
    pub teacher_test: usize,

    pub out: PathBuf,
    pub wall_clock: bool,
    pub corrupt_weights: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model_kind: ModelKind::Sbn,
            latent: vec![200],
            prior: PriorKind::Factorized,
            gen_hidden: 0,
            rec_hidden: 0,
            init_std: 0.01,
            estimator: Estimator::Air,
            steps: 20,
            gamma: 0.1,
            adaptive_samples: 20,
            grad_samples: 20,
            weights: WeightScheme::Standard,
            sleep: false,
            batch_size: 100,
            epochs: 500,
            finetune_epochs: 500,
            lr: 1e-3,
            finetune_lr: 1e-3,
            finetune_decay: 0.01,
            finetune_optimizer: FinetuneOptimizer::Sgd,
            rmsprop_rho: 0.9,
            rmsprop_eps: 1e-6,
            patience: 50,
            valid_samples: 100,
            eval_samples: 100_000,
            eval_steps: 20,
            eval_rows: 0,
            seed: 0,
            data: DataSource::Files,
            train_path: None,
            valid_path: None,
            test_path: None,
            valid_rows: irvi_core::data::MNIST_VALID_ROWS,
            teacher_visible: 8,
            teacher_latent: vec![8],
            teacher_std: 1.5,
            teacher_seed: 1,
            teacher_train: 10_000,
            teacher_valid: 1_000,
            teacher_test: 1_000,
            out: PathBuf::from("runs/default"),
            wall_clock: false,
            corrupt_weights: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>, CliError> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(CliError::Config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

fn join(v: &[usize]) -> String {
    v.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(",")
}

fn path(v: &Option<PathBuf>) -> String {
    v.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

/// Splits `key = value` lines, dropping comments and blank lines.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl ExperimentConfig {
    pub fn from_text(text: &str) -> Result<Self, CliError> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (k, v) in parse_pairs(text)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    /// Applies one `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), CliError> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set expects key=value, got {assignment:?}")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<(), CliError> {
        match key {
            "model.kind" => {
                self.model_kind = match v {
                    "sbn" => ModelKind::Sbn,
                    "darn" => ModelKind::Darn,
                    _ => return Err(CliError::Config(format!("model.kind: unknown {v:?}"))),
                }
            }
            "model.latent" => self.latent = parse_list(key, v)?,
            "model.prior" => {
                self.prior = match v {
                    "factorized" => PriorKind::Factorized,
                    "autoregressive" => PriorKind::Autoregressive,
                    _ => return Err(CliError::Config(format!("model.prior: unknown {v:?}"))),
                }
            }
            "model.gen_hidden" => self.gen_hidden = parse(key, v)?,
            "model.rec_hidden" => self.rec_hidden = parse(key, v)?,
            "model.init_std" => self.init_std = parse(key, v)?,
            "train.estimator" => {
                self.estimator = v.parse().map_err(|e| CliError::Config(format!("train.estimator: {e}")))?
            }
            "train.steps" => self.steps = parse(key, v)?,
            "train.gamma" => self.gamma = parse(key, v)?,
            "train.adaptive_samples" => self.adaptive_samples = parse(key, v)?,
            "train.grad_samples" => self.grad_samples = parse(key, v)?,
            "train.weights" => {
                self.weights = match v {
                    "standard" => WeightScheme::Standard,
                    "bihm" => WeightScheme::Bihm,
                    _ => return Err(CliError::Config(format!("train.weights: unknown {v:?}"))),
                }
            }
            "train.sleep" => self.sleep = parse_bool(key, v)?,
            "train.batch_size" => self.batch_size = parse(key, v)?,
            "train.epochs" => self.epochs = parse(key, v)?,
            "train.finetune_epochs" => self.finetune_epochs = parse(key, v)?,
            "train.lr" => self.lr = parse(key, v)?,
            "train.finetune_lr" => self.finetune_lr = parse(key, v)?,
            "train.finetune_decay" => self.finetune_decay = parse(key, v)?,
            "train.finetune_optimizer" => {
                self.finetune_optimizer = match v {
                    "sgd" => FinetuneOptimizer::Sgd,
                    "rmsprop" => FinetuneOptimizer::Rmsprop,
                    _ => return Err(CliError::Config(format!("train.finetune_optimizer: unknown {v:?}"))),
                }
            }
            "train.rmsprop_rho" => self.rmsprop_rho = parse(key, v)?,
            "train.rmsprop_eps" => self.rmsprop_eps = parse(key, v)?,
            "train.patience" => self.patience = parse(key, v)?,
            "train.valid_samples" => self.valid_samples = parse(key, v)?,
            "eval.samples" => self.eval_samples = parse(key, v)?,
            "eval.steps" => self.eval_steps = parse(key, v)?,
            "eval.rows" => self.eval_rows = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "data.source" => {
                self.data = match v {
                    "teacher" => DataSource::Teacher,
                    "files" => DataSource::Files,
                    _ => return Err(CliError::Config(format!("data.source: unknown {v:?}"))),
                }
            }
            "data.train" => self.train_path = (!v.is_empty()).then(|| PathBuf::from(v)),
            "data.valid" => self.valid_path = (!v.is_empty()).then(|| PathBuf::from(v)),
            "data.test" => self.test_path = (!v.is_empty()).then(|| PathBuf::from(v)),
            "data.valid_rows" => self.valid_rows = parse(key, v)?,
            "teacher.visible" => self.teacher_visible = parse(key, v)?,
            "teacher.latent" => self.teacher_latent = parse_list(key, v)?,
            "teacher.std" => self.teacher_std = parse(key, v)?,
            "teacher.seed" => self.teacher_seed = parse(key, v)?,
            "teacher.train_rows" => self.teacher_train = parse(key, v)?,
            "teacher.valid_rows" => self.teacher_valid = parse(key, v)?,
            "teacher.test_rows" => self.teacher_test = parse(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "metrics.wall_clock" => self.wall_clock = parse_bool(key, v)?,
            "oracle.corrupt_weights" => self.corrupt_weights = parse_bool(key, v)?,
            _ => return Err(CliError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Canonical text form; `from_text(to_text())` reproduces the config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("model.kind", match self.model_kind {
            ModelKind::Sbn => "sbn".into(),
            ModelKind::Darn => "darn".into(),
        });
        kv("model.latent", join(&self.latent));
        kv("model.prior", match self.prior {
            PriorKind::Factorized => "factorized".into(),
            PriorKind::Autoregressive => "autoregressive".into(),
        });
        kv("model.gen_hidden", self.gen_hidden.to_string());
        kv("model.rec_hidden", self.rec_hidden.to_string());
        kv("model.init_std", self.init_std.to_string());
        kv("train.estimator", self.estimator.name().into());
        kv("train.steps", self.steps.to_string());
        kv("train.gamma", self.gamma.to_string());
        kv("train.adaptive_samples", self.adaptive_samples.to_string());
        kv("train.grad_samples", self.grad_samples.to_string());
        kv("train.weights", match self.weights {
            WeightScheme::Standard => "standard".into(),
            WeightScheme::Bihm => "bihm".into(),
        });
        kv("train.sleep", self.sleep.to_string());
        kv("train.batch_size", self.batch_size.to_string());
        kv("train.epochs", self.epochs.to_string());
        kv("train.finetune_epochs", self.finetune_epochs.to_string());
        kv("train.lr", self.lr.to_string());
        kv("train.finetune_lr", self.finetune_lr.to_string());
        kv("train.finetune_decay", self.finetune_decay.to_string());
        kv("train.finetune_optimizer", match self.finetune_optimizer {
            FinetuneOptimizer::Sgd => "sgd".into(),
            FinetuneOptimizer::Rmsprop => "rmsprop".into(),
        });
        kv("train.rmsprop_rho", self.rmsprop_rho.to_string());
        kv("train.rmsprop_eps", self.rmsprop_eps.to_string());
        kv("train.patience", self.patience.to_string());
        kv("train.valid_samples", self.valid_samples.to_string());
        kv("eval.samples", self.eval_samples.to_string());
        kv("eval.steps", self.eval_steps.to_string());
        kv("eval.rows", self.eval_rows.to_string());
        kv("seed", self.seed.to_string());
        kv("data.source", match self.data {
            DataSource::Teacher => "teacher".into(),
            DataSource::Files => "files".into(),
        });
        kv("data.train", path(&self.train_path));
        kv("data.valid", path(&self.valid_path));
        kv("data.test", path(&self.test_path));
        kv("data.valid_rows", self.valid_rows.to_string());
        kv("teacher.visible", self.teacher_visible.to_string());
        kv("teacher.latent", join(&self.teacher_latent));
        kv("teacher.std", self.teacher_std.to_string());
        kv("teacher.seed", self.teacher_seed.to_string());
        kv("teacher.train_rows", self.teacher_train.to_string());
        kv("teacher.valid_rows", self.teacher_valid.to_string());
        kv("teacher.test_rows", self.teacher_test.to_string());
        kv("out", self.out.display().to_string());
        kv("metrics.wall_clock", self.wall_clock.to_string());
        kv("oracle.corrupt_weights", self.corrupt_weights.to_string());
        s
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let positive = [
            ("model.latent", self.latent.iter().all(|&w| w > 0) && !self.latent.is_empty()),
            ("train.adaptive_samples", self.adaptive_samples > 0),
            ("train.grad_samples", self.grad_samples > 0),
            ("train.batch_size", self.batch_size > 0),
            ("train.valid_samples", self.valid_samples > 0),
            ("eval.samples", self.eval_samples > 0),
            ("train.lr", self.lr > 0.0),
            ("teacher.visible", self.teacher_visible > 0),
        ];
        for (k, ok) in positive {
            if !ok {
                return Err(CliError::Config(format!("{k} must be positive")));
            }
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(CliError::Config(format!("train.gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if !(0.0..1.0).contains(&self.rmsprop_rho) || self.rmsprop_eps <= 0.0 {
            return Err(CliError::Config("rmsprop rho must lie in [0, 1) and eps be positive".into()));
        }
        if self.model_kind == ModelKind::Sbn && (self.gen_hidden > 0 || self.rec_hidden > 0) {
            return Err(CliError::Config("deterministic hidden stages require model.kind = darn".into()));
        }
        if self.model_kind == ModelKind::Darn && self.prior != PriorKind::Autoregressive {
            return Err(CliError::Config("model.kind = darn requires model.prior = autoregressive".into()));
        }
        if self.sleep && self.estimator != Estimator::Rws {
            return Err(CliError::Config("train.sleep applies only to train.estimator = rws".into()));
        }
        if self.data == DataSource::Files && self.train_path.is_none() {
            return Err(CliError::Config("data.source = files needs data.train".into()));
        }
        Ok(())
    }

    pub fn architecture(&self, visible: usize) -> Architecture {
        Architecture {
            visible,
            latent: self.latent.clone(),
            prior: self.prior,
            gen_hidden: (self.gen_hidden > 0).then_some(self.gen_hidden),
            rec_hidden: (self.rec_hidden > 0).then_some(self.rec_hidden),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            estimator: self.estimator,
            refine: RefineConfig::new(self.steps, self.gamma, self.adaptive_samples).with_scheme(self.weights),
            grad_samples: self.grad_samples,
            sleep: self.sleep,
        }
    }

    pub fn refine_config(&self, steps: usize) -> RefineConfig {
        RefineConfig::new(steps, self.gamma, self.adaptive_samples).with_scheme(self.weights)
    }
}

/// Values written alongside the experiment keys in a checkpoint.
pub fn split_checkpoint_keys(text: &str) -> Result<(String, BTreeMap<String, String>), CliError> {
    let mut rest = String::new();
    let mut meta = BTreeMap::new();
    for (k, v) in parse_pairs(text)? {
        if let Some(name) = k.strip_prefix("checkpoint.") {
            meta.insert(name.to_string(), v);
        } else {
            let _ = writeln!(rest, "{k} = {v}");
        }
    }
    Ok((rest, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = ExperimentConfig::default();
        c.apply_override("train.gamma=0.05").unwrap();
        c.apply_override("model.latent = 10,10,10").unwrap();
        c.apply_override("train.lr=3e-4").unwrap();
        let back = ExperimentConfig::from_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.latent, vec![10, 10, 10]);
        assert_eq!(back.to_text(), c.to_text());
    }

    #[test]
    fn comments_and_overrides() {
        let c = ExperimentConfig::from_text("# preset\ntrain.steps = 5 # T\n\ntrain.steps = 7\n").unwrap();
        assert_eq!(c.steps, 7);
        assert!(ExperimentConfig::from_text("train.stepz = 5").is_err());
        assert!(ExperimentConfig::from_text("train.steps").is_err());
        assert!(ExperimentConfig::from_text("train.steps = many").is_err());
    }

    #[test]
    fn validation() {
        let mut c = ExperimentConfig {
            data: DataSource::Teacher,
            ..ExperimentConfig::default()
        };
        c.validate().unwrap();
        c.gamma = 0.0;
        assert!(c.validate().is_err());
        c.gamma = 0.1;
        c.gen_hidden = 5;
        assert!(c.validate().is_err());
        c.model_kind = ModelKind::Darn;
        assert!(c.validate().is_err());
        c.prior = PriorKind::Autoregressive;
        c.validate().unwrap();
        c.sleep = true;
        assert!(c.validate().is_err());
    }

    #[test]
    fn checkpoint_keys_are_separated() {
        let (rest, meta) = split_checkpoint_keys("seed = 3\ncheckpoint.epoch = 4\n").unwrap();
        assert_eq!(rest, "seed = 3\n");
        assert_eq!(meta["epoch"], "4");
    }
}
