//! Binary checkpoint format.
//!
//! ```text
//! "IRVI" | version: u32 LE | entry count: u64 LE
//! entry*: name length: u64 LE | UTF-8 name | rank: u8 | dims: u64 LE × rank | f64 LE × Π dims
//! config length: u64 LE | UTF-8 config text
//! ```
//!
//! Entries hold the generative and recognition tensors under their parameter
//! names, the training mean image as `data.mean_image`, and RMSprop
//! accumulators as `opt.theta.<name>` / `opt.phi.<name>`. Epoch, seed and
//! optimizer scalars travel in the config text under `checkpoint.*` keys.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use irvi_core::training::{Optimizer, Rmsprop, Sgd, TrainState};
use irvi_core::{GenerativeParams, Parameters, RecognitionParams};
use thiserror::Error;

use crate::config::{split_checkpoint_keys, ExperimentConfig};

pub const MAGIC: &[u8; 4] = b"IRVI";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic: not a checkpoint file")]
    BadMagic,
    #[error("version mismatch: file has version {found}, expected {VERSION}")]
    VersionMismatch { found: u32 },
    #[error("truncated {0}")]
    Truncated(String),
    #[error("missing entry {0}")]
    MissingEntry(String),
    #[error("shape mismatch in entry {name}: expected {expected:?}, found {found:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("invalid UTF-8 in {0}")]
    Utf8(String),
    #[error("invalid checkpoint metadata: {0}")]
    Meta(String),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

pub fn encode(entries: &[Entry], config: &str) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u64).to_le_bytes());
    for e in entries {
        out.extend_from_slice(&(e.name.len() as u64).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.push(e.dims.len() as u8);
        for &d in &e.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &e.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend_from_slice(&(config.len() as u64).to_le_bytes());
    out.extend_from_slice(config.as_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(CheckpointError::Truncated(what.to_string())),
        }
    }

    fn u64(&mut self, what: &str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<(Vec<Entry>, String), CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "header").map_err(|_| CheckpointError::BadMagic)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u32::from_le_bytes(r.take(4, "header")?.try_into().unwrap());
    if version != VERSION {
        return Err(CheckpointError::VersionMismatch { found: version });
    }
    let count = r.u64("header")?;
    let mut entries = Vec::new();
    for i in 0..count {
        let what = format!("entry #{i}");
        let len = r.u64(&what)? as usize;
        let name = std::str::from_utf8(r.take(len, &what)?)
            .map_err(|_| CheckpointError::Utf8(what.clone()))?
            .to_string();
        let what = format!("entry {name}");
        let rank = r.take(1, &what)?[0] as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u64(&what)? as usize);
        }
        let n: usize = dims.iter().product();
        let payload = r.take(n.checked_mul(8).ok_or_else(|| CheckpointError::Truncated(what.clone()))?, &what)?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        entries.push(Entry { name, dims, data });
    }
    let len = r.u64("config")? as usize;
    let config = std::str::from_utf8(r.take(len, "config")?)
        .map_err(|_| CheckpointError::Utf8("config".into()))?
        .to_string();
    Ok((entries, config))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ExperimentConfig,
    pub gen: GenerativeParams,
    pub rec: RecognitionParams,
    pub state: TrainState,
    pub mean_image: Vec<f64>,
    pub epoch: usize,
    pub rng_seed: u64,
}

fn push_params<P: Parameters>(p: &P, out: &mut Vec<Entry>) {
    for t in p.tensors() {
        out.push(Entry {
            name: t.name,
            dims: t.dims,
            data: t.data.to_vec(),
        });
    }
}

fn push_optimizer<P: Parameters>(prefix: &str, opt: &Optimizer, params: &P, out: &mut Vec<Entry>, meta: &mut String) {
    use std::fmt::Write as _;
    match opt {
        Optimizer::Rmsprop(o) => {
            let _ = writeln!(meta, "checkpoint.{prefix}_optimizer = rmsprop");
            let _ = writeln!(meta, "checkpoint.{prefix}_rho = {}", o.rho);
            let _ = writeln!(meta, "checkpoint.{prefix}_eps = {}", o.eps);
            for (a, t) in o.accum.iter().zip(params.tensors()) {
                out.push(Entry {
                    name: format!("opt.{prefix}.{}", t.name),
                    dims: t.dims,
                    data: a.clone(),
                });
            }
        }
        Optimizer::Sgd(_) => {
            let _ = writeln!(meta, "checkpoint.{prefix}_optimizer = sgd");
        }
    }
    let _ = writeln!(meta, "checkpoint.{prefix}_lr = {}", opt.lr());
    let _ = writeln!(meta, "checkpoint.{prefix}_step = {}", opt.step());
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        use std::fmt::Write as _;
        let mut entries = Vec::new();
        push_params(&self.gen, &mut entries);
        push_params(&self.rec, &mut entries);
        entries.push(Entry {
            name: "data.mean_image".into(),
            dims: vec![self.mean_image.len()],
            data: self.mean_image.clone(),
        });
        let mut text = self.config.to_text();
        let _ = writeln!(text, "checkpoint.visible = {}", self.gen.visible_dim());
        let _ = writeln!(text, "checkpoint.epoch = {}", self.epoch);
        let _ = writeln!(text, "checkpoint.rng_seed = {}", self.rng_seed);
        push_optimizer("theta", &self.state.theta_opt, &self.gen, &mut entries, &mut text);
        push_optimizer("phi", &self.state.phi_opt, &self.rec, &mut entries, &mut text);
        encode(&entries, &text)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let (entries, text) = decode(bytes)?;
        let (config_text, meta) = split_checkpoint_keys(&text).map_err(|e| CheckpointError::Meta(e.to_string()))?;
        let config = ExperimentConfig::from_text(&config_text).map_err(|e| CheckpointError::Meta(e.to_string()))?;
        let by_name: BTreeMap<&str, &Entry> = entries.iter().map(|e| (e.name.as_str(), e)).collect();
        let visible: usize = meta_value(&meta, "visible")?;
        let arch = config.architecture(visible);
        let mut gen = GenerativeParams::zeros(&arch);
        fill_params(&mut gen, "", &by_name)?;
        let mut rec = RecognitionParams::zeros(&arch);
        fill_params(&mut rec, "", &by_name)?;
        let mean = by_name
            .get("data.mean_image")
            .ok_or_else(|| CheckpointError::MissingEntry("data.mean_image".into()))?;
        let theta_opt = read_optimizer("theta", &gen, &meta, &by_name)?;
        let phi_opt = read_optimizer("phi", &rec, &meta, &by_name)?;
        Ok(Self {
            config,
            gen,
            rec,
            state: TrainState { theta_opt, phi_opt },
            mean_image: mean.data.clone(),
            epoch: meta_value(&meta, "epoch")?,
            rng_seed: meta_value(&meta, "rng_seed")?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_bytes()).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

fn meta_value<T: std::str::FromStr>(meta: &BTreeMap<String, String>, key: &str) -> Result<T, CheckpointError> {
    meta.get(key)
        .ok_or_else(|| CheckpointError::Meta(format!("missing checkpoint.{key}")))?
        .parse()
        .map_err(|_| CheckpointError::Meta(format!("unparsable checkpoint.{key}")))
}

fn fill_params<P: Parameters>(p: &mut P, prefix: &str, by_name: &BTreeMap<&str, &Entry>) -> Result<(), CheckpointError> {
    let dims: Vec<Vec<usize>> = p.tensors().into_iter().map(|t| t.dims).collect();
    for ((name, dst), expected) in p.tensors_mut().into_iter().zip(dims) {
        let key = format!("{prefix}{name}");
        let e = by_name.get(key.as_str()).ok_or_else(|| CheckpointError::MissingEntry(key.clone()))?;
        if e.dims != expected {
            return Err(CheckpointError::Shape {
                name: key,
                expected,
                found: e.dims.clone(),
            });
        }
        dst.copy_from_slice(&e.data);
    }
    Ok(())
}

fn read_optimizer<P: Parameters>(
    prefix: &str,
    params: &P,
    meta: &BTreeMap<String, String>,
    by_name: &BTreeMap<&str, &Entry>,
) -> Result<Optimizer, CheckpointError> {
    let kind: String = meta_value(meta, &format!("{prefix}_optimizer"))?;
    let lr = meta_value(meta, &format!("{prefix}_lr"))?;
    let step = meta_value(meta, &format!("{prefix}_step"))?;
    match kind.as_str() {
        "sgd" => Ok(Optimizer::Sgd(Sgd { lr, step })),
        "rmsprop" => {
            let mut accum = Vec::new();
            let mut acc = params.zeros_like();
            if by_name.keys().any(|k| k.starts_with(&format!("opt.{prefix}."))) {
                fill_params(&mut acc, &format!("opt.{prefix}."), by_name)?;
                accum = acc.tensors().into_iter().map(|t| t.data.to_vec()).collect();
            }
            Ok(Optimizer::Rmsprop(Rmsprop {
                rho: meta_value(meta, &format!("{prefix}_rho"))?,
                eps: meta_value(meta, &format!("{prefix}_eps"))?,
                lr,
                step,
                accum,
            }))
        }
        other => Err(CheckpointError::Meta(format!("unknown optimizer {other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::DataSource;
    use irvi_core::{PriorKind, RandomStream};

    fn sample_checkpoint() -> Checkpoint {
        let mut config = ExperimentConfig {
            data: DataSource::Teacher,
            latent: vec![3, 2],
            prior: PriorKind::Autoregressive,
            ..ExperimentConfig::default()
        };
        config.lr = 0.0125;
        let arch = config.architecture(4);
        let mut rng = RandomStream::new(5, 0);
        let mut gen = GenerativeParams::init(&arch, 0.7, &mut rng);
        gen.enforce_structure();
        let rec = RecognitionParams::init(&arch, 0.7, &mut rng);
        let mut state = TrainState::rmsprop(config.lr);
        let g = gen.zeros_like();
        let mut gg = g.clone();
        gg.fill(0.3);
        let mut gcopy = gen.clone();
        state.theta_opt.ascend(&mut gcopy, &gg);
        Checkpoint {
            config,
            gen,
            rec,
            state,
            mean_image: vec![0.25, 0.5, 0.125, 1.0 / 3.0],
            epoch: 7,
            rng_seed: 99,
        }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let c = sample_checkpoint();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(&bytes[..4], b"IRVI");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
    }

    #[test]
    fn distinct_errors() {
        let bytes = sample_checkpoint().to_bytes();
        assert!(matches!(Checkpoint::from_bytes(b"NOPE\x01\x00\x00\x00"), Err(CheckpointError::BadMagic)));
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(Checkpoint::from_bytes(&v2), Err(CheckpointError::VersionMismatch { found: 2 })));
        // cut inside the first payload
        let err = Checkpoint::from_bytes(&bytes[..60]).unwrap_err();
        assert_eq!(err.to_string(), "truncated entry gen.layer0.w");
    }

    #[test]
    fn entry_layout_is_exact() {
        let e = Entry {
            name: "ab".into(),
            dims: vec![2],
            data: vec![1.0, -2.5],
        };
        let bytes = encode(&[e.clone()], "k = v\n");
        let mut expect = b"IRVI".to_vec();
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.extend_from_slice(&1u64.to_le_bytes());
        expect.extend_from_slice(&2u64.to_le_bytes());
        expect.extend_from_slice(b"ab");
        expect.push(1);
        expect.extend_from_slice(&2u64.to_le_bytes());
        expect.extend_from_slice(&1.0f64.to_le_bytes());
        expect.extend_from_slice(&(-2.5f64).to_le_bytes());
        expect.extend_from_slice(&6u64.to_le_bytes());
        expect.extend_from_slice(b"k = v\n");
        assert_eq!(bytes, expect);
        assert_eq!(decode(&bytes).unwrap(), (vec![e], "k = v\n".to_string()));
    }
}
