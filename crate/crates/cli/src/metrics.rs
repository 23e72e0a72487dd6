//! Per-epoch and per-evaluation metrics rows, written as CSV.

use std::fmt::Write as _;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;
pub const HEADER: &str = "phase,epoch,split,estimator,L1_hat,LK_hat,ess_norm,degenerate_frac,lr,wall_s";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub phase: String,
    pub epoch: usize,
    pub split: String,
    pub estimator: String,
    pub l1: f64,
    pub lk: f64,
    pub ess_norm: f64,
    pub degenerate_frac: f64,
    pub lr: f64,
    pub wall_s: f64,
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            self.phase,
            self.epoch,
            self.split,
            self.estimator,
            self.l1,
            self.lk,
            self.ess_norm,
            self.degenerate_frac,
            self.lr,
            self.wall_s
        );
        s
    }
}

/// Appends rows to a CSV file, writing the header when the file is new.
pub struct MetricsWriter {
    file: File,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self, CliError> {
        let mut file = File::create(path).map_err(|e| CliError::io(path, e))?;
        writeln!(file, "{HEADER}").map_err(|e| CliError::io(path, e))?;
        Ok(Self { file })
    }

    pub fn append(path: &Path) -> Result<Self, CliError> {
        let exists = path.exists();
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| CliError::io(path, e))?;
        if !exists {
            writeln!(file, "{HEADER}").map_err(|e| CliError::io(path, e))?;
        }
        Ok(Self { file })
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<(), CliError> {
        writeln!(self.file, "{}", row.to_csv()).map_err(|source| CliError::Io {
            path: "metrics".into(),
            source,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_format() {
        let r = MetricsRow {
            phase: "main".into(),
            epoch: 3,
            split: "valid".into(),
            estimator: "air".into(),
            l1: -5.25,
            lk: -5.0,
            ess_norm: 0.5,
            degenerate_frac: 0.0,
            lr: 0.001,
            wall_s: 0.0,
        };
        assert_eq!(r.to_csv(), "main,3,valid,air,-5.25,-5,0.5,0,0.001,0");
        assert_eq!(HEADER.split(',').count(), r.to_csv().split(',').count());
    }

    #[test]
    fn header_written_once() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let row = MetricsRow {
            phase: "eval".into(),
            epoch: 0,
            split: "test".into(),
            estimator: "air".into(),
            l1: 0.0,
            lk: 0.0,
            ess_norm: 1.0,
            degenerate_frac: 0.0,
            lr: 0.0,
            wall_s: 0.0,
        };
        MetricsWriter::append(&p).unwrap().write(&row).unwrap();
        MetricsWriter::append(&p).unwrap().write(&row).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().filter(|l| *l == HEADER).count(), 1);
        assert_eq!(text.lines().count(), 3);
    }
}
