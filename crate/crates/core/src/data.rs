//! Dataset files, binarization, splits and batching.
//!
//! Two on-disk formats are supported: IDX (the MNIST container, big-endian)
//! and BMAT, a plain binary matrix: the bytes `BMAT`, `N` and `D` as
//! little-endian `u64`, then `N · D` bytes each 0 or 1 in row-major order.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::model::GenerativeParams;
use crate::numerics::{Matrix, RandomStream, TAG_SHUFFLE};

pub const IDX_UBYTE_3D: u32 = 0x0000_0803;
pub const IDX_UBYTE_1D: u32 = 0x0000_0801;
const BMAT_MAGIC: &[u8; 4] = b"BMAT";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("truncated header")]
    TruncatedHeader,
    #[error("wrong magic: expected {expected:#010x}, found {found:#010x}")]
    WrongMagic { expected: u32, found: u32 },
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("bad BMAT header")]
    BadBmatMagic,
    #[error("non-binary entry {value} at index {index}")]
    NonBinary { index: usize, value: u8 },
    #[error("row width mismatch: {0}")]
    Shape(String),
}

/// Unsigned-byte tensor flattened to `[N × D]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<u8>,
}

impl RawMatrix {
    pub fn row(&self, i: usize) -> &[u8] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn be_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes.get(at..at + 4).map(|b| u32::from_be_bytes(b.try_into().unwrap()))
}

/// Parses an IDX image file (3-d unsigned-byte tensor).
pub fn parse_idx_images(bytes: &[u8]) -> Result<RawMatrix, DataError> {
    parse_idx(bytes, IDX_UBYTE_3D)
}

/// Parses an IDX label file (1-d unsigned-byte tensor) as an `[N × 1]` matrix.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<RawMatrix, DataError> {
    parse_idx(bytes, IDX_UBYTE_1D)
}

fn parse_idx(bytes: &[u8], expected: u32) -> Result<RawMatrix, DataError> {
    let magic = be_u32(bytes, 0).ok_or(DataError::TruncatedHeader)?;
    if magic != expected {
        return Err(DataError::WrongMagic { expected, found: magic });
    }
    let ndim = (magic & 0xff) as usize;
    let mut dims = Vec::with_capacity(ndim);
    for d in 0..ndim {
        dims.push(be_u32(bytes, 4 + 4 * d).ok_or(DataError::TruncatedHeader)? as usize);
    }
    let header = 4 + 4 * ndim;
    let rows = dims[0];
    let cols: usize = dims[1..].iter().product();
    let expected_len = rows * cols;
    let payload = &bytes[header..];
    if payload.len() < expected_len {
        return Err(DataError::TruncatedPayload {
            expected: expected_len,
            found: payload.len(),
        });
    }
    Ok(RawMatrix {
        rows,
        cols,
        data: payload[..expected_len].to_vec(),
    })
}

pub fn load_idx(path: &Path) -> Result<RawMatrix, DataError> {
    parse_idx_images(&read_file(path)?)
}

/// Serializes `[N × (h·w)]` bytes as an IDX image file with the given image shape.
pub fn encode_idx_images(m: &RawMatrix, height: usize, width: usize) -> Result<Vec<u8>, DataError> {
    if height * width != m.cols {
        return Err(DataError::Shape(format!("{height}x{width} images but {} columns", m.cols)));
    }
    let mut out = Vec::with_capacity(16 + m.data.len());
    out.extend_from_slice(&IDX_UBYTE_3D.to_be_bytes());
    for d in [m.rows, height, width] {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&m.data);
    Ok(out)
}

/// `1` iff the value is at least 128. Input that is already all 0/1 is
/// returned unchanged.
pub fn binarize(raw: &RawMatrix) -> Matrix {
    let pre_binarized = raw.data.iter().all(|&v| v <= 1);
    let data = raw
        .data
        .iter()
        .map(|&v| {
            let on = if pre_binarized { v == 1 } else { v >= 128 };
            on as u8 as f64
        })
        .collect();
    Matrix::from_vec(raw.rows, raw.cols, data).expect("shape from raw matrix")
}

pub fn parse_bmat(bytes: &[u8]) -> Result<Matrix, DataError> {
    if bytes.len() < 20 {
        return Err(DataError::TruncatedHeader);
    }
    if &bytes[..4] != BMAT_MAGIC {
        return Err(DataError::BadBmatMagic);
    }
    let n = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
    let d = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let payload = &bytes[20..];
    if payload.len() < n * d {
        return Err(DataError::TruncatedPayload {
            expected: n * d,
            found: payload.len(),
        });
    }
    let mut data = Vec::with_capacity(n * d);
    for (index, &value) in payload[..n * d].iter().enumerate() {
        if value > 1 {
            return Err(DataError::NonBinary { index, value });
        }
        data.push(value as f64);
    }
    Ok(Matrix::from_vec(n, d, data).expect("shape from header"))
}

pub fn encode_bmat(m: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + m.as_slice().len());
    out.extend_from_slice(BMAT_MAGIC);
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    out.extend(m.as_slice().iter().map(|&v| (v > 0.5) as u8));
    out
}

pub fn load_bmat(path: &Path) -> Result<Matrix, DataError> {
    parse_bmat(&read_file(path)?)
}

pub fn save_bmat(path: &Path, m: &Matrix) -> Result<(), DataError> {
    let io_err = |source| DataError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut f = fs::File::create(path).map_err(io_err)?;
    f.write_all(&encode_bmat(m)).map_err(io_err)
}

/// Loads either format, chosen by the file's leading bytes.
pub fn load_binary_matrix(path: &Path) -> Result<Matrix, DataError> {
    let bytes = read_file(path)?;
    if bytes.starts_with(BMAT_MAGIC) {
        parse_bmat(&bytes)
    } else {
        Ok(binarize(&parse_idx_images(&bytes)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }

    fn stream_tag(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Valid => 2,
            Split::Test => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryDataset {
    pub rows: Matrix,
    pub split: Split,
    /// Per-pixel mean of the training split.
    pub mean_image: Vec<f64>,
}

impl BinaryDataset {
    pub fn len(&self) -> usize {
        self.rows.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.rows.cols()
    }

    pub fn centered(&self) -> Matrix {
        crate::recognition::center(&self.rows, &self.mean_image).expect("mean image width")
    }

    /// Rows with the given indices, in order.
    pub fn select(&self, indices: &[usize]) -> Matrix {
        let d = self.dim();
        let mut m = Matrix::zeros(indices.len(), d);
        for (r, &i) in indices.iter().enumerate() {
            m.row_mut(r).copy_from_slice(self.rows.row(i));
        }
        m
    }
}

pub fn column_means(m: &Matrix) -> Vec<f64> {
    let mut mean = vec![0.0; m.cols()];
    for i in 0..m.rows() {
        for (a, &v) in mean.iter_mut().zip(m.row(i)) {
            *a += v;
        }
    }
    let n = m.rows().max(1) as f64;
    mean.iter_mut().for_each(|v| *v /= n);
    mean
}

/// Train, validation and test sets sharing the training mean image.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: BinaryDataset,
    pub valid: BinaryDataset,
    pub test: BinaryDataset,
}

impl Splits {
    pub fn new(train: Matrix, valid: Matrix, test: Matrix) -> Result<Self, DataError> {
        if valid.cols() != train.cols() || test.cols() != train.cols() {
            return Err(DataError::Shape("splits differ in width".into()));
        }
        let mean_image = column_means(&train);
        let make = |rows, split| BinaryDataset {
            rows,
            split,
            mean_image: mean_image.clone(),
        };
        Ok(Self {
            train: make(train, Split::Train),
            valid: make(valid, Split::Valid),
            test: make(test, Split::Test),
        })
    }

    /// Holds out the last `valid_rows` training rows for validation.
    pub fn holdout(train_full: &Matrix, valid_rows: usize, test: Matrix) -> Result<Self, DataError> {
        if valid_rows > train_full.rows() {
            return Err(DataError::Shape("validation split larger than training set".into()));
        }
        let keep = train_full.rows() - valid_rows;
        let d = train_full.cols();
        let slice = |a: usize, b: usize| {
            Matrix::from_vec(b - a, d, train_full.as_slice()[a * d..b * d].to_vec()).expect("row slice")
        };
        Self::new(slice(0, keep), slice(keep, train_full.rows()), test)
    }

    pub fn get(&self, split: Split) -> &BinaryDataset {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }
}

/// MNIST convention: the last 10,000 training rows are held out.
pub const MNIST_VALID_ROWS: usize = 10_000;

/// Ancestral samples from a frozen teacher, each split from its own
/// sub-stream of `rng`.
pub fn synth_teacher(
    teacher: &GenerativeParams,
    n_train: usize,
    n_valid: usize,
    n_test: usize,
    rng: &RandomStream,
) -> Splits {
    let sample = |n: usize, split: Split| {
        let mut s = rng.substream(split.stream_tag());
        let d = teacher.visible_dim();
        let mut m = Matrix::zeros(n, d);
        for i in 0..n {
            let (x, _) = teacher.ancestral_sample(&mut s);
            m.row_mut(i).copy_from_slice(&x);
        }
        m
    };
    Splits::new(
        sample(n_train, Split::Train),
        sample(n_valid, Split::Valid),
        sample(n_test, Split::Test),
    )
    .expect("all splits share the teacher's width")
}

/// Row-index blocks of at most `batch_size`; the last block may be short.
/// With `shuffle`, the order is a permutation drawn from `rng`'s shuffle
/// sub-stream.
pub fn batches(n: usize, batch_size: usize, rng: &RandomStream, shuffle: bool) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch size must be at least 1");
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        order.shuffle(&mut rng.substream(TAG_SHUFFLE));
    }
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Architecture;

    fn fixture() -> Vec<u8> {
        let mut b = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2];
        b.extend_from_slice(&[0, 128, 255, 10, 1, 2, 3, 200]);
        b
    }

    #[test]
    fn idx_fixture_parses() {
        let m = parse_idx_images(&fixture()).unwrap();
        assert_eq!((m.rows, m.cols), (2, 4));
        assert_eq!(m.row(0), &[0, 128, 255, 10]);
        assert_eq!(m.row(1), &[1, 2, 3, 200]);
        let b = binarize(&m);
        assert_eq!(b.row(0), &[0.0, 1.0, 1.0, 0.0]);
        assert_eq!(b.row(1), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn idx_errors() {
        let mut labels = vec![0, 0, 8, 1, 0, 0, 0, 2];
        labels.extend_from_slice(&[3, 7]);
        let err = parse_idx_images(&labels).unwrap_err();
        assert!(err.to_string().contains("wrong magic"), "{err}");
        assert_eq!(parse_idx_labels(&labels).unwrap().data, vec![3, 7]);
        assert_eq!(parse_idx_images(&[]).unwrap_err().to_string(), "truncated header");
        let short = &fixture()[..20];
        assert!(matches!(parse_idx_images(short), Err(DataError::TruncatedPayload { expected: 8, found: 4 })));
    }

    #[test]
    fn idx_round_trip() {
        let m = parse_idx_images(&fixture()).unwrap();
        assert_eq!(encode_idx_images(&m, 2, 2).unwrap(), fixture());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.idx");
        fs::write(&p, fixture()).unwrap();
        assert_eq!(load_idx(&p).unwrap(), m);
    }

    #[test]
    fn binarize_boundaries() {
        let raw = RawMatrix {
            rows: 1,
            cols: 4,
            data: vec![127, 128, 0, 255],
        };
        assert_eq!(binarize(&raw).row(0), &[0.0, 1.0, 0.0, 1.0]);
        let zeros = RawMatrix {
            rows: 2,
            cols: 2,
            data: vec![0; 4],
        };
        assert!(binarize(&zeros).as_slice().iter().all(|&v| v == 0.0));
        let pre = RawMatrix {
            rows: 1,
            cols: 3,
            data: vec![1, 0, 1],
        };
        assert_eq!(binarize(&pre).row(0), &[1.0, 0.0, 1.0]);
    }

    #[test]
    fn bmat_round_trip_and_errors() {
        let m = Matrix::from_fn(3, 5, |i, j| ((i + j) % 2) as f64);
        let bytes = encode_bmat(&m);
        assert_eq!(&bytes[..4], b"BMAT");
        assert_eq!(bytes.len(), 20 + 15);
        assert_eq!(parse_bmat(&bytes).unwrap(), m);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.bmat");
        save_bmat(&p, &m).unwrap();
        assert_eq!(fs::read(&p).unwrap(), bytes);
        assert_eq!(load_binary_matrix(&p).unwrap(), m);
        let mut bad = bytes.clone();
        bad[25] = 7;
        assert!(matches!(parse_bmat(&bad), Err(DataError::NonBinary { index: 5, value: 7 })));
        assert!(matches!(parse_bmat(&bytes[..30]), Err(DataError::TruncatedPayload { .. })));
        assert!(matches!(parse_bmat(b"XMAT0000000000000000"), Err(DataError::BadBmatMagic)));
    }

    #[test]
    fn batch_blocks() {
        let rng = RandomStream::new(1, 0);
        let b = batches(250, 100, &rng, false);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![100, 100, 50]);
        assert_eq!(b.concat(), (0..250).collect::<Vec<_>>());
        let s1 = batches(250, 100, &rng, true);
        let s2 = batches(250, 100, &RandomStream::new(1, 0), true);
        assert_eq!(s1, s2);
        assert_ne!(s1.concat(), (0..250).collect::<Vec<_>>());
        let mut sorted = s1.concat();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..250).collect::<Vec<_>>());
    }

    #[test]
    fn deterministic_teacher_repeats_rows() {
        let mut t = GenerativeParams::zeros(&Architecture::sbn(4, &[2]));
        t.prior.bias_mut().copy_from_slice(&[40.0, -40.0]);
        t.layers[0].out.bias.copy_from_slice(&[40.0, -40.0, 40.0, 40.0]);
        let s = synth_teacher(&t, 50, 5, 5, &RandomStream::new(2, 0));
        for i in 0..50 {
            assert_eq!(s.train.rows.row(i), &[1.0, 0.0, 1.0, 1.0]);
        }
    }

    #[test]
    fn teacher_splits_reproducible_and_distinct() {
        let mut rng = RandomStream::new(3, 0);
        let t = GenerativeParams::init(&Architecture::sbn(6, &[4]), 1.0, &mut rng);
        let a = synth_teacher(&t, 40, 40, 40, &RandomStream::new(9, 0));
        let b = synth_teacher(&t, 40, 40, 40, &RandomStream::new(9, 0));
        assert_eq!(a, b);
        assert_ne!(a.train.rows, a.valid.rows);
        assert_ne!(a.valid.rows, a.test.rows);
        assert_eq!(a.test.mean_image, column_means(&a.train.rows));
        assert!(a.train.rows.as_slice().iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn holdout_takes_last_rows() {
        let full = Matrix::from_fn(10, 2, |i, j| ((i >> j) & 1) as f64);
        let s = Splits::holdout(&full, 3, Matrix::zeros(1, 2)).unwrap();
        assert_eq!(s.train.len(), 7);
        assert_eq!(s.valid.rows.row(0), full.row(7));
        assert_eq!(s.valid.mean_image, column_means(&s.train.rows));
    }
}
