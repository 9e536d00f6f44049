//! Logit datasets: validated containers, the `CLB1` binary format, CSV,
//! and seeded validation/test splitting.
//!
//! `CLB1` layout (all little-endian):
//!
//! | bytes       | content                      |
//! |-------------|------------------------------|
//! | 4           | magic `CLB1`                 |
//! | 4           | `u32` N (rows)               |
//! | 4           | `u32` K (classes)            |
//! | 4·N·K       | `f32` logits, row-major      |
//! | 4·N         | `u32` labels                 |
//!
//! Probability matrices use the same layout under the magic `CLP1`. In CSV
//! the header names the kind: `z0,...,z{K-1},label` for logits and
//! `p0,...,p{K-1},label` for probabilities.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::rng::{tags, StreamKey};

pub const LOGITS_MAGIC: &[u8; 4] = b"CLB1";
pub const PROBS_MAGIC: &[u8; 4] = b"CLP1";

/// Tolerance on the row sums of a [`ProbSet`].
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("I/O failure on {path}: {source}")]
    IoFailure {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed file: {0}")]
    MalformedFile(String),
    #[error("row {row}: label {label} out of range for {classes} classes")]
    LabelOutOfRange {
        row: usize,
        label: u64,
        classes: usize,
    },
    #[error("row {row}, column {col}: non-finite logit")]
    NonFiniteLogit { row: usize, col: usize },
    #[error("invalid probabilities at row {row}: {reason}")]
    InvalidProbabilities { row: usize, reason: String },
    #[error("degenerate split: {0}")]
    DegenerateSplit(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::IoFailure {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Clb1,
    Csv,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "clb1" | "bin" | "binary" => Ok(Format::Clb1),
            "csv" => Ok(Format::Csv),
            other => Err(format!("unknown format '{other}' (expected clb1 or csv)")),
        }
    }
}

impl Format {
    /// Guess from the file extension; anything but `.csv` is binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Clb1,
        }
    }
}

/// N×K matrix of finite logits with one label in `0..K` per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitSet {
    n_classes: usize,
    logits: Vec<f32>,
    labels: Vec<u32>,
}

impl LogitSet {
    pub fn new(n_classes: usize, logits: Vec<f32>, labels: Vec<u32>) -> Result<Self, DataError> {
        validate_shape(n_classes, logits.len(), labels.len())?;
        for (idx, z) in logits.iter().enumerate() {
            if !z.is_finite() {
                return Err(DataError::NonFiniteLogit {
                    row: idx / n_classes,
                    col: idx % n_classes,
                });
            }
        }
        validate_labels(n_classes, &labels)?;
        Ok(Self {
            n_classes,
            logits,
            labels,
        })
    }

    /// Build from nested rows; convenient in tests and examples.
    pub fn from_rows(rows: &[Vec<f32>], labels: Vec<u32>) -> Result<Self, DataError> {
        let k = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != k) {
            return Err(DataError::MalformedFile("ragged logit rows".into()));
        }
        Self::new(k, rows.concat(), labels)
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn logits(&self) -> &[f32] {
        &self.logits
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.logits[i * self.n_classes..(i + 1) * self.n_classes]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.logits.chunks_exact(self.n_classes)
    }

    /// Subset of rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> LogitSet {
        let mut logits = Vec::with_capacity(indices.len() * self.n_classes);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            logits.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        LogitSet {
            n_classes: self.n_classes,
            logits,
            labels,
        }
    }

    /// Bitwise equality, distinguishing `-0.0` from `0.0`.
    pub fn bit_eq(&self, other: &LogitSet) -> bool {
        self.n_classes == other.n_classes
            && self.labels == other.labels
            && self.logits.len() == other.logits.len()
            && self
                .logits
                .iter()
                .zip(&other.logits)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Row-stochastic N×K matrix with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbSet {
    n_classes: usize,
    probs: Vec<f64>,
    labels: Vec<u32>,
}

impl ProbSet {
    pub fn new(n_classes: usize, probs: Vec<f64>, labels: Vec<u32>) -> Result<Self, DataError> {
        validate_shape(n_classes, probs.len(), labels.len())?;
        validate_labels(n_classes, &labels)?;
        for (row, p) in probs.chunks_exact(n_classes).enumerate() {
            if let Some(bad) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(DataError::InvalidProbabilities {
                    row,
                    reason: format!("entry {bad} outside [0, 1]"),
                });
            }
            let sum: f64 = p.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(DataError::InvalidProbabilities {
                    row,
                    reason: format!("row sums to {sum}"),
                });
            }
        }
        Ok(Self {
            n_classes,
            probs,
            labels,
        })
    }

    /// Caller guarantees the invariants (used by the crate's own transforms).
    pub(crate) fn from_parts(n_classes: usize, probs: Vec<f64>, labels: Vec<u32>) -> Self {
        debug_assert_eq!(probs.len(), n_classes * labels.len());
        Self {
            n_classes,
            probs,
            labels,
        }
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.probs[i * self.n_classes..(i + 1) * self.n_classes]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.probs.chunks_exact(self.n_classes)
    }
}

fn validate_shape(k: usize, values: usize, n: usize) -> Result<(), DataError> {
    if n == 0 {
        return Err(DataError::MalformedFile("dataset has no rows".into()));
    }
    if k < 2 {
        return Err(DataError::MalformedFile(format!(
            "need at least 2 classes, got {k}"
        )));
    }
    if values != n * k {
        return Err(DataError::MalformedFile(format!(
            "{values} values do not form {n} rows of {k} classes"
        )));
    }
    Ok(())
}

fn validate_labels(k: usize, labels: &[u32]) -> Result<(), DataError> {
    match labels.iter().position(|&l| l as usize >= k) {
        Some(row) => Err(DataError::LabelOutOfRange {
            row,
            label: labels[row] as u64,
            classes: k,
        }),
        None => Ok(()),
    }
}

// ---------------------------------------------------------------------------
// I/O
// ---------------------------------------------------------------------------

pub fn load(path: &Path, format: Format) -> Result<LogitSet, DataError> {
    let (k, values, labels) = match format {
        Format::Clb1 => read_binary(path, LOGITS_MAGIC)?,
        Format::Csv => read_csv(path, 'z')?,
    };
    LogitSet::new(k, values, labels)
}

pub fn save(set: &LogitSet, path: &Path, format: Format) -> Result<(), DataError> {
    match format {
        Format::Clb1 => write_binary(
            path,
            LOGITS_MAGIC,
            set.n_classes,
            set.logits.iter().copied(),
            &set.labels,
        ),
        Format::Csv => write_csv(
            path,
            'z',
            set.n_classes,
            set.logits.iter().map(|&v| v as f64),
            &set.labels,
        ),
    }
}

/// Save a probability matrix. The binary form stores `f32` values, so it is
/// an output artifact rather than an exact checkpoint.
pub fn save_probs(set: &ProbSet, path: &Path, format: Format) -> Result<(), DataError> {
    match format {
        Format::Clb1 => write_binary(
            path,
            PROBS_MAGIC,
            set.n_classes,
            set.probs.iter().map(|&p| p as f32),
            &set.labels,
        ),
        Format::Csv => write_csv(
            path,
            'p',
            set.n_classes,
            set.probs.iter().copied(),
            &set.labels,
        ),
    }
}

/// Load a probability matrix written by [`save_probs`]. Rows are
/// renormalized in `f64` to undo the storage rounding.
pub fn load_probs(path: &Path, format: Format) -> Result<ProbSet, DataError> {
    let (k, values, labels) = match format {
        Format::Clb1 => read_binary(path, PROBS_MAGIC)?,
        Format::Csv => read_csv(path, 'p')?,
    };
    validate_shape(k, values.len(), labels.len())?;
    let mut probs: Vec<f64> = values.iter().map(|&v| v as f64).collect();
    for (row, p) in probs.chunks_exact_mut(k).enumerate() {
        if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(DataError::InvalidProbabilities {
                row,
                reason: "negative or non-finite entry".into(),
            });
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-4 {
            return Err(DataError::InvalidProbabilities {
                row,
                reason: format!("row sums to {sum}"),
            });
        }
        p.iter_mut().for_each(|v| *v /= sum);
    }
    ProbSet::new(k, probs, labels)
}

fn read_binary(path: &Path, magic: &[u8; 4]) -> Result<(usize, Vec<f32>, Vec<u32>), DataError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_binary(&bytes, magic)
}

pub(crate) fn decode_binary(
    bytes: &[u8],
    magic: &[u8; 4],
) -> Result<(usize, Vec<f32>, Vec<u32>), DataError> {
    if bytes.len() < 12 {
        return Err(DataError::MalformedFile(format!(
            "{} bytes is shorter than the header",
            bytes.len()
        )));
    }
    if &bytes[..4] != magic {
        return Err(DataError::MalformedFile(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&bytes[..4]),
            String::from_utf8_lossy(magic)
        )));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let n = word(4) as usize;
    let k = word(8) as usize;
    let expected = n
        .checked_mul(k)
        .and_then(|nk| nk.checked_add(n))
        .and_then(|cells| cells.checked_mul(4))
        .and_then(|b| b.checked_add(12))
        .ok_or_else(|| DataError::MalformedFile("header shape overflows".into()))?;
    if bytes.len() != expected {
        return Err(DataError::MalformedFile(format!(
            "header declares {n}x{k} ({expected} bytes) but file has {} bytes",
            bytes.len()
        )));
    }
    let body = &bytes[12..];
    let (value_bytes, label_bytes) = body.split_at(4 * n * k);
    let values = value_bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let labels = label_bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((k, values, labels))
}

fn write_binary(
    path: &Path,
    magic: &[u8; 4],
    k: usize,
    values: impl Iterator<Item = f32>,
    labels: &[u32],
) -> Result<(), DataError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let n = u32::try_from(labels.len())
        .map_err(|_| DataError::MalformedFile("too many rows for CLB1".into()))?;
    let k32 = u32::try_from(k)
        .map_err(|_| DataError::MalformedFile("too many classes for CLB1".into()))?;
    let write = || -> std::io::Result<()> {
        w.write_all(magic)?;
        w.write_all(&n.to_le_bytes())?;
        w.write_all(&k32.to_le_bytes())?;
        for v in values {
            w.write_all(&v.to_le_bytes())?;
        }
        for l in labels {
            w.write_all(&l.to_le_bytes())?;
        }
        w.flush()
    };
    write().map_err(io_err(path))
}

fn read_csv(path: &Path, prefix: char) -> Result<(usize, Vec<f32>, Vec<u32>), DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let headers = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    let k = headers.len().saturating_sub(1);
    let header_ok = headers.len() >= 3
        && headers.iter().next_back() == Some("label")
        && headers
            .iter()
            .take(k)
            .enumerate()
            .all(|(j, h)| h == format!("{prefix}{j}"));
    if !header_ok {
        return Err(DataError::MalformedFile(format!(
            "CSV header must be {prefix}0,...,{prefix}{{K-1}},label; got '{}'",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_err(path, e))?;
        if record.len() != k + 1 {
            return Err(DataError::MalformedFile(format!(
                "row {row} has {} fields, expected {}",
                record.len(),
                k + 1
            )));
        }
        for field in record.iter().take(k) {
            let v: f32 = field.parse().map_err(|_| {
                DataError::MalformedFile(format!("row {row}: cannot parse '{field}' as a number"))
            })?;
            values.push(v);
        }
        let label_field = &record[k];
        let label: i64 = label_field.parse().map_err(|_| {
            DataError::MalformedFile(format!("row {row}: cannot parse label '{label_field}'"))
        })?;
        if label < 0 || label >= k as i64 {
            return Err(DataError::LabelOutOfRange {
                row,
                label: label as u64,
                classes: k,
            });
        }
        labels.push(label as u32);
    }
    Ok((k, values, labels))
}

fn csv_err(path: &Path, e: csv::Error) -> DataError {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(source) => DataError::IoFailure {
                path: path.display().to_string(),
                source,
            },
            _ => unreachable!(),
        }
    } else {
        DataError::MalformedFile(e.to_string())
    }
}

fn write_csv(
    path: &Path,
    prefix: char,
    k: usize,
    values: impl Iterator<Item = f64>,
    labels: &[u32],
) -> Result<(), DataError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let header: Vec<String> = (0..k)
        .map(|j| format!("{prefix}{j}"))
        .chain(["label".to_string()])
        .collect();
    let mut values = values;
    let mut write = || -> std::io::Result<()> {
        writeln!(w, "{}", header.join(","))?;
        for &label in labels {
            for _ in 0..k {
                let v = values.next().expect("value count checked by caller");
                // 9 significant digits
                write!(w, "{v:.8e},")?;
            }
            writeln!(w, "{label}")?;
        }
        w.flush()
    };
    write().map_err(io_err(path))
}

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub validation_fraction: f64,
    pub shuffle_seed: u64,
}

#[derive(Debug, Clone)]
pub struct Split {
    pub validation: LogitSet,
    pub test: LogitSet,
    pub validation_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SplitRecord<'a> {
    pub validation_fraction: f64,
    pub shuffle_seed: u64,
    pub validation_indices: &'a [usize],
    pub test_indices: &'a [usize],
}

impl Split {
    pub fn record(&self, spec: &SplitSpec) -> SplitRecord<'_> {
        SplitRecord {
            validation_fraction: spec.validation_fraction,
            shuffle_seed: spec.shuffle_seed,
            validation_indices: &self.validation_indices,
            test_indices: &self.test_indices,
        }
    }
}

/// Seeded permutation of `0..n`: Fisher–Yates from the back, swapping
/// position `i` with a uniform draw from `0..=i` on the shuffle stream.
pub fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut stream = StreamKey::new(seed, 0, tags::SHUFFLE).stream();
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = stream.below(i as u64 + 1) as usize;
        idx.swap(i, j);
    }
    idx
}

/// Partition rows into validation and test sets. The first
/// `floor(N * fraction)` entries of the shuffled permutation form the
/// validation set; both parts keep their original row order.
pub fn split(set: &LogitSet, spec: &SplitSpec) -> Result<Split, DataError> {
    let n = set.n_samples();
    let f = spec.validation_fraction;
    if !(f > 0.0 && f < 1.0) {
        return Err(DataError::DegenerateSplit(format!(
            "validation fraction {f} not in (0, 1)"
        )));
    }
    let n_val = (n as f64 * f).floor() as usize;
    if n_val < 1 || n_val >= n {
        return Err(DataError::DegenerateSplit(format!(
            "{n} rows at fraction {f} give {n_val} validation rows"
        )));
    }
    let perm = shuffled_indices(n, spec.shuffle_seed);
    let mut validation_indices = perm[..n_val].to_vec();
    let mut test_indices = perm[n_val..].to_vec();
    validation_indices.sort_unstable();
    test_indices.sort_unstable();
    Ok(Split {
        validation: set.select(&validation_indices),
        test: set.select(&test_indices),
        validation_indices,
        test_indices,
    })
}
