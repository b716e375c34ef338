//! Dataset representation and on-disk formats.
//!
//! Features live on disk in the FINF format:
//!
//! ```text
//! offset  size  field
//!      0     4  magic "FINF"
//!      4     4  version (u32 LE) = 1
//!      8     8  n_samples (u64 LE)
//!     16     4  dim (u32 LE)
//!     20     4  reserved, zero
//!     24   4nd  row-major f32 LE payload
//! ```
//!
//! In memory every value is an `f64`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const FINF_MAGIC: [u8; 4] = *b"FINF";
pub const FINF_VERSION: u32 = 1;
pub const FINF_HEADER_LEN: usize = 24;

/// Dense row-major `n_samples × dim` matrix of finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n_samples: usize,
    dim: usize,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(n_samples: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_samples * dim {
            return Err(Error::shape(format!(
                "{} values for a {n_samples}x{dim} matrix",
                values.len()
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            n_samples,
            dim,
            values,
        })
    }

    pub fn zeros(n_samples: usize, dim: usize) -> Self {
        Self {
            n_samples,
            dim,
            values: vec![0.0; n_samples * dim],
        }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.as_ref().len());
        let mut values = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::shape(format!(
                    "row {i} has {} entries, expected {dim}",
                    r.len()
                )));
            }
            values.extend_from_slice(r);
        }
        Self::new(rows.len(), dim, values)
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        (0..self.n_samples).map(move |i| self.row(i))
    }

    /// Copies the given rows, in order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> FeatureMatrix {
        let mut values = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            n_samples: indices.len(),
            dim: self.dim,
            values,
        }
    }

    /// Rounds every entry to the nearest `f32`, the precision used on disk.
    pub fn round_to_f32(&self) -> FeatureMatrix {
        FeatureMatrix {
            n_samples: self.n_samples,
            dim: self.dim,
            values: self.values.iter().map(|&v| v as f32 as f64).collect(),
        }
    }

    pub(crate) fn from_raw_unchecked(n_samples: usize, dim: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), n_samples * dim);
        Self {
            n_samples,
            dim,
            values,
        }
    }
}

/// Features plus one dense class label per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: FeatureMatrix,
    labels: Vec<usize>,
    level: usize,
    class_count: usize,
}

impl LabeledDataset {
    pub fn new(
        features: FeatureMatrix,
        labels: Vec<usize>,
        level: usize,
        class_count: usize,
    ) -> Result<Self> {
        if labels.len() != features.n_samples() {
            return Err(Error::shape(format!(
                "{} labels for {} samples",
                labels.len(),
                features.n_samples()
            )));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= class_count) {
            return Err(Error::Labels(format!(
                "sample {i} has label {l} outside [0, {class_count})"
            )));
        }
        let counts = class_counts(&labels, class_count);
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            return Err(Error::Labels(format!("class {empty} has no samples")));
        }
        Ok(Self {
            features,
            labels,
            level,
            class_count,
        })
    }

    /// Builds a level-0 dataset with `class_count = 1 + max(label)`.
    pub fn from_labels(features: FeatureMatrix, labels: Vec<usize>) -> Result<Self> {
        let class_count = labels.iter().max().map_or(0, |m| m + 1);
        Self::new(features, labels, 0, class_count)
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn n_samples(&self) -> usize {
        self.features.n_samples()
    }

    /// Per-class sample counts `N_i`.
    pub fn class_sizes(&self) -> Vec<usize> {
        class_counts(&self.labels, self.class_count)
    }

    /// Same labels, different features (e.g. extracted representations).
    pub fn with_features(&self, features: FeatureMatrix) -> Result<Self> {
        Self::new(features, self.labels.clone(), self.level, self.class_count)
    }
}

fn class_counts(labels: &[usize], class_count: usize) -> Vec<usize> {
    let mut counts = vec![0usize; class_count];
    for &l in labels {
        counts[l] += 1;
    }
    counts
}

/// The samples of one class, as strictly increasing global indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassView {
    pub class_id: usize,
    pub sample_indices: Vec<usize>,
}

impl ClassView {
    pub fn len(&self) -> usize {
        self.sample_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_indices.is_empty()
    }
}

/// One view per class, in class order.
pub fn class_views(d: &LabeledDataset) -> Vec<ClassView> {
    let mut views: Vec<ClassView> = (0..d.class_count())
        .map(|class_id| ClassView {
            class_id,
            sample_indices: Vec::new(),
        })
        .collect();
    for (i, &l) in d.labels().iter().enumerate() {
        views[l].sample_indices.push(i);
    }
    views
}

pub fn encode_features(m: &FeatureMatrix) -> Result<Vec<u8>> {
    let dim = u32::try_from(m.dim()).map_err(|_| Error::invalid("dim exceeds u32"))?;
    let mut buf = Vec::with_capacity(FINF_HEADER_LEN + 4 * m.values().len());
    buf.extend_from_slice(&FINF_MAGIC);
    buf.extend_from_slice(&FINF_VERSION.to_le_bytes());
    buf.extend_from_slice(&(m.n_samples() as u64).to_le_bytes());
    buf.extend_from_slice(&dim.to_le_bytes());
    buf.extend_from_slice(&0u32.to_le_bytes());
    for (index, &v) in m.values().iter().enumerate() {
        let f = v as f32;
        if !f.is_finite() {
            return Err(Error::NonFinite { index });
        }
        buf.extend_from_slice(&f.to_le_bytes());
    }
    Ok(buf)
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureMatrix> {
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            expected: FINF_HEADER_LEN,
            found: bytes.len(),
        });
    }
    let found: [u8; 4] = bytes[0..4].try_into().unwrap();
    if found != FINF_MAGIC {
        return Err(Error::BadMagic {
            expected: FINF_MAGIC,
            found,
        });
    }
    if bytes.len() < FINF_HEADER_LEN {
        return Err(Error::Truncated {
            expected: FINF_HEADER_LEN,
            found: bytes.len(),
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FINF_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let n_samples = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let dim = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
    let count = usize::try_from(n_samples)
        .ok()
        .and_then(|n| n.checked_mul(dim))
        .ok_or_else(|| Error::Format(format!("shape {n_samples}x{dim} overflows")))?;
    let expected = FINF_HEADER_LEN + 4 * count;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::Format(format!(
            "{} trailing bytes after payload",
            bytes.len() - expected
        )));
    }
    let values: Vec<f64> = bytes[FINF_HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    FeatureMatrix::new(n_samples as usize, dim, values)
}

pub fn save_features(m: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_features(m)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes)
}

/// Parses a `sample,label` CSV covering every sample in `0..n_samples`
/// exactly once. Returns the dense labels and `1 + max(label)`.
pub fn parse_labels(text: &str, n_samples: usize) -> Result<(Vec<usize>, usize)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut labels: Vec<Option<usize>> = vec![None; n_samples];
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Labels(e.to_string()))?;
        if record.len() < 2 {
            return Err(Error::Labels(format!("row {row}: expected 2 columns")));
        }
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Labels(format!("row {row}: `{s}` is not an index")))
        };
        let sample = parse(&record[0])?;
        let label = parse(&record[1])?;
        if sample >= n_samples {
            return Err(Error::Labels(format!(
                "sample {sample} out of range for {n_samples} samples"
            )));
        }
        if labels[sample].replace(label).is_some() {
            return Err(Error::Labels(format!("sample {sample} listed twice")));
        }
    }
    let labels = labels
        .into_iter()
        .enumerate()
        .map(|(i, l)| l.ok_or_else(|| Error::Labels(format!("sample {i} missing"))))
        .collect::<Result<Vec<_>>>()?;
    let class_count = labels.iter().max().map_or(0, |m| m + 1);
    let counts = class_counts(&labels, class_count);
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Labels(format!(
            "label gap: class {empty} has no samples"
        )));
    }
    Ok((labels, class_count))
}

pub fn load_labels(path: impl AsRef<Path>, n_samples: usize) -> Result<(Vec<usize>, usize)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&text, n_samples)
}

pub fn save_labels(labels: &[usize], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "sample,label").map_err(io)?;
    for (i, l) in labels.iter().enumerate() {
        writeln!(w, "{i},{l}").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads an optional class-names sidecar: one name per line, in class order.
pub fn load_class_names(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(|l| l.trim().to_string()).collect())
}

/// Loads features plus labels into a level-0 dataset.
pub fn load_dataset(features: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<LabeledDataset> {
    let f = load_features(features)?;
    let (labels, class_count) = load_labels(labels, f.n_samples())?;
    LabeledDataset::new(f, labels, 0, class_count)
}
