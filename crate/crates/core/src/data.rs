//! Datasets: IDX and CIFAR binary ingestion, reference writers, and the
//! synthetic two-moons / Gaussian-blob generators.
//!
//! Every loader scales raw bytes to `[0, 1]` by dividing by 255.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::Batch;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const CIFAR_PIXELS: usize = 3072;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(inputs: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if inputs.rows() != labels.len() {
            return Err(Error::CountMismatch {
                images: inputs.rows(),
                labels: labels.len(),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange { label, num_classes });
        }
        Ok(Self {
            inputs,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> usize {
        self.inputs.cols()
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        Batch::new(
            self.inputs.select_rows(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.num_classes,
        )
    }

    pub fn as_batch(&self) -> Result<Batch> {
        Batch::new(self.inputs.clone(), self.labels.clone(), self.num_classes)
    }

    /// First `n` samples.
    pub fn take(&self, n: usize) -> Result<Self> {
        if n > self.len() {
            return Err(Error::InvalidConfig(format!(
                "subset of {n} requested from {} samples",
                self.len()
            )));
        }
        let idx: Vec<usize> = (0..n).collect();
        Ok(Self {
            inputs: self.inputs.select_rows(&idx),
            labels: self.labels[..n].to_vec(),
            num_classes: self.num_classes,
        })
    }

    /// Concatenates datasets with the same feature count.
    pub fn concat(parts: Vec<Dataset>) -> Result<Self> {
        let mut iter = parts.into_iter();
        let Some(first) = iter.next() else {
            return Err(Error::EmptyDataset);
        };
        let cols = first.features();
        let mut num_classes = first.num_classes;
        let mut rows = first.inputs.rows();
        let mut data = first.inputs.into_vec();
        let mut labels = first.labels;
        for d in iter {
            if d.features() != cols && !d.is_empty() {
                return Err(Error::ShapeMismatch(format!(
                    "cannot concatenate {} and {} features",
                    cols,
                    d.features()
                )));
            }
            num_classes = num_classes.max(d.num_classes);
            rows += d.inputs.rows();
            data.extend_from_slice(d.inputs.as_slice());
            labels.extend(d.labels);
        }
        Dataset::new(Matrix::from_vec(rows, cols, data)?, labels, num_classes)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub train: Dataset,
    pub test: Dataset,
    pub num_classes: usize,
    pub features: usize,
}

impl DatasetBundle {
    pub fn new(train: Dataset, test: Dataset) -> Result<Self> {
        if !train.is_empty() && !test.is_empty() && train.features() != test.features() {
            return Err(Error::ShapeMismatch(format!(
                "train has {} features, test has {}",
                train.features(),
                test.features()
            )));
        }
        let num_classes = train.num_classes.max(test.num_classes);
        let features = if train.is_empty() {
            test.features()
        } else {
            train.features()
        };
        Ok(Self {
            train: Dataset { num_classes, ..train },
            test: Dataset { num_classes, ..test },
            num_classes,
            features,
        })
    }

    pub fn subset(&self, train_n: usize, test_n: usize) -> Result<Self> {
        Self::new(self.train.take(train_n)?, self.test.take(test_n)?)
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Truncated {
            path: path.to_path_buf(),
            needed: offset + 4,
            actual: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let found = be_u32(bytes, 0, path)?;
    if found != expected {
        return Err(Error::WrongMagic {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    Ok(())
}

/// Parsed IDX image file: `count` images of `rows × cols`, scaled to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Matrix,
}

pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<IdxImages> {
    check_magic(bytes, IDX_IMAGES_MAGIC, path)?;
    let count = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    let size = rows * cols;
    let needed = 16 + count * size;
    if bytes.len() < needed {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            needed,
            actual: bytes.len(),
        });
    }
    let data = bytes[16..needed].iter().map(|&b| f64::from(b) / 255.0).collect();
    Ok(IdxImages {
        rows,
        cols,
        pixels: Matrix::from_vec(count, size, data)?,
    })
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<usize>> {
    check_magic(bytes, IDX_LABELS_MAGIC, path)?;
    let count = be_u32(bytes, 4, path)? as usize;
    let needed = 8 + count;
    if bytes.len() < needed {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            needed,
            actual: bytes.len(),
        });
    }
    Ok(bytes[8..needed].iter().map(|&b| usize::from(b)).collect())
}

/// Loads an IDX image/label pair. The class count is one past the largest label.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = parse_idx_images(&read_file(images_path)?, images_path)?;
    let labels = parse_idx_labels(&read_file(labels_path)?, labels_path)?;
    if images.pixels.rows() != labels.len() {
        return Err(Error::CountMismatch {
            images: images.pixels.rows(),
            labels: labels.len(),
        });
    }
    let num_classes = labels.iter().max().map_or(0, |&m| m + 1);
    Dataset::new(images.pixels, labels, num_classes)
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes images (`count × rows·cols`, values in `[0, 1]`) as an IDX image file.
pub fn encode_idx_images(pixels: &Matrix, rows: usize, cols: usize) -> Result<Vec<u8>> {
    if pixels.cols() != rows * cols {
        return Err(Error::ShapeMismatch(format!(
            "{} features cannot form {rows}x{cols} images",
            pixels.cols()
        )));
    }
    let mut out = Vec::with_capacity(16 + pixels.as_slice().len());
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    for v in [pixels.rows(), rows, cols] {
        out.extend_from_slice(&(v as u32).to_be_bytes());
    }
    out.extend(pixels.as_slice().iter().map(|&v| to_byte(v)));
    Ok(out)
}

pub fn encode_idx_labels(labels: &[usize]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    for &l in labels {
        let b = u8::try_from(l).map_err(|_| Error::LabelOutOfRange {
            label: l,
            num_classes: 256,
        })?;
        out.push(b);
    }
    Ok(out)
}

/// Writes `data` as an IDX pair of `rows × cols` images.
pub fn write_idx(data: &Dataset, rows: usize, cols: usize, images_path: &Path, labels_path: &Path) -> Result<()> {
    fs::write(images_path, encode_idx_images(&data.inputs, rows, cols)?)
        .map_err(|e| Error::io(images_path, e))?;
    fs::write(labels_path, encode_idx_labels(&data.labels)?).map_err(|e| Error::io(labels_path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CifarVariant {
    /// One label byte per record.
    Cifar10,
    /// Coarse then fine label byte per record; the fine label is used.
    Cifar100,
}

impl CifarVariant {
    pub fn record_len(self) -> usize {
        self.label_bytes() + CIFAR_PIXELS
    }

    fn label_bytes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 1,
            CifarVariant::Cifar100 => 2,
        }
    }

    pub fn num_classes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 10,
            CifarVariant::Cifar100 => 100,
        }
    }
}

pub fn parse_cifar_binary(bytes: &[u8], variant: CifarVariant, path: &Path) -> Result<Dataset> {
    let record = variant.record_len();
    if !bytes.len().is_multiple_of(record) {
        return Err(Error::RecordSize {
            path: path.to_path_buf(),
            len: bytes.len(),
            record,
        });
    }
    let count = bytes.len() / record;
    let mut data = Vec::with_capacity(count * CIFAR_PIXELS);
    let mut labels = Vec::with_capacity(count);
    let label_bytes = variant.label_bytes();
    for rec in bytes.chunks_exact(record) {
        labels.push(usize::from(rec[label_bytes - 1]));
        data.extend(rec[label_bytes..].iter().map(|&b| f64::from(b) / 255.0));
    }
    Dataset::new(
        Matrix::from_vec(count, CIFAR_PIXELS, data)?,
        labels,
        variant.num_classes(),
    )
}

/// Loads and concatenates CIFAR binary batch files.
pub fn load_cifar_binary(paths: &[PathBuf], variant: CifarVariant) -> Result<Dataset> {
    let parts = paths
        .iter()
        .map(|p| parse_cifar_binary(&read_file(p)?, variant, p))
        .collect::<Result<Vec<_>>>()?;
    if parts.is_empty() {
        return Dataset::new(Matrix::zeros(0, CIFAR_PIXELS), vec![], variant.num_classes());
    }
    Dataset::concat(parts)
}

/// Encodes a CIFAR binary file. `coarse` supplies CIFAR-100 coarse labels
/// (zeros when absent).
pub fn encode_cifar_binary(data: &Dataset, variant: CifarVariant, coarse: Option<&[usize]>) -> Result<Vec<u8>> {
    if data.features() != CIFAR_PIXELS && !data.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "CIFAR records need {CIFAR_PIXELS} features, got {}",
            data.features()
        )));
    }
    let mut out = Vec::with_capacity(data.len() * variant.record_len());
    for (i, &label) in data.labels.iter().enumerate() {
        let byte = |l: usize| {
            u8::try_from(l).map_err(|_| Error::LabelOutOfRange {
                label: l,
                num_classes: 256,
            })
        };
        if variant == CifarVariant::Cifar100 {
            out.push(byte(coarse.map_or(0, |c| c[i]))?);
        }
        out.push(byte(label)?);
        out.extend(data.inputs.row(i).iter().map(|&v| to_byte(v)));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SyntheticKind {
    TwoMoons,
    GaussianBlobs { classes: usize },
}

impl FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two_moons" | "moons" => Ok(SyntheticKind::TwoMoons),
            "blobs" | "gaussian_blobs" => Ok(SyntheticKind::GaussianBlobs { classes: 3 }),
            other => Err(Error::Unknown {
                what: "synthetic dataset",
                name: other.into(),
                valid: "two_moons, blobs".into(),
            }),
        }
    }
}

/// Two-moons coordinates occupy roughly `[-1, 2] × [-0.5, 1]`; this box,
/// padded for noise, is mapped affinely onto `[0, 1]²`.
const MOONS_BOX: [(f64, f64); 2] = [(-1.5, 2.5), (-1.0, 1.5)];
const BLOB_RADIUS: f64 = 0.3;

/// Deterministic 2-D synthetic data, shuffled and split 80/20 into train/test.
pub fn make_synthetic(kind: SyntheticKind, n: usize, noise: f64, seed: u64) -> Result<DatasetBundle> {
    if !(noise >= 0.0) {
        return Err(Error::InvalidConfig(format!("noise {noise} must be >= 0")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let jitter = |rng: &mut ChaCha8Rng| if noise > 0.0 { normal.sample(rng) } else { 0.0 };

    let mut samples: Vec<([f64; 2], usize)> = Vec::with_capacity(n);
    let num_classes = match kind {
        SyntheticKind::TwoMoons => {
            let outer = n / 2;
            let inner = n - outer;
            let angle = |i: usize, m: usize| if m > 1 { PI * i as f64 / (m - 1) as f64 } else { 0.0 };
            for i in 0..outer {
                let t = angle(i, outer);
                samples.push(([t.cos(), t.sin()], 0));
            }
            for i in 0..inner {
                let t = angle(i, inner);
                samples.push(([1.0 - t.cos(), 0.5 - t.sin()], 1));
            }
            for (p, _) in samples.iter_mut() {
                for (d, (lo, hi)) in MOONS_BOX.iter().enumerate() {
                    p[d] = ((p[d] + jitter(&mut rng) - lo) / (hi - lo)).clamp(0.0, 1.0);
                }
            }
            2
        }
        SyntheticKind::GaussianBlobs { classes } => {
            if classes < 2 {
                return Err(Error::InvalidConfig("blobs need at least 2 classes".into()));
            }
            for i in 0..n {
                let c = i % classes;
                let a = 2.0 * PI * c as f64 / classes as f64;
                let center = [0.5 + BLOB_RADIUS * a.cos(), 0.5 + BLOB_RADIUS * a.sin()];
                let p = [
                    (center[0] + jitter(&mut rng)).clamp(0.0, 1.0),
                    (center[1] + jitter(&mut rng)).clamp(0.0, 1.0),
                ];
                samples.push((p, c));
            }
            classes
        }
    };
    samples.shuffle(&mut rng);

    let n_train = n * 4 / 5;
    let split = |part: &[([f64; 2], usize)]| {
        let data = part.iter().flat_map(|(p, _)| p.iter().copied()).collect();
        let labels = part.iter().map(|&(_, l)| l).collect();
        Dataset::new(Matrix::from_vec(part.len(), 2, data)?, labels, num_classes)
    };
    DatasetBundle::new(split(&samples[..n_train])?, split(&samples[n_train..])?)
}
