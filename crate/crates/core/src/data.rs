//! Labeled datasets, clean and corrupted.
//!
//! # Binary layout of a [`NoisyDataset`]
//!
//! All integers and floats are little-endian.
//!
//! | field          | type          |
//! |----------------|---------------|
//! | magic          | `b"SFTDATA1"` |
//! | n              | `u64`         |
//! | d              | `u32`         |
//! | K              | `u32`         |
//! | noise kind     | `u8` (0 none, 1 symmetric, 2 pair, 3 instance) |
//! | noise ratio    | `f64`         |
//! | true labels    | `n x u32`     |
//! | given labels   | `n x u32`     |
//! | noise mask     | `n x u8`      |
//! | features       | `n*d x f64`, row-major |
//!
//! The audit CSV has the header `index,true_label,given_label,noisy,x0,...`
//! with `noisy` written as 0 or 1.

use std::io::{Read, Write};

use crate::error::{Result, SftError};
use crate::noise::NoiseKind;
use crate::tensor::Matrix;

const DATASET_MAGIC: &[u8; 8] = b"SFTDATA1";

/// A clean labeled dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(SftError::shape(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if num_classes < 2 {
            return Err(SftError::Data(format!("need at least 2 classes, got {num_classes}")));
        }
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= num_classes) {
            return Err(SftError::Data(format!(
                "label {y} of example {i} out of range for {num_classes} classes"
            )));
        }
        Ok(Dataset {
            features,
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

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Pairs every example with itself as given label and no noise.
    pub fn into_noiseless(self) -> NoisyDataset {
        NoisyDataset {
            given_labels: self.labels.clone(),
            noise_mask: vec![false; self.labels.len()],
            true_labels: self.labels,
            features: self.features,
            num_classes: self.num_classes,
            kind: NoiseKind::None,
            noise_ratio: 0.0,
        }
    }
}

/// One training example, borrowed from a [`NoisyDataset`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabeledExample<'a> {
    pub index: usize,
    pub features: &'a [f64],
    pub given_label: usize,
    pub true_label: usize,
}

impl LabeledExample<'_> {
    pub fn is_noisy(&self) -> bool {
        self.given_label != self.true_label
    }
}

/// Training set with possibly corrupted labels and the hidden truth.
///
/// Example indices are the dense range `0..len()`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisyDataset {
    features: Matrix,
    true_labels: Vec<usize>,
    given_labels: Vec<usize>,
    noise_mask: Vec<bool>,
    num_classes: usize,
    kind: NoiseKind,
    noise_ratio: f64,
}

impl NoisyDataset {
    pub fn from_parts(
        clean: Dataset,
        given_labels: Vec<usize>,
        kind: NoiseKind,
        noise_ratio: f64,
    ) -> Result<Self> {
        if given_labels.len() != clean.len() {
            return Err(SftError::shape(format!(
                "{} given labels for {} examples",
                given_labels.len(),
                clean.len()
            )));
        }
        if let Some(&y) = given_labels.iter().find(|&&y| y >= clean.num_classes) {
            return Err(SftError::Data(format!("given label {y} out of range")));
        }
        let noise_mask = clean
            .labels
            .iter()
            .zip(&given_labels)
            .map(|(t, g)| t != g)
            .collect();
        Ok(NoisyDataset {
            features: clean.features,
            true_labels: clean.labels,
            given_labels,
            noise_mask,
            num_classes: clean.num_classes,
            kind,
            noise_ratio,
        })
    }

    pub fn len(&self) -> usize {
        self.true_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.true_labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn true_labels(&self) -> &[usize] {
        &self.true_labels
    }

    pub fn given_labels(&self) -> &[usize] {
        &self.given_labels
    }

    /// `true` where the given label differs from the true label.
    pub fn noise_mask(&self) -> &[bool] {
        &self.noise_mask
    }

    pub fn clean_mask(&self) -> Vec<bool> {
        self.noise_mask.iter().map(|&n| !n).collect()
    }

    pub fn kind(&self) -> NoiseKind {
        self.kind
    }

    /// Declared (target) noise ratio.
    pub fn noise_ratio(&self) -> f64 {
        self.noise_ratio
    }

    /// Realized fraction of corrupted labels.
    pub fn noise_fraction(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.noise_mask.iter().filter(|&&n| n).count() as f64 / self.len() as f64
    }

    pub fn example(&self, index: usize) -> LabeledExample<'_> {
        LabeledExample {
            index,
            features: self.features.row(index),
            given_label: self.given_labels[index],
            true_label: self.true_labels[index],
        }
    }

    pub fn examples(&self) -> impl Iterator<Item = LabeledExample<'_>> {
        (0..self.len()).map(|i| self.example(i))
    }

    /// The underlying clean dataset.
    pub fn clean(&self) -> Dataset {
        Dataset {
            features: self.features.clone(),
            labels: self.true_labels.clone(),
            num_classes: self.num_classes,
        }
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(DATASET_MAGIC)?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        w.write_all(&(self.dim() as u32).to_le_bytes())?;
        w.write_all(&(self.num_classes as u32).to_le_bytes())?;
        w.write_all(&[self.kind.code()])?;
        w.write_all(&self.noise_ratio.to_le_bytes())?;
        for &y in &self.true_labels {
            w.write_all(&(y as u32).to_le_bytes())?;
        }
        for &y in &self.given_labels {
            w.write_all(&(y as u32).to_le_bytes())?;
        }
        for &m in &self.noise_mask {
            w.write_all(&[u8::from(m)])?;
        }
        for v in self.features.as_slice() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(r: R) -> Result<Self> {
        let mut r = OffsetReader { inner: r, offset: 0 };
        let magic: [u8; 8] = r.array()?;
        if &magic != DATASET_MAGIC {
            return Err(SftError::Format {
                offset: 0,
                message: "bad dataset magic".into(),
            });
        }
        let n = u64::from_le_bytes(r.array()?) as usize;
        let d = u32::from_le_bytes(r.array()?) as usize;
        let k = u32::from_le_bytes(r.array()?) as usize;
        let kind_offset = r.offset;
        let [code] = r.array::<1>()?;
        let kind = NoiseKind::from_code(code).ok_or_else(|| SftError::Format {
            offset: kind_offset,
            message: format!("unknown noise kind code {code}"),
        })?;
        let noise_ratio = f64::from_le_bytes(r.array()?);
        let read_labels = |r: &mut OffsetReader<R>| -> Result<Vec<usize>> {
            (0..n)
                .map(|_| Ok(u32::from_le_bytes(r.array()?) as usize))
                .collect()
        };
        let true_labels = read_labels(&mut r)?;
        let given_labels = read_labels(&mut r)?;
        let mask_offset = r.offset;
        let mut stored_mask = Vec::with_capacity(n);
        for _ in 0..n {
            let [m] = r.array::<1>()?;
            stored_mask.push(m != 0);
        }
        let mut features = Vec::with_capacity(n * d);
        for _ in 0..n * d {
            features.push(f64::from_le_bytes(r.array()?));
        }
        let clean = Dataset::new(Matrix::from_vec(n, d, features)?, true_labels, k)?;
        let ds = NoisyDataset::from_parts(clean, given_labels, kind, noise_ratio)?;
        if ds.noise_mask != stored_mask {
            return Err(SftError::Format {
                offset: mask_offset,
                message: "stored noise mask disagrees with the label columns".into(),
            });
        }
        Ok(ds)
    }

    pub fn write_audit_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "index,true_label,given_label,noisy")?;
        for j in 0..self.dim() {
            write!(w, ",x{j}")?;
        }
        writeln!(w)?;
        for ex in self.examples() {
            write!(
                w,
                "{},{},{},{}",
                ex.index,
                ex.true_label,
                ex.given_label,
                u8::from(ex.is_noisy())
            )?;
            for v in ex.features {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

struct OffsetReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> OffsetReader<R> {
    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => SftError::Format {
                offset: self.offset,
                message: "unexpected end of file".into(),
            },
            _ => SftError::Io(e),
        })?;
        self.offset += N as u64;
        Ok(buf)
    }
}
