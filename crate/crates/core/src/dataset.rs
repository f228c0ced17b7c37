//! Datasets and the built-in synthetic generators.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Tensor, TensorShapeError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DatasetError {
    #[error("inputs hold {inputs} samples but targets hold {targets}")]
    SizeMismatch { inputs: usize, targets: usize },
    #[error("inputs need a leading batch dimension")]
    NoBatchDim,
    #[error(transparent)]
    Shape(#[from] TensorShapeError),
    #[error("invalid dataset spec `{0}` (expected kind:size:seed, kind one of blobs, xor-image)")]
    Spec(String),
    #[error("dataset size must be at least 1")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Targets {
    /// Class index per sample.
    Classes(Vec<usize>),
    /// Regression targets, shape `[batch, ..outputs]`.
    Values(Tensor),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(c) => c.len(),
            Targets::Values(t) => t.shape().first().copied().unwrap_or(0),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, indices: &[usize]) -> Targets {
        match self {
            Targets::Classes(c) => Targets::Classes(indices.iter().map(|&i| c[i]).collect()),
            Targets::Values(t) => Targets::Values(select_rows(t, indices)),
        }
    }
}

fn select_rows(t: &Tensor, indices: &[usize]) -> Tensor {
    let row: usize = t.shape()[1..].iter().product();
    let mut data = Vec::with_capacity(row * indices.len());
    for &i in indices {
        data.extend_from_slice(&t.data()[i * row..(i + 1) * row]);
    }
    let mut shape = t.shape().to_vec();
    shape[0] = indices.len();
    Tensor::new(shape, data).unwrap()
}

/// A batch of inputs with aligned targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    inputs: Tensor,
    targets: Targets,
}

impl Dataset {
    pub fn new(inputs: Tensor, targets: Targets) -> Result<Self, DatasetError> {
        let n = *inputs.shape().first().ok_or(DatasetError::NoBatchDim)?;
        if n != targets.len() {
            return Err(DatasetError::SizeMismatch {
                inputs: n,
                targets: targets.len(),
            });
        }
        Ok(Self { inputs, targets })
    }

    pub fn size(&self) -> usize {
        self.inputs.shape()[0]
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            inputs: select_rows(&self.inputs, indices),
            targets: self.targets.select(indices),
        }
    }

    /// Reinterprets each sample under `shape` (same element count).
    pub fn with_sample_shape(self, shape: &[usize]) -> Result<Self, DatasetError> {
        let mut full = vec![self.size()];
        full.extend_from_slice(shape);
        Ok(Self {
            inputs: self.inputs.reshape(&full)?,
            targets: self.targets,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    Blobs,
    XorImage,
}

/// `kind:size:seed`, e.g. `blobs:2000:7`. Serialized in the same string form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub size: usize,
    pub seed: u64,
}

impl fmt::Display for DatasetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            DatasetKind::Blobs => "blobs",
            DatasetKind::XorImage => "xor-image",
        };
        write!(f, "{kind}:{}:{}", self.size, self.seed)
    }
}

impl FromStr for DatasetSpec {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || DatasetError::Spec(s.to_string());
        let parts: Vec<&str> = s.split(':').collect();
        let [kind, size, seed] = parts.as_slice() else {
            return Err(bad());
        };
        let kind = match *kind {
            "blobs" => DatasetKind::Blobs,
            "xor-image" => DatasetKind::XorImage,
            _ => return Err(bad()),
        };
        Ok(Self {
            kind,
            size: size.parse().map_err(|_| bad())?,
            seed: seed.parse().map_err(|_| bad())?,
        })
    }
}

impl TryFrom<String> for DatasetSpec {
    type Error = DatasetError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<DatasetSpec> for String {
    fn from(spec: DatasetSpec) -> String {
        spec.to_string()
    }
}

impl DatasetSpec {
    pub fn generate(&self) -> Result<Dataset, DatasetError> {
        synth_dataset(self.kind, self.size, self.seed)
    }
}

pub const BLOB_CLASSES: usize = 4;
/// 64 features, so a blob sample can also be read as a 1x8x8 image.
pub const BLOB_FEATURES: usize = 64;
/// Per-coordinate standard deviation of the cluster centers.
pub const BLOB_CENTER_SCALE: f64 = 0.5;
const BLOB_CENTER_SEED: u64 = 0x0b10_b5ce_17e2;

pub const XOR_IMAGE_SIDE: usize = 8;
pub const XOR_IMAGE_NOISE: f64 = 0.25;

/// Deterministic synthetic classification data.
///
/// * `blobs`: [`BLOB_CLASSES`] isotropic unit-variance Gaussian clusters in
///   [`BLOB_FEATURES`] dimensions. Centers are fixed across seeds (so
///   different seeds are draws from one distribution); the seed picks
///   labels uniformly and then the noise. Inputs have shape `[size, 64]`.
/// * `xor-image`: `[size, 1, 8, 8]` images whose four 4x4 quadrants are each
///   lit (1.0) or dark (0.0) plus N(0, 0.25²) pixel noise; the class is the
///   parity of the number of lit quadrants.
pub fn synth_dataset(kind: DatasetKind, size: usize, seed: u64) -> Result<Dataset, DatasetError> {
    if size == 0 {
        return Err(DatasetError::Empty);
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    match kind {
        DatasetKind::Blobs => {
            let centers = blob_centers();
            let mut inputs = Vec::with_capacity(size * BLOB_FEATURES);
            let mut classes = Vec::with_capacity(size);
            for _ in 0..size {
                let class = rng.random_range(0..BLOB_CLASSES);
                classes.push(class);
                for f in 0..BLOB_FEATURES {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    inputs.push(centers[class * BLOB_FEATURES + f] + noise);
                }
            }
            Dataset::new(
                Tensor::new(vec![size, BLOB_FEATURES], inputs)?,
                Targets::Classes(classes),
            )
        }
        DatasetKind::XorImage => {
            let side = XOR_IMAGE_SIDE;
            let half = side / 2;
            let mut inputs = Vec::with_capacity(size * side * side);
            let mut classes = Vec::with_capacity(size);
            for _ in 0..size {
                let lit: [bool; 4] = std::array::from_fn(|_| rng.random_bool(0.5));
                classes.push(lit.iter().filter(|b| **b).count() % 2);
                for r in 0..side {
                    for c in 0..side {
                        let quadrant = (r / half) * 2 + c / half;
                        let base = if lit[quadrant] { 1.0 } else { 0.0 };
                        let noise: f64 = StandardNormal.sample(&mut rng);
                        inputs.push(base + XOR_IMAGE_NOISE * noise);
                    }
                }
            }
            Dataset::new(
                Tensor::new(vec![size, 1, side, side], inputs)?,
                Targets::Classes(classes),
            )
        }
    }
}

fn blob_centers() -> Vec<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(BLOB_CENTER_SEED);
    (0..BLOB_CLASSES * BLOB_FEATURES)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            BLOB_CENTER_SCALE * z
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_data() {
        for kind in [DatasetKind::Blobs, DatasetKind::XorImage] {
            let a = synth_dataset(kind, 50, 3).unwrap();
            let b = synth_dataset(kind, 50, 3).unwrap();
            assert!(a.inputs().bit_eq(b.inputs()));
            assert_eq!(a.targets(), b.targets());
            let c = synth_dataset(kind, 50, 4).unwrap();
            assert!(!a.inputs().bit_eq(c.inputs()));
        }
    }

    #[test]
    fn shapes_and_labels() {
        let blobs = synth_dataset(DatasetKind::Blobs, 2000, 1).unwrap();
        assert_eq!(blobs.inputs().shape(), &[2000, 64]);
        let Targets::Classes(c) = blobs.targets() else { panic!() };
        for k in 0..BLOB_CLASSES {
            let n = c.iter().filter(|v| **v == k).count();
            assert!(n > 400 && n < 600, "class {k}: {n}");
        }
        let img = synth_dataset(DatasetKind::XorImage, 10, 1).unwrap();
        assert_eq!(img.inputs().shape(), &[10, 1, 8, 8]);
    }

    #[test]
    fn xor_label_is_quadrant_parity() {
        let d = synth_dataset(DatasetKind::XorImage, 200, 11).unwrap();
        let Targets::Classes(c) = d.targets() else { panic!() };
        for (s, &class) in c.iter().enumerate() {
            let px = &d.inputs().data()[s * 64..(s + 1) * 64];
            let lit = (0..4)
                .filter(|q| {
                    let (r0, c0) = ((q / 2) * 4, (q % 2) * 4);
                    let mean: f64 = (0..16).map(|k| px[(r0 + k / 4) * 8 + c0 + k % 4]).sum::<f64>() / 16.0;
                    mean > 0.5
                })
                .count();
            assert_eq!(lit % 2, class);
        }
    }

    #[test]
    fn spec_parsing() {
        let s: DatasetSpec = "xor-image:300:42".parse().unwrap();
        assert_eq!(s, DatasetSpec { kind: DatasetKind::XorImage, size: 300, seed: 42 });
        assert_eq!(s.to_string(), "xor-image:300:42");
        assert!("blobs:10".parse::<DatasetSpec>().is_err());
        assert!("moons:10:1".parse::<DatasetSpec>().is_err());
        assert_eq!(synth_dataset(DatasetKind::Blobs, 0, 1).unwrap_err(), DatasetError::Empty);
    }

    #[test]
    fn select_and_reshape() {
        let d = synth_dataset(DatasetKind::Blobs, 10, 2).unwrap();
        let s = d.select(&[3, 1]);
        assert_eq!(s.size(), 2);
        assert_eq!(&s.inputs().data()[..64], &d.inputs().data()[3 * 64..4 * 64]);
        let img = s.with_sample_shape(&[1, 8, 8]).unwrap();
        assert_eq!(img.sample_shape(), &[1, 8, 8]);
        assert!(d.with_sample_shape(&[1, 7, 7]).is_err());
    }
}
