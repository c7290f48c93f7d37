//! Labelled datasets: synthetic Gaussian blobs and MNIST-style IDX files.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Vec<Vec<f64>>,
    labels: Vec<usize>,
    classes: usize,
}

impl Dataset {
    pub fn new(inputs: Vec<Vec<f64>>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::InvalidInput("dataset is empty".into()));
        }
        if inputs.len() != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} inputs and {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        let dim = inputs[0].len();
        if dim == 0 || inputs.iter().any(|x| x.len() != dim) {
            return Err(Error::ShapeMismatch(
                "inputs must share one positive length".into(),
            ));
        }
        if let Some(l) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidInput(format!(
                "label {l} outside [0, {classes})"
            )));
        }
        Ok(Self {
            inputs,
            labels,
            classes,
        })
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn input_dim(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// First `n` samples (or all of them).
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.clamp(1, self.len());
        Self {
            inputs: self.inputs[..n].to_vec(),
            labels: self.labels[..n].to_vec(),
            classes: self.classes,
        }
    }

    pub fn label_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.classes];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }
}

/// Isotropic Gaussian blobs around the vertices of a scaled, centred
/// simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub input_dim: usize,
    pub per_class: usize,
    /// Per-coordinate standard deviation around each class mean.
    pub spread: f64,
    /// Distance of each vertex from the origin before centring.
    #[serde(default = "default_separation")]
    pub separation: f64,
}

fn default_separation() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSpec {
    Synthetic(SyntheticSpec),
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        limit: Option<usize>,
    },
}

impl DatasetSpec {
    /// Build the dataset; `seed` only matters for synthetic data.
    pub fn build(&self, seed: u64) -> Result<Dataset> {
        match self {
            DatasetSpec::Synthetic(spec) => make_synthetic(spec, seed),
            DatasetSpec::Idx {
                images,
                labels,
                limit,
            } => {
                let ds = load_idx(images, labels)?;
                Ok(match limit {
                    Some(n) => ds.truncated(*n),
                    None => ds,
                })
            }
        }
    }
}

/// Samples are interleaved by class: sample `n` has label `n % classes`.
pub fn make_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Dataset> {
    if spec.classes < 2 {
        return Err(Error::InvalidInput("need at least 2 classes".into()));
    }
    if spec.input_dim < spec.classes {
        return Err(Error::InvalidInput(format!(
            "input_dim {} must be at least the class count {}",
            spec.input_dim, spec.classes
        )));
    }
    if spec.per_class == 0 {
        return Err(Error::InvalidInput("per_class must be positive".into()));
    }
    if !(spec.spread >= 0.0 && spec.spread.is_finite()) || !(spec.separation > 0.0) {
        return Err(Error::InvalidInput(
            "spread must be >= 0 and separation > 0".into(),
        ));
    }
    let c = spec.classes;
    let centre = spec.separation / c as f64;
    let means: Vec<Vec<f64>> = (0..c)
        .map(|k| {
            (0..spec.input_dim)
                .map(|j| match j {
                    j if j == k => spec.separation - centre,
                    j if j < c => -centre,
                    _ => 0.0,
                })
                .collect()
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Vec::with_capacity(c * spec.per_class);
    let mut labels = Vec::with_capacity(c * spec.per_class);
    for _ in 0..spec.per_class {
        for (k, mean) in means.iter().enumerate() {
            inputs.push(
                mean.iter()
                    .map(|m| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        m + spec.spread * z
                    })
                    .collect(),
            );
            labels.push(k);
        }
    }
    Dataset::new(inputs, labels, c)
}

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Parse(format!("{what}: truncated header")))
}

/// Parse an IDX image/label pair held in memory. Pixels are scaled to
/// `[0, 1]`; images are flattened row-major.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let magic = be_u32(images, 0, "images")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Parse(format!("images: bad magic {magic:#010x}")));
    }
    let magic = be_u32(labels, 0, "labels")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Parse(format!("labels: bad magic {magic:#010x}")));
    }
    let n = be_u32(images, 4, "images")? as usize;
    let rows = be_u32(images, 8, "images")? as usize;
    let cols = be_u32(images, 12, "images")? as usize;
    let n_labels = be_u32(labels, 4, "labels")? as usize;
    if n != n_labels {
        return Err(Error::Parse(format!("{n} images but {n_labels} labels")));
    }
    let pixels = rows * cols;
    let body = &images[16..];
    if body.len() < n * pixels {
        return Err(Error::Parse(format!(
            "images: expected {} pixel bytes, found {}",
            n * pixels,
            body.len()
        )));
    }
    let label_body = &labels[8..];
    if label_body.len() < n {
        return Err(Error::Parse(format!(
            "labels: expected {n} bytes, found {}",
            label_body.len()
        )));
    }
    let inputs = body[..n * pixels]
        .chunks(pixels.max(1))
        .map(|img| img.iter().map(|&p| f64::from(p) / 255.0).collect())
        .collect();
    let labels: Vec<usize> = label_body[..n].iter().map(|&l| usize::from(l)).collect();
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1).max(2);
    Dataset::new(inputs, labels, classes)
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = std::fs::read(images_path)?;
    let labels = std::fs::read(labels_path)?;
    parse_idx(&images, &labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(spread: f64) -> SyntheticSpec {
        SyntheticSpec {
            classes: 4,
            input_dim: 6,
            per_class: 25,
            spread,
            separation: 2.0,
        }
    }

    #[test]
    fn synthetic_is_deterministic_and_balanced() {
        let a = make_synthetic(&spec(0.5), 1).unwrap();
        assert_eq!(a, make_synthetic(&spec(0.5), 1).unwrap());
        assert_ne!(a, make_synthetic(&spec(0.5), 2).unwrap());
        assert_eq!(a.label_histogram(), vec![25; 4]);
        assert_eq!(a.input_dim(), 6);
    }

    #[test]
    fn synthetic_rejects_bad_specs() {
        let mut s = spec(0.5);
        s.classes = 1;
        assert!(make_synthetic(&s, 0).is_err());
        let mut s = spec(0.5);
        s.input_dim = 3;
        assert!(make_synthetic(&s, 0).is_err());
        let mut s = spec(0.5);
        s.per_class = 0;
        assert!(make_synthetic(&s, 0).is_err());
    }

    #[test]
    fn zero_spread_is_linearly_separable() {
        // the nearest-mean rule is linear; with zero spread it is exact
        let ds = make_synthetic(&spec(0.0), 3).unwrap();
        for (x, &y) in ds.inputs().iter().zip(ds.labels()) {
            let score = |k: usize| x[k];
            let best = (0..4)
                .max_by(|&a, &b| score(a).total_cmp(&score(b)))
                .unwrap();
            assert_eq!(best, y);
        }
    }

    fn idx_fixture(n: u32, rows: u32, cols: u32) -> (Vec<u8>, Vec<u8>) {
        let mut images = Vec::new();
        images.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
        images.extend_from_slice(&n.to_be_bytes());
        images.extend_from_slice(&rows.to_be_bytes());
        images.extend_from_slice(&cols.to_be_bytes());
        for i in 0..n * rows * cols {
            images.push((i % 256) as u8);
        }
        let mut labels = Vec::new();
        labels.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        labels.extend_from_slice(&n.to_be_bytes());
        for i in 0..n {
            labels.push((i * 7 % 10) as u8);
        }
        (images, labels)
    }

    #[test]
    fn idx_pair_parses() {
        let (img, lab) = idx_fixture(2, 2, 3);
        let ds = parse_idx(&img, &lab).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.input_dim(), 6);
        assert_eq!(ds.labels(), &[0, 7]);
        assert_eq!(ds.inputs()[0][1], 1.0 / 255.0);
        assert!(ds
            .inputs()
            .iter()
            .flatten()
            .all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn mnist_shape_flattens_to_784() {
        let (img, lab) = idx_fixture(2, 28, 28);
        assert_eq!(parse_idx(&img, &lab).unwrap().input_dim(), 784);
    }

    #[test]
    fn idx_errors() {
        let (mut img, lab) = idx_fixture(2, 2, 2);
        img[3] = 0x01;
        assert!(matches!(parse_idx(&img, &lab), Err(Error::Parse(_))));
        let (img, mut lab) = idx_fixture(2, 2, 2);
        lab[3] = 0x03;
        assert!(parse_idx(&img, &lab).is_err());
        let (img, lab) = idx_fixture(3, 2, 2);
        assert!(parse_idx(&img[..img.len() - 1], &lab).is_err());
        let (img, _) = idx_fixture(3, 2, 2);
        let (_, lab2) = idx_fixture(2, 2, 2);
        assert!(parse_idx(&img, &lab2).is_err());
        assert!(parse_idx(&img[..6], &lab2).is_err());
    }

    #[test]
    fn idx_files_load() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = idx_fixture(2, 2, 2);
        let ip = dir.path().join("img.idx");
        let lp = dir.path().join("lab.idx");
        std::fs::write(&ip, img).unwrap();
        std::fs::write(&lp, lab).unwrap();
        assert_eq!(load_idx(&ip, &lp).unwrap().len(), 2);
        assert!(matches!(
            load_idx(&dir.path().join("nope"), &lp),
            Err(Error::Io(_))
        ));
    }
}
