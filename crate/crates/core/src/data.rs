//! CIFAR-10 binary batches and a synthetic stand-in.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{purpose, stream};
use crate::tensor::Tensor4;

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_PIXELS: usize = 3 * CIFAR_SIDE * CIFAR_SIDE;
pub const CIFAR_RECORD: usize = 1 + CIFAR_PIXELS;
pub const CIFAR_CLASSES: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `(n, 3, h, w)`, values in `[0, 1]`.
    pub images: Tensor4,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(images: Tensor4, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if images.n() != labels.len() {
            return Err(Error::Format(format!(
                "{} images but {} labels",
                images.n(),
                labels.len()
            )));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Label { label, classes });
        }
        Ok(Self {
            images,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            images: self.images.gather(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }

    /// First `n` items and the rest.
    pub fn split_at(&self, n: usize) -> (Self, Self) {
        let n = n.min(self.len());
        let head: Vec<usize> = (0..n).collect();
        let tail: Vec<usize> = (n..self.len()).collect();
        (self.subset(&head), self.subset(&tail))
    }

    /// Serializes as CIFAR-10 binary records (pixels rounded to bytes).
    pub fn to_cifar_bytes(&self) -> Result<Vec<u8>> {
        if self.images.shape()[1..] != [3, CIFAR_SIDE, CIFAR_SIDE] {
            return Err(Error::Format(format!(
                "CIFAR records need 3x32x32 images, have {:?}",
                self.images.shape()
            )));
        }
        let mut out = Vec::with_capacity(self.len() * CIFAR_RECORD);
        for (i, &label) in self.labels.iter().enumerate() {
            out.push(u8::try_from(label).map_err(|_| Error::Label {
                label,
                classes: 256,
            })?);
            out.extend(
                self.images
                    .sample(i)
                    .iter()
                    .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
            );
        }
        Ok(out)
    }
}

/// Parses concatenated CIFAR-10 binary records.
pub fn parse_cifar10(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() % CIFAR_RECORD != 0 {
        return Err(Error::Format(format!(
            "length {} is not a multiple of the {CIFAR_RECORD}-byte record size",
            bytes.len()
        )));
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut data = Vec::with_capacity(n * CIFAR_PIXELS);
    let mut labels = Vec::with_capacity(n);
    for record in bytes.chunks_exact(CIFAR_RECORD) {
        labels.push(record[0] as usize);
        data.extend(record[1..].iter().map(|&b| f64::from(b) / 255.0));
    }
    Dataset::new(
        Tensor4::from_vec([n, 3, CIFAR_SIDE, CIFAR_SIDE], data)?,
        labels,
        CIFAR_CLASSES,
    )
}

/// Loads and concatenates CIFAR-10 binary batch files.
pub fn load_cifar10<P: AsRef<Path>>(paths: &[P]) -> Result<Dataset> {
    let mut bytes = Vec::new();
    for path in paths {
        let path = path.as_ref();
        let chunk = std::fs::read(path).map_err(|e| {
            Error::Io(std::io::Error::new(
                e.kind(),
                format!("{}: {e}", path.display()),
            ))
        })?;
        if chunk.len() % CIFAR_RECORD != 0 {
            return Err(Error::Format(format!(
                "{}: length {} is not a multiple of {CIFAR_RECORD}",
                path.display(),
                chunk.len()
            )));
        }
        bytes.extend_from_slice(&chunk);
    }
    parse_cifar10(&bytes)
}

/// Standard file names inside `cifar-10-batches-bin/`.
pub fn cifar10_files(dir: &Path) -> (Vec<std::path::PathBuf>, std::path::PathBuf) {
    let train = (1..=5)
        .map(|i| dir.join(format!("data_batch_{i}.bin")))
        .collect();
    (train, dir.join("test_batch.bin"))
}

struct Blob {
    cy: f64,
    cx: f64,
    radius: f64,
    color: [f64; 3],
}

/// Class-conditioned Gaussian blobs on a grey background plus pixel noise.
///
/// Each class owns three blobs with fixed colors; samples jitter blob
/// positions and add i.i.d. pixel noise. Fully determined by `seed`.
pub fn gen_synthetic(seed: u64, n: usize, classes: usize, size: usize) -> Result<Dataset> {
    if classes == 0 {
        return Err(Error::Config("synthetic dataset needs at least one class".into()));
    }
    let mut proto_rng = stream(seed, &[purpose::DATA, 0]);
    let s = size as f64;
    let prototypes: Vec<Vec<Blob>> = (0..classes)
        .map(|_| {
            (0..3)
                .map(|_| Blob {
                    cy: proto_rng.random_range(0.2..0.8) * s,
                    cx: proto_rng.random_range(0.2..0.8) * s,
                    radius: proto_rng.random_range(0.08..0.2) * s,
                    color: [
                        proto_rng.random_range(-0.45..0.45),
                        proto_rng.random_range(-0.45..0.45),
                        proto_rng.random_range(-0.45..0.45),
                    ],
                })
                .collect()
        })
        .collect();
    let mut sample_rng = stream(seed, &[purpose::DATA, 1]);
    let plane = size * size;
    let mut data = vec![0.0; n * 3 * plane];
    let mut labels = Vec::with_capacity(n);
    for (i, img) in data.chunks_mut(3 * plane).enumerate() {
        let label = i % classes;
        labels.push(label);
        let jitter = 0.06 * s;
        let shifted: Vec<(f64, f64, &Blob)> = prototypes[label]
            .iter()
            .map(|b| {
                (
                    b.cy + sample_rng.random_range(-jitter..=jitter),
                    b.cx + sample_rng.random_range(-jitter..=jitter),
                    b,
                )
            })
            .collect();
        for y in 0..size {
            for x in 0..size {
                let mut px = [0.5; 3];
                for &(cy, cx, b) in &shifted {
                    let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                    let wgt = (-d2 / (2.0 * b.radius * b.radius)).exp();
                    for (p, c) in px.iter_mut().zip(b.color) {
                        *p += wgt * c;
                    }
                }
                for (ch, p) in px.iter().enumerate() {
                    let noise: f64 = sample_rng.sample(StandardNormal);
                    img[ch * plane + y * size + x] = (p + 0.08 * noise).clamp(0.0, 1.0);
                }
            }
        }
    }
    Dataset::new(Tensor4::from_vec([n, 3, size, size], data)?, labels, classes)
}
