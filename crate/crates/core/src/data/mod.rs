//! Datasets, the class-incremental task stream and augmentation.

mod augment;
mod disk;
mod stream;
mod synthetic;

pub use augment::{augment, flip_horizontal, AugmentPolicy};
pub use disk::{load_dataset, write_dataset, META_FILE, TEST_FILE, TRAIN_FILE};
pub use stream::{build_task_stream, TaskSpec, TaskStream};
pub use synthetic::{make_synthetic_dataset, synthetic_dataset, SyntheticSpec};

use ndarray::{Array3, Array4};
use rand::Rng;

use crate::error::{GfrError, Result};

/// Image size of every example in a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageGeometry {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageGeometry {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        ImageGeometry {
            height,
            width,
            channels,
        }
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width * self.channels
    }
}

/// Per-channel affine normalization, in raw pixel units (0..255).
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn identity(channels: usize) -> Self {
        Normalization {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    /// Channel statistics of a byte-valued set (std floored at 1).
    pub fn estimate(set: &LabeledSet) -> Self {
        let c = set.geometry.channels;
        let mut sum = vec![0.0; c];
        let mut sq = vec![0.0; c];
        let mut count = 0usize;
        for px in set.pixels.chunks_exact(c) {
            for (k, &v) in px.iter().enumerate() {
                let v = v as f64;
                sum[k] += v;
                sq[k] += v * v;
            }
            count += 1;
        }
        let n = count.max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| (s / n - m * m).max(0.0).sqrt().max(1.0))
            .collect();
        Normalization { mean, std }
    }
}

/// One image with its label; pixels are normalized reals laid out `H × W × C`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub pixels: Array3<f64>,
    pub label: u32,
}

/// A split stored compactly as bytes: records are `label` plus `H·W·C`
/// row-major pixel bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub geometry: ImageGeometry,
    pub labels: Vec<u32>,
    pub pixels: Vec<u8>,
}

impl LabeledSet {
    pub fn empty(geometry: ImageGeometry) -> Self {
        LabeledSet {
            geometry,
            labels: Vec::new(),
            pixels: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn push(&mut self, label: u32, pixels: &[u8]) {
        assert_eq!(pixels.len(), self.geometry.pixels());
        self.labels.push(label);
        self.pixels.extend_from_slice(pixels);
    }

    pub fn raw(&self, i: usize) -> &[u8] {
        let p = self.geometry.pixels();
        &self.pixels[i * p..(i + 1) * p]
    }

    pub fn example(&self, i: usize, norm: &Normalization) -> LabeledExample {
        let g = self.geometry;
        let raw = self.raw(i);
        let pixels = Array3::from_shape_fn((g.height, g.width, g.channels), |(y, x, c)| {
            (raw[(y * g.width + x) * g.channels + c] as f64 - norm.mean[c]) / norm.std[c]
        });
        LabeledExample {
            pixels,
            label: self.labels[i],
        }
    }
}

/// A labeled dataset with a train and a test split over `num_classes` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub num_classes: usize,
    pub geometry: ImageGeometry,
    pub normalization: Normalization,
    pub train: LabeledSet,
    pub test: LabeledSet,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        for (name, split) in [("train", &self.train), ("test", &self.test)] {
            if split.geometry != self.geometry {
                return Err(GfrError::input(format!("{name} split geometry differs from dataset")));
            }
            if split.pixels.len() != split.len() * self.geometry.pixels() {
                return Err(GfrError::input(format!("{name} split pixel buffer has wrong length")));
            }
            if let Some(&bad) = split.labels.iter().find(|&&l| l as usize >= self.num_classes) {
                return Err(GfrError::input(format!(
                    "{name} split label {bad} outside vocabulary of {} classes",
                    self.num_classes
                )));
            }
        }
        if self.normalization.mean.len() != self.geometry.channels
            || self.normalization.std.len() != self.geometry.channels
        {
            return Err(GfrError::input("normalization does not match channel count"));
        }
        Ok(())
    }
}

/// Stacks examples into an `N × C × H × W` tensor, optionally augmenting.
pub fn batch_tensor<R: Rng + ?Sized>(
    set: &LabeledSet,
    indices: &[usize],
    norm: &Normalization,
    policy: Option<&AugmentPolicy>,
    rng: &mut R,
) -> Result<(Array4<f64>, Vec<u32>)> {
    let g = set.geometry;
    let mut out = Array4::<f64>::zeros((indices.len(), g.channels, g.height, g.width));
    let mut labels = Vec::with_capacity(indices.len());
    for (row, &i) in indices.iter().enumerate() {
        let mut ex = set.example(i, norm);
        if let Some(p) = policy {
            ex = augment(&ex, p, rng)?;
        }
        for ((y, x, c), v) in ex.pixels.indexed_iter() {
            out[[row, c, y, x]] = *v;
        }
        labels.push(ex.label);
    }
    Ok((out, labels))
}
