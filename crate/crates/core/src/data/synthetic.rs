use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Dataset, ImageGeometry, LabeledSet, Normalization};
use crate::error::{GfrError, Result};
use crate::rng::{rng_from_seed, Rng as StreamRng};

/// Parameters of the generated desk-scale dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub image_side: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
struct ClassPattern {
    center: (f64, f64),
    color: [f64; 3],
    radius: f64,
}

fn hue_to_rgb(h: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let x = 1.0 - (h6 % 2.0 - 1.0).abs();
    let (r, g, b) = match h6 as usize {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    [r, g, b]
}

fn class_patterns(num_classes: usize, side: usize, rng: &mut StreamRng) -> Vec<ClassPattern> {
    let grid = (num_classes as f64).sqrt().ceil() as usize;
    let cell = side as f64 / grid as f64;
    let mut cells: Vec<usize> = (0..grid * grid).collect();
    rand::seq::SliceRandom::shuffle(cells.as_mut_slice(), rng);
    let hue_offset: f64 = rng.random();
    (0..num_classes)
        .map(|c| {
            let cell_id = cells[c];
            let (gy, gx) = (cell_id / grid, cell_id % grid);
            ClassPattern {
                center: ((gy as f64 + 0.5) * cell, (gx as f64 + 0.5) * cell),
                color: hue_to_rgb(hue_offset + c as f64 / num_classes as f64),
                radius: (cell * 0.6).max(1.0),
            }
        })
        .collect()
}

fn render(pattern: &ClassPattern, side: usize, channels: usize, rng: &mut StreamRng, out: &mut Vec<u8>) {
    let noise = Normal::new(0.0, 18.0).expect("valid std");
    let jitter = side as f64 / 10.0;
    let cy = pattern.center.0 + rng.random_range(-jitter..=jitter);
    let cx = pattern.center.1 + rng.random_range(-jitter..=jitter);
    let radius = pattern.radius * rng.random_range(0.8..=1.2);
    let intensity = rng.random_range(0.7..=1.0);
    let background: Vec<f64> = (0..channels).map(|_| rng.random_range(20.0..=70.0)).collect();
    for y in 0..side {
        for x in 0..side {
            let d = ((y as f64 + 0.5 - cy).powi(2) + (x as f64 + 0.5 - cx).powi(2)).sqrt();
            let weight = (1.0 - (d - radius).max(0.0)).clamp(0.0, 1.0);
            for c in 0..channels {
                let fg = 60.0 + 190.0 * pattern.color[c % 3] * intensity;
                let v = background[c] * (1.0 - weight) + fg * weight + noise.sample(rng);
                out.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
}

fn generate(spec: &SyntheticSpec, per_class: usize, pattern_seed: u64, sample_seed: u64) -> LabeledSet {
    let side = spec.image_side;
    let geometry = ImageGeometry::new(side, side, 3);
    let patterns = class_patterns(spec.num_classes, side, &mut rng_from_seed(pattern_seed));
    let mut rng = rng_from_seed(sample_seed);
    let mut set = LabeledSet::empty(geometry);
    set.pixels.reserve(spec.num_classes * per_class * geometry.pixels());
    for _ in 0..per_class {
        for (c, pattern) in patterns.iter().enumerate() {
            set.labels.push(c as u32);
            render(pattern, side, 3, &mut rng, &mut set.pixels);
        }
    }
    set
}

/// `num_classes · samples_per_class` RGB images of side `image_side`. Each
/// class is a soft disc with its own location and hue, jittered in position,
/// size and brightness, on a noisy background.
pub fn make_synthetic_dataset(
    num_classes: usize,
    image_side: usize,
    samples_per_class: usize,
    seed: u64,
) -> Result<LabeledSet> {
    if num_classes == 0 || image_side == 0 || samples_per_class == 0 {
        return Err(GfrError::config("synthetic dataset arguments must be positive"));
    }
    let spec = SyntheticSpec {
        num_classes,
        image_side,
        train_per_class: samples_per_class,
        test_per_class: 0,
        seed,
    };
    Ok(generate(&spec, samples_per_class, seed, seed ^ 0x5EED_0001))
}

/// Train and test splits sharing class patterns, normalized with train
/// statistics.
pub fn synthetic_dataset(spec: &SyntheticSpec) -> Result<Dataset> {
    let train = make_synthetic_dataset(spec.num_classes, spec.image_side, spec.train_per_class, spec.seed)?;
    let test = if spec.test_per_class == 0 {
        LabeledSet::empty(train.geometry)
    } else {
        generate(spec, spec.test_per_class, spec.seed, spec.seed ^ 0x7E57_0002)
    };
    let normalization = Normalization::estimate(&train);
    Ok(Dataset {
        num_classes: spec.num_classes,
        geometry: train.geometry,
        normalization,
        train,
        test,
    })
}
