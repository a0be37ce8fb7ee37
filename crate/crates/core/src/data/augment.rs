use ndarray::{s, Array3};
use rand::Rng;

use super::LabeledExample;
use crate::error::{GfrError, Result};

/// Pad-then-crop with optional horizontal flips. With `train == false` the
/// crop is centered and nothing is flipped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentPolicy {
    pub pad: usize,
    pub crop_height: usize,
    pub crop_width: usize,
    pub flip_probability: f64,
    pub train: bool,
}

impl AugmentPolicy {
    /// Training policy that crops back to the input size.
    pub fn train(pad: usize, height: usize, width: usize, flip_probability: f64) -> Self {
        AugmentPolicy {
            pad,
            crop_height: height,
            crop_width: width,
            flip_probability,
            train: true,
        }
    }

    pub fn test(pad: usize, height: usize, width: usize) -> Self {
        AugmentPolicy {
            train: false,
            flip_probability: 0.0,
            ..Self::train(pad, height, width, 0.0)
        }
    }
}

pub fn flip_horizontal(pixels: &Array3<f64>) -> Array3<f64> {
    pixels.slice(s![.., ..;-1, ..]).to_owned()
}

pub fn augment<R: Rng + ?Sized>(example: &LabeledExample, policy: &AugmentPolicy, rng: &mut R) -> Result<LabeledExample> {
    let (h, w, c) = example.pixels.dim();
    let (ph, pw) = (h + 2 * policy.pad, w + 2 * policy.pad);
    if policy.crop_height > ph || policy.crop_width > pw {
        return Err(GfrError::config(format!(
            "crop {}x{} larger than padded image {ph}x{pw}",
            policy.crop_height, policy.crop_width
        )));
    }
    let mut padded = Array3::<f64>::zeros((ph, pw, c));
    padded
        .slice_mut(s![policy.pad..policy.pad + h, policy.pad..policy.pad + w, ..])
        .assign(&example.pixels);
    let (max_y, max_x) = (ph - policy.crop_height, pw - policy.crop_width);
    let (oy, ox) = if policy.train {
        (rng.random_range(0..=max_y), rng.random_range(0..=max_x))
    } else {
        (max_y / 2, max_x / 2)
    };
    let mut pixels = padded
        .slice(s![oy..oy + policy.crop_height, ox..ox + policy.crop_width, ..])
        .to_owned();
    if policy.train && policy.flip_probability > 0.0 && rng.random::<f64>() < policy.flip_probability {
        pixels = flip_horizontal(&pixels);
    }
    Ok(LabeledExample {
        pixels,
        label: example.label,
    })
}
