use ndarray::{Array2, Array4, Axis};
use rand::Rng;

use super::arch::{Architecture, TapPoint};
use crate::error::{GfrError, Result};
use crate::nn::{global_avg_pool, global_avg_pool_backward, Param, Parameterized, Sequential};

/// Convolutional feature extractor with named taps.
///
/// The configured tap splits the network in two. The *lower* part maps
/// images to the tap output `u` (flattened to `n × d`); the *upper* part
/// carries `u` on through the remaining blocks and global pooling. With the
/// default `feature` tap the upper part is the identity.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    arch: Architecture,
    tap: TapPoint,
    blocks: Vec<Sequential>,
    shapes: Vec<(usize, usize, usize)>,
    pool_extent: Option<(usize, usize)>,
}

fn flatten(x: Array4<f64>) -> Array2<f64> {
    let (n, c, h, w) = x.dim();
    x.as_standard_layout()
        .into_owned()
        .into_shape_with_order((n, c * h * w))
        .expect("contiguous")
}

fn unflatten(u: &Array2<f64>, (c, h, w): (usize, usize, usize)) -> Array4<f64> {
    u.as_standard_layout()
        .into_owned()
        .into_shape_with_order((u.nrows(), c, h, w))
        .expect("row width matches tap shape")
}

impl FeatureExtractor {
    pub fn new<R: Rng + ?Sized>(arch: Architecture, tap: TapPoint, rng: &mut R) -> Self {
        let blocks = arch.build_blocks(rng);
        let mut shapes = Vec::with_capacity(blocks.len());
        let mut shape = (arch.input.channels, arch.input.height, arch.input.width);
        for b in &blocks {
            shape = b.output_shape(shape);
            shapes.push(shape);
        }
        FeatureExtractor {
            arch,
            tap,
            blocks,
            shapes,
            pool_extent: None,
        }
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn descriptor(&self) -> String {
        self.arch.descriptor()
    }

    pub fn tap(&self) -> TapPoint {
        self.tap
    }

    /// Geometry `(c, h, w)` of a tap's output; `feature` is `(d, 1, 1)`.
    pub fn tap_shape(&self, tap: TapPoint) -> (usize, usize, usize) {
        match tap {
            TapPoint::Block(k) => self.shapes[k as usize - 1],
            TapPoint::Feature => (self.shapes[3].0, 1, 1),
        }
    }

    pub fn tap_dim(&self, tap: TapPoint) -> usize {
        let (c, h, w) = self.tap_shape(tap);
        c * h * w
    }

    /// Width `d` of the configured tap.
    pub fn feature_dim(&self) -> usize {
        self.tap_dim(self.tap)
    }

    /// Width of the pooled output that feeds the classifier head.
    pub fn pooled_dim(&self) -> usize {
        self.shapes[3].0
    }

    pub fn check_input(&self, x: &Array4<f64>) -> Result<()> {
        let g = self.arch.input;
        let (_, c, h, w) = x.dim();
        if (c, h, w) != (g.channels, g.height, g.width) {
            return Err(GfrError::input(format!(
                "batch geometry {c}x{h}x{w} does not match extractor input {}x{}x{}",
                g.channels, g.height, g.width
            )));
        }
        Ok(())
    }

    /// Makes training passes normalize with running statistics (and stop
    /// updating them) or return to batch statistics.
    pub fn set_frozen_statistics(&mut self, frozen: bool) {
        for b in &mut self.blocks {
            b.set_frozen_statistics(frozen);
        }
    }

    /// Training-mode pass from images to the tap output.
    pub fn forward_to_tap(&mut self, x: &Array4<f64>) -> Array2<f64> {
        let depth = self.tap.depth();
        let mut h = x.clone();
        for b in &mut self.blocks[..depth] {
            h = b.forward(&h);
        }
        if self.tap == TapPoint::Feature {
            self.pool_extent = Some((h.dim().2, h.dim().3));
            global_avg_pool(&h)
        } else {
            flatten(h)
        }
    }

    /// Backpropagates a gradient at the tap output into the lower blocks.
    pub fn backward_from_tap(&mut self, du: &Array2<f64>) {
        let depth = self.tap.depth();
        let mut g = if self.tap == TapPoint::Feature {
            let extent = self.pool_extent.take().expect("backward without forward");
            global_avg_pool_backward(du, extent)
        } else {
            unflatten(du, self.tap_shape(self.tap))
        };
        for b in self.blocks[..depth].iter_mut().rev() {
            g = b.backward(&g);
        }
    }

    /// Evaluation-mode pass from images to the configured tap, `n × d`.
    pub fn infer_to_tap(&self, x: &Array4<f64>) -> Array2<f64> {
        let depth = self.tap.depth();
        let mut h = x.clone();
        for b in &self.blocks[..depth] {
            h = b.infer(&h);
        }
        if self.tap == TapPoint::Feature {
            global_avg_pool(&h)
        } else {
            flatten(h)
        }
    }

    /// Training-mode pass from tap features to pooled features.
    pub fn forward_upper(&mut self, u: &Array2<f64>) -> Array2<f64> {
        if self.tap == TapPoint::Feature {
            return u.clone();
        }
        let mut h = unflatten(u, self.tap_shape(self.tap));
        for b in &mut self.blocks[self.tap.depth()..] {
            h = b.forward(&h);
        }
        self.pool_extent = Some((h.dim().2, h.dim().3));
        global_avg_pool(&h)
    }

    pub fn backward_upper(&mut self, dy: &Array2<f64>) -> Array2<f64> {
        if self.tap == TapPoint::Feature {
            return dy.clone();
        }
        let extent = self.pool_extent.take().expect("backward without forward");
        let mut g = global_avg_pool_backward(dy, extent);
        for b in self.blocks[self.tap.depth()..].iter_mut().rev() {
            g = b.backward(&g);
        }
        flatten(g)
    }

    pub fn infer_upper(&self, u: &Array2<f64>) -> Array2<f64> {
        if self.tap == TapPoint::Feature {
            return u.clone();
        }
        let mut h = unflatten(u, self.tap_shape(self.tap));
        for b in &self.blocks[self.tap.depth()..] {
            h = b.infer(&h);
        }
        global_avg_pool(&h)
    }

    /// Evaluation-mode features at the configured tap.
    pub fn extract_features(&self, x: &Array4<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        Ok(self.infer_to_tap(x))
    }

    /// Evaluation-mode pooled features (input to the head).
    pub fn pooled_features(&self, x: &Array4<f64>) -> Array2<f64> {
        self.infer_upper(&self.infer_to_tap(x))
    }

    /// Evaluation-mode activations at several taps. Spatial maps are either
    /// average-pooled to `n × c` or flattened to `(n·h·w) × c`.
    pub fn activations(&self, x: &Array4<f64>, taps: &[TapPoint], pooled: bool) -> Result<Vec<Array2<f64>>> {
        self.check_input(x)?;
        let deepest = taps.iter().map(|t| t.depth()).max().unwrap_or(0);
        let mut outputs = Vec::with_capacity(deepest);
        let mut h = x.clone();
        for b in &self.blocks[..deepest] {
            h = b.infer(&h);
            outputs.push(h.clone());
        }
        Ok(taps
            .iter()
            .map(|&tap| {
                let a = &outputs[tap.depth() - 1];
                if tap == TapPoint::Feature || pooled {
                    global_avg_pool(a)
                } else {
                    let (n, c, hh, ww) = a.dim();
                    a.view()
                        .permuted_axes([0, 2, 3, 1])
                        .as_standard_layout()
                        .into_owned()
                        .into_shape_with_order((n * hh * ww, c))
                        .expect("contiguous")
                }
            })
            .collect())
    }

    fn upper_range(&self) -> std::ops::Range<usize> {
        self.tap.depth()..self.blocks.len()
    }

    /// Trainable parameters of the blocks below the tap.
    pub fn lower_params_mut(&mut self) -> Vec<&mut Param> {
        let depth = self.tap.depth();
        let mut out = Vec::new();
        for b in &mut self.blocks[..depth] {
            b.params_mut(&mut out);
        }
        out
    }

    /// Trainable parameters of the blocks above the tap.
    pub fn upper_params_mut(&mut self) -> Vec<&mut Param> {
        let range = self.upper_range();
        let mut out = Vec::new();
        for b in &mut self.blocks[range] {
            b.params_mut(&mut out);
        }
        out
    }
}

impl Parameterized for FeatureExtractor {
    fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        for b in &mut self.blocks {
            b.params_mut(out);
        }
    }

    fn state<'a>(&'a self, out: &mut Vec<&'a [f64]>) {
        for b in &self.blocks {
            b.state(out);
        }
    }

    fn state_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        for b in &mut self.blocks {
            b.state_mut(out);
        }
    }
}

/// Row-wise Euclidean distance between two feature matrices, averaged.
pub fn mean_feature_distance(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let diff = a - b;
    diff.axis_iter(Axis(0)).map(|r| r.dot(&r).sqrt()).sum::<f64>() / a.nrows().max(1) as f64
}
