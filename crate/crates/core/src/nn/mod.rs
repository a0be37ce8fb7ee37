//! Minimal layer library with hand-written backward passes.
//!
//! Layers run in two modes: `forward` (training mode, caches what `backward`
//! needs, batch-norm uses batch statistics) and `infer` (evaluation mode, no
//! caching, running statistics). All arithmetic is `f64`.

mod adam;
mod conv;
mod dense;
mod norm;
mod pool;
mod residual;

pub use adam::Adam;
pub use conv::Conv2d;
pub use dense::{Dense, Mlp};
pub use norm::BatchNorm2d;
pub use pool::{global_avg_pool, global_avg_pool_backward, MaxPool2d, Relu};
pub use residual::BasicBlock;

use ndarray::{Array2, Array4};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

/// A trainable tensor and its accumulated gradient, both stored as matrices
/// in standard layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Array2<f64>,
    pub grad: Array2<f64>,
}

impl Param {
    pub fn new(value: Array2<f64>) -> Self {
        let grad = Array2::zeros(value.raw_dim());
        Param { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Uniform initialization in `±1/sqrt(fan_in)`.
pub fn fan_in_uniform<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    fan_in: usize,
    rng: &mut R,
) -> Array2<f64> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}

/// Access to trainable parameters and to the full persistent state
/// (parameters plus buffers such as running statistics) in declaration order.
pub trait Parameterized {
    fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>);
    fn state<'a>(&'a self, out: &mut Vec<&'a [f64]>);
    fn state_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>);

    fn zero_grad(&mut self) {
        let mut params = Vec::new();
        self.params_mut(&mut params);
        for p in params {
            p.zero_grad();
        }
    }

    fn param_count(&self) -> usize {
        let mut st = Vec::new();
        self.state(&mut st);
        st.iter().map(|s| s.len()).sum()
    }

    /// Round every stored value to the nearest `f32`, the precision used by
    /// checkpoints.
    fn quantize_f32(&mut self) {
        let mut st = Vec::new();
        self.state_mut(&mut st);
        for s in st {
            for v in s.iter_mut() {
                *v = *v as f32 as f64;
            }
        }
    }
}

pub(crate) fn slice(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("parameters are kept in standard layout")
}

pub(crate) fn slice_mut(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut()
        .expect("parameters are kept in standard layout")
}

/// One layer of a convolutional pipeline.
#[derive(Debug, Clone)]
pub enum Layer {
    Conv(Conv2d),
    Norm(BatchNorm2d),
    Relu(Relu),
    MaxPool(MaxPool2d),
    Residual(Box<BasicBlock>),
}

impl Layer {
    pub fn forward(&mut self, x: &Array4<f64>) -> Array4<f64> {
        match self {
            Layer::Conv(l) => l.forward(x),
            Layer::Norm(l) => l.forward(x),
            Layer::Relu(l) => l.forward(x),
            Layer::MaxPool(l) => l.forward(x),
            Layer::Residual(l) => l.forward(x),
        }
    }

    pub fn infer(&self, x: &Array4<f64>) -> Array4<f64> {
        match self {
            Layer::Conv(l) => l.infer(x),
            Layer::Norm(l) => l.infer(x),
            Layer::Relu(_) => Relu::infer(x),
            Layer::MaxPool(l) => l.infer(x),
            Layer::Residual(l) => l.infer(x),
        }
    }

    pub fn backward(&mut self, dy: &Array4<f64>) -> Array4<f64> {
        match self {
            Layer::Conv(l) => l.backward(dy),
            Layer::Norm(l) => l.backward(dy),
            Layer::Relu(l) => l.backward(dy),
            Layer::MaxPool(l) => l.backward(dy),
            Layer::Residual(l) => l.backward(dy),
        }
    }

    /// Switches every batch-norm layer between batch and running statistics.
    pub fn set_frozen_statistics(&mut self, frozen: bool) {
        match self {
            Layer::Norm(l) => l.frozen = frozen,
            Layer::Residual(l) => l.set_frozen_statistics(frozen),
            Layer::Conv(_) | Layer::Relu(_) | Layer::MaxPool(_) => {}
        }
    }

    /// Output geometry `(channels, height, width)` for an input geometry.
    pub fn output_shape(&self, shape: (usize, usize, usize)) -> (usize, usize, usize) {
        match self {
            Layer::Conv(l) => l.output_shape(shape),
            Layer::Norm(_) | Layer::Relu(_) => shape,
            Layer::MaxPool(l) => l.output_shape(shape),
            Layer::Residual(l) => l.output_shape(shape),
        }
    }
}

impl Parameterized for Layer {
    fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        match self {
            Layer::Conv(l) => l.params_mut(out),
            Layer::Norm(l) => l.params_mut(out),
            Layer::Residual(l) => l.params_mut(out),
            Layer::Relu(_) | Layer::MaxPool(_) => {}
        }
    }

    fn state<'a>(&'a self, out: &mut Vec<&'a [f64]>) {
        match self {
            Layer::Conv(l) => l.state(out),
            Layer::Norm(l) => l.state(out),
            Layer::Residual(l) => l.state(out),
            Layer::Relu(_) | Layer::MaxPool(_) => {}
        }
    }

    fn state_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        match self {
            Layer::Conv(l) => l.state_mut(out),
            Layer::Norm(l) => l.state_mut(out),
            Layer::Residual(l) => l.state_mut(out),
            Layer::Relu(_) | Layer::MaxPool(_) => {}
        }
    }
}

/// Layers applied in order.
#[derive(Debug, Clone, Default)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Sequential { layers }
    }

    pub fn forward(&mut self, x: &Array4<f64>) -> Array4<f64> {
        let mut h = x.clone();
        for layer in &mut self.layers {
            h = layer.forward(&h);
        }
        h
    }

    pub fn infer(&self, x: &Array4<f64>) -> Array4<f64> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.infer(&h);
        }
        h
    }

    pub fn backward(&mut self, dy: &Array4<f64>) -> Array4<f64> {
        let mut g = dy.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g);
        }
        g
    }

    pub fn output_shape(&self, shape: (usize, usize, usize)) -> (usize, usize, usize) {
        self.layers.iter().fold(shape, |s, l| l.output_shape(s))
    }

    pub fn set_frozen_statistics(&mut self, frozen: bool) {
        for l in &mut self.layers {
            l.set_frozen_statistics(frozen);
        }
    }
}

impl Parameterized for Sequential {
    fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        for l in &mut self.layers {
            l.params_mut(out);
        }
    }

    fn state<'a>(&'a self, out: &mut Vec<&'a [f64]>) {
        for l in &self.layers {
            l.state(out);
        }
    }

    fn state_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        for l in &mut self.layers {
            l.state_mut(out);
        }
    }
}
