use std::ops::Range;

use ndarray::{s, Array2, Axis};
use rand::Rng;

use super::{fan_in_uniform, slice, slice_mut, Param, Parameterized};

/// Fully connected layer `y = x Wᵀ + b`, weight stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Param,
    pub bias: Param,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Dense {
            weight: Param::new(fan_in_uniform(outputs, inputs, inputs, rng)),
            bias: Param::new(fan_in_uniform(1, outputs, inputs, rng)),
        }
    }

    pub fn from_parts(weight: Array2<f64>, bias: Array2<f64>) -> Self {
        assert_eq!(bias.dim(), (1, weight.nrows()));
        Dense {
            weight: Param::new(weight),
            bias: Param::new(bias),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.nrows()
    }

    fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight.value.t()) + &self.bias.value
    }
}

/// Multilayer perceptron with LeakyReLU between linear layers and a linear
/// output.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<Dense>,
    slope: f64,
    cache: Option<MlpCache>,
}

#[derive(Debug, Clone)]
struct MlpCache {
    inputs: Vec<Array2<f64>>,
    masks: Vec<Array2<f64>>,
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers && self.slope == other.slope
    }
}

impl Mlp {
    /// `dims` lists every width from input to output, e.g. `[in, 512, 512, out]`.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], slope: f64, rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least input and output widths");
        let layers = dims.windows(2).map(|w| Dense::new(w[0], w[1], rng)).collect();
        Mlp {
            layers,
            slope,
            cache: None,
        }
    }

    pub fn from_layers(layers: Vec<Dense>, slope: f64) -> Self {
        assert!(!layers.is_empty());
        for w in layers.windows(2) {
            assert_eq!(w[0].outputs(), w[1].inputs(), "layer widths do not chain");
        }
        Mlp {
            layers,
            slope,
            cache: None,
        }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn slope(&self) -> f64 {
        self.slope
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Dense::outputs))
            .collect()
    }

    /// Parameter count of an MLP with the given widths (weights plus biases).
    pub fn count_params(dims: &[usize]) -> usize {
        dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn mask(&self, a: &Array2<f64>) -> Array2<f64> {
        let slope = self.slope;
        a.mapv(|v| if v > 0.0 { 1.0 } else { slope })
    }

    pub fn infer(&self, x: &Array2<f64>) -> Array2<f64> {
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let a = layer.apply(&h);
            h = if l < last { &a * &self.mask(&a) } else { a };
        }
        h
    }

    pub fn forward(&mut self, x: &Array2<f64>) -> Array2<f64> {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut masks = Vec::with_capacity(last);
        let mut h = x.clone();
        for l in 0..self.layers.len() {
            let a = self.layers[l].apply(&h);
            inputs.push(h);
            h = if l < last {
                let m = self.mask(&a);
                let out = &a * &m;
                masks.push(m);
                out
            } else {
                a
            };
        }
        self.cache = Some(MlpCache { inputs, masks });
        h
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, dy: &Array2<f64>) -> Array2<f64> {
        let cache = self.cache.take().expect("backward without forward");
        let last = self.layers.len() - 1;
        let mut g = dy.clone();
        for l in (0..self.layers.len()).rev() {
            if l < last {
                g *= &cache.masks[l];
            }
            let layer = &mut self.layers[l];
            layer.weight.grad += &g.t().dot(&cache.inputs[l]);
            layer.bias.grad += &g.sum_axis(Axis(0)).insert_axis(Axis(0));
            g = g.dot(&layer.weight.value);
        }
        g
    }

    fn hidden_masks(&self, x: &Array2<f64>) -> Vec<Array2<f64>> {
        let last = self.layers.len() - 1;
        let mut masks = Vec::with_capacity(last);
        let mut h = x.clone();
        for layer in &self.layers[..last] {
            let a = layer.apply(&h);
            let m = self.mask(&a);
            h = &a * &m;
            masks.push(m);
        }
        masks
    }

    /// Per-sample gradient of a scalar-output network with respect to its
    /// input, together with the backward-chain intermediates.
    fn input_gradient_chain(&self, masks: &[Array2<f64>], n: usize) -> (Array2<f64>, Vec<Array2<f64>>) {
        assert_eq!(self.output_dim(), 1, "input gradients need a scalar output");
        let last = self.layers.len() - 1;
        let mut deltas = vec![Array2::zeros((0, 0)); self.layers.len()];
        let mut delta = Array2::<f64>::ones((n, 1));
        for l in (0..=last).rev() {
            let r = delta.dot(&self.layers[l].weight.value);
            deltas[l] = delta;
            if l == 0 {
                return (r, deltas);
            }
            delta = r * &masks[l - 1];
        }
        unreachable!()
    }

    /// `∂ output / ∂ input` for each row of `x`.
    pub fn input_gradient(&self, x: &Array2<f64>) -> Array2<f64> {
        let masks = self.hidden_masks(x);
        self.input_gradient_chain(&masks, x.nrows()).0
    }

    /// Gradient penalty `weight · mean_i (‖∇_x D(x_i)[cols]‖₂ − 1)²`.
    ///
    /// Returns the penalty and accumulates its gradient with respect to the
    /// network weights (LeakyReLU masks are piecewise constant, so only the
    /// linear maps of the backward chain carry parameter dependence).
    pub fn gradient_penalty(&mut self, x: &Array2<f64>, cols: Range<usize>, weight: f64) -> f64 {
        let n = x.nrows();
        if n == 0 {
            return 0.0;
        }
        let masks = self.hidden_masks(x);
        let (g, deltas) = self.input_gradient_chain(&masks, n);
        let mut gbar = Array2::<f64>::zeros(g.raw_dim());
        let mut penalty = 0.0;
        for i in 0..n {
            let gi = g.slice(s![i, cols.clone()]);
            let norm = gi.dot(&gi).sqrt();
            penalty += (norm - 1.0).powi(2);
            if norm > 0.0 {
                let coef = 2.0 * weight * (norm - 1.0) / (norm * n as f64);
                let mut row = gbar.slice_mut(s![i, cols.clone()]);
                row.assign(&gi);
                row *= coef;
            }
        }
        let last = self.layers.len() - 1;
        let mut rbar = gbar;
        for l in 0..=last {
            let layer = &mut self.layers[l];
            layer.weight.grad += &deltas[l].t().dot(&rbar);
            if l < last {
                let dbar = rbar.dot(&layer.weight.value.t());
                rbar = dbar * &masks[l];
            }
        }
        weight * penalty / n as f64
    }

    /// Inserts `count` freshly initialized input columns at position `at`,
    /// leaving every existing weight untouched.
    pub fn insert_input_columns<R: Rng + ?Sized>(&mut self, at: usize, count: usize, rng: &mut R) {
        let first = &mut self.layers[0];
        let old = &first.weight.value;
        let (rows, cols) = old.dim();
        assert!(at <= cols);
        let fresh = fan_in_uniform(rows, count, cols + count, rng);
        let mut grown = Array2::zeros((rows, cols + count));
        grown.slice_mut(s![.., ..at]).assign(&old.slice(s![.., ..at]));
        grown.slice_mut(s![.., at..at + count]).assign(&fresh);
        grown.slice_mut(s![.., at + count..]).assign(&old.slice(s![.., at..]));
        first.weight = Param::new(grown);
        self.cache = None;
    }

    /// Clamps every weight and bias into `[-c, c]`.
    pub fn clip_weights(&mut self, c: f64) {
        for layer in &mut self.layers {
            layer.weight.value.mapv_inplace(|v| v.clamp(-c, c));
            layer.bias.value.mapv_inplace(|v| v.clamp(-c, c));
        }
    }
}

impl Parameterized for Mlp {
    fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        for layer in &mut self.layers {
            out.push(&mut layer.weight);
            out.push(&mut layer.bias);
        }
    }

    fn state<'a>(&'a self, out: &mut Vec<&'a [f64]>) {
        for layer in &self.layers {
            out.push(slice(&layer.weight.value));
            out.push(slice(&layer.bias.value));
        }
    }

    fn state_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        for layer in &mut self.layers {
            out.push(slice_mut(&mut layer.weight.value));
            out.push(slice_mut(&mut layer.bias.value));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use ndarray::Array;

    fn sample_input(n: usize, d: usize) -> Array2<f64> {
        Array::from_shape_fn((n, d), |(i, j)| ((i * 7 + j * 3) as f64 * 0.61).sin() * 1.5)
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = rng_from_seed(2);
        let net = Mlp::new(&[4, 6, 5, 1], 0.2, &mut rng);
        let x = sample_input(3, 4);
        let g = net.input_gradient(&x);
        let h = 1e-6;
        for i in 0..3 {
            for j in 0..4 {
                let mut xp = x.clone();
                xp[[i, j]] += h;
                let mut xm = x.clone();
                xm[[i, j]] -= h;
                let fd = (net.infer(&xp)[[i, 0]] - net.infer(&xm)[[i, 0]]) / (2.0 * h);
                assert!((fd - g[[i, j]]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn penalty_weight_gradient_matches_finite_differences() {
        let mut rng = rng_from_seed(4);
        let mut net = Mlp::new(&[5, 7, 6, 1], 0.2, &mut rng);
        let x = sample_input(4, 5);
        net.zero_grad();
        let p0 = net.gradient_penalty(&x, 2..5, 10.0);
        assert!(p0 > 0.0);
        let h = 1e-6;
        for l in 0..3 {
            let (rows, cols) = net.layers[l].weight.value.dim();
            for (r, c) in [(0, 0), (rows - 1, cols - 1), (rows / 2, cols / 2)] {
                let mut np = net.clone();
                np.layers[l].weight.value[[r, c]] += h;
                let mut nm = net.clone();
                nm.layers[l].weight.value[[r, c]] -= h;
                let fd = (np.gradient_penalty(&x, 2..5, 10.0) - nm.gradient_penalty(&x, 2..5, 10.0)) / (2.0 * h);
                let an = net.layers[l].weight.grad[[r, c]];
                assert!((fd - an).abs() <= 1e-5 * (1.0 + an.abs()), "layer {l} ({r},{c}): {fd} vs {an}");
            }
        }
    }

    #[test]
    fn inserted_columns_leave_outputs_unchanged_for_zero_inputs() {
        let mut rng = rng_from_seed(8);
        let net = Mlp::new(&[3, 4, 2], 0.2, &mut rng);
        let mut grown = net.clone();
        grown.insert_input_columns(1, 2, &mut rng);
        assert_eq!(grown.input_dim(), 5);
        let x = ndarray::array![[0.3, -1.2, 0.8]];
        let xp = ndarray::array![[0.3, 0.0, 0.0, -1.2, 0.8]];
        assert_eq!(net.infer(&x), grown.infer(&xp));
    }

    #[test]
    fn param_count_formula() {
        let mut rng = rng_from_seed(0);
        let net = Mlp::new(&[10, 8, 3], 0.2, &mut rng);
        assert_eq!(net.param_count(), Mlp::count_params(&[10, 8, 3]));
        assert_eq!(Mlp::count_params(&[10, 8, 3]), 10 * 8 + 8 + 8 * 3 + 3);
    }
}
