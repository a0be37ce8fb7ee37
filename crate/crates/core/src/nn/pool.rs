use ndarray::{Array2, Array4, Axis};

/// Rectified linear unit.
#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Option<Array4<f64>>,
}

impl Relu {
    pub fn forward(&mut self, x: &Array4<f64>) -> Array4<f64> {
        self.mask = Some(x.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }));
        Relu::infer(x)
    }

    pub fn infer(x: &Array4<f64>) -> Array4<f64> {
        x.mapv(|v| v.max(0.0))
    }

    pub fn backward(&mut self, dy: &Array4<f64>) -> Array4<f64> {
        let mask = self.mask.take().expect("backward without forward");
        mask * dy
    }
}

/// Non-overlapping max pooling with a square window.
#[derive(Debug, Clone)]
pub struct MaxPool2d {
    size: usize,
    cache: Option<(Vec<usize>, (usize, usize, usize, usize))>,
}

impl MaxPool2d {
    pub fn new(size: usize) -> Self {
        MaxPool2d { size, cache: None }
    }

    pub fn output_shape(&self, (c, h, w): (usize, usize, usize)) -> (usize, usize, usize) {
        (c, h / self.size, w / self.size)
    }

    fn pool(&self, x: &Array4<f64>) -> (Array4<f64>, Vec<usize>) {
        let (n, c, h, w) = x.dim();
        let s = self.size;
        let (ho, wo) = (h / s, w / s);
        let x = x.as_standard_layout();
        let xs = x.as_slice().expect("standard layout");
        let mut y = Array4::<f64>::zeros((n, c, ho, wo));
        let mut arg = vec![0usize; n * c * ho * wo];
        let ys = y.as_slice_mut().expect("fresh");
        for plane in 0..n * c {
            let xoff = plane * h * w;
            let yoff = plane * ho * wo;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = xoff + oy * s * w + ox * s;
                    for dy in 0..s {
                        for dx in 0..s {
                            let i = xoff + (oy * s + dy) * w + ox * s + dx;
                            if xs[i] > best {
                                best = xs[i];
                                best_i = i;
                            }
                        }
                    }
                    ys[yoff + oy * wo + ox] = best;
                    arg[yoff + oy * wo + ox] = best_i;
                }
            }
        }
        (y, arg)
    }

    pub fn forward(&mut self, x: &Array4<f64>) -> Array4<f64> {
        let (y, arg) = self.pool(x);
        self.cache = Some((arg, x.dim()));
        y
    }

    pub fn infer(&self, x: &Array4<f64>) -> Array4<f64> {
        self.pool(x).0
    }

    pub fn backward(&mut self, dy: &Array4<f64>) -> Array4<f64> {
        let (arg, dim) = self.cache.take().expect("backward without forward");
        let mut dx = Array4::<f64>::zeros(dim);
        let dxs = dx.as_slice_mut().expect("fresh");
        let dy = dy.as_standard_layout();
        for (g, &i) in dy.iter().zip(arg.iter()) {
            dxs[i] += g;
        }
        dx
    }
}

/// Spatial mean per channel: `(N, C, H, W) -> (N, C)`.
pub fn global_avg_pool(x: &Array4<f64>) -> Array2<f64> {
    let (n, c, h, w) = x.dim();
    x.to_shape((n, c, h * w))
        .expect("reshape")
        .mean_axis(Axis(2))
        .expect("non-empty spatial extent")
}

pub fn global_avg_pool_backward(dy: &Array2<f64>, (h, w): (usize, usize)) -> Array4<f64> {
    let (n, c) = dy.dim();
    let scale = 1.0 / (h * w) as f64;
    Array4::from_shape_fn((n, c, h, w), |(a, b, _, _)| dy[[a, b]] * scale)
}
