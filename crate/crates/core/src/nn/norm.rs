use ndarray::{Array1, Array2, Array4};

use super::{slice, slice_mut, Param, Parameterized};

/// Per-channel batch normalization over `(N, H, W)`. With `frozen` set,
/// training passes normalize with the running statistics and leave them
/// unchanged; `gamma` and `beta` still learn.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub momentum: f64,
    pub eps: f64,
    pub frozen: bool,
    cache: Option<NormCache>,
}

#[derive(Debug, Clone)]
struct NormCache {
    xhat: Array4<f64>,
    inv_std: Vec<f64>,
    frozen: bool,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Param::new(Array2::ones((1, channels))),
            beta: Param::new(Array2::zeros((1, channels))),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            momentum: 0.1,
            eps: 1e-5,
            frozen: false,
            cache: None,
        }
    }

    fn channels(&self) -> usize {
        self.running_mean.len()
    }

    pub fn forward(&mut self, x: &Array4<f64>) -> Array4<f64> {
        if self.frozen {
            return self.forward_frozen(x);
        }
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.channels(), "batch-norm channel mismatch");
        let hw = h * w;
        let m = (n * hw) as f64;
        let x = x.as_standard_layout();
        let xs = x.as_slice().expect("standard layout");
        let mut xhat = Array4::<f64>::zeros((n, c, h, w));
        let mut y = Array4::<f64>::zeros((n, c, h, w));
        let mut inv_std = vec![0.0; c];
        {
            let xh = xhat.as_slice_mut().expect("fresh");
            let ys = y.as_slice_mut().expect("fresh");
            for ci in 0..c {
                let mut sum = 0.0;
                for ni in 0..n {
                    let off = (ni * c + ci) * hw;
                    sum += xs[off..off + hw].iter().sum::<f64>();
                }
                let mean = sum / m;
                let mut sq = 0.0;
                for ni in 0..n {
                    let off = (ni * c + ci) * hw;
                    sq += xs[off..off + hw].iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
                }
                let var = sq / m;
                let is = 1.0 / (var + self.eps).sqrt();
                inv_std[ci] = is;
                let (g, b) = (self.gamma.value[[0, ci]], self.beta.value[[0, ci]]);
                for ni in 0..n {
                    let off = (ni * c + ci) * hw;
                    for i in off..off + hw {
                        let v = (xs[i] - mean) * is;
                        xh[i] = v;
                        ys[i] = g * v + b;
                    }
                }
                let unbiased = if m > 1.0 { sq / (m - 1.0) } else { var };
                self.running_mean[ci] = (1.0 - self.momentum) * self.running_mean[ci] + self.momentum * mean;
                self.running_var[ci] = (1.0 - self.momentum) * self.running_var[ci] + self.momentum * unbiased;
            }
        }
        self.cache = Some(NormCache {
            xhat,
            inv_std,
            frozen: false,
        });
        y
    }

    fn forward_frozen(&mut self, x: &Array4<f64>) -> Array4<f64> {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.channels(), "batch-norm channel mismatch");
        let hw = h * w;
        let mut xhat = x.as_standard_layout().into_owned();
        let inv_std: Vec<f64> = self.running_var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let xh = xhat.as_slice_mut().expect("standard layout");
        for ci in 0..c {
            for ni in 0..n {
                let off = (ni * c + ci) * hw;
                for v in &mut xh[off..off + hw] {
                    *v = (*v - self.running_mean[ci]) * inv_std[ci];
                }
            }
        }
        let y = self.affine(&xhat);
        self.cache = Some(NormCache {
            xhat,
            inv_std,
            frozen: true,
        });
        y
    }

    fn affine(&self, xhat: &Array4<f64>) -> Array4<f64> {
        let (n, c, h, w) = xhat.dim();
        let hw = h * w;
        let mut y = xhat.clone();
        let ys = y.as_slice_mut().expect("standard layout");
        for ci in 0..c {
            let (g, b) = (self.gamma.value[[0, ci]], self.beta.value[[0, ci]]);
            for ni in 0..n {
                let off = (ni * c + ci) * hw;
                for v in &mut ys[off..off + hw] {
                    *v = g * *v + b;
                }
            }
        }
        y
    }

    pub fn infer(&self, x: &Array4<f64>) -> Array4<f64> {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.channels(), "batch-norm channel mismatch");
        let hw = h * w;
        let mut y = x.as_standard_layout().into_owned();
        let ys = y.as_slice_mut().expect("standard layout");
        for ci in 0..c {
            let is = 1.0 / (self.running_var[ci] + self.eps).sqrt();
            let scale = self.gamma.value[[0, ci]] * is;
            let shift = self.beta.value[[0, ci]] - self.running_mean[ci] * scale;
            for ni in 0..n {
                let off = (ni * c + ci) * hw;
                for v in &mut ys[off..off + hw] {
                    *v = *v * scale + shift;
                }
            }
        }
        y
    }

    pub fn backward(&mut self, dy: &Array4<f64>) -> Array4<f64> {
        let cache = self.cache.take().expect("backward without forward");
        let (n, c, h, w) = dy.dim();
        let hw = h * w;
        let m = (n * hw) as f64;
        let dy = dy.as_standard_layout();
        let ds = dy.as_slice().expect("standard layout");
        let xh = cache.xhat.as_slice().expect("standard layout");
        let mut dx = Array4::<f64>::zeros((n, c, h, w));
        let dxs = dx.as_slice_mut().expect("fresh");
        for ci in 0..c {
            let mut sum_dy = 0.0;
            let mut sum_dy_xh = 0.0;
            for ni in 0..n {
                let off = (ni * c + ci) * hw;
                for i in off..off + hw {
                    sum_dy += ds[i];
                    sum_dy_xh += ds[i] * xh[i];
                }
            }
            self.gamma.grad[[0, ci]] += sum_dy_xh;
            self.beta.grad[[0, ci]] += sum_dy;
            let g = self.gamma.value[[0, ci]];
            if cache.frozen {
                let k = g * cache.inv_std[ci];
                for ni in 0..n {
                    let off = (ni * c + ci) * hw;
                    for i in off..off + hw {
                        dxs[i] = k * ds[i];
                    }
                }
                continue;
            }
            let k = g * cache.inv_std[ci] / m;
            for ni in 0..n {
                let off = (ni * c + ci) * hw;
                for i in off..off + hw {
                    dxs[i] = k * (m * ds[i] - sum_dy - xh[i] * sum_dy_xh);
                }
            }
        }
        dx
    }
}

impl Parameterized for BatchNorm2d {
    fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        out.push(&mut self.gamma);
        out.push(&mut self.beta);
    }

    fn state<'a>(&'a self, out: &mut Vec<&'a [f64]>) {
        out.push(slice(&self.gamma.value));
        out.push(slice(&self.beta.value));
        out.push(self.running_mean.as_slice().expect("contiguous"));
        out.push(self.running_var.as_slice().expect("contiguous"));
    }

    fn state_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        out.push(slice_mut(&mut self.gamma.value));
        out.push(slice_mut(&mut self.beta.value));
        out.push(self.running_mean.as_slice_mut().expect("contiguous"));
        out.push(self.running_var.as_slice_mut().expect("contiguous"));
    }
}
