use ndarray::{Array2, Array4, Axis};
use rand::Rng;

use super::{fan_in_uniform, slice, slice_mut, Param, Parameterized};

/// 2-D convolution lowered to a matrix product through `im2col`.
///
/// The weight is stored as `out_channels × (in_channels·k·k)`.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Option<Param>,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    cache: Option<ConvCache>,
}

#[derive(Debug, Clone)]
struct ConvCache {
    cols: Array2<f64>,
    input_dim: (usize, usize, usize, usize),
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let weight = Param::new(fan_in_uniform(out_channels, fan_in, fan_in, rng));
        let bias = bias.then(|| Param::new(fan_in_uniform(1, out_channels, fan_in, rng)));
        Conv2d {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            cache: None,
        }
    }

    pub fn output_shape(&self, (c, h, w): (usize, usize, usize)) -> (usize, usize, usize) {
        debug_assert_eq!(c, self.in_channels);
        let (ho, wo) = self.spatial_out(h, w);
        (self.out_channels, ho, wo)
    }

    fn spatial_out(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.kernel;
        let p = self.padding;
        (
            (h + 2 * p - k) / self.stride + 1,
            (w + 2 * p - k) / self.stride + 1,
        )
    }

    fn im2col(&self, x: &Array4<f64>) -> Array2<f64> {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.in_channels, "conv input channel mismatch");
        let (ho, wo) = self.spatial_out(h, w);
        let (k, s, p) = (self.kernel, self.stride, self.padding as isize);
        let xs = x.as_standard_layout();
        let xs = xs.as_slice().expect("standard layout");
        let ncol = n * ho * wo;
        let mut cols = Array2::<f64>::zeros((c * k * k, ncol));
        let cs = cols.as_slice_mut().expect("fresh array");
        for ci in 0..c {
            for ki in 0..k {
                for kj in 0..k {
                    let base = ((ci * k + ki) * k + kj) * ncol;
                    for ni in 0..n {
                        let xbase = (ni * c + ci) * h * w;
                        for oy in 0..ho {
                            let iy = (oy * s + ki) as isize - p;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let xrow = xbase + iy as usize * w;
                            let out = base + (ni * ho + oy) * wo;
                            for ox in 0..wo {
                                let ix = (ox * s + kj) as isize - p;
                                if ix >= 0 && ix < w as isize {
                                    cs[out + ox] = xs[xrow + ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, dcols: &Array2<f64>, (n, c, h, w): (usize, usize, usize, usize)) -> Array4<f64> {
        let (ho, wo) = self.spatial_out(h, w);
        let (k, s, p) = (self.kernel, self.stride, self.padding as isize);
        let ncol = n * ho * wo;
        let ds = dcols.as_slice().expect("standard layout");
        let mut dx = Array4::<f64>::zeros((n, c, h, w));
        let dxs = dx.as_slice_mut().expect("fresh array");
        for ci in 0..c {
            for ki in 0..k {
                for kj in 0..k {
                    let base = ((ci * k + ki) * k + kj) * ncol;
                    for ni in 0..n {
                        let xbase = (ni * c + ci) * h * w;
                        for oy in 0..ho {
                            let iy = (oy * s + ki) as isize - p;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let xrow = xbase + iy as usize * w;
                            let out = base + (ni * ho + oy) * wo;
                            for ox in 0..wo {
                                let ix = (ox * s + kj) as isize - p;
                                if ix >= 0 && ix < w as isize {
                                    dxs[xrow + ix as usize] += ds[out + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    fn apply(&self, cols: &Array2<f64>, n: usize, h: usize, w: usize) -> Array4<f64> {
        let (ho, wo) = self.spatial_out(h, w);
        let mut y = self.weight.value.dot(cols);
        if let Some(b) = &self.bias {
            for (mut row, &bv) in y.axis_iter_mut(Axis(0)).zip(b.value.iter()) {
                row += bv;
            }
        }
        let y = y
            .into_shape_with_order((self.out_channels, n, ho * wo))
            .expect("contiguous product");
        y.permuted_axes([1, 0, 2])
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((n, self.out_channels, ho, wo))
            .expect("contiguous")
    }

    pub fn forward(&mut self, x: &Array4<f64>) -> Array4<f64> {
        let (n, _, h, w) = x.dim();
        let cols = self.im2col(x);
        let y = self.apply(&cols, n, h, w);
        self.cache = Some(ConvCache {
            cols,
            input_dim: x.dim(),
        });
        y
    }

    pub fn infer(&self, x: &Array4<f64>) -> Array4<f64> {
        let (n, _, h, w) = x.dim();
        let cols = self.im2col(x);
        self.apply(&cols, n, h, w)
    }

    pub fn backward(&mut self, dy: &Array4<f64>) -> Array4<f64> {
        let cache = self.cache.take().expect("backward without forward");
        let (n, cout, ho, wo) = dy.dim();
        let dy2 = dy
            .view()
            .permuted_axes([1, 0, 2, 3])
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((cout, n * ho * wo))
            .expect("contiguous");
        self.weight.grad += &dy2.dot(&cache.cols.t());
        if let Some(b) = &mut self.bias {
            let db = dy2.sum_axis(Axis(1));
            for (g, d) in b.grad.iter_mut().zip(db.iter()) {
                *g += d;
            }
        }
        let dcols = self.weight.value.t().dot(&dy2);
        self.col2im(&dcols, cache.input_dim)
    }
}

impl Parameterized for Conv2d {
    fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        out.push(&mut self.weight);
        if let Some(b) = &mut self.bias {
            out.push(b);
        }
    }

    fn state<'a>(&'a self, out: &mut Vec<&'a [f64]>) {
        out.push(slice(&self.weight.value));
        if let Some(b) = &self.bias {
            out.push(slice(&b.value));
        }
    }

    fn state_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        out.push(slice_mut(&mut self.weight.value));
        if let Some(b) = &mut self.bias {
            out.push(slice_mut(&mut b.value));
        }
    }
}
