use ndarray::Array4;
use rand::Rng;

use super::{BatchNorm2d, Conv2d, Layer, Param, Parameterized, Relu, Sequential};

/// Two 3×3 convolutions with a skip connection (projection shortcut when the
/// shape changes), as used by ResNet-18.
#[derive(Debug, Clone)]
pub struct BasicBlock {
    main: Sequential,
    shortcut: Option<Sequential>,
    out_mask: Option<Array4<f64>>,
}

impl BasicBlock {
    pub fn new<R: Rng + ?Sized>(in_channels: usize, out_channels: usize, stride: usize, rng: &mut R) -> Self {
        let main = Sequential::new(vec![
            Layer::Conv(Conv2d::new(in_channels, out_channels, 3, stride, 1, false, rng)),
            Layer::Norm(BatchNorm2d::new(out_channels)),
            Layer::Relu(Relu::default()),
            Layer::Conv(Conv2d::new(out_channels, out_channels, 3, 1, 1, false, rng)),
            Layer::Norm(BatchNorm2d::new(out_channels)),
        ]);
        let shortcut = (stride != 1 || in_channels != out_channels).then(|| {
            Sequential::new(vec![
                Layer::Conv(Conv2d::new(in_channels, out_channels, 1, stride, 0, false, rng)),
                Layer::Norm(BatchNorm2d::new(out_channels)),
            ])
        });
        BasicBlock {
            main,
            shortcut,
            out_mask: None,
        }
    }

    pub fn output_shape(&self, shape: (usize, usize, usize)) -> (usize, usize, usize) {
        self.main.output_shape(shape)
    }

    pub fn set_frozen_statistics(&mut self, frozen: bool) {
        self.main.set_frozen_statistics(frozen);
        if let Some(s) = &mut self.shortcut {
            s.set_frozen_statistics(frozen);
        }
    }

    pub fn forward(&mut self, x: &Array4<f64>) -> Array4<f64> {
        let a = self.main.forward(x);
        let b = match &mut self.shortcut {
            Some(s) => s.forward(x),
            None => x.clone(),
        };
        let z = a + b;
        self.out_mask = Some(z.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }));
        z.mapv(|v| v.max(0.0))
    }

    pub fn infer(&self, x: &Array4<f64>) -> Array4<f64> {
        let a = self.main.infer(x);
        let b = match &self.shortcut {
            Some(s) => s.infer(x),
            None => x.clone(),
        };
        (a + b).mapv(|v| v.max(0.0))
    }

    pub fn backward(&mut self, dy: &Array4<f64>) -> Array4<f64> {
        let dz = self.out_mask.take().expect("backward without forward") * dy;
        let da = self.main.backward(&dz);
        let db = match &mut self.shortcut {
            Some(s) => s.backward(&dz),
            None => dz,
        };
        da + db
    }
}

impl Parameterized for BasicBlock {
    fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        self.main.params_mut(out);
        if let Some(s) = &mut self.shortcut {
            s.params_mut(out);
        }
    }

    fn state<'a>(&'a self, out: &mut Vec<&'a [f64]>) {
        self.main.state(out);
        if let Some(s) = &self.shortcut {
            s.state(out);
        }
    }

    fn state_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        self.main.state_mut(out);
        if let Some(s) = &mut self.shortcut {
            s.state_mut(out);
        }
    }
}
