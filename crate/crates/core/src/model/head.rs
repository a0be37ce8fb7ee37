use ndarray::{concatenate, Array2, Axis};
use rand::Rng;

use crate::error::{GfrError, Result};
use crate::nn::{fan_in_uniform, slice, slice_mut, Param, Parameterized};

/// Single growing linear classifier over every class seen so far.
/// Row `i` of the weight scores the `i`-th class of the stream's class order.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    pub weight: Param,
    pub bias: Option<Param>,
    input: Option<Array2<f64>>,
}

impl ClassifierHead {
    pub fn new<R: Rng + ?Sized>(classes: usize, dim: usize, bias: bool, rng: &mut R) -> Self {
        ClassifierHead {
            weight: Param::new(fan_in_uniform(classes, dim, dim, rng)),
            bias: bias.then(|| Param::new(fan_in_uniform(1, classes, dim, rng))),
            input: None,
        }
    }

    pub fn from_weight(weight: Array2<f64>) -> Self {
        ClassifierHead {
            weight: Param::new(weight),
            bias: None,
            input: None,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.weight.value.nrows()
    }

    pub fn dim(&self) -> usize {
        self.weight.value.ncols()
    }

    pub fn has_bias(&self) -> bool {
        self.bias.is_some()
    }

    pub fn descriptor(&self) -> String {
        format!(
            "linear_head classes={} dim={} bias={}",
            self.num_classes(),
            self.dim(),
            self.has_bias()
        )
    }

    /// Appends `new_classes` rows initialized like the original layer; the
    /// existing rows are left bit-identical.
    pub fn extend<R: Rng + ?Sized>(&mut self, new_classes: usize, rng: &mut R) -> Result<()> {
        if new_classes == 0 {
            return Err(GfrError::config("head extension needs at least one new class"));
        }
        let d = self.dim();
        let rows = fan_in_uniform(new_classes, d, d, rng);
        self.weight = Param::new(concatenate![Axis(0), self.weight.value, rows]);
        if let Some(b) = &self.bias {
            let extra = fan_in_uniform(1, new_classes, d, rng);
            self.bias = Some(Param::new(concatenate![Axis(1), b.value, extra]));
        }
        self.input = None;
        Ok(())
    }

    pub fn logits(&self, u: &Array2<f64>) -> Array2<f64> {
        let z = u.dot(&self.weight.value.t());
        match &self.bias {
            Some(b) => z + &b.value,
            None => z,
        }
    }

    pub fn check_input(&self, u: &Array2<f64>) -> Result<()> {
        if u.ncols() != self.dim() {
            return Err(GfrError::input(format!(
                "feature width {} does not match head width {}",
                u.ncols(),
                self.dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&mut self, u: &Array2<f64>) -> Array2<f64> {
        self.input = Some(u.clone());
        self.logits(u)
    }

    /// Accumulates weight gradients and returns the feature gradient.
    pub fn backward(&mut self, dlogits: &Array2<f64>) -> Array2<f64> {
        let u = self.input.take().expect("backward without forward");
        self.weight.grad += &dlogits.t().dot(&u);
        if let Some(b) = &mut self.bias {
            b.grad += &dlogits.sum_axis(Axis(0)).insert_axis(Axis(0));
        }
        dlogits.dot(&self.weight.value)
    }
}

impl Parameterized for ClassifierHead {
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
