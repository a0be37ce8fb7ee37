use ndarray::{Array2, Zip};

use super::Param;

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    steps: i32,
    moments: Vec<(Array2<f64>, Array2<f64>)>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self::with_betas(lr, 0.9, 0.999)
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            steps: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.steps
    }

    /// Applies one update. The parameter list must have the same order and
    /// shapes on every call.
    pub fn step(&mut self, params: Vec<&mut Param>) {
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|p| (Array2::zeros(p.value.raw_dim()), Array2::zeros(p.value.raw_dim())))
                .collect();
        }
        assert_eq!(self.moments.len(), params.len(), "parameter list changed");
        self.steps += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.steps);
        let c2 = 1.0 - b2.powi(self.steps);
        let (lr, eps) = (self.lr, self.eps);
        for (p, (m, v)) in params.into_iter().zip(self.moments.iter_mut()) {
            Zip::from(&mut p.value)
                .and(&p.grad)
                .and(m)
                .and(v)
                .for_each(|w, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let mh = *m / c1;
                    let vh = *v / c2;
                    *w -= lr * mh / (vh.sqrt() + eps);
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut p = Param::new(array![[1.0, -1.0]]);
        p.grad = array![[0.5, -2.0]];
        let mut opt = Adam::new(0.1);
        opt.step(vec![&mut p]);
        assert!((p.value[[0, 0]] - 0.9).abs() < 1e-6);
        assert!((p.value[[0, 1]] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut p = Param::new(array![[3.0, -4.0]]);
        let mut opt = Adam::new(0.05);
        for _ in 0..2000 {
            p.grad = p.value.mapv(|w| 2.0 * w);
            opt.step(vec![&mut p]);
        }
        assert!(p.value.iter().all(|w| w.abs() < 1e-2));
    }
}
