use std::path::Path;

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::checkpoint;
use crate::error::{GfrError, Result};
use crate::nn::{Adam, Mlp, Param, Parameterized};
use crate::rng::rng_from_seed;

/// How the critic is kept approximately 1-Lipschitz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Lipschitz {
    /// `λ·(‖∇_û D(c, û)‖₂ − 1)²` on random interpolates of real and fake.
    GradientPenalty(f64),
    /// Clamp every critic weight into `[-c, c]` after each critic step.
    WeightClip(f64),
}

/// Architecture and optimization settings of the feature GAN.
#[derive(Debug, Clone, PartialEq)]
pub struct GanConfig {
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub slope: f64,
    pub lipschitz: Lipschitz,
    pub n_critic: usize,
    pub alignment_weight: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Exponential moving average of generator weights kept during training
    /// and returned as the trained generator; 0 disables averaging.
    pub ema_decay: f64,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig {
            latent_dim: 200,
            hidden: vec![512, 512],
            slope: 0.2,
            lipschitz: Lipschitz::GradientPenalty(10.0),
            n_critic: 5,
            alignment_weight: 1.0,
            learning_rate: 1e-4,
            beta1: 0.5,
            beta2: 0.9,
            batch_size: 64,
            epochs: 50,
            ema_decay: 0.999,
        }
    }
}

/// Conditional generator `G(one-hot(c), z)` and critic `D(one-hot(c), u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGan {
    generator: Mlp,
    critic: Mlp,
    num_classes: usize,
    latent_dim: usize,
    feature_dim: usize,
}

/// Critic objective split into its parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticTerms {
    /// `mean D(c, fake) − mean D(c, real)`.
    pub gap: f64,
    pub penalty: f64,
}

impl CriticTerms {
    pub fn total(&self) -> f64 {
        self.gap + self.penalty
    }
}

/// Per generator iteration: Wasserstein estimate (negated critic gap) and
/// replay-alignment loss (zero on the first task).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GanHistory {
    pub wasserstein: Vec<f64>,
    pub alignment: Vec<f64>,
}

/// `[one-hot(labels) over k | tail]`.
pub fn conditioned(labels: &[usize], k: usize, tail: &Array2<f64>) -> Array2<f64> {
    let n = labels.len();
    let mut out = Array2::zeros((n, k + tail.ncols()));
    for (i, &c) in labels.iter().enumerate() {
        out[[i, c]] = 1.0;
    }
    out.slice_mut(s![.., k..]).assign(tail);
    out
}

pub fn standard_normal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

fn step_params(adam: &mut Adam, net: &mut Mlp) {
    let mut params: Vec<&mut Param> = Vec::new();
    net.params_mut(&mut params);
    adam.step(params);
}

/// `avg ← β·avg + (1−β)·live` with warm-up `β_t = min(β, (1+t)/(10+t))`.
fn update_average(avg: &mut Mlp, live: &mut Mlp, decay: f64, step: usize) {
    let beta = decay.min((1.0 + step as f64) / (10.0 + step as f64));
    let mut a: Vec<&mut Param> = Vec::new();
    avg.params_mut(&mut a);
    let mut b: Vec<&mut Param> = Vec::new();
    live.params_mut(&mut b);
    for (pa, pb) in a.into_iter().zip(b) {
        pa.value.zip_mut_with(&pb.value, |e, &v| *e = beta * *e + (1.0 - beta) * v);
    }
}

fn dims_string(dims: &[usize]) -> String {
    dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",")
}

impl FeatureGan {
    pub fn generator_dims(classes: usize, latent: usize, hidden: &[usize], feature_dim: usize) -> Vec<usize> {
        let mut dims = vec![classes + latent];
        dims.extend_from_slice(hidden);
        dims.push(feature_dim);
        dims
    }

    pub fn critic_dims(classes: usize, hidden: &[usize], feature_dim: usize) -> Vec<usize> {
        let mut dims = vec![classes + feature_dim];
        dims.extend_from_slice(hidden);
        dims.push(1);
        dims
    }

    /// `(generator, critic)` parameter counts.
    pub fn param_counts(classes: usize, feature_dim: usize, latent: usize, hidden: &[usize]) -> (usize, usize) {
        (
            Mlp::count_params(&Self::generator_dims(classes, latent, hidden, feature_dim)),
            Mlp::count_params(&Self::critic_dims(classes, hidden, feature_dim)),
        )
    }

    pub fn new<R: Rng + ?Sized>(num_classes: usize, feature_dim: usize, cfg: &GanConfig, rng: &mut R) -> Self {
        let gd = Self::generator_dims(num_classes, cfg.latent_dim, &cfg.hidden, feature_dim);
        let cd = Self::critic_dims(num_classes, &cfg.hidden, feature_dim);
        FeatureGan {
            generator: Mlp::new(&gd, cfg.slope, rng),
            critic: Mlp::new(&cd, cfg.slope, rng),
            num_classes,
            latent_dim: cfg.latent_dim,
            feature_dim,
        }
    }

    pub fn from_networks(generator: Mlp, critic: Mlp, num_classes: usize) -> Result<Self> {
        let latent = generator
            .input_dim()
            .checked_sub(num_classes)
            .ok_or_else(|| GfrError::config("generator input narrower than the class count"))?;
        let d = generator.output_dim();
        if critic.input_dim() != num_classes + d || critic.output_dim() != 1 {
            return Err(GfrError::config("critic shape does not match generator"));
        }
        Ok(FeatureGan {
            generator,
            critic,
            num_classes,
            latent_dim: latent,
            feature_dim: d,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn generator(&self) -> &Mlp {
        &self.generator
    }

    pub fn critic(&self) -> &Mlp {
        &self.critic
    }

    pub fn generator_mut(&mut self) -> &mut Mlp {
        &mut self.generator
    }

    pub fn critic_mut(&mut self) -> &mut Mlp {
        &mut self.critic
    }

    pub fn generator_descriptor(&self) -> String {
        format!(
            "feature_gan_generator dims={} slope={}",
            dims_string(&self.generator.dims()),
            self.generator.slope()
        )
    }

    pub fn critic_descriptor(&self) -> String {
        format!(
            "feature_gan_critic dims={} slope={}",
            dims_string(&self.critic.dims()),
            self.critic.slope()
        )
    }

    /// Widens the one-hot input of both networks by `count` classes. Columns
    /// are inserted after the existing class columns, so outputs for old
    /// classes are unchanged.
    pub fn extend_classes<R: Rng + ?Sized>(&mut self, count: usize, rng: &mut R) {
        self.generator.insert_input_columns(self.num_classes, count, rng);
        self.critic.insert_input_columns(self.num_classes, count, rng);
        self.num_classes += count;
    }

    pub fn check_labels(&self, labels: &[usize]) -> Result<()> {
        match labels.iter().find(|&&c| c >= self.num_classes) {
            Some(c) => Err(GfrError::input(format!(
                "class {c} is not covered by a generator over {} classes",
                self.num_classes
            ))),
            None => Ok(()),
        }
    }

    /// `G(one-hot(c), z)` for explicit latent codes.
    pub fn generate(&self, labels: &[usize], z: &Array2<f64>) -> Array2<f64> {
        self.generator.infer(&conditioned(labels, self.num_classes, z))
    }

    pub fn sample<R: Rng + ?Sized>(&self, labels: &[usize], rng: &mut R) -> Result<Array2<f64>> {
        self.check_labels(labels)?;
        let z = standard_normal(labels.len(), self.latent_dim, rng);
        Ok(self.generate(labels, &z))
    }

    /// `D(one-hot(c), u)` per row.
    pub fn critic_scores(&self, labels: &[usize], features: &Array2<f64>) -> Array1<f64> {
        self.critic
            .infer(&conditioned(labels, self.num_classes, features))
            .index_axis_move(Axis(1), 0)
    }

    fn check_real(&self, real: &Array2<f64>, labels: &[usize]) -> Result<()> {
        if labels.is_empty() {
            return Err(GfrError::input("critic loss needs a non-empty batch"));
        }
        if real.nrows() != labels.len() || real.ncols() != self.feature_dim {
            return Err(GfrError::input(format!(
                "real batch is {}x{}, expected {}x{}",
                real.nrows(),
                real.ncols(),
                labels.len(),
                self.feature_dim
            )));
        }
        self.check_labels(labels)
    }

    /// Accumulates the critic gradient of
    /// `mean D(c, G(c,z)) − mean D(c, u) + penalty` and returns its terms.
    pub fn critic_backward<R: Rng + ?Sized>(
        &mut self,
        real: &Array2<f64>,
        labels: &[usize],
        lipschitz: Lipschitz,
        rng: &mut R,
    ) -> Result<CriticTerms> {
        self.check_real(real, labels)?;
        let (n, k) = (labels.len(), self.num_classes);
        let z = standard_normal(n, self.latent_dim, rng);
        let fake = self.generate(labels, &z);
        let scale = 1.0 / n as f64;

        let real_scores = self.critic.forward(&conditioned(labels, k, real));
        self.critic.backward(&Array2::from_elem((n, 1), -scale));
        let fake_scores = self.critic.forward(&conditioned(labels, k, &fake));
        self.critic.backward(&Array2::from_elem((n, 1), scale));
        let gap = fake_scores.mean().unwrap_or(0.0) - real_scores.mean().unwrap_or(0.0);

        let penalty = match lipschitz {
            Lipschitz::GradientPenalty(lambda) => {
                let eps: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
                let mut mixed = fake.clone();
                for (i, mut row) in mixed.axis_iter_mut(Axis(0)).enumerate() {
                    row *= 1.0 - eps[i];
                    row.scaled_add(eps[i], &real.row(i));
                }
                let x = conditioned(labels, k, &mixed);
                self.critic.gradient_penalty(&x, k..k + self.feature_dim, lambda)
            }
            Lipschitz::WeightClip(_) => 0.0,
        };
        Ok(CriticTerms { gap, penalty })
    }

    /// Accumulates the generator gradient of `−mean D(c, G(c,z))`.
    pub fn generator_backward<R: Rng + ?Sized>(&mut self, labels: &[usize], weight: f64, rng: &mut R) -> Result<f64> {
        if labels.is_empty() {
            return Err(GfrError::input("generator loss needs a non-empty label batch"));
        }
        self.check_labels(labels)?;
        let (n, k) = (labels.len(), self.num_classes);
        let z = standard_normal(n, self.latent_dim, rng);
        let fake = self.generator.forward(&conditioned(labels, k, &z));
        let x = conditioned(labels, k, &fake);
        let scores = self.critic.infer(&x);
        let grad = self.critic.input_gradient(&x);
        let dfake = grad.slice(s![.., k..]).mapv(|g| -weight * g / n as f64);
        self.generator.backward(&dfake);
        Ok(-scores.mean().unwrap_or(0.0))
    }

    /// Accumulates `weight ·` the gradient of the replay-alignment loss
    /// `mean ‖G(c,z) − G_prev(c,z)‖₂²` with `c` uniform over
    /// `previous_classes` and the same `z` fed to both generators.
    pub fn alignment_backward<R: Rng + ?Sized>(
        &mut self,
        previous: Option<&FeatureGan>,
        previous_classes: &[usize],
        batch_size: usize,
        weight: f64,
        rng: &mut R,
    ) -> Result<f64> {
        let prev = previous.ok_or_else(|| GfrError::config("replay alignment needs a previous generator"))?;
        if previous_classes.is_empty() {
            return Err(GfrError::config("replay alignment needs at least one previous class"));
        }
        if prev.latent_dim != self.latent_dim || prev.feature_dim != self.feature_dim {
            return Err(GfrError::config("previous generator has a different latent or feature width"));
        }
        prev.check_labels(previous_classes)?;
        self.check_labels(previous_classes)?;
        if batch_size == 0 {
            return Ok(0.0);
        }
        let labels: Vec<usize> = (0..batch_size)
            .map(|_| previous_classes[rng.random_range(0..previous_classes.len())])
            .collect();
        let z = standard_normal(batch_size, self.latent_dim, rng);
        let target = prev.generate(&labels, &z);
        let out = self.generator.forward(&conditioned(&labels, self.num_classes, &z));
        let diff = out - target;
        let loss = diff.mapv(|v| v * v).sum() / batch_size as f64;
        self.generator.backward(&(diff * (2.0 * weight / batch_size as f64)));
        Ok(loss)
    }

    pub fn zero_grad(&mut self) {
        self.generator.zero_grad();
        self.critic.zero_grad();
    }

    pub fn quantize_f32(&mut self) {
        self.generator.quantize_f32();
        self.critic.quantize_f32();
    }

    pub fn save(&self, generator_path: &Path, critic_path: &Path) -> Result<()> {
        checkpoint::save(generator_path, &self.generator_descriptor(), &self.generator)?;
        checkpoint::save(critic_path, &self.critic_descriptor(), &self.critic)
    }

    /// Rebuilds a GAN of the given shape from checkpoint files.
    pub fn load(
        generator_path: &Path,
        critic_path: &Path,
        num_classes: usize,
        feature_dim: usize,
        cfg: &GanConfig,
    ) -> Result<Self> {
        let mut gan = FeatureGan::new(num_classes, feature_dim, cfg, &mut rng_from_seed(0));
        let desc = gan.generator_descriptor();
        checkpoint::load_into(generator_path, &desc, &mut gan.generator)?;
        let desc = gan.critic_descriptor();
        checkpoint::load_into(critic_path, &desc, &mut gan.critic)?;
        Ok(gan)
    }
}

/// Critic objective on a batch of real features (no parameter change).
pub fn critic_loss<R: Rng + ?Sized>(
    gan: &FeatureGan,
    real: &Array2<f64>,
    labels: &[usize],
    lipschitz: Lipschitz,
    rng: &mut R,
) -> Result<f64> {
    Ok(gan.clone().critic_backward(real, labels, lipschitz, rng)?.total())
}

/// `−mean D(c, G(c,z))` (no parameter change).
pub fn generator_adversarial_loss<R: Rng + ?Sized>(gan: &FeatureGan, labels: &[usize], rng: &mut R) -> Result<f64> {
    gan.clone().generator_backward(labels, 1.0, rng)
}

/// Replay-alignment loss of `current` against a frozen `previous` generator
/// (no parameter change). Fails with a configuration error when there is no
/// previous generator.
pub fn replay_alignment_loss<R: Rng + ?Sized>(
    current: &FeatureGan,
    previous: Option<&FeatureGan>,
    previous_classes: &[usize],
    batch_size: usize,
    rng: &mut R,
) -> Result<f64> {
    current
        .clone()
        .alignment_backward(previous, previous_classes, batch_size, 1.0, rng)
}

fn check_finite(step: usize, what: &str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(GfrError::Training {
            step,
            message: format!("{what} became non-finite ({value})"),
        })
    }
}

/// Trains the GAN for the current task on frozen-extractor features.
///
/// With a previous GAN the networks are warm-started from it, widened to
/// `num_classes`, and every generator step adds the replay-alignment term for
/// the previous classes. Each generator step follows `n_critic` critic steps.
/// When averaging is enabled the returned generator holds the averaged
/// weights.
pub fn train_feature_gan<R: Rng + ?Sized>(
    features: &Array2<f64>,
    labels: &[usize],
    previous: Option<&FeatureGan>,
    num_classes: usize,
    cfg: &GanConfig,
    rng: &mut R,
) -> Result<(FeatureGan, GanHistory)> {
    let n = labels.len();
    if n == 0 || features.nrows() != n {
        return Err(GfrError::input("GAN training needs a non-empty, labeled feature set"));
    }
    if cfg.batch_size == 0 || cfg.n_critic == 0 {
        return Err(GfrError::config("GAN batch size and n_critic must be positive"));
    }
    let mut gan = match previous {
        Some(prev) => {
            if num_classes <= prev.num_classes {
                return Err(GfrError::config(format!(
                    "task adds no classes: previous generator covers {}, requested {num_classes}",
                    prev.num_classes
                )));
            }
            let mut g = prev.clone();
            g.extend_classes(num_classes - prev.num_classes, rng);
            g
        }
        None => FeatureGan::new(num_classes, features.ncols(), cfg, rng),
    };
    if features.ncols() != gan.feature_dim {
        return Err(GfrError::input("feature width differs from the generator output"));
    }
    gan.check_labels(labels)?;
    let previous_classes: Vec<usize> = previous.map(|p| (0..p.num_classes).collect()).unwrap_or_default();

    let mut adam_g = Adam::with_betas(cfg.learning_rate, cfg.beta1, cfg.beta2);
    let mut adam_d = Adam::with_betas(cfg.learning_rate, cfg.beta1, cfg.beta2);
    let iterations = cfg.epochs * n.div_ceil(cfg.batch_size);
    let mut history = GanHistory::default();
    let mut average = (cfg.ema_decay > 0.0).then(|| gan.generator.clone());
    let draw = |rng: &mut R| -> Vec<usize> { (0..cfg.batch_size).map(|_| rng.random_range(0..n)).collect() };

    for step in 0..iterations {
        let mut gap = 0.0;
        for _ in 0..cfg.n_critic {
            let idx = draw(rng);
            let real = features.select(Axis(0), &idx);
            let batch_labels: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            gan.critic.zero_grad();
            let terms = gan.critic_backward(&real, &batch_labels, cfg.lipschitz, rng)?;
            check_finite(step, "critic loss", terms.total())?;
            step_params(&mut adam_d, &mut gan.critic);
            if let Lipschitz::WeightClip(c) = cfg.lipschitz {
                gan.critic.clip_weights(c);
            }
            gap = terms.gap;
        }
        let idx = draw(rng);
        let batch_labels: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        gan.generator.zero_grad();
        let adversarial = gan.generator_backward(&batch_labels, 1.0, rng)?;
        check_finite(step, "generator loss", adversarial)?;
        let alignment = if previous.is_some() && cfg.alignment_weight > 0.0 {
            gan.alignment_backward(previous, &previous_classes, cfg.batch_size, cfg.alignment_weight, rng)?
        } else {
            0.0
        };
        check_finite(step, "replay alignment loss", alignment)?;
        step_params(&mut adam_g, &mut gan.generator);
        if let Some(avg) = average.as_mut() {
            update_average(avg, &mut gan.generator, cfg.ema_decay, step);
        }
        history.wasserstein.push(-gap);
        history.alignment.push(alignment);
    }
    if let Some(avg) = average {
        gan.generator = avg;
    }
    gan.zero_grad();
    gan.quantize_f32();
    Ok((gan, history))
}
