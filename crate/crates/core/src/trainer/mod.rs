//! Per-task training with feature distillation and feature replay, the
//! baselines, per-task evaluation and the on-disk run driver.

mod run;

pub use run::{
    load_extractors, load_task_generator, load_task_model, prepare_experiment, run_experiment, task_dir, Experiment, RunOptions,
    RunOutcome, COMPLETE_MARKER,
};

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use ndarray::{concatenate, s, Array2, Array4, Axis};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::{batch_tensor, AugmentPolicy, TaskSpec, TaskStream};
use crate::error::{GfrError, Result};
use crate::eval::accuracy_from_scores;
use crate::generator::{train_feature_gan, CovarianceKind, FeatureGenerator, GanConfig, GanHistory, GaussianPrototypeBank};
use crate::model::loss::{feature_distillation, lwf, softmax_cross_entropy};
use crate::model::{Architecture, FeatureExtractor, Model, ModelSnapshot, TapPoint};
use crate::nn::{Adam, Parameterized};
use crate::rng::{stream_rng, Stream};

/// Rows per forward pass when evaluating or extracting features.
const EVAL_CHUNK: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    /// Feature distillation plus replay from a conditional feature GAN.
    OursGan,
    /// Feature distillation plus replay from per-class Gaussians.
    OursGaussian,
    /// Cross-entropy on the current task only.
    Finetune,
    /// Cross-entropy plus logit distillation of previous tasks.
    Lwf,
    /// Cross-entropy on all data seen so far.
    Joint,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::OursGan, Method::OursGaussian, Method::Finetune, Method::Lwf, Method::Joint];

    pub fn name(self) -> &'static str {
        match self {
            Method::OursGan => "ours-gan",
            Method::OursGaussian => "ours-gaussian",
            Method::Finetune => "finetune",
            Method::Lwf => "lwf",
            Method::Joint => "joint",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = GfrError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| GfrError::config(format!("unknown method `{s}`")))
    }
}

/// Everything the trainer needs to know about one method.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodConfig {
    pub method: Method,
    /// Feature distillation weight for the replay methods, LwF weight for
    /// `lwf`.
    pub distillation: f64,
    pub replay_ratio: f64,
    pub tap: TapPoint,
    pub lwf_temperature: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Padding and flip probability of the training augmentation.
    pub augment: Option<(usize, f64)>,
    pub head_bias: bool,
    /// Train with batch-norm running statistics frozen after the first task.
    pub freeze_norm: bool,
    pub covariance: CovarianceKind,
    pub gan: GanConfig,
}

impl MethodConfig {
    pub fn new(method: Method) -> Self {
        MethodConfig {
            method,
            distillation: 1.0,
            replay_ratio: 1.0,
            tap: TapPoint::Feature,
            lwf_temperature: 1.0,
            epochs: 20,
            batch_size: 64,
            learning_rate: 1e-3,
            augment: Some((2, 0.5)),
            head_bias: false,
            freeze_norm: true,
            covariance: CovarianceKind::Diagonal,
            gan: GanConfig::default(),
        }
    }

    fn replays(&self) -> bool {
        matches!(self.method, Method::OursGan | Method::OursGaussian)
    }

    pub fn feature_distillation_weight(&self) -> f64 {
        if self.replays() {
            self.distillation
        } else {
            0.0
        }
    }

    pub fn effective_replay_ratio(&self) -> f64 {
        if self.replays() {
            self.replay_ratio
        } else {
            0.0
        }
    }

    pub fn lwf_weight(&self) -> f64 {
        if self.method == Method::Lwf {
            self.distillation
        } else {
            0.0
        }
    }

    pub fn augment_policy(&self, arch: &Architecture) -> Option<AugmentPolicy> {
        self.augment
            .map(|(pad, flip)| AugmentPolicy::train(pad, arch.input.height, arch.input.width, flip))
    }
}

/// Loss terms of one optimization step, each already mean-reduced and
/// unweighted.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepTerms {
    pub current_ce: f64,
    pub replay_ce: f64,
    pub distillation: f64,
    pub lwf: f64,
}

impl StepTerms {
    /// Weighted objective that was differentiated.
    pub fn total(&self, cfg: &MethodConfig) -> f64 {
        self.current_ce
            + self.replay_ce
            + cfg.feature_distillation_weight() * self.distillation
            + cfg.lwf_weight() * self.lwf
    }

    fn add(&mut self, other: &StepTerms) {
        self.current_ce += other.current_ce;
        self.replay_ce += other.replay_ce;
        self.distillation += other.distillation;
        self.lwf += other.lwf;
    }

    fn scale(&mut self, k: f64) {
        self.current_ce *= k;
        self.replay_ce *= k;
        self.distillation *= k;
        self.lwf *= k;
    }
}

/// Mean step terms over one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub terms: StepTerms,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskReport {
    pub task: usize,
    pub epochs: Vec<EpochRecord>,
    pub gan: Option<GanHistory>,
}

/// Model, frozen previous model and replay generator between tasks.
#[derive(Debug, Clone)]
pub struct TrainState {
    /// Number of tasks trained so far.
    pub completed: usize,
    pub model: Model,
    /// Snapshot taken at the end of the last completed task.
    pub previous: Option<ModelSnapshot>,
    /// Generator fitted at the end of the last completed task.
    pub generator: Option<FeatureGenerator>,
    pub seed: u64,
}

impl TrainState {
    /// Fresh model sized for the first task's classes.
    pub fn new(arch: Architecture, stream: &TaskStream, cfg: &MethodConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let first = stream.task(1)?;
        let mut rng = stream_rng(seed, 1, Stream::Init);
        let model = Model::new(arch, cfg.tap, first.class_set.len(), cfg.head_bias, &mut rng);
        Ok(TrainState {
            completed: 0,
            model,
            previous: None,
            generator: None,
            seed,
        })
    }
}

/// Input batch with labels mapped to head positions.
pub fn load_batch<R: Rng + ?Sized>(
    stream: &TaskStream,
    train_split: bool,
    indices: &[usize],
    policy: Option<&AugmentPolicy>,
    rng: &mut R,
) -> Result<(Array4<f64>, Vec<usize>)> {
    let ds = &stream.dataset;
    let set = if train_split { &ds.train } else { &ds.test };
    let (x, labels) = batch_tensor(set, indices, &ds.normalization, policy, rng)?;
    Ok((x, labels.into_iter().map(|c| stream.class_position(c)).collect()))
}

/// Replay batch for a current batch of `current_batch` examples: labels are
/// drawn uniformly over the `previous_classes` head positions and its size is
/// `round(ratio · current_batch · previous_classes / current_classes)`.
pub fn make_replay_batch<R: Rng + ?Sized>(
    generator: Option<&FeatureGenerator>,
    previous_classes: usize,
    current_batch: usize,
    current_classes: usize,
    ratio: f64,
    rng: &mut R,
) -> Result<(Array2<f64>, Vec<usize>)> {
    if previous_classes == 0 {
        return Err(GfrError::config("replay requested on the first task, which has no previous classes"));
    }
    let gen = generator.ok_or_else(|| GfrError::config("replay requested without a fitted generator"))?;
    if current_classes == 0 {
        return Err(GfrError::config("current task has no classes"));
    }
    let count = (ratio * current_batch as f64 * previous_classes as f64 / current_classes as f64).round() as usize;
    let labels: Vec<usize> = (0..count).map(|_| rng.random_range(0..previous_classes)).collect();
    if count == 0 {
        return Ok((Array2::zeros((0, gen.feature_dim())), labels));
    }
    Ok((gen.sample(&labels, rng)?, labels))
}

/// Accumulates the gradients of one step into `model` and returns the loss
/// terms. Replay features enter at the tap and are concatenated with the
/// current batch before the upper blocks; their gradient stops at the tap.
pub fn training_step(
    model: &mut Model,
    previous: Option<&ModelSnapshot>,
    cfg: &MethodConfig,
    previous_tasks: &[Range<usize>],
    x: &Array4<f64>,
    labels: &[usize],
    replay: Option<(&Array2<f64>, &[usize])>,
) -> Result<StepTerms> {
    model.extractor.check_input(x)?;
    let n = x.dim().0;
    if labels.len() != n {
        return Err(GfrError::input(format!("{} labels for a batch of {n}", labels.len())));
    }
    let fd_weight = cfg.feature_distillation_weight();
    let lwf_weight = cfg.lwf_weight();
    let mut terms = StepTerms::default();

    let u = model.extractor.forward_to_tap(x);
    let replay = replay.filter(|(r, _)| r.nrows() > 0);
    let joined = match replay {
        Some((r, rl)) => {
            if r.ncols() != u.ncols() || rl.len() != r.nrows() {
                return Err(GfrError::input(format!(
                    "replay batch {}x{} with {} labels does not match tap width {}",
                    r.nrows(),
                    r.ncols(),
                    rl.len(),
                    u.ncols()
                )));
            }
            concatenate(Axis(0), &[u.view(), r.view()]).expect("equal widths")
        }
        None => u.clone(),
    };
    let pooled = model.extractor.forward_upper(&joined);
    let logits = model.head.forward(&pooled);

    let current_logits = logits.slice(s![..n, ..]).to_owned();
    let (ce, mut dcur) = softmax_cross_entropy(&current_logits, labels)?;
    terms.current_ce = ce;
    if lwf_weight > 0.0 {
        if let Some(prev) = previous {
            let (l, g) = lwf(&current_logits, &prev.logits(x), previous_tasks, cfg.lwf_temperature)?;
            terms.lwf = l;
            dcur.scaled_add(lwf_weight, &g);
        }
    }
    let dlogits = match replay {
        Some((_, rl)) => {
            let (ce, drep) = softmax_cross_entropy(&logits.slice(s![n.., ..]).to_owned(), rl)?;
            terms.replay_ce = ce;
            concatenate(Axis(0), &[dcur.view(), drep.view()]).expect("equal widths")
        }
        None => dcur,
    };

    let dpooled = model.head.backward(&dlogits);
    let dtap = model.extractor.backward_upper(&dpooled);
    let mut du = dtap.slice(s![..n, ..]).to_owned();
    if fd_weight > 0.0 {
        if let Some(prev) = previous {
            let (l, g) = feature_distillation(&u, &prev.extractor().infer_to_tap(x))?;
            terms.distillation = l;
            du.scaled_add(fd_weight, &g);
        }
    }
    model.extractor.backward_from_tap(&du);
    Ok(terms)
}

/// Evaluation-mode features at the configured tap for dataset rows, with
/// labels as head positions.
pub fn split_features(
    extractor: &FeatureExtractor,
    stream: &TaskStream,
    train_split: bool,
    indices: &[usize],
) -> Result<(Array2<f64>, Vec<usize>)> {
    let mut rng = stream_rng(0, 0, Stream::Probe);
    let mut parts = Vec::new();
    let mut labels = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(EVAL_CHUNK) {
        let (x, l) = load_batch(stream, train_split, chunk, None, &mut rng)?;
        parts.push(extractor.extract_features(&x)?);
        labels.extend(l);
    }
    if parts.is_empty() {
        return Ok((Array2::zeros((0, extractor.tap_dim(extractor.tap()))), labels));
    }
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    let features = concatenate(Axis(0), &views).expect("equal widths");
    Ok((features, labels))
}

/// Unaugmented test images of task `t`, at most `cap` of them, in split
/// order.
pub fn task_probe(stream: &TaskStream, t: usize, cap: usize) -> Result<Array4<f64>> {
    let task = stream.task(t)?;
    let take = task.test.len().min(cap);
    if take == 0 {
        return Err(GfrError::input(format!("task {t} has no test examples to probe with")));
    }
    let (x, _) = load_batch(stream, false, &task.test[..take], None, &mut stream_rng(0, 0, Stream::Probe))?;
    Ok(x)
}

/// Test accuracy on one task using every class the head currently covers.
pub fn evaluate_task(model: &Model, stream: &TaskStream, task: &TaskSpec) -> Result<f64> {
    let mut rng = stream_rng(0, 0, Stream::Probe);
    let mut correct = 0.0;
    for chunk in task.test.chunks(EVAL_CHUNK) {
        let (x, labels) = load_batch(stream, false, chunk, None, &mut rng)?;
        let logits = model.logits(&x);
        correct += accuracy_from_scores(&logits, &labels)? * chunk.len() as f64;
    }
    if task.test.is_empty() {
        return Err(GfrError::input(format!("task {} has no test examples", task.task_index)));
    }
    Ok(correct / task.test.len() as f64)
}

/// Accuracies on tasks `1..=t` after training task `t`.
pub fn evaluate_seen(model: &Model, stream: &TaskStream, t: usize) -> Result<Vec<f64>> {
    (1..=t).map(|j| evaluate_task(model, stream, stream.task(j)?)).collect()
}

fn check_finite(step: usize, terms: &StepTerms, cfg: &MethodConfig) -> Result<()> {
    let total = terms.total(cfg);
    if total.is_finite() {
        Ok(())
    } else {
        Err(GfrError::Training {
            step,
            message: format!("loss became non-finite ({total})"),
        })
    }
}

/// Trains task `t`, which must directly follow the last completed task, then
/// freezes a snapshot and fits the replay generator for the classes seen so
/// far. Writes one line per optimization step to `log`.
pub fn train_task(
    state: &mut TrainState,
    stream: &TaskStream,
    cfg: &MethodConfig,
    t: usize,
    log: &mut dyn FnMut(String),
) -> Result<TaskReport> {
    if t != state.completed + 1 {
        return Err(GfrError::config(format!(
            "task {t} cannot follow {} completed tasks",
            state.completed
        )));
    }
    if cfg.batch_size == 0 {
        return Err(GfrError::config("batch size must be positive"));
    }
    let task = stream.task(t)?.clone();
    let seed = state.seed;
    if t > 1 {
        state
            .model
            .head
            .extend(task.class_set.len(), &mut stream_rng(seed, t, Stream::HeadGrowth))?;
    }
    state.model.extractor.set_frozen_statistics(cfg.freeze_norm && t > 1);
    let previous_classes = task.class_offset;
    let previous_tasks: Vec<Range<usize>> = (1..t).map(|j| stream.tasks[j - 1].class_range()).collect();
    let replay_on = t > 1 && cfg.effective_replay_ratio() > 0.0;

    let mut indices: Vec<usize> = if cfg.method == Method::Joint {
        stream.tasks[..t].iter().flat_map(|task| task.train.iter().copied()).collect()
    } else {
        task.train.clone()
    };
    let policy = cfg.augment_policy(state.model.extractor.architecture());
    let mut shuffle_rng = stream_rng(seed, t, Stream::Shuffle);
    let mut augment_rng = stream_rng(seed, t, Stream::Augment);
    let mut replay_rng = stream_rng(seed, t, Stream::Replay);
    let mut adam = Adam::new(cfg.learning_rate);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut step = 0;

    for epoch in 0..cfg.epochs {
        indices.shuffle(&mut shuffle_rng);
        let mut sum = StepTerms::default();
        let mut steps = 0;
        for chunk in indices.chunks(cfg.batch_size) {
            let (x, labels) = load_batch(stream, true, chunk, policy.as_ref(), &mut augment_rng)?;
            let replay = if replay_on {
                Some(make_replay_batch(
                    state.generator.as_ref(),
                    previous_classes,
                    chunk.len(),
                    task.class_set.len(),
                    cfg.effective_replay_ratio(),
                    &mut replay_rng,
                )?)
            } else {
                None
            };
            state.model.zero_grad();
            let terms = training_step(
                &mut state.model,
                state.previous.as_ref(),
                cfg,
                &previous_tasks,
                &x,
                &labels,
                replay.as_ref().map(|(r, l)| (r, l.as_slice())),
            )?;
            check_finite(step, &terms, cfg)?;
            let mut params = Vec::new();
            state.model.extractor.params_mut(&mut params);
            state.model.head.params_mut(&mut params);
            adam.step(params);
            log(format!(
                "task={t} epoch={} step={step} current_ce={:.6} replay_ce={:.6} distillation={:.6} lwf={:.6}",
                epoch + 1,
                terms.current_ce,
                terms.replay_ce,
                terms.distillation,
                terms.lwf
            ));
            sum.add(&terms);
            steps += 1;
            step += 1;
        }
        if steps > 0 {
            sum.scale(1.0 / steps as f64);
        }
        epochs.push(EpochRecord {
            epoch: epoch + 1,
            steps,
            terms: sum,
        });
    }

    state.model.extractor.set_frozen_statistics(false);
    state.model.quantize_f32();
    let gan = fit_generator(state, stream, cfg, &task)?;
    if let Some(h) = &gan {
        log(format!(
            "task={t} gan_iterations={} wasserstein={:.6} alignment={:.6}",
            h.wasserstein.len(),
            h.wasserstein.last().copied().unwrap_or(f64::NAN),
            h.alignment.last().copied().unwrap_or(0.0)
        ));
    }
    state.previous = Some(state.model.snapshot());
    state.completed = t;
    Ok(TaskReport { task: t, epochs, gan })
}

fn fit_generator(
    state: &mut TrainState,
    stream: &TaskStream,
    cfg: &MethodConfig,
    task: &TaskSpec,
) -> Result<Option<GanHistory>> {
    if !cfg.replays() {
        state.generator = None;
        return Ok(None);
    }
    let (features, labels) = split_features(&state.model.extractor, stream, true, &task.train)?;
    let classes: Vec<usize> = task.class_range().collect();
    let mut rng = stream_rng(state.seed, task.task_index, Stream::Generator);
    match cfg.method {
        Method::OursGaussian => {
            let mut bank = match state.generator.take() {
                Some(FeatureGenerator::Gaussian(bank)) => bank,
                _ => GaussianPrototypeBank::new(features.ncols(), cfg.covariance),
            };
            bank.fit(&features, &labels, &classes)?;
            bank.quantize_f32();
            state.generator = Some(FeatureGenerator::Gaussian(bank));
            Ok(None)
        }
        _ => {
            let previous = match &state.generator {
                Some(FeatureGenerator::Gan(g)) => Some(g),
                _ => None,
            };
            let (gan, history) = train_feature_gan(&features, &labels, previous, task.class_range().end, &cfg.gan, &mut rng)?;
            state.generator = Some(FeatureGenerator::Gan(gan));
            Ok(Some(history))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_task_stream, synthetic_dataset, ImageGeometry, SyntheticSpec};
    use crate::rng::rng_from_seed;
    use ndarray::Array;
    use std::sync::Arc;

    fn stream(classes: usize, tasks: usize) -> TaskStream {
        let ds = synthetic_dataset(&SyntheticSpec {
            num_classes: classes,
            image_side: 16,
            train_per_class: 12,
            test_per_class: 4,
            seed: 3,
        })
        .unwrap();
        build_task_stream(Arc::new(ds), 0.5, tasks, 5).unwrap()
    }

    fn arch() -> Architecture {
        Architecture::small_cnn(ImageGeometry::new(16, 16, 3), [4, 4, 6, 8])
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("icarl".parse::<Method>().is_err());
    }

    #[test]
    fn baselines_disable_replay_and_distillation() {
        for m in [Method::Finetune, Method::Lwf, Method::Joint] {
            let cfg = MethodConfig::new(m);
            assert_eq!(cfg.feature_distillation_weight(), 0.0);
            assert_eq!(cfg.effective_replay_ratio(), 0.0);
        }
        assert_eq!(MethodConfig::new(Method::Lwf).lwf_weight(), 1.0);
        assert_eq!(MethodConfig::new(Method::OursGan).lwf_weight(), 0.0);
    }

    #[test]
    fn replay_batch_size_and_label_range() {
        let mut bank = GaussianPrototypeBank::new(2, CovarianceKind::Diagonal);
        let f = Array::from_shape_fn((10, 2), |(i, j)| (i * 3 + j) as f64 * 0.1);
        let labels: Vec<usize> = (0..10).map(|i| i % 5).collect();
        bank.fit(&f, &labels, &[0, 1, 2, 3, 4]).unwrap();
        let gen = FeatureGenerator::Gaussian(bank);
        let mut rng = rng_from_seed(1);
        let (r, l) = make_replay_batch(Some(&gen), 5, 10, 5, 1.0, &mut rng).unwrap();
        assert_eq!(r.dim(), (10, 2));
        assert!(l.iter().all(|&c| c < 5));
        let (r, _) = make_replay_batch(Some(&gen), 5, 10, 5, 0.5, &mut rng).unwrap();
        assert_eq!(r.nrows(), 5);
        assert!(matches!(
            make_replay_batch(Some(&gen), 0, 10, 5, 1.0, &mut rng),
            Err(GfrError::Config(_))
        ));
        assert!(matches!(
            make_replay_batch(None, 5, 10, 5, 1.0, &mut rng),
            Err(GfrError::Config(_))
        ));
    }

    #[test]
    fn replay_gradient_stops_at_the_tap() {
        let s = stream(4, 1);
        let cfg = MethodConfig::new(Method::OursGaussian);
        let mut model = Model::new(arch(), TapPoint::Feature, 4, false, &mut rng_from_seed(2));
        let task = s.task(1).unwrap();
        let (x, labels) = load_batch(&s, true, &task.train[..4], None, &mut rng_from_seed(0)).unwrap();
        let replay = Array::from_shape_fn((6, 8), |(i, j)| ((i + 2 * j) as f64).cos());
        let rl = vec![0usize, 1, 0, 1, 0, 1];

        model.zero_grad();
        training_step(&mut model, None, &cfg, &[], &x, &labels, None).unwrap();
        let mut base = Vec::new();
        model.extractor.params_mut(&mut base);
        let base: Vec<_> = base.iter().map(|p| p.grad.clone()).collect();

        model.zero_grad();
        let terms = training_step(&mut model, None, &cfg, &[], &x, &labels, Some((&replay, &rl))).unwrap();
        assert!(terms.replay_ce > 0.0);
        let mut with = Vec::new();
        model.extractor.params_mut(&mut with);
        for (a, b) in base.iter().zip(&with) {
            assert_eq!(a, &b.grad);
        }
    }

    #[test]
    fn old_head_rows_receive_replay_gradient() {
        let s = stream(4, 1);
        let cfg = MethodConfig::new(Method::OursGaussian);
        let mut model = Model::new(arch(), TapPoint::Feature, 4, false, &mut rng_from_seed(2));
        let task = s.task(1).unwrap();
        let (x, _) = load_batch(&s, true, &task.train[..4], None, &mut rng_from_seed(0)).unwrap();
        let labels = vec![2, 3, 2, 3];
        let replay = Array::from_shape_fn((4, 8), |(i, j)| ((i * 5 + j) as f64).sin());
        let rl = vec![0usize, 1, 0, 1];
        model.zero_grad();
        training_step(&mut model, None, &cfg, &[], &x, &labels, Some((&replay, &rl))).unwrap();
        let mut params = Vec::new();
        model.head.params_mut(&mut params);
        let g = &params[0].grad;
        for row in 0..2 {
            assert!(g.row(row).iter().any(|v| v.abs() > 1e-9), "row {row} got no gradient");
        }
    }

    #[test]
    fn second_task_requires_first() {
        let s = stream(4, 1);
        let cfg = MethodConfig::new(Method::Finetune);
        let mut state = TrainState::new(arch(), &s, &cfg, 1).unwrap();
        assert!(matches!(
            train_task(&mut state, &s, &cfg, 2, &mut |_| {}),
            Err(GfrError::Config(_))
        ));
    }

    #[test]
    fn snapshot_matches_end_of_task_model() {
        let s = stream(4, 1);
        let mut cfg = MethodConfig::new(Method::OursGaussian);
        cfg.epochs = 1;
        cfg.batch_size = 8;
        let mut state = TrainState::new(arch(), &s, &cfg, 4).unwrap();
        train_task(&mut state, &s, &cfg, 1, &mut |_| {}).unwrap();
        let snap = state.previous.clone().unwrap();
        let (x, _) = load_batch(&s, false, &s.task(1).unwrap().test, None, &mut rng_from_seed(0)).unwrap();
        assert_eq!(snap.logits(&x), state.model.logits(&x));
        train_task(&mut state, &s, &cfg, 2, &mut |_| {}).unwrap();
        assert_ne!(snap.logits(&x).ncols(), state.model.logits(&x).ncols());
        assert_eq!(state.generator.as_ref().unwrap().covered_classes(), vec![0, 1, 2, 3]);
    }
}
