//! Feature extractor, single-head classifier, frozen snapshots and losses.

mod arch;
mod extractor;
mod head;
pub mod loss;

pub use arch::{Architecture, Backbone, TapPoint};
pub use extractor::{mean_feature_distance, FeatureExtractor};
pub use head::ClassifierHead;

use std::ops::Range;
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array2, Array4};
use rand::Rng;

use crate::checkpoint;
use crate::error::Result;
use crate::nn::Parameterized;

/// Live extractor and head being trained.
#[derive(Debug, Clone)]
pub struct Model {
    pub extractor: FeatureExtractor,
    pub head: ClassifierHead,
}

impl Model {
    pub fn new<R: Rng + ?Sized>(arch: Architecture, tap: TapPoint, classes: usize, head_bias: bool, rng: &mut R) -> Self {
        let extractor = FeatureExtractor::new(arch, tap, rng);
        let head = ClassifierHead::new(classes, extractor.pooled_dim(), head_bias, rng);
        Model { extractor, head }
    }

    /// Evaluation-mode class scores.
    pub fn logits(&self, x: &Array4<f64>) -> Array2<f64> {
        self.head.logits(&self.extractor.pooled_features(x))
    }

    /// Frozen copy of the current parameters.
    pub fn snapshot(&self) -> ModelSnapshot {
        ModelSnapshot(Arc::new(self.clone()))
    }

    pub fn quantize_f32(&mut self) {
        self.extractor.quantize_f32();
        self.head.quantize_f32();
    }

    pub fn zero_grad(&mut self) {
        self.extractor.zero_grad();
        self.head.zero_grad();
    }

    pub fn save(&self, extractor_path: &Path, head_path: &Path) -> Result<()> {
        checkpoint::save(extractor_path, &self.extractor.descriptor(), &self.extractor)?;
        checkpoint::save(head_path, &self.head.descriptor(), &self.head)
    }

    /// Restores parameters into a model whose architecture and head size
    /// already match the files.
    pub fn load(&mut self, extractor_path: &Path, head_path: &Path) -> Result<()> {
        let desc = self.extractor.descriptor();
        checkpoint::load_into(extractor_path, &desc, &mut self.extractor)?;
        let desc = self.head.descriptor();
        checkpoint::load_into(head_path, &desc, &mut self.head)
    }
}

/// Immutable, cheaply shareable copy of a model taken at the end of a task.
#[derive(Debug, Clone)]
pub struct ModelSnapshot(Arc<Model>);

impl ModelSnapshot {
    pub fn extractor(&self) -> &FeatureExtractor {
        &self.0.extractor
    }

    pub fn head(&self) -> &ClassifierHead {
        &self.0.head
    }

    pub fn logits(&self, x: &Array4<f64>) -> Array2<f64> {
        self.0.logits(x)
    }

    /// Editable copy, for continuing training from the snapshot.
    pub fn to_model(&self) -> Model {
        (*self.0).clone()
    }
}

/// Class probabilities `softmax(V u)` for each row of `u`.
pub fn classify(head: &ClassifierHead, u: &Array2<f64>) -> Result<Array2<f64>> {
    head.check_input(u)?;
    if head.num_classes() == 0 {
        return Err(crate::GfrError::input("head has no classes"));
    }
    Ok(loss::softmax_rows(&head.logits(u)))
}

/// Evaluation-mode feature distillation between two extractors on a batch.
pub fn feature_distillation_loss(
    current: &FeatureExtractor,
    previous: &FeatureExtractor,
    batch: &Array4<f64>,
) -> Result<f64> {
    let a = current.extract_features(batch)?;
    let b = previous.extract_features(batch)?;
    Ok(loss::feature_distillation(&a, &b)?.0)
}

/// Evaluation-mode LwF loss of `model` against `snapshot` on a batch of
/// current-task inputs.
pub fn lwf_loss(
    model: &Model,
    snapshot: &ModelSnapshot,
    batch: &Array4<f64>,
    previous_tasks: &[Range<usize>],
    temperature: f64,
) -> Result<f64> {
    model.extractor.check_input(batch)?;
    let current = model.logits(batch);
    let previous = snapshot.logits(batch);
    Ok(loss::lwf(&current, &previous, previous_tasks, temperature)?.0)
}
