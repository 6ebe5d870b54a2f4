//! The split classifier `H = f_C ∘ f_F`.
//!
//! The frozen feature extractor `f_F` runs behind [`FeatureBackend`]; the
//! trainable head `f_C` is a small layer stack with exact analytic
//! gradients, which is all Grad-CAM needs — no backbone autodiff anywhere.

mod backend;
mod head;
mod loss;
mod metrics;
mod preprocess;
pub mod tensor;
mod train;

pub use backend::{FeatureBackend, FeatureExtractor, FeatureStore, PooledProjectionBackend};
pub use head::{ForwardCache, Head, HeadGradients, Layer, Linear, Mode};
pub use loss::{softmax, softmax_xent};
pub use metrics::{calibrated_f1, confusion_on_fold};
pub use preprocess::{preprocess, standardize, IMAGENET_MEAN, IMAGENET_STD};
pub use tensor::{Tensor, TensorError};
pub use train::{train_head, EpochStats, TrainConfig, TrainOutcome};

use image::RgbImage;
use thiserror::Error;

use crate::datakit::ImageSample;

#[derive(Debug, Error)]
pub enum NetError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("backend `{backend}` unavailable: {msg}")]
    BackendUnavailable { backend: String, msg: String },
    #[error("backend `{0}` has no pixel path (feature store); cannot extract features for new or modified images")]
    PixelPathUnsupported(String),
    #[error("no stored features for origin id `{0}`")]
    MissingStoredFeatures(String),
    #[error("layer {layer} ({kind}) cannot accept input shape {shape:?}")]
    IncompatibleLayer {
        layer: usize,
        kind: String,
        shape: Vec<usize>,
    },
    #[error("final linear layer has {out} outputs but the head declares {classes} classes")]
    ClassCountMismatch { out: usize, classes: usize },
    #[error("head has no linear layer")]
    NoLinearLayer,
    #[error("forward cache is stale: head parameters changed since the forward pass")]
    StaleCache,
    #[error("class index {index} out of range for {classes} classes")]
    BadClassIndex { index: usize, classes: usize },
    #[error("fold `{0}` is empty")]
    EmptyFold(String),
    #[error("head classes {head:?} do not match dataset parts {dataset:?}")]
    ClassMismatch {
        head: Vec<String>,
        dataset: Vec<String>,
    },
    #[error("invalid train config: {0}")]
    BadTrainConfig(String),
    #[error("confusion matrix row {0} is empty (no samples with that true class)")]
    EmptyConfusionRow(usize),
    #[error("confusion matrix must be square with C >= 2, got {rows}x{cols}")]
    BadConfusionShape { rows: usize, cols: usize },
    #[error("train-time augmentation requires a pixel-capable backend, but `{0}` has none")]
    AugmentNeedsPixels(String),
}

/// Anything that yields a class probability for a raw image. Causal curves
/// and score drops are generic over this, so tests can swap in stub models.
pub trait ClassScorer {
    fn num_classes(&self) -> usize;
    fn class_probability(&self, image: &RgbImage, class_index: usize) -> Result<f32, NetError>;
}

/// Frozen extractor + trained head + class names.
pub struct SplitClassifier {
    pub extractor: FeatureExtractor,
    pub head: Head,
    pub classes: Vec<String>,
}

impl SplitClassifier {
    pub fn new(extractor: FeatureExtractor, head: Head) -> Self {
        let classes = head.classes().to_vec();
        Self {
            extractor,
            head,
            classes,
        }
    }

    /// Softmax probabilities over all classes.
    pub fn probabilities(&self, image: &RgbImage) -> Result<Vec<f32>, NetError> {
        let f = self.extractor.features_for_image(image)?;
        let (logits, _) = self.head.forward(&f, Mode::Eval)?;
        Ok(softmax(logits.data()))
    }

    /// Predicted class index and its probability.
    pub fn predict(&self, image: &RgbImage) -> Result<(usize, f32), NetError> {
        let probs = self.probabilities(image)?;
        let (idx, p) = probs
            .iter()
            .copied()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .expect("head has at least one class");
        Ok((idx, p))
    }

    /// Probabilities for a dataset sample, using stored features when the
    /// backend has them.
    pub fn probabilities_for_sample(&self, sample: &ImageSample) -> Result<Vec<f32>, NetError> {
        let f = self.extractor.features_for_sample(sample)?;
        let (logits, _) = self.head.forward(&f, Mode::Eval)?;
        Ok(softmax(logits.data()))
    }
}

impl ClassScorer for SplitClassifier {
    fn num_classes(&self) -> usize {
        self.classes.len()
    }

    fn class_probability(&self, image: &RgbImage, class_index: usize) -> Result<f32, NetError> {
        if class_index >= self.classes.len() {
            return Err(NetError::BadClassIndex {
                index: class_index,
                classes: self.classes.len(),
            });
        }
        Ok(self.probabilities(image)?[class_index])
    }
}
