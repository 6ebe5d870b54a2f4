//! Part-based explanations for convolutional image classifiers.
//!
//! The pipeline decomposes a predicted class (holonym) into its visible parts
//! (meronyms), trains part detectors on the classifier's own frozen features,
//! localizes each part with Grad-CAM, and measures the causal weight of every
//! part by ablating its mask and recording the class-score drop. Explanation
//! quality is quantified with per-pixel localization AUC and causal
//! deletion/insertion/preservation curves.
//!
//! Module map:
//!
//! - [`kb`] — holonym–meronym knowledge base (part lists, hypernym chains,
//!   hyper-meronym filtering)
//! - [`datakit`] — part dataset construction: bbox crops, scraping, pHash
//!   dedup, PCA outlier removal, balancing augmentation, stratified splits
//! - [`netcore`] — the split classifier: frozen feature backends, trainable
//!   heads with analytic gradients, training loop, calibrated F1
//! - [`saliency`] — Grad-CAM heatmaps, percentile masks, gray ablation,
//!   score drops
//! - [`explain`] — per-image explanation reports and the global heatmap
//! - [`evalkit`] — localization AUC, causal curves, random-superpixel
//!   baselines, percentile grid search
//! - [`synthetic`] — seeded two-class shapes benchmark used by the test
//!   suite and the demo

pub mod datakit;
pub mod evalkit;
pub mod explain;
pub mod kb;
pub mod netcore;
mod rng;
pub mod saliency;
pub mod synthetic;


pub use datakit::{BBox, ImageSample, PartDataset, SampleFlag, SampleSource};
pub use explain::{ExplainConfig, Explanation, ExplanationReport, MeronymModel, PartResult};
pub use kb::{ConceptId, HolMeMap, PartEntry};
pub use netcore::{FeatureBackend, FeatureExtractor, Head, SplitClassifier, Tensor, TrainConfig};
pub use saliency::{BinaryMask, Heatmap, SaliencyConfig, ABLATION_FILL};
