//! Part-image dataset construction.
//!
//! Builds the per-holonym dataset of labeled part images, either by cropping
//! bounding boxes out of annotated photos or by scraping (through an engine
//! interface; a filesystem mock is bundled). The raw pool is then
//! deduplicated with a perceptual hash, cleared of feature-space outliers,
//! balanced with augmentation and split into stratified folds.

mod augment;
mod crop;
mod outliers;
mod phash;
mod scrape;
mod split;

pub use augment::{augment_image, balance_augment};
pub(crate) use augment::warp_affine as warp;
pub use crop::crop_part;
pub use outliers::{outlier_scores, remove_outliers, OutlierSplit};
pub use phash::{dedupe, hamming, phash};
pub use scrape::{
    scrape_part, EngineClient, ImagePayload, MockEngine, ScrapeLimits, ScrapeReport,
};
pub use split::{split, SplitRatios};

use std::collections::BTreeMap;
use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("degenerate bounding box [{x_min},{y_min},{x_max},{y_max}] in {w}x{h} image")]
    DegenerateBox {
        x_min: u32,
        y_min: u32,
        x_max: u32,
        y_max: u32,
        w: u32,
        h: u32,
    },
    #[error("contamination {0} outside [0, 0.5)")]
    ContaminationRange(f64),
    #[error("outlier scoring needs at least 2 vectors, got {0}")]
    TooFewVectors(usize),
    #[error("feature vectors have inconsistent dimensions ({0} vs {1})")]
    RaggedFeatures(usize, usize),
    #[error("part class `{0}` has no samples")]
    EmptyClass(String),
    #[error("split ratios {0:?} do not sum to 1")]
    BadRatios([f64; 3]),
    #[error("part class `{part}` has only {count} samples; need at least 3 to split")]
    ClassTooSmall { part: String, count: usize },
    #[error("hamming threshold {0} outside [0, 64]")]
    BadHammingThreshold(u32),
    #[error("label `{label}` not in the dataset part list {parts:?}")]
    UnknownLabel { label: String, parts: Vec<String> },
    #[error("duplicate origin id `{0}`")]
    DuplicateOrigin(String),
    #[error("scrape for `{term}` produced zero images")]
    ScrapeEmpty { term: String },
    #[error("image decode failed for `{id}`: {msg}")]
    ImageDecode { id: String, msg: String },
    #[error("manifest references missing image file `{0}`")]
    MissingImage(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Where a sample came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleSource {
    Crop,
    Scrape,
    Augment,
}

/// Dedup/outlier status. Flagged samples never enter folds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleFlag {
    Kept,
    Duplicate,
    Outlier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fold {
    Train,
    Val,
    Test,
}

/// One labeled part image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    pub pixels: RgbImage,
    pub label: String,
    pub source: SampleSource,
    pub origin_id: String,
}

impl ImageSample {
    pub fn new(pixels: RgbImage, label: &str, source: SampleSource, origin_id: &str) -> Self {
        Self {
            pixels,
            label: label.to_string(),
            source,
            origin_id: origin_id.to_string(),
        }
    }
}

/// Axis-aligned pixel box, max-exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
}

impl BBox {
    pub fn new(x_min: u32, y_min: u32, x_max: u32, y_max: u32) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn width(&self) -> u32 {
        self.x_max.saturating_sub(self.x_min)
    }

    pub fn height(&self) -> u32 {
        self.y_max.saturating_sub(self.y_min)
    }

    pub fn validate(&self, img_w: u32, img_h: u32) -> Result<(), DataError> {
        if self.x_min >= self.x_max
            || self.y_min >= self.y_max
            || self.x_max > img_w
            || self.y_max > img_h
        {
            return Err(DataError::DegenerateBox {
                x_min: self.x_min,
                y_min: self.y_min,
                x_max: self.x_max,
                y_max: self.y_max,
                w: img_w,
                h: img_h,
            });
        }
        Ok(())
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x_min && x < self.x_max && y >= self.y_min && y < self.y_max
    }

    fn x_overlaps(&self, other: &BBox) -> bool {
        self.x_min < other.x_max && other.x_min < self.x_max
    }

    fn y_overlaps(&self, other: &BBox) -> bool {
        self.y_min < other.y_max && other.y_min < self.y_max
    }

    pub fn overlaps(&self, other: &BBox) -> bool {
        self.x_overlaps(other) && self.y_overlaps(other)
    }
}

/// Labeled part-image collection with dedup/outlier flags and fold
/// assignments.
#[derive(Debug, Clone, Default)]
pub struct PartDataset {
    pub holonym: String,
    pub parts: Vec<String>,
    samples: Vec<ImageSample>,
    flags: BTreeMap<String, SampleFlag>,
    folds: BTreeMap<String, Fold>,
}

impl PartDataset {
    pub fn new(holonym: &str, parts: Vec<String>) -> Self {
        Self {
            holonym: holonym.to_string(),
            parts,
            ..Default::default()
        }
    }

    pub fn push(&mut self, sample: ImageSample) -> Result<(), DataError> {
        if !self.parts.iter().any(|p| p == &sample.label) {
            return Err(DataError::UnknownLabel {
                label: sample.label.clone(),
                parts: self.parts.clone(),
            });
        }
        if self.flags.contains_key(&sample.origin_id) {
            return Err(DataError::DuplicateOrigin(sample.origin_id.clone()));
        }
        self.flags.insert(sample.origin_id.clone(), SampleFlag::Kept);
        self.samples.push(sample);
        Ok(())
    }

    pub fn samples(&self) -> &[ImageSample] {
        &self.samples
    }

    pub fn flag(&self, origin_id: &str) -> Option<SampleFlag> {
        self.flags.get(origin_id).copied()
    }

    pub fn fold(&self, origin_id: &str) -> Option<Fold> {
        self.folds.get(origin_id).copied()
    }

    /// Overwrite a sample's dedup/outlier flag. Folds assigned later only
    /// consider kept samples, so flag before splitting.
    pub fn set_flag(&mut self, origin_id: &str, flag: SampleFlag) {
        self.flags.insert(origin_id.to_string(), flag);
    }

    pub(crate) fn set_fold(&mut self, origin_id: &str, fold: Fold) {
        self.folds.insert(origin_id.to_string(), fold);
    }

    pub(crate) fn clear_folds(&mut self) {
        self.folds.clear();
    }

    pub fn is_kept(&self, origin_id: &str) -> bool {
        matches!(self.flag(origin_id), Some(SampleFlag::Kept))
    }

    /// Kept samples, i.e. not flagged duplicate or outlier.
    pub fn kept(&self) -> impl Iterator<Item = &ImageSample> {
        self.samples.iter().filter(|s| self.is_kept(&s.origin_id))
    }

    /// Kept samples assigned to `fold`.
    pub fn in_fold(&self, fold: Fold) -> impl Iterator<Item = &ImageSample> + '_ {
        self.samples
            .iter()
            .filter(move |s| self.fold(&s.origin_id) == Some(fold))
    }

    pub fn kept_count_per_class(&self) -> BTreeMap<String, usize> {
        let mut counts: BTreeMap<String, usize> =
            self.parts.iter().map(|p| (p.clone(), 0)).collect();
        for s in self.kept() {
            *counts.get_mut(&s.label).expect("label validated") += 1;
        }
        counts
    }
}

// ---------------------------------------------------------------------------
// Manifest (dataset serialization)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestSample {
    pub origin_id: String,
    pub label: String,
    pub source: SampleSource,
    pub flag: SampleFlag,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fold: Option<Fold>,
    pub file: String,
}

/// JSON manifest emitted next to the sample images.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub holonym: String,
    pub parts: Vec<String>,
    pub seed: u64,
    pub config: serde_json::Value,
    pub samples: Vec<ManifestSample>,
}

impl PartDataset {
    /// Write `manifest.json` plus one PNG per sample under `dir/images/`.
    /// Sample order in the manifest is origin-id order, so reruns are
    /// byte-identical.
    pub fn save(
        &self,
        dir: &Path,
        seed: u64,
        config: serde_json::Value,
    ) -> Result<DatasetManifest, DataError> {
        let images = dir.join("images");
        std::fs::create_dir_all(&images).map_err(|e| DataError::Io {
            path: images.display().to_string(),
            source: e,
        })?;
        let mut order: Vec<usize> = (0..self.samples.len()).collect();
        order.sort_by(|&a, &b| self.samples[a].origin_id.cmp(&self.samples[b].origin_id));
        let mut entries = Vec::with_capacity(order.len());
        for i in order {
            let s = &self.samples[i];
            let file = format!("images/{}.png", sanitize_id(&s.origin_id));
            let path = dir.join(&file);
            s.pixels.save(&path).map_err(|e| DataError::Io {
                path: path.display().to_string(),
                source: std::io::Error::new(std::io::ErrorKind::Other, e.to_string()),
            })?;
            entries.push(ManifestSample {
                origin_id: s.origin_id.clone(),
                label: s.label.clone(),
                source: s.source,
                flag: self.flag(&s.origin_id).unwrap_or(SampleFlag::Kept),
                fold: self.fold(&s.origin_id),
                file,
            });
        }
        let manifest = DatasetManifest {
            holonym: self.holonym.clone(),
            parts: self.parts.clone(),
            seed,
            config,
            samples: entries,
        };
        let path = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&path, json).map_err(|e| DataError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Ok(manifest)
    }

    /// Load a dataset previously written by [`PartDataset::save`].
    pub fn load(dir: &Path) -> Result<Self, DataError> {
        let path = dir.join("manifest.json");
        let json = std::fs::read_to_string(&path).map_err(|e| DataError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let manifest: DatasetManifest =
            serde_json::from_str(&json).map_err(|e| DataError::ImageDecode {
                id: path.display().to_string(),
                msg: e.to_string(),
            })?;
        let mut ds = PartDataset::new(&manifest.holonym, manifest.parts.clone());
        for m in &manifest.samples {
            let file = dir.join(&m.file);
            let img = image::open(&file)
                .map_err(|e| {
                    if file.exists() {
                        DataError::ImageDecode {
                            id: m.origin_id.clone(),
                            msg: e.to_string(),
                        }
                    } else {
                        DataError::MissingImage(m.file.clone())
                    }
                })?
                .to_rgb8();
            ds.push(ImageSample::new(img, &m.label, m.source, &m.origin_id))?;
            ds.set_flag(&m.origin_id, m.flag);
            if let Some(fold) = m.fold {
                ds.set_fold(&m.origin_id, fold);
            }
        }
        Ok(ds)
    }
}

fn sanitize_id(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Seeded random RGB image.
    pub fn noise_image(w: u32, h: u32, seed: u64) -> RgbImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RgbImage::from_fn(w, h, |_, _| image::Rgb([rng.gen(), rng.gen(), rng.gen()]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use testutil::noise_image;

    #[test]
    fn rejects_unknown_label_and_duplicate_origin() {
        let mut ds = PartDataset::new("horse", vec!["head".into()]);
        let img = noise_image(8, 8, 0);
        assert!(matches!(
            ds.push(ImageSample::new(img.clone(), "hoof", SampleSource::Crop, "a")),
            Err(DataError::UnknownLabel { .. })
        ));
        ds.push(ImageSample::new(img.clone(), "head", SampleSource::Crop, "a"))
            .unwrap();
        assert!(matches!(
            ds.push(ImageSample::new(img, "head", SampleSource::Crop, "a")),
            Err(DataError::DuplicateOrigin(_))
        ));
    }

    #[test]
    fn bbox_validation() {
        assert!(BBox::new(0, 0, 4, 4).validate(8, 8).is_ok());
        assert!(BBox::new(4, 0, 4, 4).validate(8, 8).is_err());
        assert!(BBox::new(0, 0, 9, 4).validate(8, 8).is_err());
    }

    #[test]
    fn manifest_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut ds = PartDataset::new("horse", vec!["head".into(), "leg".into()]);
        for i in 0..4 {
            ds.push(ImageSample::new(
                noise_image(6, 6, i),
                if i % 2 == 0 { "head" } else { "leg" },
                SampleSource::Crop,
                &format!("img{i}"),
            ))
            .unwrap();
        }
        ds.set_flag("img3", SampleFlag::Duplicate);
        ds.set_fold("img0", Fold::Train);
        ds.set_fold("img1", Fold::Val);
        ds.set_fold("img2", Fold::Test);
        ds.save(dir.path(), 7, serde_json::json!({"k": 1})).unwrap();

        let back = PartDataset::load(dir.path()).unwrap();
        assert_eq!(back.holonym, "horse");
        assert_eq!(back.samples().len(), 4);
        assert_eq!(back.flag("img3"), Some(SampleFlag::Duplicate));
        assert_eq!(back.fold("img1"), Some(Fold::Val));
        let orig: Vec<_> = ds.samples().iter().map(|s| &s.origin_id).collect();
        for id in orig {
            let a = ds.samples().iter().find(|s| &s.origin_id == id).unwrap();
            let b = back.samples().iter().find(|s| &s.origin_id == id).unwrap();
            assert_eq!(a.pixels, b.pixels, "pixels differ for {id}");
        }
    }
}
