//! Frozen feature extraction backends.
//!
//! Two backends are bundled. [`PooledProjectionBackend`] downsamples the
//! standardized input into a grid and applies a seeded random channel
//! projection — a cheap, fully deterministic stand-in for a convolutional
//! trunk that keeps the whole pipeline runnable without any deep-learning
//! runtime. [`FeatureStore`] serves precomputed feature maps (e.g. exported
//! from a real backbone) keyed by sample origin id; it has no pixel path,
//! so stages that probe modified images need a pixel-capable backend.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::preprocess::{preprocess, INPUT_SIDE};
use super::{NetError, Tensor};
use crate::datakit::ImageSample;

/// A frozen image-to-feature-map function.
///
/// Implementations must be deterministic: the same preprocessed tensor maps
/// to a bit-identical feature map.
pub trait FeatureBackend: Send + Sync {
    fn name(&self) -> &str;

    /// Declared output shape (channels, height, width).
    fn output_shape(&self) -> [usize; 3];

    /// Feature map for a preprocessed input tensor.
    fn extract(&self, input: &Tensor) -> Result<Tensor, NetError>;

    /// Stored feature map for a known sample, if this backend caches by id.
    fn stored(&self, _origin_id: &str) -> Option<Result<Tensor, NetError>> {
        None
    }

    /// Whether [`FeatureBackend::extract`] works. Feature stores return false.
    fn supports_pixels(&self) -> bool {
        true
    }

    /// Identity string for cache keys; must change whenever the backend
    /// would produce different features.
    fn fingerprint(&self) -> String {
        let [k, h, w] = self.output_shape();
        format!("{}-{k}x{h}x{w}", self.name())
    }
}

/// Preprocess-and-extract wrapper enforcing the declared output shape,
/// with an optional on-disk feature cache keyed by sample origin id.
pub struct FeatureExtractor {
    backend: Box<dyn FeatureBackend>,
    cache_dir: Option<PathBuf>,
}

impl FeatureExtractor {
    pub fn new(backend: Box<dyn FeatureBackend>) -> Self {
        Self {
            backend,
            cache_dir: None,
        }
    }

    /// Cache per-sample features under `dir`. Entries are keyed by the
    /// backend fingerprint plus origin id, so switching backend parameters
    /// never serves stale tensors.
    pub fn with_cache(backend: Box<dyn FeatureBackend>, dir: &Path) -> Self {
        Self {
            backend,
            cache_dir: Some(dir.to_path_buf()),
        }
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    pub fn output_shape(&self) -> [usize; 3] {
        self.backend.output_shape()
    }

    pub fn supports_pixels(&self) -> bool {
        self.backend.supports_pixels()
    }

    /// Extract from a preprocessed tensor, verifying the declared shape.
    pub fn extract(&self, input: &Tensor) -> Result<Tensor, NetError> {
        let out = self.backend.extract(input)?;
        let [k, h, w] = self.backend.output_shape();
        out.expect_shape(&[k, h, w])?;
        Ok(out)
    }

    /// Features for a raw image via the pixel path.
    pub fn features_for_image(&self, image: &RgbImage) -> Result<Tensor, NetError> {
        if !self.backend.supports_pixels() {
            return Err(NetError::PixelPathUnsupported(self.backend.name().into()));
        }
        let x = preprocess(image)?;
        self.extract(&x)
    }

    /// Features for a dataset sample: stored features win, then the disk
    /// cache, otherwise the pixel path runs (and fills the cache).
    pub fn features_for_sample(&self, sample: &ImageSample) -> Result<Tensor, NetError> {
        if let Some(found) = self.backend.stored(&sample.origin_id) {
            let t = found?;
            let [k, h, w] = self.backend.output_shape();
            t.expect_shape(&[k, h, w])?;
            return Ok(t);
        }
        if !self.backend.supports_pixels() {
            return Err(NetError::MissingStoredFeatures(sample.origin_id.clone()));
        }
        let cache_file = self.cache_dir.as_ref().map(|dir| {
            dir.join(format!(
                "{}-{}.htf1",
                self.backend.fingerprint(),
                sanitize(&sample.origin_id)
            ))
        });
        if let Some(file) = &cache_file {
            if file.exists() {
                let t = Tensor::load(file)?;
                let [k, h, w] = self.backend.output_shape();
                t.expect_shape(&[k, h, w])?;
                return Ok(t);
            }
        }
        let t = self.features_for_image(&sample.pixels)?;
        if let Some(file) = &cache_file {
            if let Some(parent) = file.parent() {
                let _ = std::fs::create_dir_all(parent);
            }
            t.save(file)?;
        }
        Ok(t)
    }
}

fn sanitize(id: &str) -> String {
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

// ---------------------------------------------------------------------------
// Pooled projection backend
// ---------------------------------------------------------------------------

/// Average-pool the standardized input to a `grid x grid` map, then apply a
/// seeded random per-cell channel projection with relu.
pub struct PooledProjectionBackend {
    channels: usize,
    grid: usize,
    seed: u64,
    weight: Vec<f32>, // channels x 3
    bias: Vec<f32>,
}

impl PooledProjectionBackend {
    pub fn new(channels: usize, grid: usize, seed: u64) -> Self {
        assert!(channels >= 1 && grid >= 1 && INPUT_SIDE as usize % grid == 0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weight: Vec<f32> = (0..channels * 3)
            .map(|_| rng.gen_range(-1.0f32..=1.0))
            .collect();
        let bias: Vec<f32> = (0..channels).map(|_| rng.gen_range(-0.3f32..=0.3)).collect();
        Self {
            channels,
            grid,
            seed,
            weight,
            bias,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

impl FeatureBackend for PooledProjectionBackend {
    fn name(&self) -> &str {
        "pooled-projection"
    }

    fn output_shape(&self) -> [usize; 3] {
        [self.channels, self.grid, self.grid]
    }

    fn fingerprint(&self) -> String {
        format!(
            "pooled-projection-{}x{}-s{}",
            self.channels, self.grid, self.seed
        )
    }

    fn extract(&self, input: &Tensor) -> Result<Tensor, NetError> {
        let side = INPUT_SIDE as usize;
        input.expect_shape(&[3, side, side])?;
        let cell = side / self.grid;
        let data = input.data();
        // Average each color channel per grid cell.
        let mut pooled = vec![0.0f32; 3 * self.grid * self.grid];
        let inv = 1.0 / (cell * cell) as f32;
        for c in 0..3 {
            for gy in 0..self.grid {
                for gx in 0..self.grid {
                    let mut acc = 0.0f32;
                    for dy in 0..cell {
                        let y = gy * cell + dy;
                        let row = c * side * side + y * side + gx * cell;
                        for dx in 0..cell {
                            acc += data[row + dx];
                        }
                    }
                    pooled[c * self.grid * self.grid + gy * self.grid + gx] = acc * inv;
                }
            }
        }
        // Project to output channels, relu.
        let gsz = self.grid * self.grid;
        let mut out = vec![0.0f32; self.channels * gsz];
        for k in 0..self.channels {
            let w = &self.weight[k * 3..k * 3 + 3];
            let b = self.bias[k];
            for i in 0..gsz {
                let v = w[0] * pooled[i] + w[1] * pooled[gsz + i] + w[2] * pooled[2 * gsz + i] + b;
                out[k * gsz + i] = v.max(0.0);
            }
        }
        Ok(Tensor::new(vec![self.channels, self.grid, self.grid], out)?)
    }
}

// ---------------------------------------------------------------------------
// Feature store backend
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct StoreIndex {
    shape: [usize; 3],
    entries: BTreeMap<String, String>,
}

/// Precomputed feature maps on disk: `index.json` plus one HTF1 file per
/// sample.
pub struct FeatureStore {
    dir: PathBuf,
    index: StoreIndex,
}

impl FeatureStore {
    pub fn open(dir: &Path) -> Result<Self, NetError> {
        let path = dir.join("index.json");
        let json = std::fs::read_to_string(&path).map_err(|e| NetError::BackendUnavailable {
            backend: "feature-store".into(),
            msg: format!("{}: {e}", path.display()),
        })?;
        let index: StoreIndex =
            serde_json::from_str(&json).map_err(|e| NetError::BackendUnavailable {
                backend: "feature-store".into(),
                msg: format!("{}: {e}", path.display()),
            })?;
        Ok(Self {
            dir: dir.to_path_buf(),
            index,
        })
    }

    /// Create an empty store with a declared shape.
    pub fn create(dir: &Path, shape: [usize; 3]) -> Result<Self, NetError> {
        std::fs::create_dir_all(dir).map_err(|e| NetError::BackendUnavailable {
            backend: "feature-store".into(),
            msg: e.to_string(),
        })?;
        let store = Self {
            dir: dir.to_path_buf(),
            index: StoreIndex {
                shape,
                entries: BTreeMap::new(),
            },
        };
        store.write_index()?;
        Ok(store)
    }

    pub fn insert(&mut self, origin_id: &str, features: &Tensor) -> Result<(), NetError> {
        features.expect_shape(&self.index.shape)?;
        let file = format!("{}.htf1", self.index.entries.len());
        features.save(&self.dir.join(&file))?;
        self.index.entries.insert(origin_id.to_string(), file);
        self.write_index()
    }

    fn write_index(&self) -> Result<(), NetError> {
        let json = serde_json::to_string_pretty(&self.index).expect("index serializes");
        std::fs::write(self.dir.join("index.json"), json).map_err(|e| {
            NetError::BackendUnavailable {
                backend: "feature-store".into(),
                msg: e.to_string(),
            }
        })
    }

    pub fn len(&self) -> usize {
        self.index.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.entries.is_empty()
    }
}

impl FeatureBackend for FeatureStore {
    fn name(&self) -> &str {
        "feature-store"
    }

    fn output_shape(&self) -> [usize; 3] {
        self.index.shape
    }

    fn extract(&self, _input: &Tensor) -> Result<Tensor, NetError> {
        Err(NetError::PixelPathUnsupported(self.name().into()))
    }

    fn stored(&self, origin_id: &str) -> Option<Result<Tensor, NetError>> {
        let file = self.index.entries.get(origin_id)?;
        Some(Tensor::load(&self.dir.join(file)).map_err(NetError::from))
    }

    fn supports_pixels(&self) -> bool {
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datakit::testutil::noise_image;
    use crate::netcore::TensorError;
    use crate::datakit::SampleSource;

    #[test]
    fn pooled_projection_is_deterministic_and_shaped() {
        let b = PooledProjectionBackend::new(8, 14, 42);
        let fe = FeatureExtractor::new(Box::new(b));
        let img = noise_image(224, 224, 7);
        let a = fe.features_for_image(&img).unwrap();
        let b = fe.features_for_image(&img).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shape(), &[8, 14, 14]);
        assert!(a.data().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn zero_input_through_identity_pool_stub_is_zero() {
        // Identity-pool stub: average each color channel per cell, no
        // projection.
        struct IdentityPool;
        impl FeatureBackend for IdentityPool {
            fn name(&self) -> &str {
                "identity-pool"
            }
            fn output_shape(&self) -> [usize; 3] {
                [3, 14, 14]
            }
            fn extract(&self, input: &Tensor) -> Result<Tensor, NetError> {
                input.expect_shape(&[3, 224, 224])?;
                let mut out = vec![0.0f32; 3 * 14 * 14];
                for c in 0..3 {
                    for gy in 0..14 {
                        for gx in 0..14 {
                            let mut acc = 0.0;
                            for dy in 0..16 {
                                for dx in 0..16 {
                                    acc += input.data()
                                        [c * 224 * 224 + (gy * 16 + dy) * 224 + gx * 16 + dx];
                                }
                            }
                            out[c * 196 + gy * 14 + gx] = acc / 256.0;
                        }
                    }
                }
                Ok(Tensor::new(vec![3, 14, 14], out)?)
            }
        }
        let zero = Tensor::zeros(vec![3, 224, 224]);
        let out = IdentityPool.extract(&zero).unwrap();
        assert!(out.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn store_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let t = Tensor::new(vec![2, 3, 3], (0..18).map(|i| i as f32 * 0.5 - 3.0).collect())
            .unwrap();
        let mut store = FeatureStore::create(dir.path(), [2, 3, 3]).unwrap();
        store.insert("sample-a", &t).unwrap();

        let reopened = FeatureStore::open(dir.path()).unwrap();
        let got = reopened.stored("sample-a").unwrap().unwrap();
        assert_eq!(got, t);
        assert!(reopened.stored("missing").is_none());
    }

    #[test]
    fn store_has_no_pixel_path() {
        let dir = tempfile::tempdir().unwrap();
        let store = FeatureStore::create(dir.path(), [2, 3, 3]).unwrap();
        let fe = FeatureExtractor::new(Box::new(store));
        let img = noise_image(224, 224, 1);
        assert!(matches!(
            fe.features_for_image(&img),
            Err(NetError::PixelPathUnsupported(_))
        ));
        let sample = ImageSample::new(img, "p", SampleSource::Crop, "unknown");
        assert!(matches!(
            fe.features_for_sample(&sample),
            Err(NetError::MissingStoredFeatures(_))
        ));
    }

    #[test]
    fn disk_cache_round_trips_and_respects_fingerprint() {
        let cache = tempfile::tempdir().unwrap();
        let img = noise_image(224, 224, 9);
        let sample = ImageSample::new(img, "p", SampleSource::Crop, "s-1");

        let fe = FeatureExtractor::with_cache(
            Box::new(PooledProjectionBackend::new(4, 14, 5)),
            cache.path(),
        );
        let first = fe.features_for_sample(&sample).unwrap();
        assert_eq!(std::fs::read_dir(cache.path()).unwrap().count(), 1);
        let second = fe.features_for_sample(&sample).unwrap();
        assert_eq!(first, second);

        // A different seed has a different fingerprint: no stale hit.
        let other = FeatureExtractor::with_cache(
            Box::new(PooledProjectionBackend::new(4, 14, 6)),
            cache.path(),
        );
        let third = other.features_for_sample(&sample).unwrap();
        assert_ne!(first, third);
        assert_eq!(std::fs::read_dir(cache.path()).unwrap().count(), 2);
    }

    #[test]
    fn declared_shape_is_enforced() {
        struct WrongShape;
        impl FeatureBackend for WrongShape {
            fn name(&self) -> &str {
                "wrong"
            }
            fn output_shape(&self) -> [usize; 3] {
                [4, 2, 2]
            }
            fn extract(&self, _input: &Tensor) -> Result<Tensor, NetError> {
                Ok(Tensor::zeros(vec![4, 2, 3]))
            }
        }
        let fe = FeatureExtractor::new(Box::new(WrongShape));
        let img = noise_image(224, 224, 1);
        assert!(matches!(
            fe.features_for_image(&img),
            Err(NetError::Tensor(TensorError::ShapeMismatch { .. }))
        ));
    }
}
