//! Run configuration: one TOML file, command-line overrides, full snapshot
//! embedded in every output for provenance.

use std::path::{Path, PathBuf};

use partscope_core::datakit::SplitRatios;
use partscope_core::kb::{load_kb, HolMeMap, IMAGENET_VISA_KB, PASCAL_PART_KB};
use partscope_core::netcore::{
    FeatureExtractor, FeatureStore, Head, PooledProjectionBackend, TrainConfig,
};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    /// Master seed; every randomized stage derives from it.
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub kb: KbConfig,
    pub backend: BackendConfig,
    /// Directory holding the holonym classifier head (head.json + HTF1).
    #[serde(default)]
    pub holonym_model: Option<PathBuf>,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub scrape: Option<ScrapeConfig>,
    #[serde(default)]
    pub dedup: DedupConfig,
    #[serde(default)]
    pub outliers: OutlierConfig,
    #[serde(default)]
    pub split: SplitRatios,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub explain: ExplainSection,
    #[serde(default)]
    pub eval: EvalSection,
    /// Base directory for relative paths (the config file's directory).
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct KbConfig {
    /// "pascal", "imagenet", or unset when `path` is given.
    #[serde(default)]
    pub builtin: Option<String>,
    #[serde(default)]
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackendConfig {
    /// "projection" (pooled seeded color projections) or "store".
    pub kind: String,
    #[serde(default = "default_channels")]
    pub channels: usize,
    #[serde(default = "default_grid")]
    pub grid: usize,
    /// Projection seed; defaults to the master seed.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Feature-store directory for kind = "store".
    #[serde(default)]
    pub path: Option<PathBuf>,
}

fn default_channels() -> usize {
    16
}

fn default_grid() -> usize {
    14
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DataConfig {
    /// Ingestion layout root: <root>/<holonym>/<part>/<files>.
    #[serde(default)]
    pub root: Option<PathBuf>,
    /// Bounding-box sidecar JSON.
    #[serde(default)]
    pub annotations: Option<PathBuf>,
    /// Root for images referenced by the sidecar.
    #[serde(default)]
    pub images: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScrapeConfig {
    pub engines: Vec<EngineConfig>,
    #[serde(default = "default_similar")]
    pub similar: usize,
}

fn default_similar() -> usize {
    5
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EngineConfig {
    pub name: String,
    /// Fixture root served by the bundled mock engine.
    pub root: PathBuf,
    pub limit: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DedupConfig {
    pub hamming: u32,
}

impl Default for DedupConfig {
    fn default() -> Self {
        Self { hamming: 10 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutlierConfig {
    pub contamination: f64,
}

impl Default for OutlierConfig {
    fn default() -> Self {
        Self { contamination: 0.15 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f32,
    pub momentum: f32,
    pub patience: usize,
    pub augment: bool,
    /// "auto", "compact" or "vgg16".
    pub head: String,
    pub hidden: usize,
    pub dropout: f32,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch: 64,
            lr: 0.001,
            momentum: 0.9,
            patience: 5,
            augment: true,
            head: "auto".into(),
            hidden: 32,
            dropout: 0.1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExplainSection {
    pub percentile: f64,
    pub t_score: f64,
    pub t_f1: f64,
}

impl Default for ExplainSection {
    fn default() -> Self {
        Self {
            percentile: 83.0,
            t_score: 10.0,
            t_f1: 0.7,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSection {
    pub steps: usize,
    pub cell: u32,
    /// Grid-search bounds for tune-q, inclusive.
    pub grid_lo: u32,
    pub grid_hi: u32,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            steps: 100,
            cell: 16,
            grid_lo: 75,
            grid_hi: 90,
        }
    }
}

/// Parse the config file, apply overrides and validate what can be checked
/// up front (seed presence comes from the type; referenced paths must
/// exist).
pub fn load(path: &Path, seed_override: Option<u64>) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("cannot read config {}: {e}", path.display())))?;
    let mut cfg: RunConfig = toml::from_str(&text)
        .map_err(|e| CliError::input(format!("bad config {}: {e}", path.display())))?;
    cfg.base_dir = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    if let Some(seed) = seed_override {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    /// Resolve a configured path against the config file location.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    fn validate(&self) -> Result<(), CliError> {
        match self.backend.kind.as_str() {
            "projection" => {}
            "store" => {
                let p = self.backend.path.as_ref().ok_or_else(|| {
                    CliError::input("backend.kind = \"store\" requires backend.path")
                })?;
                require_exists(&self.resolve(p))?;
            }
            other => {
                return Err(CliError::input(format!(
                    "unknown backend.kind `{other}` (expected \"projection\" or \"store\")"
                )))
            }
        }
        for p in [
            self.kb.path.as_ref(),
            self.data.root.as_ref(),
            self.data.annotations.as_ref(),
            self.data.images.as_ref(),
            self.holonym_model.as_ref(),
        ]
        .into_iter()
        .flatten()
        {
            require_exists(&self.resolve(p))?;
        }
        if let Some(scrape) = &self.scrape {
            for e in &scrape.engines {
                require_exists(&self.resolve(&e.root))?;
            }
        }
        self.split
            .validate()
            .map_err(|e| CliError::input(format!("bad split ratios: {e}")))?;
        Ok(())
    }

    pub fn load_kb(&self) -> Result<HolMeMap, CliError> {
        let doc = match (&self.kb.path, self.kb.builtin.as_deref()) {
            (Some(p), _) => std::fs::read_to_string(self.resolve(p))
                .map_err(|e| CliError::input(format!("cannot read kb: {e}")))?,
            (None, Some("imagenet")) => IMAGENET_VISA_KB.to_string(),
            (None, Some("pascal")) | (None, None) => PASCAL_PART_KB.to_string(),
            (None, Some(other)) => {
                return Err(CliError::input(format!(
                    "unknown builtin kb `{other}` (expected \"pascal\" or \"imagenet\")"
                )))
            }
        };
        load_kb(&doc).map_err(CliError::input)
    }

    /// Build the configured extractor. `PARTSCOPE_CACHE_DIR` switches on an
    /// on-disk per-sample feature cache.
    pub fn build_extractor(&self) -> Result<FeatureExtractor, CliError> {
        let backend: Box<dyn partscope_core::netcore::FeatureBackend> =
            match self.backend.kind.as_str() {
                "projection" => {
                    let seed = self.backend.seed.unwrap_or(self.seed);
                    Box::new(PooledProjectionBackend::new(
                        self.backend.channels,
                        self.backend.grid,
                        seed,
                    ))
                }
                "store" => {
                    let dir = self.resolve(self.backend.path.as_ref().expect("validated"));
                    Box::new(FeatureStore::open(&dir).map_err(CliError::input)?)
                }
                _ => unreachable!("validated"),
            };
        Ok(match std::env::var_os("PARTSCOPE_CACHE_DIR") {
            Some(dir) if !dir.is_empty() => {
                FeatureExtractor::with_cache(backend, Path::new(&dir))
            }
            _ => FeatureExtractor::new(backend),
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch: self.train.batch,
            lr: self.train.lr,
            momentum: self.train.momentum,
            patience: self.train.patience,
            seed: self.seed,
            augment: self.train.augment,
        }
    }

    /// Head template for the configured backend shape.
    pub fn head_template(
        &self,
        shape: [usize; 3],
        classes: Vec<String>,
    ) -> Result<Head, CliError> {
        let kind = match self.train.head.as_str() {
            "auto" => {
                if shape == [512, 14, 14] {
                    "vgg16"
                } else {
                    "compact"
                }
            }
            other => other,
        };
        match kind {
            "vgg16" => Head::vgg16_style(shape, classes).map_err(CliError::input),
            "compact" => Head::compact(shape, self.train.hidden, self.train.dropout, classes)
                .map_err(CliError::input),
            other => Err(CliError::input(format!(
                "unknown train.head `{other}` (expected \"auto\", \"compact\" or \"vgg16\")"
            ))),
        }
    }

    pub fn explain_config(&self) -> partscope_core::explain::ExplainConfig {
        partscope_core::explain::ExplainConfig {
            percentile: self.explain.percentile,
            t_score: self.explain.t_score,
            t_f1: self.explain.t_f1,
            ..Default::default()
        }
    }

    /// Provenance snapshot embedded in outputs.
    pub fn snapshot(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

fn require_exists(p: &Path) -> Result<(), CliError> {
    if !p.exists() {
        return Err(CliError::input(format!(
            "configured path does not exist: {}",
            p.display()
        )));
    }
    Ok(())
}
