//! Web-image collection behind an engine interface.
//!
//! Real search engines are queried through [`EngineClient`]; tests and the
//! bundled CLI use [`MockEngine`], which serves images from a local fixture
//! directory with the same semantics (query term, download limit, optional
//! visually-similar expansion).

use std::path::{Path, PathBuf};

use super::{DataError, ImageSample, SampleSource};

/// Raw downloaded image.
#[derive(Debug, Clone)]
pub struct ImagePayload {
    /// Stable identifier within the engine (e.g. relative path or URL slug).
    pub id: String,
    pub bytes: Vec<u8>,
}

/// A search engine that can serve images for a query term.
pub trait EngineClient: Send + Sync {
    fn name(&self) -> &str;

    /// Up to `limit` images for the term.
    fn query(&self, term: &str, limit: usize) -> Result<Vec<ImagePayload>, DataError>;

    /// Up to `limit` images visually similar to `payload`. Engines without
    /// the feature return nothing.
    fn similar(&self, _payload: &ImagePayload, _limit: usize) -> Result<Vec<ImagePayload>, DataError> {
        Ok(Vec::new())
    }
}

/// Per-engine download limits. Totals per engine are additionally capped at
/// [`ScrapeLimits::PER_ENGINE_CAP`] since result pertinence decays quickly.
#[derive(Debug, Clone)]
pub struct ScrapeLimits {
    /// One entry per engine, matching the engine slice by position.
    pub per_engine: Vec<usize>,
    pub similar: usize,
}

impl ScrapeLimits {
    pub const PER_ENGINE_CAP: usize = 100;

    /// Bundled defaults: 40 and 60 for the two configured engines, 5
    /// visually-similar expansions per download.
    pub fn default_pair() -> Self {
        Self {
            per_engine: vec![40, 60],
            similar: 5,
        }
    }
}

/// Scrape result with per-engine warnings (engine failures degrade to
/// partial results).
#[derive(Debug)]
pub struct ScrapeReport {
    pub samples: Vec<ImageSample>,
    pub warnings: Vec<String>,
}

/// Collect part images by querying every engine for `"<holonym> <part>"`.
pub fn scrape_part(
    holonym: &str,
    part: &str,
    engines: &[&dyn EngineClient],
    limits: &ScrapeLimits,
) -> Result<ScrapeReport, DataError> {
    let term = format!("{holonym} {part}");
    let mut samples = Vec::new();
    let mut warnings = Vec::new();

    for (e_idx, engine) in engines.iter().enumerate() {
        let limit = limits
            .per_engine
            .get(e_idx)
            .copied()
            .unwrap_or(0)
            .min(ScrapeLimits::PER_ENGINE_CAP);
        if limit == 0 {
            continue;
        }
        let primary = match engine.query(&term, limit) {
            Ok(p) => p,
            Err(e) => {
                warnings.push(format!("engine {}: query failed: {e}", engine.name()));
                continue;
            }
        };
        let mut engine_total = 0usize;
        let mut pending_similar = Vec::new();
        for payload in &primary {
            if engine_total >= ScrapeLimits::PER_ENGINE_CAP {
                break;
            }
            if let Some(sample) =
                decode_payload(engine.name(), part, payload, engine_total, &mut warnings)
            {
                samples.push(sample);
                engine_total += 1;
                pending_similar.push(payload.clone());
            }
        }
        if limits.similar > 0 {
            for payload in &pending_similar {
                if engine_total >= ScrapeLimits::PER_ENGINE_CAP {
                    break;
                }
                let budget = limits
                    .similar
                    .min(ScrapeLimits::PER_ENGINE_CAP - engine_total);
                let sims = match engine.similar(payload, budget) {
                    Ok(s) => s,
                    Err(e) => {
                        warnings.push(format!(
                            "engine {}: similar({}) failed: {e}",
                            engine.name(),
                            payload.id
                        ));
                        continue;
                    }
                };
                for sim in &sims {
                    if engine_total >= ScrapeLimits::PER_ENGINE_CAP {
                        break;
                    }
                    if let Some(sample) =
                        decode_payload(engine.name(), part, sim, engine_total, &mut warnings)
                    {
                        samples.push(sample);
                        engine_total += 1;
                    }
                }
            }
        }
    }

    if samples.is_empty() {
        return Err(DataError::ScrapeEmpty { term });
    }
    Ok(ScrapeReport { samples, warnings })
}

fn decode_payload(
    engine: &str,
    part: &str,
    payload: &ImagePayload,
    seq: usize,
    warnings: &mut Vec<String>,
) -> Option<ImageSample> {
    match image::load_from_memory(&payload.bytes) {
        Ok(img) => Some(ImageSample::new(
            img.to_rgb8(),
            part,
            SampleSource::Scrape,
            &format!("scrape:{engine}:{seq:04}:{}", payload.id),
        )),
        Err(e) => {
            warnings.push(format!("engine {engine}: decode {} failed: {e}", payload.id));
            None
        }
    }
}

/// Filesystem-backed engine. Layout:
///
/// ```text
/// <root>/<term with spaces replaced by '_'>/*.png|jpg      query results
/// <root>/<term dir>/<stem>.similar/*.png|jpg               similar images
/// ```
///
/// Files are served in lexicographic order, so runs are reproducible.
pub struct MockEngine {
    name: String,
    root: PathBuf,
}

impl MockEngine {
    pub fn new(name: &str, root: &Path) -> Self {
        Self {
            name: name.to_string(),
            root: root.to_path_buf(),
        }
    }

    fn list_images(dir: &Path) -> Vec<PathBuf> {
        let mut files: Vec<PathBuf> = match std::fs::read_dir(dir) {
            Ok(rd) => rd
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| {
                    p.is_file()
                        && matches!(
                            p.extension().and_then(|e| e.to_str()),
                            Some("png") | Some("jpg") | Some("jpeg")
                        )
                })
                .collect(),
            Err(_) => Vec::new(),
        };
        files.sort();
        files
    }

    fn read(&self, path: &Path) -> Result<ImagePayload, DataError> {
        let bytes = std::fs::read(path).map_err(|e| DataError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let rel = path
            .strip_prefix(&self.root)
            .unwrap_or(path)
            .with_extension("");
        Ok(ImagePayload {
            id: rel.to_string_lossy().replace('\\', "/"),
            bytes,
        })
    }
}

pub fn term_dir(term: &str) -> String {
    term.replace(' ', "_")
}

impl EngineClient for MockEngine {
    fn name(&self) -> &str {
        &self.name
    }

    fn query(&self, term: &str, limit: usize) -> Result<Vec<ImagePayload>, DataError> {
        let dir = self.root.join(term_dir(term));
        Self::list_images(&dir)
            .into_iter()
            .take(limit)
            .map(|p| self.read(&p))
            .collect()
    }

    fn similar(&self, payload: &ImagePayload, limit: usize) -> Result<Vec<ImagePayload>, DataError> {
        let dir = self.root.join(format!("{}.similar", payload.id));
        Self::list_images(&dir)
            .into_iter()
            .take(limit)
            .map(|p| self.read(&p))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datakit::testutil::noise_image;

    fn fixture_root(n_primary: usize, n_similar_for_first: usize) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        let term = dir.path().join("sorrel_head");
        std::fs::create_dir_all(&term).unwrap();
        for i in 0..n_primary {
            noise_image(16, 16, i as u64)
                .save(term.join(format!("{i:03}.png")))
                .unwrap();
        }
        if n_similar_for_first > 0 {
            let sim = term.join("000.similar");
            std::fs::create_dir_all(&sim).unwrap();
            for i in 0..n_similar_for_first {
                noise_image(16, 16, 900 + i as u64)
                    .save(sim.join(format!("{i:02}.png")))
                    .unwrap();
            }
        }
        dir
    }

    #[test]
    fn limit_caps_downloads() {
        let root = fixture_root(12, 0);
        let engine = MockEngine::new("mock", root.path());
        let limits = ScrapeLimits {
            per_engine: vec![40],
            similar: 0,
        };
        let report = scrape_part("sorrel", "head", &[&engine], &limits).unwrap();
        assert_eq!(report.samples.len(), 12); // min(40, fixtures)
        let limits = ScrapeLimits {
            per_engine: vec![5],
            similar: 0,
        };
        let report = scrape_part("sorrel", "head", &[&engine], &limits).unwrap();
        assert_eq!(report.samples.len(), 5);
        assert!(report
            .samples
            .iter()
            .all(|s| s.source == SampleSource::Scrape && s.label == "head"));
    }

    #[test]
    fn zero_limits_is_an_error() {
        let root = fixture_root(3, 0);
        let engine = MockEngine::new("mock", root.path());
        let limits = ScrapeLimits {
            per_engine: vec![0],
            similar: 0,
        };
        assert!(matches!(
            scrape_part("sorrel", "head", &[&engine], &limits),
            Err(DataError::ScrapeEmpty { .. })
        ));
    }

    #[test]
    fn similar_expansion_bounded() {
        let root = fixture_root(10, 8);
        let engine = MockEngine::new("mock", root.path());
        let limits = ScrapeLimits {
            per_engine: vec![10],
            similar: 5,
        };
        let report = scrape_part("sorrel", "head", &[&engine], &limits).unwrap();
        // 10 primary + 5 similar (only the first has a similar dir, capped at 5).
        assert_eq!(report.samples.len(), 15);
        assert!(report.samples.len() <= 10 + 5 * 10);
    }

    #[test]
    fn engine_failure_degrades_to_partial() {
        struct Broken;
        impl EngineClient for Broken {
            fn name(&self) -> &str {
                "broken"
            }
            fn query(&self, term: &str, _limit: usize) -> Result<Vec<ImagePayload>, DataError> {
                Err(DataError::ScrapeEmpty {
                    term: term.to_string(),
                })
            }
        }
        let root = fixture_root(4, 0);
        let good = MockEngine::new("mock", root.path());
        let broken = Broken;
        let limits = ScrapeLimits {
            per_engine: vec![10, 10],
            similar: 0,
        };
        let report =
            scrape_part("sorrel", "head", &[&broken as &dyn EngineClient, &good], &limits)
                .unwrap();
        assert_eq!(report.samples.len(), 4);
        assert_eq!(report.warnings.len(), 1);
        assert!(report.warnings[0].contains("broken"));
    }

    #[test]
    fn per_engine_cap_applies() {
        let root = fixture_root(30, 0);
        let engine = MockEngine::new("mock", root.path());
        let limits = ScrapeLimits {
            per_engine: vec![500], // above the cap
            similar: 0,
        };
        let report = scrape_part("sorrel", "head", &[&engine], &limits).unwrap();
        assert_eq!(report.samples.len(), 30);
        // The request itself was capped at 100.
        let term = root.path().join("sorrel_head");
        for i in 30..120 {
            noise_image(8, 8, 5000 + i as u64)
                .save(term.join(format!("{i:03}.png")))
                .unwrap();
        }
        let report = scrape_part("sorrel", "head", &[&engine], &limits).unwrap();
        assert_eq!(report.samples.len(), 100);
    }
}
