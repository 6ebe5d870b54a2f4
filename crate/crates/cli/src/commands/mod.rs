pub mod build;
pub mod eval;
pub mod explain;
pub mod parts;
pub mod train;
pub mod tune;

use std::collections::BTreeMap;
use std::path::Path;

use partscope_core::explain::MeronymModel;
use partscope_core::netcore::{FeatureExtractor, Head, SplitClassifier};

use crate::config::RunConfig;
use crate::CliError;

/// Load the holonym classifier declared in the config.
pub fn load_holonym_model(cfg: &RunConfig) -> Result<SplitClassifier, CliError> {
    let dir = cfg
        .holonym_model
        .as_ref()
        .ok_or_else(|| CliError::input("config is missing holonym_model"))?;
    let head = Head::load(&cfg.resolve(dir)).map_err(CliError::input)?;
    let extractor = cfg.build_extractor()?;
    Ok(SplitClassifier::new(extractor, head))
}

pub fn models_dir(cfg: &RunConfig) -> std::path::PathBuf {
    cfg.out_dir().join("models")
}

pub fn dataset_dir(cfg: &RunConfig, holonym: &str) -> std::path::PathBuf {
    cfg.out_dir().join("datasets").join(holonym)
}

/// Load a trained meronym model (head + f1 table) for a class.
pub fn load_meronym_model(cfg: &RunConfig, class: &str) -> Result<MeronymModel, CliError> {
    let dir = models_dir(cfg).join(class);
    if !dir.join("head.json").exists() {
        return Err(CliError::pipeline(format!(
            "no meronym model for class `{class}` at {}; run `partscope train --holonym {class}` first",
            dir.display()
        )));
    }
    let head = Head::load(&dir).map_err(CliError::pipeline)?;
    let f1_path = dir.join("f1.json");
    let json = std::fs::read_to_string(&f1_path)
        .map_err(|e| CliError::pipeline(format!("cannot read {}: {e}", f1_path.display())))?;
    let part_f1: BTreeMap<String, f64> = serde_json::from_str(&json)
        .map_err(|e| CliError::pipeline(format!("bad f1 table {}: {e}", f1_path.display())))?;
    Ok(MeronymModel { head, part_f1 })
}

/// Shared extractor check: stages that probe modified pixels need a pixel
/// path.
pub fn require_pixel_backend(extractor: &FeatureExtractor) -> Result<(), CliError> {
    if !extractor.supports_pixels() {
        return Err(CliError::input(format!(
            "backend `{}` cannot extract features for new or modified images; explain/eval need a pixel-capable backend",
            extractor.backend_name()
        )));
    }
    Ok(())
}

pub fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| CliError::pipeline(format!("mkdir {}: {e}", parent.display())))?;
    }
    let json = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::pipeline(format!("serialize {}: {e}", path.display())))?;
    std::fs::write(path, json)
        .map_err(|e| CliError::pipeline(format!("write {}: {e}", path.display())))
}

pub fn sanitize(id: &str) -> String {
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
