//! Dataset construction: collect (crops, folder ingest or mock scrape),
//! dedupe, de-outlier, balance, split, emit the manifest.

use std::collections::BTreeMap;
use std::path::Path;

use partscope_core::datakit::{
    crop_part, scrape_part, BBox, EngineClient, ImageSample, MockEngine, PartDataset,
    SampleFlag, SampleSource, ScrapeLimits,
};
use serde::Deserialize;

use crate::commands::dataset_dir;
use crate::config::RunConfig;
use crate::{CliError, CliResult};

#[derive(Debug, Deserialize)]
struct AnnotationEntry {
    image: String,
    holonym: String,
    parts: Vec<PartBox>,
}

#[derive(Debug, Deserialize)]
struct PartBox {
    name: String,
    bbox: [u32; 4],
}

pub fn run(cfg: &RunConfig, holonym: &str) -> CliResult {
    let kb = cfg.load_kb()?;
    let parts = kb.resolve_parts(holonym).map_err(CliError::input)?;
    let mut ds = PartDataset::new(holonym, parts.clone());

    let mut collected = 0usize;
    if let Some(ann) = &cfg.data.annotations {
        collected += collect_crops(cfg, holonym, &parts, &mut ds, &cfg.resolve(ann))?;
    }
    if let Some(root) = &cfg.data.root {
        collected += collect_ingest(cfg, holonym, &parts, &mut ds, &cfg.resolve(root))?;
    }
    if let Some(scrape) = &cfg.scrape {
        let engines: Vec<MockEngine> = scrape
            .engines
            .iter()
            .map(|e| MockEngine::new(&e.name, &cfg.resolve(&e.root)))
            .collect();
        let clients: Vec<&dyn EngineClient> =
            engines.iter().map(|e| e as &dyn EngineClient).collect();
        let limits = ScrapeLimits {
            per_engine: scrape.engines.iter().map(|e| e.limit).collect(),
            similar: scrape.similar,
        };
        for part in &parts {
            let report = scrape_part(holonym, part, &clients, &limits)
                .map_err(|e| CliError::pipeline(format!("scrape {holonym} {part}: {e}")))?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            collected += report.samples.len();
            for s in report.samples {
                ds.push(s).map_err(CliError::pipeline)?;
            }
        }
    }
    if collected == 0 {
        return Err(CliError::input(format!(
            "no input images for `{holonym}`: configure data.annotations, data.root or scrape"
        )));
    }

    // Dedup, outliers, balance, split.
    let mut ds = ds.dedupe(cfg.dedup.hamming).map_err(CliError::pipeline)?;
    flag_outliers(cfg, &mut ds)?;
    let ds = ds
        .balance_augment(cfg.seed)
        .map_err(CliError::pipeline)?
        .split(cfg.split, cfg.seed)
        .map_err(CliError::pipeline)?;

    let dir = dataset_dir(cfg, holonym);
    let manifest = ds
        .save(&dir, cfg.seed, cfg.snapshot())
        .map_err(CliError::pipeline)?;

    let counts = ds.kept_count_per_class();
    let dup = manifest
        .samples
        .iter()
        .filter(|s| s.flag == SampleFlag::Duplicate)
        .count();
    let outliers = manifest
        .samples
        .iter()
        .filter(|s| s.flag == SampleFlag::Outlier)
        .count();
    println!(
        "built dataset for `{holonym}`: {} samples ({dup} duplicates, {outliers} outliers flagged)",
        manifest.samples.len()
    );
    for (part, n) in counts {
        println!("  {part}: {n} kept");
    }
    println!("manifest: {}", dir.join("manifest.json").display());
    Ok(())
}

fn collect_crops(
    cfg: &RunConfig,
    holonym: &str,
    parts: &[String],
    ds: &mut PartDataset,
    annotations: &Path,
) -> Result<usize, CliError> {
    let json = std::fs::read_to_string(annotations)
        .map_err(|e| CliError::input(format!("cannot read {}: {e}", annotations.display())))?;
    let entries: Vec<AnnotationEntry> = serde_json::from_str(&json)
        .map_err(|e| CliError::input(format!("bad sidecar {}: {e}", annotations.display())))?;
    let images_root = cfg
        .data
        .images
        .as_ref()
        .map(|p| cfg.resolve(p))
        .unwrap_or_else(|| {
            annotations
                .parent()
                .map(Path::to_path_buf)
                .unwrap_or_default()
        });
    let mut added = 0usize;
    for entry in entries.iter().filter(|e| e.holonym == holonym) {
        let path = images_root.join(&entry.image);
        let image = image::open(&path)
            .map_err(|e| CliError::input(format!("cannot open {}: {e}", path.display())))?
            .to_rgb8();
        let boxes: Vec<(String, BBox)> = entry
            .parts
            .iter()
            .map(|p| {
                (
                    p.name.clone(),
                    BBox::new(p.bbox[0], p.bbox[1], p.bbox[2], p.bbox[3]),
                )
            })
            .collect();
        for (i, (name, bbox)) in boxes.iter().enumerate() {
            if !parts.contains(name) {
                eprintln!(
                    "warning: {}: part `{name}` not in resolved list for `{holonym}`, skipped",
                    entry.image
                );
                continue;
            }
            let siblings: Vec<BBox> = boxes
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, (_, b))| *b)
                .collect();
            let crop = crop_part(&image, bbox, &siblings).map_err(CliError::pipeline)?;
            ds.push(ImageSample::new(
                crop,
                name,
                SampleSource::Crop,
                &format!("crop:{}:{name}:{i}", entry.image),
            ))
            .map_err(CliError::pipeline)?;
            added += 1;
        }
    }
    Ok(added)
}

fn collect_ingest(
    _cfg: &RunConfig,
    holonym: &str,
    parts: &[String],
    ds: &mut PartDataset,
    root: &Path,
) -> Result<usize, CliError> {
    let class_dir = root.join(holonym);
    if !class_dir.is_dir() {
        return Ok(0);
    }
    let mut added = 0usize;
    for part in parts {
        let part_dir = class_dir.join(part);
        if !part_dir.is_dir() {
            continue;
        }
        let mut files: Vec<_> = walkdir::WalkDir::new(&part_dir)
            .max_depth(1)
            .into_iter()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_type().is_file())
            .map(|e| e.into_path())
            .filter(|p| {
                matches!(
                    p.extension().and_then(|e| e.to_str()),
                    Some("png") | Some("jpg") | Some("jpeg")
                )
            })
            .collect();
        files.sort();
        for f in files {
            let image = image::open(&f)
                .map_err(|e| CliError::input(format!("cannot open {}: {e}", f.display())))?
                .to_rgb8();
            let stem = f
                .file_stem()
                .map(|s| s.to_string_lossy().to_string())
                .unwrap_or_default();
            ds.push(ImageSample::new(
                image,
                part,
                SampleSource::Crop,
                &format!("ingest:{holonym}/{part}/{stem}"),
            ))
            .map_err(CliError::pipeline)?;
            added += 1;
        }
    }
    Ok(added)
}

fn flag_outliers(cfg: &RunConfig, ds: &mut PartDataset) -> Result<(), CliError> {
    if cfg.outliers.contamination == 0.0 {
        return Ok(());
    }
    let extractor = cfg.build_extractor()?;
    let kept_ids: Vec<String> = ds.kept().map(|s| s.origin_id.clone()).collect();
    let mut features = Vec::with_capacity(kept_ids.len());
    let by_id: BTreeMap<&str, &ImageSample> = ds
        .samples()
        .iter()
        .map(|s| (s.origin_id.as_str(), s))
        .collect();
    for id in &kept_ids {
        let t = extractor
            .features_for_sample(by_id[id.as_str()])
            .map_err(CliError::pipeline)?;
        features.push(t.into_data());
    }
    let split = partscope_core::datakit::remove_outliers(&features, cfg.outliers.contamination)
        .map_err(CliError::pipeline)?;
    for idx in split.flagged {
        ds.set_flag(&kept_ids[idx], SampleFlag::Outlier);
    }
    Ok(())
}
