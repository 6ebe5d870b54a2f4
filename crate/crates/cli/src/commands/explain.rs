//! Batch explanation with overlay rendering.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use partscope_core::explain::{explain_image, resolve_parts_for_class, Explanation};
use rayon::prelude::*;

use crate::commands::{load_holonym_model, load_meronym_model, require_pixel_backend, sanitize, write_json};
use crate::config::RunConfig;
use crate::overlay;
use crate::{CliError, CliResult};

pub fn run(cfg: &RunConfig, images: &[PathBuf], jobs: usize) -> CliResult {
    let holonym_model = load_holonym_model(cfg)?;
    require_pixel_backend(&holonym_model.extractor)?;
    let kb = cfg.load_kb()?;
    let explain_cfg = cfg.explain_config();
    let out_dir = cfg.out_dir().join("explanations");
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::pipeline(format!("mkdir {}: {e}", out_dir.display())))?;

    // Load inputs up front so bad paths fail before any pipeline work.
    let mut loaded = Vec::new();
    for path in images {
        let img = image::open(path)
            .map_err(|e| CliError::input(format!("cannot open {}: {e}", path.display())))?
            .to_rgb8();
        loaded.push((path.display().to_string(), img));
    }

    // Predicted classes decide which meronym models are needed; load each
    // at most once (sequentially, they may error).
    let mut predictions = Vec::with_capacity(loaded.len());
    for (id, img) in &loaded {
        let (class_index, _) = holonym_model.predict(img).map_err(CliError::pipeline)?;
        let class = holonym_model.classes[class_index].clone();
        resolve_parts_for_class(&kb, &class).map_err(CliError::pipeline)?;
        predictions.push((id.clone(), class));
    }
    let mut meronyms = BTreeMap::new();
    for (_, class) in &predictions {
        if !meronyms.contains_key(class) {
            meronyms.insert(class.clone(), load_meronym_model(cfg, class)?);
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::pipeline(format!("thread pool: {e}")))?;
    let explanations: Vec<Result<Explanation, CliError>> = pool.install(|| {
        loaded
            .par_iter()
            .zip(&predictions)
            .map(|((id, img), (_, class))| {
                explain_image(img, id, &holonym_model, &meronyms[class], &explain_cfg)
                    .map_err(CliError::pipeline)
            })
            .collect()
    });

    // Write artifacts in input order so reruns and job counts never change
    // the output bytes.
    write_json(&out_dir.join("run_config.json"), &cfg.snapshot())?;
    for ((_, img), result) in loaded.iter().zip(explanations) {
        let explanation = result?;
        let report = explanation
            .into_report(&out_dir)
            .map_err(CliError::pipeline)?;
        let stem = sanitize(&explanation.image_id);
        overlay::write_overlays(&out_dir, &stem, img, &explanation)
            .map_err(CliError::pipeline)?;
        let report_path = out_dir.join(format!("{stem}.report.json"));
        write_json(&report_path, &report)?;
        println!(
            "{} -> {} ({} parts, {} selected)",
            explanation.image_id,
            report_path.display(),
            report.parts.len(),
            report.parts.iter().filter(|p| p.selected).count()
        );
    }
    Ok(())
}

/// Report path for an input image id, as produced by [`run`].
pub fn report_path(out_dir: &Path, image_id: &str) -> PathBuf {
    out_dir.join(format!("{}.report.json", sanitize(image_id)))
}
