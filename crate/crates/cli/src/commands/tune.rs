//! Percentile grid search over training images.

use std::collections::BTreeMap;
use std::path::PathBuf;

use partscope_core::evalkit::{tune_percentile, EvalError, TuneCase};
use partscope_core::explain::{explain_image, resolve_parts_for_class};

use crate::commands::{load_holonym_model, load_meronym_model, require_pixel_backend, write_json};
use crate::config::RunConfig;
use crate::{CliError, CliResult};

pub fn run(cfg: &RunConfig, images: &[PathBuf]) -> CliResult {
    let holonym_model = load_holonym_model(cfg)?;
    require_pixel_backend(&holonym_model.extractor)?;
    let kb = cfg.load_kb()?;

    let mut cases = Vec::new();
    let mut class_of = BTreeMap::new();
    let mut meronyms = BTreeMap::new();
    for path in images {
        let id = path.display().to_string();
        let image = image::open(path)
            .map_err(|e| CliError::input(format!("cannot open {}: {e}", path.display())))?
            .to_rgb8();
        let (class_index, _) = holonym_model.predict(&image).map_err(CliError::pipeline)?;
        let class = holonym_model.classes[class_index].clone();
        resolve_parts_for_class(&kb, &class).map_err(CliError::pipeline)?;
        if !meronyms.contains_key(&class) {
            meronyms.insert(class.clone(), load_meronym_model(cfg, &class)?);
        }
        class_of.insert(id.clone(), class);
        cases.push(TuneCase {
            id,
            image,
            class_index,
        });
    }

    let grid: Vec<f64> = (cfg.eval.grid_lo..=cfg.eval.grid_hi).map(f64::from).collect();
    let base_cfg = cfg.explain_config();
    let outcome = tune_percentile(
        &cases,
        &holonym_model,
        &grid,
        cfg.eval.steps,
        |case, q| {
            let mut explain_cfg = base_cfg.clone();
            explain_cfg.percentile = q;
            let class = &class_of[&case.id];
            let e = explain_image(
                &case.image,
                &case.id,
                &holonym_model,
                &meronyms[class],
                &explain_cfg,
            )
            .map_err(|e| EvalError::Pipeline(e.to_string()))?;
            Ok(e.global)
        },
    )
    .map_err(CliError::pipeline)?;

    println!("best percentile: {}", outcome.best_q);
    for (q, obj) in &outcome.objectives {
        println!("  q={q:<3} objective={obj:.4}");
    }
    write_json(
        &cfg.out_dir().join("tune_q.json"),
        &serde_json::json!({
            "best_q": outcome.best_q,
            "objectives": outcome.objectives,
            "config": cfg.snapshot(),
        }),
    )?;
    Ok(())
}
