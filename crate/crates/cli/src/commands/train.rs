//! Meronym head training.

use partscope_core::datakit::{Fold, PartDataset};
use partscope_core::netcore::{calibrated_f1, confusion_on_fold, train_head};

use crate::commands::{dataset_dir, models_dir, write_json};
use crate::config::RunConfig;
use crate::{CliError, CliResult};

pub fn run(cfg: &RunConfig, holonym: &str, resume: bool) -> CliResult {
    let model_dir = models_dir(cfg).join(holonym);
    if resume && model_dir.join("head.json").exists() {
        println!("model for `{holonym}` already trained at {}", model_dir.display());
        return Ok(());
    }

    let ds_dir = dataset_dir(cfg, holonym);
    if !ds_dir.join("manifest.json").exists() {
        return Err(CliError::input(format!(
            "no dataset for `{holonym}` at {}; run `partscope build --holonym {holonym}` first",
            ds_dir.display()
        )));
    }
    let ds = PartDataset::load(&ds_dir).map_err(CliError::input)?;

    let extractor = cfg.build_extractor()?;
    let template = cfg.head_template(extractor.output_shape(), ds.parts.clone())?;
    let train_cfg = cfg.train_config();
    let outcome =
        train_head(&extractor, &template, &ds, &train_cfg).map_err(CliError::pipeline)?;
    println!(
        "trained `{holonym}`: {} epochs, best epoch {} (val loss {:.4}, val acc {:.3})",
        outcome.history.len(),
        outcome.best_epoch,
        outcome.history[outcome.best_epoch - 1].val_loss,
        outcome.history[outcome.best_epoch - 1].val_accuracy,
    );

    let confusion =
        confusion_on_fold(&extractor, &outcome.head, &ds, Fold::Test).map_err(CliError::pipeline)?;
    let f1 = calibrated_f1(&confusion).map_err(CliError::pipeline)?;
    println!("calibrated F1 (held-out test fold):");
    let mut f1_table = std::collections::BTreeMap::new();
    for (part, score) in outcome.head.classes().iter().zip(&f1) {
        println!("  {part:<16} {score:.3}");
        f1_table.insert(part.clone(), *score);
    }

    outcome.head.save(&model_dir).map_err(CliError::pipeline)?;
    write_json(&model_dir.join("f1.json"), &f1_table)?;
    write_json(&model_dir.join("history.json"), &outcome.history)?;
    write_json(&model_dir.join("run_config.json"), &cfg.snapshot())?;
    println!("saved model to {}", model_dir.display());
    Ok(())
}
