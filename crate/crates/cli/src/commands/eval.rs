//! Score explanation reports: causal curves for the global heatmap, seeded
//! random-superpixel baselines and ratios, optional holonym Grad-CAM
//! comparison and localization AUC.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use partscope_core::datakit::BBox;
use partscope_core::evalkit::{
    curve_ratios, curve_set, pixel_auc, random_baseline, CurveSet, LocalizationGT,
};
use partscope_core::explain::{summarize_class, ExplanationReport};
use partscope_core::netcore::Tensor;
use partscope_core::saliency::{gradcam, Heatmap};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::commands::{load_holonym_model, require_pixel_backend, write_json};
use crate::config::RunConfig;
use crate::plots;
use crate::{CliError, CliResult};

#[derive(Debug, Serialize)]
struct MetricsRow {
    image: String,
    holonym: String,
    deletion_auc: f64,
    insertion_auc: f64,
    preservation_auc: f64,
    baseline_deletion_auc: f64,
    baseline_insertion_auc: f64,
    deletion_ratio: f64,
    insertion_ratio: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    gradcam_deletion_auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gradcam_insertion_auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gradcam_preservation_auc: Option<f64>,
}

#[derive(Debug, Serialize)]
struct LocalizationRow {
    image: String,
    part: String,
    pixel_auc: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    gradcam_pixel_auc: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct GtEntry {
    image: String,
    #[allow(dead_code)]
    #[serde(default)]
    holonym: String,
    parts: Vec<GtPart>,
}

#[derive(Debug, Deserialize)]
struct GtPart {
    name: String,
    bbox: [u32; 4],
}

pub fn run(
    cfg: &RunConfig,
    reports_dir: Option<&Path>,
    against_gradcam: bool,
    gt_path: Option<&Path>,
    emit_plots: bool,
    jobs: usize,
) -> CliResult {
    let reports_dir = reports_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.out_dir().join("explanations"));
    let mut report_files: Vec<PathBuf> = match std::fs::read_dir(&reports_dir) {
        Ok(rd) => rd
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.ends_with(".report.json"))
            })
            .collect(),
        Err(e) => {
            return Err(CliError::input(format!(
                "cannot read reports dir {}: {e}",
                reports_dir.display()
            )))
        }
    };
    report_files.sort();
    if report_files.is_empty() {
        return Err(CliError::input(format!(
            "no *.report.json files in {}",
            reports_dir.display()
        )));
    }

    let holonym_model = load_holonym_model(cfg)?;
    require_pixel_backend(&holonym_model.extractor)?;

    let gt = match gt_path {
        Some(p) => Some(load_gt(&cfg.resolve(p))?),
        None => None,
    };

    let mut reports = Vec::new();
    for f in &report_files {
        let json = std::fs::read_to_string(f)
            .map_err(|e| CliError::input(format!("cannot read {}: {e}", f.display())))?;
        let report: ExplanationReport = serde_json::from_str(&json)
            .map_err(|e| CliError::input(format!("bad report {}: {e}", f.display())))?;
        reports.push(report);
    }

    let out_dir = cfg.out_dir().join("eval");
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::pipeline(format!("mkdir {}: {e}", out_dir.display())))?;

    struct PerReport {
        row: MetricsRow,
        loc_rows: Vec<LocalizationRow>,
        method: CurveSet,
        baseline: CurveSet,
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::pipeline(format!("thread pool: {e}")))?;
    let results: Vec<Result<PerReport, CliError>> = pool.install(|| {
        reports
            .par_iter()
            .map(|report| {
                let image = image::open(&report.image)
                    .map_err(|e| {
                        CliError::input(format!("cannot open image {}: {e}", report.image))
                    })?
                    .to_rgb8();
                let class_index = holonym_model
                    .classes
                    .iter()
                    .position(|c| c == &report.holonym)
                    .ok_or_else(|| {
                        CliError::pipeline(format!(
                            "report holonym `{}` unknown to the classifier",
                            report.holonym
                        ))
                    })?;
                let g = load_heatmap(&reports_dir, &report.global_heatmap)?;
                let method = curve_set(&holonym_model, &image, &g, class_index, cfg.eval.steps)
                    .map_err(CliError::pipeline)?;
                let baseline = random_baseline(
                    &holonym_model,
                    &image,
                    class_index,
                    cfg.eval.cell,
                    fnv(cfg.seed, &report.image),
                    cfg.eval.steps,
                )
                .map_err(CliError::pipeline)?;
                let ratios = curve_ratios(&method, &baseline).map_err(CliError::pipeline)?;

                let mut gradcam_cols = (None, None, None);
                let mut gradcam_hm = None;
                if against_gradcam {
                    let hm = gradcam(
                        &holonym_model.extractor,
                        &holonym_model.head,
                        &image,
                        class_index,
                    )
                    .map_err(CliError::pipeline)?;
                    let set = curve_set(&holonym_model, &image, &hm, class_index, cfg.eval.steps)
                        .map_err(CliError::pipeline)?;
                    gradcam_cols = (
                        Some(set.deletion.auc),
                        Some(set.insertion.auc),
                        Some(set.preservation.auc),
                    );
                    gradcam_hm = Some(hm);
                }

                let mut loc_rows = Vec::new();
                if let Some(gt) = &gt {
                    if let Some(entry_boxes) = match_gt(gt, &report.image) {
                        for part in &report.parts {
                            let Some(boxes) = entry_boxes.get(part.name.as_str()) else {
                                continue;
                            };
                            let hm = load_heatmap(&reports_dir, &part.heatmap)?;
                            let truth = LocalizationGT {
                                boxes: boxes.clone(),
                            };
                            let auc = pixel_auc(&hm, &truth).map_err(CliError::pipeline)?;
                            let gradcam_pixel_auc = match &gradcam_hm {
                                Some(g) => {
                                    Some(pixel_auc(g, &truth).map_err(CliError::pipeline)?)
                                }
                                None => None,
                            };
                            loc_rows.push(LocalizationRow {
                                image: report.image.clone(),
                                part: part.name.clone(),
                                pixel_auc: auc,
                                gradcam_pixel_auc,
                            });
                        }
                    }
                }

                Ok(PerReport {
                    row: MetricsRow {
                        image: report.image.clone(),
                        holonym: report.holonym.clone(),
                        deletion_auc: method.deletion.auc,
                        insertion_auc: method.insertion.auc,
                        preservation_auc: method.preservation.auc,
                        baseline_deletion_auc: baseline.deletion.auc,
                        baseline_insertion_auc: baseline.insertion.auc,
                        deletion_ratio: ratios.deletion_ratio,
                        insertion_ratio: ratios.insertion_ratio,
                        gradcam_deletion_auc: gradcam_cols.0,
                        gradcam_insertion_auc: gradcam_cols.1,
                        gradcam_preservation_auc: gradcam_cols.2,
                    },
                    loc_rows,
                    method,
                    baseline,
                })
            })
            .collect()
    });

    let mut rows = Vec::new();
    let mut loc_rows = Vec::new();
    let mut curve_sets = Vec::new();
    for r in results {
        let r = r?;
        rows.push(r.row);
        loc_rows.extend(r.loc_rows);
        curve_sets.push((r.method, r.baseline));
    }

    // metrics.csv
    let csv_path = out_dir.join("metrics.csv");
    write_csv(&csv_path, &rows)?;
    println!("wrote {}", csv_path.display());
    if !loc_rows.is_empty() {
        let path = out_dir.join("localization.csv");
        write_csv(&path, &loc_rows)?;
        println!("wrote {}", path.display());
    }

    // summary.json: column means plus per-holonym report summaries.
    let mean = |f: &dyn Fn(&MetricsRow) -> f64| -> f64 {
        rows.iter().map(|r| f(r)).sum::<f64>() / rows.len() as f64
    };
    let mut by_class: BTreeMap<String, Vec<ExplanationReport>> = BTreeMap::new();
    for r in &reports {
        by_class.entry(r.holonym.clone()).or_default().push(r.clone());
    }
    let class_summaries: Vec<_> = by_class
        .iter()
        .map(|(class, rs)| summarize_class(class, rs))
        .collect();
    let summary = serde_json::json!({
        "reports": rows.len(),
        "mean_deletion_auc": mean(&|r| r.deletion_auc),
        "mean_insertion_auc": mean(&|r| r.insertion_auc),
        "mean_preservation_auc": mean(&|r| r.preservation_auc),
        "mean_deletion_ratio": mean(&|r| r.deletion_ratio),
        "mean_insertion_ratio": mean(&|r| r.insertion_ratio),
        "mean_localization_auc": if loc_rows.is_empty() { serde_json::Value::Null } else {
            serde_json::json!(loc_rows.iter().map(|r| r.pixel_auc).sum::<f64>() / loc_rows.len() as f64)
        },
        "classes": class_summaries,
        "config": cfg.snapshot(),
    });
    write_json(&out_dir.join("summary.json"), &summary)?;
    println!("wrote {}", out_dir.join("summary.json").display());

    if emit_plots {
        let plot_dir = out_dir.join("plots");
        std::fs::create_dir_all(&plot_dir)
            .map_err(|e| CliError::pipeline(format!("mkdir {}: {e}", plot_dir.display())))?;
        for (row, (method, baseline)) in rows.iter().zip(&curve_sets) {
            let svg = plots::curve_svg(&row.image, method, Some(baseline));
            let name = format!("{}.svg", crate::commands::sanitize(&row.image));
            std::fs::write(plot_dir.join(&name), svg)
                .map_err(|e| CliError::pipeline(format!("write plot {name}: {e}")))?;
        }
        println!("wrote {} plots", rows.len());
    }
    Ok(())
}

fn load_heatmap(reports_dir: &Path, png_rel: &str) -> Result<Heatmap, CliError> {
    let htf1 = png_rel
        .strip_suffix(".png")
        .map(|s| format!("{s}.htf1"))
        .unwrap_or_else(|| format!("{png_rel}.htf1"));
    let path = reports_dir.join(&htf1);
    let tensor = Tensor::load(&path)
        .map_err(|e| CliError::input(format!("cannot load heatmap {}: {e}", path.display())))?;
    let shape = tensor.shape().to_vec();
    if shape.len() != 2 {
        return Err(CliError::input(format!(
            "heatmap tensor {} has rank {} (expected 2)",
            path.display(),
            shape.len()
        )));
    }
    Ok(Heatmap {
        width: shape[1] as u32,
        height: shape[0] as u32,
        values: tensor.into_data(),
    })
}

type GtIndex = Vec<(String, BTreeMap<String, Vec<BBox>>)>;

fn load_gt(path: &Path) -> Result<GtIndex, CliError> {
    let json = std::fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("cannot read gt {}: {e}", path.display())))?;
    let entries: Vec<GtEntry> = serde_json::from_str(&json)
        .map_err(|e| CliError::input(format!("bad gt {}: {e}", path.display())))?;
    Ok(entries
        .into_iter()
        .map(|e| {
            let mut parts: BTreeMap<String, Vec<BBox>> = BTreeMap::new();
            for p in e.parts {
                parts
                    .entry(p.name)
                    .or_default()
                    .push(BBox::new(p.bbox[0], p.bbox[1], p.bbox[2], p.bbox[3]));
            }
            (e.image, parts)
        })
        .collect())
}

/// Match a report's image path against GT entries by path suffix.
fn match_gt<'a>(gt: &'a GtIndex, image: &str) -> Option<&'a BTreeMap<String, Vec<BBox>>> {
    let norm = image.replace('\\', "/");
    gt.iter()
        .find(|(key, _)| norm.ends_with(key.replace('\\', "/").as_str()))
        .map(|(_, parts)| parts)
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| CliError::pipeline(format!("open {}: {e}", path.display())))?;
    for row in rows {
        w.serialize(row)
            .map_err(|e| CliError::pipeline(format!("write {}: {e}", path.display())))?;
    }
    w.flush()
        .map_err(|e| CliError::pipeline(format!("flush {}: {e}", path.display())))
}

fn fnv(seed: u64, label: &str) -> u64 {
    let mut h = 0xcbf29ce484222325u64 ^ seed;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}
