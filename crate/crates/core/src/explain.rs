//! The full per-image explanation: per-part saliency, ablation drops,
//! threshold selection, the global heatmap and the exported report.

use std::collections::BTreeMap;
use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::{HolMeMap, KbError};
use crate::netcore::{Head, NetError, SplitClassifier};
use crate::saliency::{binarize, gradcam, score_drop, BinaryMask, Heatmap, SaliencyError};

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Saliency(#[from] SaliencyError),
    #[error("predicted class `{class}` cannot be resolved in the knowledge base: {source}")]
    UnmappedClass {
        class: String,
        #[source]
        source: KbError,
    },
    #[error("no meronym model for class `{0}`; train one first")]
    MissingMeronymModel(String),
    #[error("meronym model classes {model:?} do not match resolved parts {parts:?}")]
    PartListMismatch {
        model: Vec<String>,
        parts: Vec<String>,
    },
    #[error("part f1 table missing entry for `{0}`")]
    MissingF1(String),
    #[error("heatmap geometry mismatch at index {0}")]
    HeatmapGeometry(usize),
    #[error("io error on {path}: {msg}")]
    Io { path: String, msg: String },
}

/// Selection thresholds and saliency settings for an explanation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExplainConfig {
    /// Binarization percentile for part masks.
    pub percentile: f64,
    /// Minimum percent score drop for a part to be selected.
    pub t_score: f64,
    /// Minimum calibrated F1 for a part to be selected.
    pub t_f1: f64,
    /// Ablation fill color.
    pub fill: [u8; 3],
    /// Score space used for drops; softmax probability.
    pub score_space: String,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self {
            percentile: 83.0,
            t_score: 10.0,
            t_f1: 0.7,
            fill: crate::saliency::ABLATION_FILL,
            score_space: "softmax".into(),
        }
    }
}

impl PartialEq for ExplainConfig {
    fn eq(&self, other: &Self) -> bool {
        self.percentile == other.percentile
            && self.t_score == other.t_score
            && self.t_f1 == other.t_f1
            && self.fill == other.fill
            && self.score_space == other.score_space
    }
}

/// One part's saliency, ablation drop and selection verdict.
#[derive(Debug, Clone)]
pub struct PartResult {
    pub name: String,
    pub f1: f64,
    pub heatmap: Heatmap,
    pub mask: BinaryMask,
    pub drop: f64,
    pub selected: bool,
}

/// In-memory explanation for one image.
#[derive(Debug, Clone)]
pub struct Explanation {
    pub image_id: String,
    pub holonym: String,
    pub class_index: usize,
    pub score: f64,
    pub parts: Vec<PartResult>,
    /// Raw weighted combination of part heatmaps (convex weights).
    pub global_raw: Vec<f32>,
    /// Min-max normalized global heatmap for export.
    pub global: Heatmap,
    /// L1-normalized clamped drops, aligned with `parts`.
    pub weights: Vec<f64>,
    pub config: ExplainConfig,
}

/// A trained meronym model: head over the shared frozen features plus the
/// per-part calibrated F1 from its held-out test fold.
pub struct MeronymModel {
    pub head: Head,
    pub part_f1: BTreeMap<String, f64>,
}

/// Explain `holonym_model`'s prediction on one image through the parts the
/// meronym model detects.
///
/// For each part: Grad-CAM on the meronym head, percentile binarization,
/// gray ablation, score drop against the holonym model. A part is selected
/// exactly when `drop > t_score` and `f1 > t_f1`. Thresholds never affect
/// heatmaps or drops.
pub fn explain_image(
    image: &RgbImage,
    image_id: &str,
    holonym_model: &SplitClassifier,
    meronym_model: &MeronymModel,
    cfg: &ExplainConfig,
) -> Result<Explanation, ExplainError> {
    let (class_index, score) = holonym_model.predict(image)?;
    let holonym = holonym_model.classes[class_index].clone();

    let mut parts = Vec::new();
    for (part_index, part) in meronym_model.head.classes().iter().enumerate() {
        let f1 = *meronym_model
            .part_f1
            .get(part)
            .ok_or_else(|| ExplainError::MissingF1(part.clone()))?;
        let heatmap = gradcam(
            &holonym_model.extractor,
            &meronym_model.head,
            image,
            part_index,
        )?;
        let mask = binarize(&heatmap, cfg.percentile)?;
        let drop = score_drop(holonym_model, image, &mask, class_index, cfg.fill)?;
        let selected = drop > cfg.t_score && f1 > cfg.t_f1;
        parts.push(PartResult {
            name: part.clone(),
            f1,
            heatmap,
            mask,
            drop,
            selected,
        });
    }

    let drops: Vec<f64> = parts.iter().map(|p| p.drop).collect();
    let heatmaps: Vec<&Heatmap> = parts.iter().map(|p| &p.heatmap).collect();
    let (global_raw, weights) = combine_heatmaps(&heatmaps, &drops)?;
    let (w, h) = image.dimensions();
    let global = Heatmap::normalized(w, h, &global_raw);

    Ok(Explanation {
        image_id: image_id.to_string(),
        holonym,
        class_index,
        score: f64::from(score),
        parts,
        global_raw,
        global,
        weights,
        config: cfg.clone(),
    })
}

/// Weighted linear combination of part heatmaps.
///
/// Drops are clamped at zero and L1-normalized into weights; all-zero drops
/// produce a zero map rather than an error so batch runs never abort.
pub fn global_heatmap(heatmaps: &[&Heatmap], drops: &[f64]) -> Result<Heatmap, ExplainError> {
    let (raw, _) = combine_heatmaps(heatmaps, drops)?;
    let (w, h) = match heatmaps.first() {
        Some(hm) => (hm.width, hm.height),
        None => (0, 0),
    };
    Ok(Heatmap::normalized(w, h, &raw))
}

fn combine_heatmaps(
    heatmaps: &[&Heatmap],
    drops: &[f64],
) -> Result<(Vec<f32>, Vec<f64>), ExplainError> {
    assert_eq!(heatmaps.len(), drops.len());
    if heatmaps.is_empty() {
        return Ok((Vec::new(), Vec::new()));
    }
    let (w, h) = (heatmaps[0].width, heatmaps[0].height);
    for (i, hm) in heatmaps.iter().enumerate() {
        if hm.width != w || hm.height != h {
            return Err(ExplainError::HeatmapGeometry(i));
        }
    }
    let clamped: Vec<f64> = drops.iter().map(|d| d.max(0.0)).collect();
    let total: f64 = clamped.iter().sum();
    let weights: Vec<f64> = if total > 0.0 {
        clamped.iter().map(|d| d / total).collect()
    } else {
        vec![0.0; drops.len()]
    };
    let mut raw = vec![0.0f32; (w * h) as usize];
    for (hm, &z) in heatmaps.iter().zip(&weights) {
        if z == 0.0 {
            continue;
        }
        for (acc, &v) in raw.iter_mut().zip(&hm.values) {
            *acc += (z as f32) * v;
        }
    }
    Ok((raw, weights))
}

// ---------------------------------------------------------------------------
// Report serialization
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartReport {
    pub name: String,
    pub f1: f64,
    pub drop: f64,
    pub selected: bool,
    pub heatmap: String,
    pub mask: String,
}

/// JSON report, heatmaps/masks referenced by relative path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationReport {
    pub image: String,
    pub holonym: String,
    pub score: f64,
    pub parts: Vec<PartReport>,
    pub global_heatmap: String,
    pub weights: Vec<f64>,
    pub config: ExplainConfig,
}

impl Explanation {
    /// Write heatmap/mask artifacts under `dir` and return the report.
    ///
    /// Per part: an 8-bit grayscale PNG and the raw HTF1 tensor of the
    /// heatmap, plus a 1-bit PNG mask. The global heatmap gets the same
    /// pair; its HTF1 holds the raw (pre-normalization) combination.
    pub fn into_report(&self, dir: &Path) -> Result<ExplanationReport, ExplainError> {
        let io_err = |path: &Path, msg: String| ExplainError::Io {
            path: path.display().to_string(),
            msg,
        };
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e.to_string()))?;
        let stem = sanitize(&self.image_id);
        let mut parts = Vec::new();
        for p in &self.parts {
            let pstem = format!("{stem}.{}", sanitize(&p.name));
            let hm_png = format!("{pstem}.heatmap.png");
            let hm_htf = format!("{pstem}.heatmap.htf1");
            let mask_png = format!("{pstem}.mask.png");
            p.heatmap
                .to_gray_image()
                .save(dir.join(&hm_png))
                .map_err(|e| io_err(&dir.join(&hm_png), e.to_string()))?;
            p.heatmap
                .to_tensor()
                .save(&dir.join(&hm_htf))
                .map_err(|e| io_err(&dir.join(&hm_htf), e.to_string()))?;
            save_mask(&p.mask, &dir.join(&mask_png))
                .map_err(|e| io_err(&dir.join(&mask_png), e))?;
            parts.push(PartReport {
                name: p.name.clone(),
                f1: p.f1,
                drop: p.drop,
                selected: p.selected,
                heatmap: hm_png,
                mask: mask_png,
            });
        }
        let g_png = format!("{stem}.global.png");
        let g_htf = format!("{stem}.global.htf1");
        self.global
            .to_gray_image()
            .save(dir.join(&g_png))
            .map_err(|e| io_err(&dir.join(&g_png), e.to_string()))?;
        crate::netcore::Tensor::new(
            vec![self.global.height as usize, self.global.width as usize],
            self.global_raw.clone(),
        )
        .map_err(NetError::from)?
        .save(&dir.join(&g_htf))
        .map_err(|e| io_err(&dir.join(&g_htf), e.to_string()))?;

        Ok(ExplanationReport {
            image: self.image_id.clone(),
            holonym: self.holonym.clone(),
            score: self.score,
            parts,
            global_heatmap: g_png,
            weights: self.weights.clone(),
            config: self.config.clone(),
        })
    }
}

/// 1-bit grayscale PNG.
fn save_mask(mask: &BinaryMask, path: &Path) -> Result<(), String> {
    let file = std::fs::File::create(path).map_err(|e| e.to_string())?;
    let w = std::io::BufWriter::new(file);
    let mut encoder = png::Encoder::new(w, mask.width, mask.height);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::One);
    let mut writer = encoder.write_header().map_err(|e| e.to_string())?;
    let row_bytes = (mask.width as usize + 7) / 8;
    let mut packed = vec![0u8; row_bytes * mask.height as usize];
    for y in 0..mask.height {
        for x in 0..mask.width {
            if mask.get(x, y) {
                packed[y as usize * row_bytes + (x / 8) as usize] |= 0x80 >> (x % 8);
            }
        }
    }
    writer.write_image_data(&packed).map_err(|e| e.to_string())?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Class-level summaries
// ---------------------------------------------------------------------------

/// Aggregates over all explanations of one holonym class.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassSummary {
    pub holonym: String,
    pub images: usize,
    /// Mean over images of the per-image average drop.
    pub mean_avg_drop: f64,
    /// Mean over images of the per-image maximum drop.
    pub mean_max_drop: f64,
    /// Mean number of selected parts per image.
    pub mean_selected: f64,
    /// Up to five parts ranked by mean drop, descending.
    pub top_parts: Vec<(String, f64)>,
}

/// Per-image average/max drops, class means, and the top-5 parts by mean
/// drop.
pub fn summarize_class(holonym: &str, reports: &[ExplanationReport]) -> ClassSummary {
    let mut sum_avg = 0.0f64;
    let mut sum_max = 0.0f64;
    let mut sum_selected = 0usize;
    let mut per_part: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for r in reports {
        let drops: Vec<f64> = r.parts.iter().map(|p| p.drop).collect();
        if !drops.is_empty() {
            sum_avg += drops.iter().sum::<f64>() / drops.len() as f64;
            sum_max += drops.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        }
        sum_selected += r.parts.iter().filter(|p| p.selected).count();
        for p in &r.parts {
            let e = per_part.entry(p.name.clone()).or_insert((0.0, 0));
            e.0 += p.drop;
            e.1 += 1;
        }
    }
    let n = reports.len().max(1) as f64;
    let mut ranked: Vec<(String, f64)> = per_part
        .into_iter()
        .map(|(name, (total, count))| (name, total / count as f64))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(5);
    ClassSummary {
        holonym: holonym.to_string(),
        images: reports.len(),
        mean_avg_drop: sum_avg / n,
        mean_max_drop: sum_max / n,
        mean_selected: sum_selected as f64 / n,
        top_parts: ranked,
    }
}

/// Resolve the part list for a predicted class, wrapping KB failures in the
/// explanation error space.
pub fn resolve_parts_for_class(kb: &HolMeMap, class: &str) -> Result<Vec<String>, ExplainError> {
    kb.resolve_parts(class)
        .map_err(|e| ExplainError::UnmappedClass {
            class: class.to_string(),
            source: e,
        })
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::{FeatureBackend, FeatureExtractor, Layer, Linear, Tensor};

    fn heat(w: u32, h: u32, values: Vec<f32>) -> Heatmap {
        Heatmap {
            width: w,
            height: h,
            values,
        }
    }

    #[test]
    fn global_heatmap_single_part_is_that_heatmap() {
        let a = heat(2, 2, vec![0.0, 0.25, 0.5, 1.0]);
        let g = global_heatmap(&[&a], &[30.0]).unwrap();
        assert_eq!(g.values, a.values);
    }

    #[test]
    fn global_weights_follow_drops() {
        let a = heat(1, 2, vec![1.0, 0.0]);
        let b = heat(1, 2, vec![0.0, 1.0]);
        let (raw, weights) = combine_heatmaps(&[&a, &b], &[30.0, 10.0]).unwrap();
        assert_eq!(weights, vec![0.75, 0.25]);
        assert!((raw[0] - 0.75).abs() < 1e-6);
        assert!((raw[1] - 0.25).abs() < 1e-6);
    }

    #[test]
    fn zero_drops_zero_map() {
        let a = heat(2, 1, vec![0.3, 0.9]);
        let b = heat(2, 1, vec![0.5, 0.1]);
        let g = global_heatmap(&[&a, &b], &[0.0, -12.0]).unwrap();
        assert!(g.is_zero());
    }

    #[test]
    fn geometry_mismatch_is_an_error() {
        let a = heat(2, 1, vec![0.3, 0.9]);
        let b = heat(1, 2, vec![0.5, 0.1]);
        assert!(matches!(
            global_heatmap(&[&a, &b], &[1.0, 1.0]),
            Err(ExplainError::HeatmapGeometry(1))
        ));
    }

    #[test]
    fn negative_drops_are_clamped_out_of_weights() {
        let a = heat(1, 2, vec![1.0, 0.0]);
        let b = heat(1, 2, vec![0.0, 1.0]);
        let (_, weights) = combine_heatmaps(&[&a, &b], &[40.0, -25.0]).unwrap();
        assert_eq!(weights, vec![1.0, 0.0]);
    }

    #[test]
    fn weights_are_convex_when_any_positive_drop() {
        let a = heat(1, 2, vec![1.0, 0.0]);
        let b = heat(1, 2, vec![0.0, 1.0]);
        let c = heat(1, 2, vec![0.5, 0.5]);
        let (_, weights) = combine_heatmaps(&[&a, &b, &c], &[12.0, -3.0, 4.0]).unwrap();
        assert!(weights.iter().all(|w| *w >= 0.0));
        let sum: f64 = weights.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    // -- end-to-end explanation over stub models ---------------------------

    /// Mean standardized color over a 2x2 grid; lets tiny color images
    /// drive predictable heads.
    struct Grid2;
    impl FeatureBackend for Grid2 {
        fn name(&self) -> &str {
            "grid2"
        }
        fn output_shape(&self) -> [usize; 3] {
            [3, 2, 2]
        }
        fn extract(&self, input: &Tensor) -> Result<Tensor, NetError> {
            input.expect_shape(&[3, 224, 224])?;
            let mut out = vec![0.0f32; 12];
            for c in 0..3 {
                for gy in 0..2 {
                    for gx in 0..2 {
                        let mut acc = 0.0f64;
                        for y in 0..112 {
                            for x in 0..112 {
                                acc += f64::from(
                                    input.data()
                                        [c * 224 * 224 + (gy * 112 + y) * 224 + gx * 112 + x],
                                );
                            }
                        }
                        out[c * 4 + gy * 2 + gx] = (acc / (112.0 * 112.0)) as f32;
                    }
                }
            }
            Ok(Tensor::new(vec![3, 2, 2], out)?)
        }
    }

    fn linear_head(classes: Vec<String>, weight_rows: Vec<Vec<f32>>) -> Head {
        let n = classes.len();
        let mut lin = Linear::zeros(12, n);
        for (o, row) in weight_rows.iter().enumerate() {
            lin.weight[o * 12..(o + 1) * 12].copy_from_slice(row);
        }
        Head::new(vec![Layer::Flatten, Layer::Linear(lin)], classes, [3, 2, 2]).unwrap()
    }

    fn red_channel_row(scale: f32) -> Vec<f32> {
        let mut row = vec![0.0f32; 12];
        for v in row.iter_mut().take(4) {
            *v = scale;
        }
        row
    }

    fn blue_channel_row(scale: f32) -> Vec<f32> {
        let mut row = vec![0.0f32; 12];
        for v in row.iter_mut().skip(8) {
            *v = scale;
        }
        row
    }

    fn stub_models() -> (SplitClassifier, MeronymModel) {
        let holo_head = linear_head(
            vec!["red_thing".into(), "blue_thing".into()],
            vec![red_channel_row(2.0), blue_channel_row(2.0)],
        );
        let holonym = SplitClassifier::new(FeatureExtractor::new(Box::new(Grid2)), holo_head);
        let mero_head = linear_head(
            vec!["legs".into(), "hooves".into()],
            vec![red_channel_row(1.0), blue_channel_row(1.0)],
        );
        let mut part_f1 = BTreeMap::new();
        part_f1.insert("legs".to_string(), 0.61);
        part_f1.insert("hooves".to_string(), 0.62);
        (
            holonym,
            MeronymModel {
                head: mero_head,
                part_f1,
            },
        )
    }

    fn red_image() -> RgbImage {
        RgbImage::from_pixel(224, 224, image::Rgb([220, 30, 30]))
    }

    #[test]
    fn low_f1_parts_are_excluded_regardless_of_drop() {
        // Both parts sit below t_f1 = 0.7 (0.61 and 0.62), so whatever the
        // drops say, nothing is selected.
        let (holonym, meronym) = stub_models();
        let cfg = ExplainConfig::default();
        let e = explain_image(&red_image(), "img0", &holonym, &meronym, &cfg).unwrap();
        assert_eq!(e.parts.len(), 2);
        assert!(e.parts.iter().all(|p| !p.selected));
    }

    #[test]
    fn all_drops_below_threshold_still_emits_report() {
        let (holonym, meronym) = stub_models();
        let cfg = ExplainConfig {
            t_score: 1e9,
            ..ExplainConfig::default()
        };
        let e = explain_image(&red_image(), "img1", &holonym, &meronym, &cfg).unwrap();
        assert!(e.parts.iter().all(|p| !p.selected));
        assert_eq!(e.weights.len(), 2);
    }

    #[test]
    fn thresholds_only_flip_selection_flags() {
        let (holonym, meronym) = stub_models();
        let a = explain_image(
            &red_image(),
            "x",
            &holonym,
            &meronym,
            &ExplainConfig::default(),
        )
        .unwrap();
        let strict = ExplainConfig {
            t_score: 95.0,
            t_f1: 0.99,
            ..ExplainConfig::default()
        };
        let b = explain_image(&red_image(), "x", &holonym, &meronym, &strict).unwrap();
        for (pa, pb) in a.parts.iter().zip(&b.parts) {
            assert_eq!(pa.drop, pb.drop);
            assert_eq!(pa.heatmap, pb.heatmap);
            assert_eq!(pa.mask.bits, pb.mask.bits);
        }
        for p in &a.parts {
            assert_eq!(
                p.selected,
                p.drop > a.config.t_score && p.f1 > a.config.t_f1
            );
        }
    }

    #[test]
    fn zero_heatmap_part_is_unselected() {
        // The "hooves" head row only reads blue cells; on a pure red image
        // its CAM never goes positive, so the heatmap is identically zero
        // (the no-highlighted-region case) and the part stays out of the
        // explanation.
        let (holonym, meronym) = stub_models();
        let cfg = ExplainConfig::default();
        let e = explain_image(&red_image(), "img2", &holonym, &meronym, &cfg).unwrap();
        let hooves = e.parts.iter().find(|p| p.name == "hooves").unwrap();
        assert!(hooves.heatmap.is_zero());
        assert!(!hooves.selected);
    }

    #[test]
    fn report_roundtrip_is_lossless() {
        let (holonym, meronym) = stub_models();
        let cfg = ExplainConfig::default();
        let e = explain_image(&red_image(), "img/3", &holonym, &meronym, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let report = e.into_report(dir.path()).unwrap();
        let json = serde_json::to_string_pretty(&report).unwrap();
        let back: ExplanationReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
        for p in &report.parts {
            assert!(dir.path().join(&p.heatmap).exists());
            assert!(dir.path().join(&p.mask).exists());
        }
        assert!(dir.path().join(&report.global_heatmap).exists());
        // Mask decodes back to the same bits.
        let part0 = &e.parts[0];
        let decoded = image::open(dir.path().join(&report.parts[0].mask))
            .unwrap()
            .to_luma8();
        for y in 0..part0.mask.height {
            for x in 0..part0.mask.width {
                assert_eq!(decoded.get_pixel(x, y)[0] > 0, part0.mask.get(x, y));
            }
        }
    }

    #[test]
    fn summary_statistics() {
        let mk = |drops: Vec<f64>, selected: Vec<bool>| ExplanationReport {
            image: "i".into(),
            holonym: "h".into(),
            score: 0.9,
            parts: drops
                .iter()
                .zip(&selected)
                .enumerate()
                .map(|(i, (d, s))| PartReport {
                    name: format!("p{i}"),
                    f1: 0.9,
                    drop: *d,
                    selected: *s,
                    heatmap: String::new(),
                    mask: String::new(),
                })
                .collect(),
            global_heatmap: String::new(),
            weights: vec![],
            config: ExplainConfig::default(),
        };
        // Single image, drops (50, 10) -> avg 30, max 50.
        let s = summarize_class("h", &[mk(vec![50.0, 10.0], vec![true, false])]);
        assert_eq!(s.mean_avg_drop, 30.0);
        assert_eq!(s.mean_max_drop, 50.0);
        assert_eq!(s.mean_selected, 1.0);

        // A part that always dominates heads the top-5 list.
        let reports: Vec<_> = (0..6)
            .map(|_| mk(vec![80.0, 20.0, 5.0], vec![true, true, false]))
            .collect();
        let s = summarize_class("h", &reports);
        assert_eq!(s.top_parts[0].0, "p0");
        assert_eq!(s.top_parts.len(), 3);
    }

    #[test]
    fn unmapped_class_resolution_error() {
        let kb = crate::kb::load_kb(crate::kb::PASCAL_PART_KB).unwrap();
        assert!(matches!(
            resolve_parts_for_class(&kb, "zeppelin"),
            Err(ExplainError::UnmappedClass { .. })
        ));
    }
}
