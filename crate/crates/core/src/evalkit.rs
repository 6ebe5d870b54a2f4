//! Explanation quality metrics: per-pixel localization AUC, causal
//! deletion/insertion/preservation curves, random-superpixel baselines and
//! the binarization-percentile grid search.

use image::RgbImage;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datakit::BBox;
use crate::netcore::{ClassScorer, NetError};
use crate::saliency::{Heatmap, ABLATION_FILL};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("ground truth leaves no {0} pixels; AUC undefined")]
    DegenerateLabels(&'static str),
    #[error("heatmap is {hm_w}x{hm_h} but image is {img_w}x{img_h}")]
    GeometryMismatch {
        hm_w: u32,
        hm_h: u32,
        img_w: u32,
        img_h: u32,
    },
    #[error("cell size {cell} does not divide image sides {w}x{h}")]
    CellMismatch { cell: u32, w: u32, h: u32 },
    #[error("baseline AUC is not positive ({0}); ratio undefined")]
    ZeroBaseline(f64),
    #[error("steps must be >= 1")]
    ZeroSteps,
    #[error("no images supplied")]
    EmptyInput,
    #[error("ground-truth box out of image bounds")]
    BadBox,
    #[error("pipeline error during grid search: {0}")]
    Pipeline(String),
}

/// A class-probability trajectory over occlusion fractions, with its
/// trapezoidal area.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Curve {
    pub fractions: Vec<f64>,
    pub scores: Vec<f32>,
    pub auc: f64,
}

impl Curve {
    pub fn from_points(fractions: Vec<f64>, scores: Vec<f32>) -> Self {
        debug_assert_eq!(fractions.len(), scores.len());
        let auc = trapezoid(&fractions, &scores);
        Self {
            fractions,
            scores,
            auc,
        }
    }
}

/// Trapezoidal integral over the fraction axis.
pub fn trapezoid(fractions: &[f64], scores: &[f32]) -> f64 {
    let mut auc = 0.0f64;
    for i in 1..fractions.len() {
        let dx = fractions[i] - fractions[i - 1];
        auc += dx * (f64::from(scores[i]) + f64::from(scores[i - 1])) / 2.0;
    }
    auc
}

/// Deletion, insertion and preservation curves of one heatmap.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurveSet {
    pub deletion: Curve,
    pub insertion: Curve,
    pub preservation: Curve,
}

/// Per-part ground truth: every pixel inside any box is a positive.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LocalizationGT {
    pub boxes: Vec<BBox>,
}

impl LocalizationGT {
    pub fn contains(&self, x: u32, y: u32) -> bool {
        self.boxes.iter().any(|b| b.contains(x, y))
    }
}

/// ROC AUC of heatmap values against box membership, via the rank statistic
/// with average ranks for ties (Mann–Whitney).
pub fn pixel_auc(hm: &Heatmap, gt: &LocalizationGT) -> Result<f64, EvalError> {
    for b in &gt.boxes {
        if b.validate(hm.width, hm.height).is_err() {
            return Err(EvalError::BadBox);
        }
    }
    let n = hm.values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| hm.values[a].total_cmp(&hm.values[b]));

    let is_pos = |i: usize| {
        let x = (i as u32) % hm.width;
        let y = (i as u32) / hm.width;
        gt.contains(x, y)
    };
    let n_pos = (0..n).filter(|&i| is_pos(i)).count();
    let n_neg = n - n_pos;
    if n_pos == 0 {
        return Err(EvalError::DegenerateLabels("positive"));
    }
    if n_neg == 0 {
        return Err(EvalError::DegenerateLabels("negative"));
    }

    // Average ranks over tied score groups.
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0usize;
    while i < n {
        let mut j = i;
        while j + 1 < n && hm.values[order[j + 1]] == hm.values[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j + 2) as f64 / 2.0; // ranks are 1-based
        for &idx in &order[i..=j] {
            if is_pos(idx) {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let n_pos_f = n_pos as f64;
    Ok((rank_sum_pos - n_pos_f * (n_pos_f + 1.0) / 2.0) / (n_pos_f * n_neg as f64))
}

/// Pixels sorted by descending heatmap value, row-major index breaking ties.
fn rank_pixels(hm: &Heatmap) -> Vec<usize> {
    let mut order: Vec<usize> = (0..hm.values.len()).collect();
    order.sort_by(|&a, &b| hm.values[b].total_cmp(&hm.values[a]).then(a.cmp(&b)));
    order
}

fn check_geometry(image: &RgbImage, hm: &Heatmap) -> Result<(), EvalError> {
    let (w, h) = image.dimensions();
    if hm.width != w || hm.height != h {
        return Err(EvalError::GeometryMismatch {
            hm_w: hm.width,
            hm_h: hm.height,
            img_w: w,
            img_h: h,
        });
    }
    Ok(())
}

/// Cumulative pixel counts after each of `steps` equal batches.
fn batch_counts(n: usize, steps: usize) -> Vec<usize> {
    (1..=steps).map(|b| n * b / steps).collect()
}

fn fill_pixels(img: &mut RgbImage, order: &[usize], range: std::ops::Range<usize>, fill: [u8; 3]) {
    let w = img.width();
    for &idx in &order[range] {
        img.put_pixel(idx as u32 % w, idx as u32 / w, image::Rgb(fill));
    }
}

fn reveal_pixels(
    img: &mut RgbImage,
    source: &RgbImage,
    order: &[usize],
    range: std::ops::Range<usize>,
) {
    let w = img.width();
    for &idx in &order[range] {
        let (x, y) = (idx as u32 % w, idx as u32 / w);
        img.put_pixel(x, y, *source.get_pixel(x, y));
    }
}

/// Remove pixels in descending saliency order (gray fill), recording the
/// class probability after each batch; the unmodified score sits at
/// fraction 0.
pub fn deletion_curve(
    model: &dyn ClassScorer,
    image: &RgbImage,
    hm: &Heatmap,
    class_index: usize,
    steps: usize,
) -> Result<Curve, EvalError> {
    if steps == 0 {
        return Err(EvalError::ZeroSteps);
    }
    check_geometry(image, hm)?;
    let order = rank_pixels(hm);
    let n = order.len();
    let mut fractions = vec![0.0f64];
    let mut scores = vec![model.class_probability(image, class_index)?];
    let mut working = image.clone();
    let mut removed = 0usize;
    for count in batch_counts(n, steps) {
        fill_pixels(&mut working, &order, removed..count, ABLATION_FILL);
        removed = count;
        fractions.push(count as f64 / n as f64);
        scores.push(model.class_probability(&working, class_index)?);
    }
    Ok(Curve::from_points(fractions, scores))
}

/// Reveal pixels in descending saliency order starting from the all-gray
/// baseline; the fraction-1 endpoint is exactly the original-image score.
pub fn insertion_curve(
    model: &dyn ClassScorer,
    image: &RgbImage,
    hm: &Heatmap,
    class_index: usize,
    steps: usize,
) -> Result<Curve, EvalError> {
    reveal_curve(model, image, hm, class_index, steps)
}

/// Keep the top salient fraction and gray out the rest, for increasing kept
/// fractions. With the gray baseline this walks the same image sequence as
/// insertion.
pub fn preservation_curve(
    model: &dyn ClassScorer,
    image: &RgbImage,
    hm: &Heatmap,
    class_index: usize,
    steps: usize,
) -> Result<Curve, EvalError> {
    reveal_curve(model, image, hm, class_index, steps)
}

fn reveal_curve(
    model: &dyn ClassScorer,
    image: &RgbImage,
    hm: &Heatmap,
    class_index: usize,
    steps: usize,
) -> Result<Curve, EvalError> {
    if steps == 0 {
        return Err(EvalError::ZeroSteps);
    }
    check_geometry(image, hm)?;
    let order = rank_pixels(hm);
    let n = order.len();
    let mut working =
        RgbImage::from_pixel(image.width(), image.height(), image::Rgb(ABLATION_FILL));
    let mut fractions = vec![0.0f64];
    let mut scores = vec![model.class_probability(&working, class_index)?];
    let mut revealed = 0usize;
    for count in batch_counts(n, steps) {
        reveal_pixels(&mut working, image, &order, revealed..count);
        revealed = count;
        fractions.push(count as f64 / n as f64);
        scores.push(if count == n {
            // Fully revealed: identical to the original image by
            // construction, so score the original directly.
            model.class_probability(image, class_index)?
        } else {
            model.class_probability(&working, class_index)?
        });
    }
    Ok(Curve::from_points(fractions, scores))
}

/// All three curves for one heatmap.
pub fn curve_set(
    model: &dyn ClassScorer,
    image: &RgbImage,
    hm: &Heatmap,
    class_index: usize,
    steps: usize,
) -> Result<CurveSet, EvalError> {
    Ok(CurveSet {
        deletion: deletion_curve(model, image, hm, class_index, steps)?,
        insertion: insertion_curve(model, image, hm, class_index, steps)?,
        preservation: preservation_curve(model, image, hm, class_index, steps)?,
    })
}

/// Random-superpixel baseline: the image is divided into a regular grid of
/// `cell x cell` superpixels erased (or revealed) in a seeded uniform
/// random order, through the same curve machinery.
pub fn random_baseline(
    model: &dyn ClassScorer,
    image: &RgbImage,
    class_index: usize,
    cell: u32,
    seed: u64,
    steps: usize,
) -> Result<CurveSet, EvalError> {
    let (w, h) = image.dimensions();
    if cell == 0 || w % cell != 0 || h % cell != 0 {
        return Err(EvalError::CellMismatch { cell, w, h });
    }
    let hm = superpixel_ranking(w, h, cell, seed);
    curve_set(model, image, &hm, class_index, steps)
}

/// Synthetic "heatmap" whose pixel ranking follows a random cell order
/// (pixels within a cell stay row-major contiguous).
fn superpixel_ranking(w: u32, h: u32, cell: u32, seed: u64) -> Heatmap {
    let cells_x = w / cell;
    let cells_y = h / cell;
    let n_cells = (cells_x * cells_y) as usize;
    let mut order: Vec<usize> = (0..n_cells).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    // Cell at position p in the shuffled order gets value 1 - p/n, so the
    // descending ranking visits cells in that order.
    let mut values = vec![0.0f32; (w * h) as usize];
    for (pos, &cell_idx) in order.iter().enumerate() {
        let cy = cell_idx as u32 / cells_x;
        let cx = cell_idx as u32 % cells_x;
        let v = 1.0 - pos as f32 / n_cells as f32;
        for dy in 0..cell {
            for dx in 0..cell {
                let x = cx * cell + dx;
                let y = cy * cell + dy;
                values[(y * w + x) as usize] = v;
            }
        }
    }
    Heatmap {
        width: w,
        height: h,
        values,
    }
}

/// Method-vs-baseline AUC ratios.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CurveRatios {
    pub insertion_ratio: f64,
    pub deletion_ratio: f64,
}

/// `method auc / baseline auc`; the baseline area must be positive.
pub fn auc_ratio(method: &Curve, baseline: &Curve) -> Result<f64, EvalError> {
    if baseline.auc <= 0.0 {
        return Err(EvalError::ZeroBaseline(baseline.auc));
    }
    Ok(method.auc / baseline.auc)
}

pub fn curve_ratios(method: &CurveSet, baseline: &CurveSet) -> Result<CurveRatios, EvalError> {
    Ok(CurveRatios {
        insertion_ratio: auc_ratio(&method.insertion, &baseline.insertion)?,
        deletion_ratio: auc_ratio(&method.deletion, &baseline.deletion)?,
    })
}

/// One grid-search case: an image, an opaque id for the caller's own
/// bookkeeping, and the class whose probability the curves track.
pub struct TuneCase {
    pub id: String,
    pub image: RgbImage,
    pub class_index: usize,
}

/// The percentile grid searched by default, integers 75..=90.
pub fn default_percentile_grid() -> Vec<f64> {
    (75..=90).map(f64::from).collect()
}

/// Grid-search outcome: the winning percentile and the mean objective per
/// grid entry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TuneOutcome {
    pub best_q: f64,
    pub objectives: Vec<(f64, f64)>,
}

/// Grid-search the binarization percentile.
///
/// For each candidate q the full pipeline (supplied as `heatmap_for`,
/// typically "explain at percentile q and hand back the global heatmap")
/// runs on every image; q maximizing the mean of
/// `insertion auc - deletion auc + preservation auc` wins, first grid entry
/// breaking ties.
pub fn tune_percentile<F>(
    cases: &[TuneCase],
    model: &dyn ClassScorer,
    grid: &[f64],
    steps: usize,
    mut heatmap_for: F,
) -> Result<TuneOutcome, EvalError>
where
    F: FnMut(&TuneCase, f64) -> Result<Heatmap, EvalError>,
{
    if cases.is_empty() || grid.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut best_q = grid[0];
    let mut best_objective = f64::NEG_INFINITY;
    let mut objectives = Vec::with_capacity(grid.len());
    for &q in grid {
        let mut total = 0.0f64;
        for case in cases {
            let hm = heatmap_for(case, q)?;
            let set = curve_set(model, &case.image, &hm, case.class_index, steps)?;
            total += set.insertion.auc - set.deletion.auc + set.preservation.auc;
        }
        let objective = total / cases.len() as f64;
        objectives.push((q, objective));
        if objective > best_objective {
            best_objective = objective;
            best_q = q;
        }
    }
    Ok(TuneOutcome { best_q, objectives })
}
