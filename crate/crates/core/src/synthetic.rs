//! Seeded two-class shapes benchmark.
//!
//! Scenes are noise backgrounds carrying three colored parts. Both classes
//! share a blue square ("plate") and a yellow triangle ("spike"); the disc
//! ("core") is red for one class and teal for the other, so the core alone
//! separates the classes. The holonym classifier additionally learns a
//! `background` class from part-free noise, mirroring the open label space
//! a real classifier has when evidence is ablated away.
//!
//! Everything is a pure function of the spec seed, so datasets, fixtures
//! and expectations reproduce bit-for-bit.

use std::collections::BTreeMap;
use std::path::Path;

use image::{Rgb, RgbImage};

use crate::datakit::{crop_part, BBox, DataError, ImageSample, PartDataset, SampleSource};
use crate::rng::{derive_seed, unit_uniform};

pub const CLASS_RUBY: &str = "ruby";
pub const CLASS_TEAL: &str = "teal";
pub const CLASS_BACKGROUND: &str = "background";
pub const PART_CORE: &str = "core";
pub const PART_PLATE: &str = "plate";
pub const PART_SPIKE: &str = "spike";

const RUBY_CORE: [u8; 3] = [210, 45, 45];
const TEAL_CORE: [u8; 3] = [40, 200, 210];
const PLATE_COLOR: [u8; 3] = [50, 90, 215];
const SPIKE_COLOR: [u8; 3] = [225, 215, 60];
const NOISE_LO: u8 = 70;
const NOISE_HI: u8 = 150;

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub image_side: u32,
    /// Side of the class-discriminative core part.
    pub core_side: u32,
    /// Side of the class-shared parts.
    pub shared_side: u32,
    pub train_per_class: usize,
    pub test_per_class: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            seed: 0x5eed,
            image_side: 224,
            core_side: 56,
            shared_side: 40,
            train_per_class: 64,
            test_per_class: 10,
        }
    }
}

impl SyntheticSpec {
    fn side_of(&self, part: &str) -> u32 {
        if part == PART_CORE {
            self.core_side
        } else {
            self.shared_side
        }
    }
}

/// One generated scene with its part ground truth.
#[derive(Debug, Clone)]
pub struct Scene {
    pub id: String,
    pub class_name: String,
    pub image: RgbImage,
    pub part_boxes: Vec<(String, BBox)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shape {
    Disc,
    Square,
    Triangle,
}

fn part_shape(part: &str) -> Shape {
    match part {
        PART_CORE => Shape::Disc,
        PART_PLATE => Shape::Square,
        _ => Shape::Triangle,
    }
}

fn part_color(class_name: &str, part: &str) -> [u8; 3] {
    match part {
        PART_CORE => {
            if class_name == CLASS_RUBY {
                RUBY_CORE
            } else {
                TEAL_CORE
            }
        }
        PART_PLATE => PLATE_COLOR,
        _ => SPIKE_COLOR,
    }
}


/// The two holonym classes and their shared part list.
pub fn class_names() -> [&'static str; 2] {
    [CLASS_RUBY, CLASS_TEAL]
}

pub fn part_names() -> [&'static str; 3] {
    [PART_CORE, PART_PLATE, PART_SPIKE]
}

/// KB document covering the two synthetic classes.
pub fn kb_json() -> String {
    let concepts: Vec<serde_json::Value> = class_names()
        .iter()
        .map(|c| {
            serde_json::json!({
                "id": c,
                "hypernyms": [],
                "parts": part_names().iter().map(|p| serde_json::json!({
                    "name": p, "visible": true, "within": []
                })).collect::<Vec<_>>(),
            })
        })
        .collect();
    serde_json::to_string_pretty(&serde_json::json!({ "concepts": concepts })).unwrap()
}

fn noise_background(side: u32, seed: u64) -> RgbImage {
    let span = f64::from(NOISE_HI - NOISE_LO);
    RgbImage::from_fn(side, side, |x, y| {
        let base = u64::from(y) * u64::from(side) + u64::from(x);
        let px = |c: u64| {
            (f64::from(NOISE_LO) + unit_uniform(seed ^ (c + 1), base) * span).round() as u8
        };
        Rgb([px(0), px(1), px(2)])
    })
}

fn draw_part(img: &mut RgbImage, bbox: &BBox, shape: Shape, color: [u8; 3], seed: u64) {
    let side = bbox.width();
    for y in bbox.y_min..bbox.y_max {
        for x in bbox.x_min..bbox.x_max {
            let dx = x - bbox.x_min;
            let dy = y - bbox.y_min;
            let inside = match shape {
                Shape::Square => true,
                Shape::Disc => {
                    let cx = f64::from(side - 1) / 2.0;
                    let r = f64::from(side) / 2.0;
                    let ddx = f64::from(dx) - cx;
                    let ddy = f64::from(dy) - cx;
                    ddx * ddx + ddy * ddy <= r * r
                }
                Shape::Triangle => {
                    // Upward triangle: row y spans a widening band.
                    let frac = f64::from(dy) / f64::from(side - 1);
                    let half = frac * f64::from(side - 1) / 2.0;
                    let cx = f64::from(side - 1) / 2.0;
                    (f64::from(dx) - cx).abs() <= half
                }
            };
            if inside {
                // Mild per-pixel jitter so classes are not constant-color.
                let j = |c: u8, ch: u64| {
                    let n = (unit_uniform(seed ^ (ch + 7), u64::from(y) * 4096 + u64::from(x))
                        - 0.5)
                        * 24.0;
                    (f64::from(c) + n).round().clamp(0.0, 255.0) as u8
                };
                img.put_pixel(x, y, Rgb([j(color[0], 0), j(color[1], 1), j(color[2], 2)]));
            }
        }
    }
}

/// Deterministic scene for (class, split, index).
pub fn scene(spec: &SyntheticSpec, class_name: &str, split: &str, index: usize) -> Scene {
    let id = format!("{class_name}/{split}/{index:03}");
    let seed = derive_seed(spec.seed, &id, 0);
    let mut image = noise_background(spec.image_side, seed);

    let mut part_boxes = Vec::new();
    // Background scenes alternate between pure noise and shared-parts-only
    // layouts, so "plate and spike without a core" is learnable as
    // no-object context rather than class evidence.
    let parts: &[&str] = if class_name == CLASS_BACKGROUND {
        if index % 2 == 0 {
            &[]
        } else {
            &[PART_PLATE, PART_SPIKE]
        }
    } else {
        &[PART_CORE, PART_PLATE, PART_SPIKE]
    };
    if !parts.is_empty() {
        // Quadrant anchors, shuffled, with jitter.
        let q = spec.image_side / 4;
        let anchors = [(q, q), (3 * q, q), (q, 3 * q), (3 * q, 3 * q)];
        let mut order: Vec<usize> = (0..4).collect();
        // Fisher-Yates from counter-based uniforms.
        for i in (1..4usize).rev() {
            let j = (unit_uniform(seed ^ 0x51, i as u64) * (i + 1) as f64) as usize;
            order.swap(i, j.min(i));
        }
        for (slot, part) in parts.iter().enumerate() {
            let half = spec.side_of(part) / 2;
            let (cx, cy) = anchors[order[slot]];
            let jitter = |ch: u64| {
                ((unit_uniform(seed ^ (0x60 + ch), slot as u64) - 0.5) * 40.0).round() as i64
            };
            let cx = (i64::from(cx) + jitter(0)).clamp(
                i64::from(half),
                i64::from(spec.image_side - half),
            ) as u32;
            let cy = (i64::from(cy) + jitter(1)).clamp(
                i64::from(half),
                i64::from(spec.image_side - half),
            ) as u32;
            let bbox = BBox::new(cx - half, cy - half, cx + half, cy + half);
            draw_part(
                &mut image,
                &bbox,
                part_shape(part),
                part_color(class_name, part),
                derive_seed(seed, part, 1),
            );
            part_boxes.push((part.to_string(), bbox));
        }
    }
    Scene {
        id,
        class_name: class_name.to_string(),
        image,
        part_boxes,
    }
}

/// Whole-scene dataset for the holonym classifier: the two shape classes
/// plus part-free background noise. Labels live in the `parts` slot of
/// [`PartDataset`], which is just a labeled image collection.
pub fn holonym_dataset(spec: &SyntheticSpec) -> Result<PartDataset, DataError> {
    let mut ds = PartDataset::new(
        "synthetic-holonyms",
        vec![
            CLASS_RUBY.to_string(),
            CLASS_TEAL.to_string(),
            CLASS_BACKGROUND.to_string(),
        ],
    );
    for class in [CLASS_RUBY, CLASS_TEAL, CLASS_BACKGROUND] {
        for i in 0..spec.train_per_class {
            let s = scene(spec, class, "train", i);
            ds.push(ImageSample::new(s.image, class, SampleSource::Crop, &s.id))?;
        }
    }
    Ok(ds)
}

/// Part crops for one class's meronym model, cut out of training scenes
/// with sibling-aware square cropping.
pub fn meronym_dataset(spec: &SyntheticSpec, class_name: &str) -> Result<PartDataset, DataError> {
    let mut ds = PartDataset::new(
        class_name,
        part_names().iter().map(|p| p.to_string()).collect(),
    );
    for i in 0..spec.train_per_class {
        let s = scene(spec, class_name, "train", i);
        let boxes: BTreeMap<&str, BBox> = s
            .part_boxes
            .iter()
            .map(|(p, b)| (p.as_str(), *b))
            .collect();
        for (part, bbox) in &s.part_boxes {
            let siblings: Vec<BBox> = boxes
                .iter()
                .filter(|(p, _)| **p != part.as_str())
                .map(|(_, b)| *b)
                .collect();
            let crop = crop_part(&s.image, bbox, &siblings)?;
            ds.push(ImageSample::new(
                crop,
                part,
                SampleSource::Crop,
                &format!("{}/{part}", s.id),
            ))?;
        }
    }
    Ok(ds)
}

/// Held-out scenes for one class.
pub fn test_scenes(spec: &SyntheticSpec, class_name: &str) -> Vec<Scene> {
    (0..spec.test_per_class)
        .map(|i| scene(spec, class_name, "test", i))
        .collect()
}

/// Write a CLI-consumable fixture tree:
///
/// ```text
/// <dir>/kb.json
/// <dir>/scenes/<class>/<id>.png           train scenes
/// <dir>/scenes/annotations.json           part boxes sidecar
/// <dir>/ingest/<class>/<part>/<n>.png     pre-cropped part images
/// <dir>/test/<class>/<id>.png             held-out scenes
/// <dir>/test/annotations.json             held-out part boxes
/// ```
pub fn write_fixture_tree(spec: &SyntheticSpec, dir: &Path) -> Result<(), DataError> {
    let io = |p: &Path, e: std::io::Error| DataError::Io {
        path: p.display().to_string(),
        source: e,
    };
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    std::fs::write(dir.join("kb.json"), kb_json()).map_err(|e| io(&dir.join("kb.json"), e))?;

    let mut annotations = Vec::new();
    let mut test_annotations = Vec::new();
    for class in class_names() {
        let scene_dir = dir.join("scenes").join(class);
        std::fs::create_dir_all(&scene_dir).map_err(|e| io(&scene_dir, e))?;
        for i in 0..spec.train_per_class {
            let s = scene(spec, class, "train", i);
            let file = format!("{i:03}.png");
            s.image.save(scene_dir.join(&file)).map_err(|e| {
                io(
                    &scene_dir.join(&file),
                    std::io::Error::new(std::io::ErrorKind::Other, e.to_string()),
                )
            })?;
            annotations.push(serde_json::json!({
                "image": format!("{class}/{file}"),
                "holonym": class,
                "parts": s.part_boxes.iter().map(|(p, b)| serde_json::json!({
                    "name": p,
                    "bbox": [b.x_min, b.y_min, b.x_max, b.y_max],
                })).collect::<Vec<_>>(),
            }));
        }
        let ingest = meronym_dataset(spec, class)?;
        for sample in ingest.samples() {
            let part_dir = dir.join("ingest").join(class).join(&sample.label);
            std::fs::create_dir_all(&part_dir).map_err(|e| io(&part_dir, e))?;
            let file = part_dir.join(format!(
                "{}.png",
                sample.origin_id.replace('/', "_")
            ));
            sample.pixels.save(&file).map_err(|e| {
                io(&file, std::io::Error::new(std::io::ErrorKind::Other, e.to_string()))
            })?;
        }
        let test_dir = dir.join("test").join(class);
        std::fs::create_dir_all(&test_dir).map_err(|e| io(&test_dir, e))?;
        for (i, s) in test_scenes(spec, class).iter().enumerate() {
            let file = test_dir.join(format!("{i:03}.png"));
            s.image.save(&file).map_err(|e| {
                io(&file, std::io::Error::new(std::io::ErrorKind::Other, e.to_string()))
            })?;
            test_annotations.push(serde_json::json!({
                "image": format!("{class}/{i:03}.png"),
                "holonym": class,
                "parts": s.part_boxes.iter().map(|(p, b)| serde_json::json!({
                    "name": p,
                    "bbox": [b.x_min, b.y_min, b.x_max, b.y_max],
                })).collect::<Vec<_>>(),
            }));
        }
    }
    let ann_path = dir.join("scenes").join("annotations.json");
    let json = serde_json::to_string_pretty(&annotations).unwrap();
    std::fs::write(&ann_path, json).map_err(|e| io(&ann_path, e))?;
    let test_ann_path = dir.join("test").join("annotations.json");
    let json = serde_json::to_string_pretty(&test_annotations).unwrap();
    std::fs::write(&test_ann_path, json).map_err(|e| io(&test_ann_path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenes_are_deterministic() {
        let spec = SyntheticSpec::default();
        let a = scene(&spec, CLASS_RUBY, "train", 0);
        let b = scene(&spec, CLASS_RUBY, "train", 0);
        assert_eq!(a.image, b.image);
        assert_eq!(a.part_boxes, b.part_boxes);
        let c = scene(&spec, CLASS_RUBY, "train", 1);
        assert_ne!(a.image, c.image);
    }

    #[test]
    fn parts_do_not_overlap_and_stay_in_bounds() {
        let spec = SyntheticSpec::default();
        for class in class_names() {
            for i in 0..10 {
                let s = scene(&spec, class, "train", i);
                for (_, b) in &s.part_boxes {
                    assert!(b.validate(spec.image_side, spec.image_side).is_ok());
                }
                for a in 0..s.part_boxes.len() {
                    for b in 0..a {
                        assert!(
                            !s.part_boxes[a].1.overlaps(&s.part_boxes[b].1),
                            "parts overlap in scene {}",
                            s.id
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn background_scenes_have_no_parts() {
        let spec = SyntheticSpec::default();
        let s = scene(&spec, CLASS_BACKGROUND, "train", 0);
        assert!(s.part_boxes.is_empty());
    }

    #[test]
    fn kb_document_resolves_both_classes() {
        let kb = crate::kb::load_kb(&kb_json()).unwrap();
        for class in class_names() {
            assert_eq!(
                kb.resolve_parts(class).unwrap(),
                vec![PART_CORE, PART_PLATE, PART_SPIKE]
            );
        }
    }

    #[test]
    fn datasets_have_expected_shape() {
        let spec = SyntheticSpec {
            train_per_class: 6,
            test_per_class: 2,
            ..SyntheticSpec::default()
        };
        let holo = holonym_dataset(&spec).unwrap();
        assert_eq!(holo.samples().len(), 18);
        let mero = meronym_dataset(&spec, CLASS_RUBY).unwrap();
        assert_eq!(mero.samples().len(), 18); // 6 scenes x 3 parts
        assert!(mero
            .samples()
            .iter()
            .all(|s| s.pixels.width() == s.pixels.height()));
    }
}
