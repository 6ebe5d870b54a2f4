//! Class balancing through seeded augmentation.

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{DataError, ImageSample, PartDataset, SampleSource};
use crate::rng::derive_seed;
use crate::saliency::ABLATION_FILL;

const MAX_ROTATION_DEG: f64 = 25.0;
const MAX_SHEAR_DEG: f64 = 15.0;
const NOISE_SIGMA: f64 = 8.0;
const BLUR_SIGMA: f32 = 1.2;

/// Top up minority part classes with augmented copies until every class
/// reaches at least 95% of the largest class count.
///
/// Each copy gets a random rotation (±25°), a random shear (±15°) and
/// exactly one of gaussian blur, emboss or gaussian noise. Augmented
/// samples carry `source = augment` and are barred from val/test folds by
/// the split stage. Output is a pure function of (seed, input).
pub fn balance_augment(ds: PartDataset, seed: u64) -> Result<PartDataset, DataError> {
    let mut ds = ds;
    let counts = ds.kept_count_per_class();
    for (part, count) in &counts {
        if *count == 0 {
            return Err(DataError::EmptyClass(part.clone()));
        }
    }
    let largest = *counts.values().max().expect("non-empty class map");
    let target = (0.95 * largest as f64).ceil() as usize;

    let parts = ds.parts.clone();
    for part in &parts {
        let have = counts[part];
        if have >= target {
            continue;
        }
        let mut bases: Vec<(String, RgbImage)> = ds
            .kept()
            .filter(|s| s.label == *part && s.source != SampleSource::Augment)
            .map(|s| (s.origin_id.clone(), s.pixels.clone()))
            .collect();
        if bases.is_empty() {
            return Err(DataError::EmptyClass(part.clone()));
        }
        bases.sort_by(|a, b| a.0.cmp(&b.0));
        for k in 0..(target - have) {
            let (base_id, base_img) = &bases[k % bases.len()];
            let copy_round = k / bases.len();
            let s = derive_seed(seed, base_id, copy_round as u64);
            let pixels = augment_image(base_img, s);
            let origin_id = format!("{base_id}#aug{copy_round}");
            ds.push(ImageSample::new(
                pixels,
                part,
                SampleSource::Augment,
                &origin_id,
            ))?;
        }
    }
    Ok(ds)
}

impl PartDataset {
    /// See [`balance_augment`].
    pub fn balance_augment(self, seed: u64) -> Result<PartDataset, DataError> {
        balance_augment(self, seed)
    }
}

/// One augmented variant: rotation + shear, then one of blur/emboss/noise.
pub fn augment_image(img: &RgbImage, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let angle = rng.gen_range(-MAX_ROTATION_DEG..=MAX_ROTATION_DEG).to_radians();
    let shear = rng.gen_range(-MAX_SHEAR_DEG..=MAX_SHEAR_DEG).to_radians();
    let warped = warp_affine(img, angle, shear);
    match rng.gen_range(0u8..3) {
        0 => image::imageops::blur(&warped, BLUR_SIGMA),
        1 => emboss(&warped),
        _ => gaussian_noise(&warped, &mut rng),
    }
}

/// Rotation-plus-shear warp about the image center, bilinear sampling,
/// fill color outside the source.
pub(crate) fn warp_affine(img: &RgbImage, angle: f64, shear: f64) -> RgbImage {
    let (w, h) = img.dimensions();
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    // Forward map: rotate, then shear x by y; inverse-map each output pixel.
    let (sin, cos) = angle.sin_cos();
    let t = shear.tan();
    let f00 = cos + t * sin;
    let f01 = -sin + t * cos;
    let f10 = sin;
    let f11 = cos;
    let det = f00 * f11 - f01 * f10;
    let i00 = f11 / det;
    let i01 = -f01 / det;
    let i10 = -f10 / det;
    let i11 = f00 / det;
    RgbImage::from_fn(w, h, |x, y| {
        let dx = x as f64 - cx;
        let dy = y as f64 - cy;
        let sx = i00 * dx + i01 * dy + cx;
        let sy = i10 * dx + i11 * dy + cy;
        sample_bilinear(img, sx, sy)
    })
}

fn sample_bilinear(img: &RgbImage, x: f64, y: f64) -> Rgb<u8> {
    let (w, h) = img.dimensions();
    if x < -0.5 || y < -0.5 || x > w as f64 - 0.5 || y > h as f64 - 0.5 {
        return Rgb(ABLATION_FILL);
    }
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let get = |xi: i64, yi: i64| -> [f64; 3] {
        let xi = xi.clamp(0, w as i64 - 1) as u32;
        let yi = yi.clamp(0, h as i64 - 1) as u32;
        let p = img.get_pixel(xi, yi);
        [f64::from(p[0]), f64::from(p[1]), f64::from(p[2])]
    };
    let p00 = get(x0 as i64, y0 as i64);
    let p10 = get(x0 as i64 + 1, y0 as i64);
    let p01 = get(x0 as i64, y0 as i64 + 1);
    let p11 = get(x0 as i64 + 1, y0 as i64 + 1);
    let mut out = [0u8; 3];
    for c in 0..3 {
        let v = p00[c] * (1.0 - fx) * (1.0 - fy)
            + p10[c] * fx * (1.0 - fy)
            + p01[c] * (1.0 - fx) * fy
            + p11[c] * fx * fy;
        out[c] = v.round().clamp(0.0, 255.0) as u8;
    }
    Rgb(out)
}

fn emboss(img: &RgbImage) -> RgbImage {
    let kernel = [-2.0f32, -1.0, 0.0, -1.0, 1.0, 1.0, 0.0, 1.0, 2.0];
    image::imageops::filter3x3(img, &kernel)
}

fn gaussian_noise(img: &RgbImage, rng: &mut ChaCha8Rng) -> RgbImage {
    let normal = Normal::new(0.0, NOISE_SIGMA).expect("valid sigma");
    let mut out = img.clone();
    for p in out.pixels_mut() {
        for c in 0..3 {
            let v = f64::from(p[c]) + normal.sample(rng);
            p[c] = v.round().clamp(0.0, 255.0) as u8;
        }
    }
    out
}
