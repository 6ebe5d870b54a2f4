//! Perceptual hashing (classic DCT pHash) and greedy dedup.

use image::RgbImage;

use super::{DataError, PartDataset, SampleFlag};

const RESIZE: u32 = 32;
const BLOCK: usize = 8;

/// 64-bit perceptual hash.
///
/// Grayscale, resize to 32x32 (triangle filter), 2-D orthonormal DCT-II,
/// keep the 8x8 low-frequency block starting at (1,1) so the DC row and
/// column are excluded, then set bit `(u-1)*8 + (v-1)` when the coefficient
/// exceeds the median of the 64 kept coefficients.
pub fn phash(image: &RgbImage) -> u64 {
    let gray = image::imageops::grayscale(image);
    let small = image::imageops::resize(&gray, RESIZE, RESIZE, image::imageops::FilterType::Triangle);
    let mut field = [[0.0f64; RESIZE as usize]; RESIZE as usize];
    let mut sum = 0.0f64;
    for y in 0..RESIZE as usize {
        for x in 0..RESIZE as usize {
            let v = f64::from(small.get_pixel(x as u32, y as u32)[0]);
            field[y][x] = v;
            sum += v;
        }
    }
    // Centering only shifts the (excluded) DC term, but it makes the AC
    // coefficients of a constant image exactly zero instead of rounding
    // noise.
    let mean = sum / f64::from(RESIZE * RESIZE);
    for row in field.iter_mut() {
        for v in row.iter_mut() {
            *v -= mean;
        }
    }
    let coeffs = dct2d(&field);
    let mut kept = [0.0f64; BLOCK * BLOCK];
    for u in 0..BLOCK {
        for v in 0..BLOCK {
            kept[u * BLOCK + v] = coeffs[u + 1][v + 1];
        }
    }
    let mut sorted = kept;
    sorted.sort_by(|a, b| a.total_cmp(b));
    let median = (sorted[BLOCK * BLOCK / 2 - 1] + sorted[BLOCK * BLOCK / 2]) / 2.0;
    let mut hash = 0u64;
    for (i, &c) in kept.iter().enumerate() {
        if c > median {
            hash |= 1 << i;
        }
    }
    hash
}

pub fn hamming(a: u64, b: u64) -> u32 {
    (a ^ b).count_ones()
}

/// Separable orthonormal 2-D DCT-II of a 32x32 field.
fn dct2d(field: &[[f64; RESIZE as usize]; RESIZE as usize]) -> Vec<Vec<f64>> {
    let n = RESIZE as usize;
    let mut cos = vec![vec![0.0f64; n]; n];
    for (u, row) in cos.iter_mut().enumerate() {
        for (x, c) in row.iter_mut().enumerate() {
            *c = (std::f64::consts::PI * (2.0 * x as f64 + 1.0) * u as f64 / (2.0 * n as f64))
                .cos();
        }
    }
    let alpha = |u: usize| -> f64 {
        if u == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt()
        }
    };
    // Rows first.
    let mut tmp = vec![vec![0.0f64; n]; n];
    for y in 0..n {
        for u in 0..n {
            let mut acc = 0.0;
            for x in 0..n {
                acc += field[y][x] * cos[u][x];
            }
            tmp[y][u] = alpha(u) * acc;
        }
    }
    // Then columns.
    let mut out = vec![vec![0.0f64; n]; n];
    for v in 0..n {
        for u in 0..n {
            let mut acc = 0.0;
            for y in 0..n {
                acc += tmp[y][v] * cos[u][y];
            }
            out[u][v] = alpha(u) * acc;
        }
    }
    out
}

/// Greedy near-duplicate pass in origin-id order: a sample whose hash is
/// within `hamming_threshold` of any earlier kept sample gets flagged
/// duplicate. Outlier flags are left alone; duplicate flags are recomputed
/// from scratch, so the pass is idempotent.
pub fn dedupe(ds: PartDataset, hamming_threshold: u32) -> Result<PartDataset, DataError> {
    if hamming_threshold > 64 {
        return Err(DataError::BadHammingThreshold(hamming_threshold));
    }
    let mut ds = ds;
    let mut order: Vec<usize> = (0..ds.samples().len()).collect();
    order.sort_by(|&a, &b| ds.samples()[a].origin_id.cmp(&ds.samples()[b].origin_id));

    let mut kept_hashes: Vec<u64> = Vec::new();
    let mut updates: Vec<(String, SampleFlag)> = Vec::new();
    for i in order {
        let s = &ds.samples()[i];
        if ds.flag(&s.origin_id) == Some(SampleFlag::Outlier) {
            continue;
        }
        let h = phash(&s.pixels);
        if kept_hashes.iter().any(|&k| hamming(k, h) <= hamming_threshold) {
            updates.push((s.origin_id.clone(), SampleFlag::Duplicate));
        } else {
            kept_hashes.push(h);
            updates.push((s.origin_id.clone(), SampleFlag::Kept));
        }
    }
    for (id, flag) in updates {
        ds.set_flag(&id, flag);
    }
    Ok(ds)
}

impl PartDataset {
    /// See [`dedupe`].
    pub fn dedupe(self, hamming_threshold: u32) -> Result<PartDataset, DataError> {
        dedupe(self, hamming_threshold)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datakit::testutil::noise_image;
    use crate::datakit::{ImageSample, SampleSource};

    /// Direct O(n^4) DCT-II used as an independent oracle.
    fn dct_oracle(field: &[[f64; 32]; 32], u: usize, v: usize) -> f64 {
        let n = 32usize;
        let alpha = |k: usize| -> f64 {
            if k == 0 {
                (1.0 / n as f64).sqrt()
            } else {
                (2.0 / n as f64).sqrt()
            }
        };
        let mut acc = 0.0;
        for y in 0..n {
            for x in 0..n {
                acc += field[y][x]
                    * (std::f64::consts::PI * (2.0 * y as f64 + 1.0) * u as f64 / 64.0).cos()
                    * (std::f64::consts::PI * (2.0 * x as f64 + 1.0) * v as f64 / 64.0).cos();
            }
        }
        alpha(u) * alpha(v) * acc
    }

    fn hash_from_oracle(img: &RgbImage) -> u64 {
        let gray = image::imageops::grayscale(img);
        let small =
            image::imageops::resize(&gray, 32, 32, image::imageops::FilterType::Triangle);
        let mut field = [[0.0f64; 32]; 32];
        let mut sum = 0.0f64;
        for y in 0..32usize {
            for x in 0..32usize {
                field[y][x] = f64::from(small.get_pixel(x as u32, y as u32)[0]);
                sum += field[y][x];
            }
        }
        let mean = sum / 1024.0;
        for row in field.iter_mut() {
            for v in row.iter_mut() {
                *v -= mean;
            }
        }
        let mut kept = [0.0f64; 64];
        for u in 0..8 {
            for v in 0..8 {
                kept[u * 8 + v] = dct_oracle(&field, u + 1, v + 1);
            }
        }
        let mut sorted = kept;
        sorted.sort_by(|a, b| a.total_cmp(b));
        let median = (sorted[31] + sorted[32]) / 2.0;
        let mut hash = 0u64;
        for (i, &c) in kept.iter().enumerate() {
            if c > median {
                hash |= 1 << i;
            }
        }
        hash
    }

    #[test]
    fn identical_images_hash_identically() {
        let a = noise_image(64, 48, 11);
        let b = a.clone();
        assert_eq!(hamming(phash(&a), phash(&b)), 0);
    }

    #[test]
    fn black_vs_white_matches_dct_oracle() {
        // Constant images have zero AC coefficients; the oracle fixes the
        // expected distance.
        let black = RgbImage::from_pixel(40, 40, image::Rgb([0, 0, 0]));
        let white = RgbImage::from_pixel(40, 40, image::Rgb([255, 255, 255]));
        let expected = hamming(hash_from_oracle(&black), hash_from_oracle(&white));
        assert_eq!(hamming(phash(&black), phash(&white)), expected);
        assert_eq!(expected, 0);
    }

    #[test]
    fn implementation_matches_oracle_on_structured_images() {
        for seed in 0..4 {
            let img = noise_image(60, 60, seed);
            assert_eq!(phash(&img), hash_from_oracle(&img), "seed {seed}");
        }
    }

    #[test]
    fn jpeg_reencode_stays_close() {
        // Smooth gradient with a dark disc, so the hash has real structure.
        let img = RgbImage::from_fn(96, 96, |x, y| {
            let dx = x as f32 - 30.0;
            let dy = y as f32 - 40.0;
            if dx * dx + dy * dy < 300.0 {
                image::Rgb([20, 20, 40])
            } else {
                image::Rgb([(x * 2) as u8, (y * 2) as u8, 160])
            }
        });
        let mut bytes = Vec::new();
        let mut enc =
            image::codecs::jpeg::JpegEncoder::new_with_quality(&mut bytes, 92);
        enc.encode_image(&img).unwrap();
        let back = image::load_from_memory(&bytes).unwrap().to_rgb8();
        let d = hamming(phash(&img), phash(&back));
        assert!(d <= 10, "hamming distance {d} after re-encode");
    }

    #[test]
    fn dedupe_flags_later_exact_copy() {
        let mut ds = PartDataset::new("h", vec!["p".into()]);
        let img = noise_image(32, 32, 1);
        ds.push(ImageSample::new(img.clone(), "p", SampleSource::Crop, "a0"))
            .unwrap();
        ds.push(ImageSample::new(img, "p", SampleSource::Crop, "a1"))
            .unwrap();
        ds.push(ImageSample::new(
            noise_image(32, 32, 2),
            "p",
            SampleSource::Crop,
            "a2",
        ))
        .unwrap();
        let ds = ds.dedupe(0).unwrap();
        assert_eq!(ds.flag("a0"), Some(SampleFlag::Kept));
        assert_eq!(ds.flag("a1"), Some(SampleFlag::Duplicate));
        assert_eq!(ds.flag("a2"), Some(SampleFlag::Kept));
    }

    #[test]
    fn threshold_zero_distinct_hashes_keep_everything() {
        let mut ds = PartDataset::new("h", vec!["p".into()]);
        for i in 0..6 {
            ds.push(ImageSample::new(
                noise_image(32, 32, 100 + i),
                "p",
                SampleSource::Crop,
                &format!("s{i}"),
            ))
            .unwrap();
        }
        let hashes: Vec<u64> = ds.samples().iter().map(|s| phash(&s.pixels)).collect();
        for i in 0..hashes.len() {
            for j in 0..i {
                assert_ne!(hashes[i], hashes[j], "fixture hashes must differ");
            }
        }
        let ds = ds.dedupe(0).unwrap();
        assert!(ds.samples().iter().all(|s| ds.is_kept(&s.origin_id)));
    }

    #[test]
    fn dedupe_is_idempotent() {
        let mut ds = PartDataset::new("h", vec!["p".into()]);
        let base = noise_image(32, 32, 5);
        ds.push(ImageSample::new(base.clone(), "p", SampleSource::Crop, "b0"))
            .unwrap();
        ds.push(ImageSample::new(base.clone(), "p", SampleSource::Crop, "b1"))
            .unwrap();
        ds.push(ImageSample::new(base, "p", SampleSource::Crop, "b2"))
            .unwrap();
        let once = dedupe(ds, 10).unwrap();
        let flags_once: Vec<_> = once
            .samples()
            .iter()
            .map(|s| (s.origin_id.clone(), once.flag(&s.origin_id)))
            .collect();
        let twice = dedupe(once, 10).unwrap();
        let flags_twice: Vec<_> = twice
            .samples()
            .iter()
            .map(|s| (s.origin_id.clone(), twice.flag(&s.origin_id)))
            .collect();
        assert_eq!(flags_once, flags_twice);
    }

    #[test]
    fn planted_near_duplicate_share_detected() {
        // 18% planted near-duplicates on a 50-sample fixture.
        let mut ds = PartDataset::new("h", vec!["p".into()]);
        let total = 50usize;
        let planted = (total as f64 * 0.18).round() as usize; // 9
        let bases = total - planted;
        let mut base_imgs = Vec::new();
        for i in 0..bases {
            let img = noise_image(48, 48, 1000 + i as u64);
            ds.push(ImageSample::new(
                img.clone(),
                "p",
                SampleSource::Scrape,
                &format!("n{i:03}"),
            ))
            .unwrap();
            base_imgs.push(img);
        }
        for k in 0..planted {
            // Tiny perturbation of an existing base: flip a couple of pixels.
            let mut img = base_imgs[k].clone();
            img.put_pixel(0, 0, image::Rgb([255, 0, 0]));
            img.put_pixel(1, 0, image::Rgb([0, 255, 0]));
            ds.push(ImageSample::new(
                img,
                "p",
                SampleSource::Scrape,
                &format!("z{k:03}"), // sorts after all bases
            ))
            .unwrap();
        }
        let ds = ds.dedupe(10).unwrap();
        let dup: Vec<_> = ds
            .samples()
            .iter()
            .filter(|s| ds.flag(&s.origin_id) == Some(SampleFlag::Duplicate))
            .map(|s| s.origin_id.clone())
            .collect();
        assert_eq!(dup.len(), planted, "flagged {dup:?}");
        assert!(dup.iter().all(|id| id.starts_with('z')));
    }
}
