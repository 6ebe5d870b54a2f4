//! Backbone input preprocessing.

use image::RgbImage;

use super::{NetError, Tensor};

pub const INPUT_SIDE: u32 = 224;
const RESIZE_SHORT: u32 = 256;
pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

/// Resize the shorter side to 256 (triangle filter), center-crop 224, scale
/// to [0,1] and standardize per channel. Images already at 224x224 pass
/// through the geometry stage untouched.
pub fn preprocess(image: &RgbImage) -> Result<Tensor, NetError> {
    let (w, h) = image.dimensions();
    let cropped: RgbImage = if (w, h) == (INPUT_SIDE, INPUT_SIDE) {
        image.clone()
    } else {
        let (nw, nh) = if w <= h {
            (
                RESIZE_SHORT,
                ((h as f64 * f64::from(RESIZE_SHORT) / w as f64).round() as u32).max(RESIZE_SHORT),
            )
        } else {
            (
                ((w as f64 * f64::from(RESIZE_SHORT) / h as f64).round() as u32).max(RESIZE_SHORT),
                RESIZE_SHORT,
            )
        };
        let resized = image::imageops::resize(image, nw, nh, image::imageops::FilterType::Triangle);
        let x0 = (nw - INPUT_SIDE) / 2;
        let y0 = (nh - INPUT_SIDE) / 2;
        image::imageops::crop_imm(&resized, x0, y0, INPUT_SIDE, INPUT_SIDE).to_image()
    };

    let side = INPUT_SIDE as usize;
    let mut data = vec![0.0f32; 3 * side * side];
    for y in 0..side {
        for x in 0..side {
            let p = cropped.get_pixel(x as u32, y as u32);
            for c in 0..3 {
                data[c * side * side + y * side + x] =
                    standardize(c, f32::from(p[c]) / 255.0);
            }
        }
    }
    Ok(Tensor::new(vec![3, side, side], data)?)
}

/// Per-channel standardization of a [0,1] value.
pub fn standardize(channel: usize, value01: f32) -> f32 {
    (value01 - IMAGENET_MEAN[channel]) / IMAGENET_STD[channel]
}
