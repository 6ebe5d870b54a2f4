//! Heatmap overlays: jet colormap alpha-blended over the input.

use std::path::Path;

use image::RgbImage;
use partscope_core::explain::Explanation;
use partscope_core::saliency::Heatmap;

const ALPHA: f32 = 0.45;

/// Piecewise-linear jet ramp.
fn jet(t: f32) -> [f32; 3] {
    let c = |v: f32| v.clamp(0.0, 1.0);
    [
        c(1.5 - (4.0 * t - 3.0).abs()),
        c(1.5 - (4.0 * t - 2.0).abs()),
        c(1.5 - (4.0 * t - 1.0).abs()),
    ]
}

pub fn render(image: &RgbImage, hm: &Heatmap) -> RgbImage {
    RgbImage::from_fn(image.width(), image.height(), |x, y| {
        let p = image.get_pixel(x, y);
        let t = hm.get(x, y);
        let color = jet(t);
        let mut out = [0u8; 3];
        for c in 0..3 {
            let v = f32::from(p[c]) * (1.0 - ALPHA) + color[c] * 255.0 * ALPHA;
            out[c] = v.round().clamp(0.0, 255.0) as u8;
        }
        image::Rgb(out)
    })
}

/// One overlay per part plus one for the global heatmap.
pub fn write_overlays(
    dir: &Path,
    stem: &str,
    image: &RgbImage,
    explanation: &Explanation,
) -> Result<(), String> {
    for part in &explanation.parts {
        let path = dir.join(format!("{stem}.{}.overlay.png", super::commands::sanitize(&part.name)));
        render(image, &part.heatmap)
            .save(&path)
            .map_err(|e| format!("write {}: {e}", path.display()))?;
    }
    let path = dir.join(format!("{stem}.global.overlay.png"));
    render(image, &explanation.global)
        .save(&path)
        .map_err(|e| format!("write {}: {e}", path.display()))?;
    Ok(())
}
