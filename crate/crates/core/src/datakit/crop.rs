//! Square part crops from bounding boxes.

use image::RgbImage;

use super::{BBox, DataError};
use crate::saliency::ABLATION_FILL;

/// Cut a square crop for one part box.
///
/// The shorter box side is extended symmetrically toward a square, stopping
/// in a direction as soon as the extension would overlap a sibling box or
/// leave the image. If the 1:1 ratio is still not reached, the remaining
/// rows/columns are padded with the ablation fill color. The output side is
/// always `max(box width, box height)` and the pixels inside the original
/// box are copied verbatim.
pub fn crop_part(
    image: &RgbImage,
    bbox: &BBox,
    siblings: &[BBox],
) -> Result<RgbImage, DataError> {
    let (img_w, img_h) = image.dimensions();
    bbox.validate(img_w, img_h)?;

    let target = bbox.width().max(bbox.height());

    let (x0, x1, pad_left) = extend_axis(
        bbox.x_min,
        bbox.x_max,
        img_w,
        target,
        &x_limits(bbox, siblings, img_w),
    );
    let (y0, y1, pad_top) = extend_axis(
        bbox.y_min,
        bbox.y_max,
        img_h,
        target,
        &y_limits(bbox, siblings, img_h),
    );

    let mut out = RgbImage::from_pixel(target, target, image::Rgb(ABLATION_FILL));
    for y in y0..y1 {
        for x in x0..x1 {
            let dx = pad_left + (x - x0);
            let dy = pad_top + (y - y0);
            out.put_pixel(dx, dy, *image.get_pixel(x, y));
        }
    }
    Ok(out)
}

/// Maximum extension allowed on each side of one axis before hitting the
/// image border or a sibling box.
struct AxisLimits {
    lo: u32,
    hi: u32,
}

fn x_limits(bbox: &BBox, siblings: &[BBox], img_w: u32) -> AxisLimits {
    let mut lo = bbox.x_min;
    let mut hi = img_w - bbox.x_max;
    for s in siblings {
        if s.y_min < bbox.y_max && bbox.y_min < s.y_max {
            if s.x_max <= bbox.x_min {
                lo = lo.min(bbox.x_min - s.x_max);
            } else if s.x_min < bbox.x_min {
                lo = 0; // sibling crosses the left edge
            }
            if s.x_min >= bbox.x_max {
                hi = hi.min(s.x_min - bbox.x_max);
            } else if s.x_max > bbox.x_max {
                hi = 0;
            }
        }
    }
    AxisLimits { lo, hi }
}

fn y_limits(bbox: &BBox, siblings: &[BBox], img_h: u32) -> AxisLimits {
    let mut lo = bbox.y_min;
    let mut hi = img_h - bbox.y_max;
    for s in siblings {
        if s.x_min < bbox.x_max && bbox.x_min < s.x_max {
            if s.y_max <= bbox.y_min {
                lo = lo.min(bbox.y_min - s.y_max);
            } else if s.y_min < bbox.y_min {
                lo = 0;
            }
            if s.y_min >= bbox.y_max {
                hi = hi.min(s.y_min - bbox.y_max);
            } else if s.y_max > bbox.y_max {
                hi = 0;
            }
        }
    }
    AxisLimits { lo, hi }
}

/// Grow `[min, max)` toward `target` length. Returns the extended interval
/// and the leading padding that absorbs any shortfall. The deficit is split
/// evenly, the odd pixel going to the high side; whatever a capped side
/// cannot take is reassigned to the other side before padding kicks in.
fn extend_axis(min: u32, max: u32, _img_side: u32, target: u32, limits: &AxisLimits) -> (u32, u32, u32) {
    let len = max - min;
    let deficit = target - len;
    let want_lo = deficit / 2;
    let want_hi = deficit - want_lo;
    let mut lo = want_lo.min(limits.lo);
    let mut hi = want_hi.min(limits.hi);
    let mut leftover = deficit - lo - hi;
    let extra_lo = leftover.min(limits.lo - lo);
    lo += extra_lo;
    leftover -= extra_lo;
    let extra_hi = leftover.min(limits.hi - hi);
    hi += extra_hi;
    leftover -= extra_hi;
    let pad_lo = leftover / 2;
    (min - lo, max + hi, pad_lo)
}
