//! Context-dot classification, bounding-box extension and soft-mask production.
//!
//! Small connected components of the user mask are treated as context dots:
//! they stretch the processing box without (materially) enlarging the edited
//! region. The box is then widened or heightened to the aspect ratio of the
//! working canvas.

use std::collections::VecDeque;

use thiserror::Error;

use crate::imageops::{gaussian_blur, resize_mask, ImageOpsError};
use crate::model::{BinaryMask, BoundingBox, ContextMask, ModelError, Resolution, SoftMask};

#[derive(Debug, Error)]
pub enum MaskError {
    #[error("no edit region: the mask is empty")]
    Empty,
    #[error("no edit region: the mask only contains context dots")]
    NoEditRegion,
    #[error("bounding box {bbox:?} lies outside the {width}x{height} image")]
    BoxOutside {
        bbox: BoundingBox,
        width: u32,
        height: u32,
    },
    #[error("context scale must be positive and finite, got {0}")]
    InvalidScale(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    ImageOps(#[from] ImageOpsError),
}

/// A context dot: a small connected component of the user mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Dot {
    /// Centre of mass in pixel-centre coordinates.
    pub centroid: (f64, f64),
    pub area: u32,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DotClassification {
    /// Union of all components larger than the dot threshold.
    pub edit_mask: BinaryMask,
    /// Union of all dot components.
    pub dot_mask: BinaryMask,
    pub dots: Vec<Dot>,
    /// Number of components in `edit_mask`.
    pub edit_components: usize,
}

/// Result of the full mask analysis for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextAnalysis {
    pub edit_mask: BinaryMask,
    pub dots: Vec<Dot>,
    /// The mask that is inpainted and blurred (edit region, plus dots unless excluded).
    pub inpaint_mask: BinaryMask,
    /// Tight box over everything that defines the context.
    pub context_bbox: BoundingBox,
    pub extended_bbox: BoundingBox,
    /// Whether the target aspect could not be met inside the image.
    pub clamped: bool,
}

struct Component {
    pixels: Vec<(u32, u32)>,
}

fn components(mask: &BinaryMask) -> Vec<Component> {
    let (w, h) = mask.dims();
    let mut seen = vec![false; w as usize * h as usize];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            let i = y as usize * w as usize + x as usize;
            if !mask.get(x, y) || seen[i] {
                continue;
            }
            seen[i] = true;
            queue.push_back((x, y));
            let mut pixels = Vec::new();
            while let Some((cx, cy)) = queue.pop_front() {
                pixels.push((cx, cy));
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (nx, ny) = (i64::from(cx) + dx, i64::from(cy) + dy);
                        if nx < 0 || ny < 0 || nx >= i64::from(w) || ny >= i64::from(h) {
                            continue;
                        }
                        let (nx, ny) = (nx as u32, ny as u32);
                        let j = ny as usize * w as usize + nx as usize;
                        if mask.get(nx, ny) && !seen[j] {
                            seen[j] = true;
                            queue.push_back((nx, ny));
                        }
                    }
                }
            }
            out.push(Component { pixels });
        }
    }
    out
}

/// Splits the user mask into edit strokes and context dots by 8-connected
/// component area.
pub fn classify_context_dots(
    mask: &ContextMask,
    dot_area_max: u32,
) -> Result<DotClassification, MaskError> {
    let mask = mask.mask();
    let (w, h) = mask.dims();
    let mut edit_mask = BinaryMask::empty(w, h)?;
    let mut dot_mask = BinaryMask::empty(w, h)?;
    let mut dots = Vec::new();
    let mut edit_components = 0;
    let comps = components(mask);
    if comps.is_empty() {
        return Err(MaskError::Empty);
    }
    for comp in comps {
        let area = comp.pixels.len() as u32;
        if area <= dot_area_max {
            let (mut sx, mut sy) = (0.0, 0.0);
            let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
            for &(x, y) in &comp.pixels {
                dot_mask.set(x, y, true);
                sx += f64::from(x) + 0.5;
                sy += f64::from(y) + 0.5;
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x + 1);
                y1 = y1.max(y + 1);
            }
            dots.push(Dot {
                centroid: (sx / f64::from(area), sy / f64::from(area)),
                area,
                bbox: BoundingBox { x0, y0, x1, y1 },
            });
        } else {
            edit_components += 1;
            for &(x, y) in &comp.pixels {
                edit_mask.set(x, y, true);
            }
        }
    }
    if edit_components == 0 {
        return Err(MaskError::NoEditRegion);
    }
    Ok(DotClassification {
        edit_mask,
        dot_mask,
        dots,
        edit_components,
    })
}

/// Minimal box containing every foreground pixel.
pub fn tight_bbox(mask: &BinaryMask) -> Result<BoundingBox, MaskError> {
    let (w, h) = mask.dims();
    let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x + 1);
                y1 = y1.max(y + 1);
            }
        }
    }
    if x0 == u32::MAX {
        return Err(MaskError::Empty);
    }
    Ok(BoundingBox { x0, y0, x1, y1 })
}

/// Places an interval of length `len` around `[lo, hi)`, splitting the padding
/// evenly (odd remainder after), shifted inward to stay within `[0, limit)`.
fn place(lo: u32, hi: u32, len: u32, limit: u32) -> (u32, u32) {
    let len = len.min(limit);
    let pad = len.saturating_sub(hi - lo);
    let before = pad / 2;
    let start = i64::from(lo) - i64::from(before);
    let start = start.clamp(0, i64::from(limit - len)) as u32;
    (start, start + len)
}

/// Grows `bbox` so its aspect ratio matches `target` (width, height).
///
/// Normally only one axis grows; the width is also widened when rounding the
/// height alone leaves the aspect more than `1/min(w, h)` off target.
///
/// Returns the new box and whether it had to be clamped to the image, in which
/// case the aspect ratio is not met.
pub fn extend_bbox(
    bbox: BoundingBox,
    target: (u32, u32),
    image_dims: (u32, u32),
) -> Result<(BoundingBox, bool), MaskError> {
    let (iw, ih) = image_dims;
    if !bbox.fits_within(iw, ih) || bbox.x0 >= bbox.x1 || bbox.y0 >= bbox.y1 {
        return Err(MaskError::BoxOutside {
            bbox,
            width: iw,
            height: ih,
        });
    }
    let (tw, th) = (u64::from(target.0.max(1)), u64::from(target.1.max(1)));
    let (w, h) = (u64::from(bbox.width()), u64::from(bbox.height()));
    let (mut new_w, mut new_h) = (w, h);
    // compare w/h with tw/th without rounding
    match (w * th).cmp(&(tw * h)) {
        std::cmp::Ordering::Less => new_w = (h * tw).div_ceil(th),
        std::cmp::Ordering::Greater => new_h = (w * th).div_ceil(tw),
        std::cmp::Ordering::Equal => {}
    }
    // Rounding the height up can overshoot by more than one pixel's worth of
    // aspect when the target is wide; widen to the nearest matching width then.
    let err = (new_w * th).abs_diff(tw * new_h);
    if err * new_w.min(new_h) > new_h * th {
        new_w = (new_h * tw).div_ceil(th);
    }
    let clamped = new_w > u64::from(iw) || new_h > u64::from(ih);
    let new_w = new_w.min(u64::from(iw)) as u32;
    let new_h = new_h.min(u64::from(ih)) as u32;
    let (x0, x1) = place(bbox.x0, bbox.x1, new_w, iw);
    let (y0, y1) = place(bbox.y0, bbox.y1, new_h, ih);
    Ok((BoundingBox { x0, y0, x1, y1 }, clamped))
}

/// Scales `bbox` about its centre by `factor`, never shrinking below `floor`,
/// then re-extends to `target`.
pub fn scale_bbox(
    bbox: BoundingBox,
    floor: BoundingBox,
    factor: f64,
    target: (u32, u32),
    image_dims: (u32, u32),
) -> Result<(BoundingBox, bool), MaskError> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(MaskError::InvalidScale(factor));
    }
    let (iw, ih) = image_dims;
    let cx = f64::from(bbox.x0 + bbox.x1) / 2.0;
    let cy = f64::from(bbox.y0 + bbox.y1) / 2.0;
    let half_w = f64::from(bbox.width()) * factor / 2.0;
    let half_h = f64::from(bbox.height()) * factor / 2.0;
    let x0 = (cx - half_w).round().clamp(0.0, f64::from(iw)) as u32;
    let x1 = (cx + half_w).round().clamp(0.0, f64::from(iw)) as u32;
    let y0 = (cy - half_h).round().clamp(0.0, f64::from(ih)) as u32;
    let y1 = (cy + half_h).round().clamp(0.0, f64::from(ih)) as u32;
    let scaled = BoundingBox {
        x0: x0.min(floor.x0),
        y0: y0.min(floor.y0),
        x1: x1.max(floor.x1),
        y1: y1.max(floor.y1),
    };
    extend_bbox(scaled, target, image_dims)
}

/// Classifies dots, computes the context box and extends it to `target`.
///
/// With `exclude_dots`, dots are dropped entirely: they neither widen the box
/// nor join the inpainted mask.
pub fn analyze_context(
    mask: &ContextMask,
    dot_area_max: u32,
    target: Resolution,
    exclude_dots: bool,
) -> Result<ContextAnalysis, MaskError> {
    let classes = classify_context_dots(mask, dot_area_max)?;
    let inpaint_mask = if exclude_dots {
        classes.edit_mask.clone()
    } else {
        mask.mask().clone()
    };
    let context_bbox = tight_bbox(&inpaint_mask)?;
    let (extended_bbox, clamped) = extend_bbox(context_bbox, target.dims(), mask.dims())?;
    Ok(ContextAnalysis {
        edit_mask: classes.edit_mask,
        dots: classes.dots,
        inpaint_mask,
        context_bbox,
        extended_bbox,
        clamped,
    })
}

/// Soft masks for one step: one on the working canvas (sent to the denoiser)
/// and one at source resolution over the extended box (used for compositing).
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMasks {
    pub working: SoftMask,
    pub source: SoftMask,
    pub working_sigma: f64,
    pub source_sigma: f64,
}

/// Crops `inpaint_mask` to `region`, resizes it (nearest) to `working` and blurs
/// both copies; sigma on the working canvas is `blur_fraction · min(working)`
/// and is scaled by `min(region) / min(working)` for the source copy.
pub fn soft_masks_for(
    inpaint_mask: &BinaryMask,
    region: BoundingBox,
    working: (u32, u32),
    blur_fraction: f64,
    disable_blur: bool,
) -> Result<SoftMasks, MaskError> {
    let crop = inpaint_mask.crop(region)?;
    let working_bin = resize_mask(&crop, working.0, working.1)?;
    let working_min = f64::from(working.0.min(working.1));
    let working_sigma = blur_fraction * working_min;
    let source_sigma = working_sigma * f64::from(region.width().min(region.height())) / working_min;
    if disable_blur {
        return Ok(SoftMasks {
            working: working_bin.to_soft(),
            source: crop.to_soft(),
            working_sigma: 0.0,
            source_sigma: 0.0,
        });
    }
    Ok(SoftMasks {
        working: gaussian_blur(&working_bin.to_soft(), working_sigma)?,
        source: gaussian_blur(&crop.to_soft(), source_sigma)?,
        working_sigma,
        source_sigma,
    })
}

pub fn make_soft_mask(
    analysis: &ContextAnalysis,
    working: Resolution,
    blur_fraction: f64,
    disable_blur: bool,
) -> Result<SoftMasks, MaskError> {
    soft_masks_for(
        &analysis.inpaint_mask,
        analysis.extended_bbox,
        working.dims(),
        blur_fraction,
        disable_blur,
    )
}
