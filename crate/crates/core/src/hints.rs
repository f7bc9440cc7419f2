//! Hint compositing and Canny edge extraction.
//!
//! Canny runs entirely in integer arithmetic (fixed-point Gaussian weights,
//! exact Sobel sums, squared magnitudes in `i128`), so its output is exactly
//! equivariant under 90° rotations and exactly invariant to a uniform luma
//! offset.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imageops::{self, ImageOpsError};
use crate::model::{quantize, BinaryMask, Channels, ImageBuffer, ModelError};

#[derive(Debug, Error)]
pub enum HintError {
    #[error("hint layer is {actual:?}, base image is {expected:?}")]
    DimensionMismatch {
        expected: (u32, u32),
        actual: (u32, u32),
    },
    #[error("hint layer must be RGBA, got {0:?}")]
    NotRgba(Channels),
    #[error("hint opacity {0} outside [0, 1]")]
    Opacity(f64),
    #[error("invalid Canny thresholds: need 0 < low < high, got low={low}, high={high}")]
    Thresholds { low: f64, high: f64 },
    #[error("invalid Canny sigma {0}: must be in (0, 8]")]
    Sigma(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    ImageOps(#[from] ImageOpsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HintKind {
    ColorPatch,
    ReferencePaste,
}

/// A full-canvas RGBA layer; pixels with alpha > 0 form its support.
#[derive(Debug, Clone, PartialEq)]
pub struct HintLayer {
    pub kind: HintKind,
    pub raster: ImageBuffer,
    pub opacity: f64,
}

impl HintLayer {
    pub fn new(kind: HintKind, raster: ImageBuffer, opacity: f64) -> Result<Self, HintError> {
        if raster.channels() != Channels::Rgba {
            return Err(HintError::NotRgba(raster.channels()));
        }
        if !(0.0..=1.0).contains(&opacity) {
            return Err(HintError::Opacity(opacity));
        }
        Ok(Self {
            kind,
            raster,
            opacity,
        })
    }

    pub fn support(&self) -> BinaryMask {
        let r = &self.raster;
        BinaryMask::from_fn(r.width(), r.height(), |x, y| r.sample(x, y, 3) > 0)
            .expect("layer dims are non-zero")
    }
}

/// Applies `layers` in order: on a layer's support each color channel becomes
/// `opacity·layer + (1−opacity)·current`. The base alpha channel is kept.
pub fn composite_hints(base: &ImageBuffer, layers: &[HintLayer]) -> Result<ImageBuffer, HintError> {
    let mut out = base.clone();
    let colors = base.channels().color_count();
    for layer in layers {
        if layer.raster.dims() != base.dims() {
            return Err(HintError::DimensionMismatch {
                expected: base.dims(),
                actual: layer.raster.dims(),
            });
        }
        if layer.raster.channels() != Channels::Rgba {
            return Err(HintError::NotRgba(layer.raster.channels()));
        }
        if !(0.0..=1.0).contains(&layer.opacity) {
            return Err(HintError::Opacity(layer.opacity));
        }
        if layer.opacity == 0.0 {
            continue;
        }
        let a = layer.opacity;
        for y in 0..base.height() {
            for x in 0..base.width() {
                let src = layer.raster.pixel(x, y);
                if src[3] == 0 {
                    continue;
                }
                let i = out.index(x, y);
                let data = out.data_mut();
                if colors == 1 {
                    let lum = (f64::from(src[0]) * 0.299 + f64::from(src[1]) * 0.587 + f64::from(src[2]) * 0.114) / 255.0;
                    let cur = f64::from(data[i]) / 255.0;
                    data[i] = quantize(a * lum + (1.0 - a) * cur);
                } else {
                    for c in 0..3 {
                        let v = f64::from(src[c]) / 255.0;
                        let cur = f64::from(data[i + c]) / 255.0;
                        data[i + c] = quantize(a * v + (1.0 - a) * cur);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Boolean edge map over a working-resolution crop.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeMap(BinaryMask);

impl EdgeMap {
    pub fn new(mask: BinaryMask) -> Self {
        Self(mask)
    }

    pub fn empty(width: u32, height: u32) -> Result<Self, ModelError> {
        Ok(Self(BinaryMask::empty(width, height)?))
    }

    pub fn width(&self) -> u32 {
        self.0.dims().0
    }

    pub fn height(&self) -> u32 {
        self.0.dims().1
    }

    pub fn dims(&self) -> (u32, u32) {
        self.0.dims()
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.0.get(x, y)
    }

    pub fn set(&mut self, x: u32, y: u32, on: bool) {
        self.0.set(x, y, on)
    }

    pub fn count(&self) -> usize {
        self.0.count()
    }

    pub fn mask(&self) -> &BinaryMask {
        &self.0
    }

    /// Transposed copy; used to check rotation behaviour.
    pub fn transpose(&self) -> EdgeMap {
        let (w, h) = self.dims();
        EdgeMap(BinaryMask::from_fn(h, w, |x, y| self.get(y, x)).expect("non-empty"))
    }

    /// Grayscale image with 255 on edges.
    pub fn to_image(&self) -> ImageBuffer {
        self.0.to_gray()
    }

    pub fn to_png(&self) -> Result<Vec<u8>, ImageOpsError> {
        imageops::encode_png(&self.to_image())
    }

    pub fn from_png(bytes: &[u8]) -> Result<Self, ImageOpsError> {
        let img = imageops::decode_png(bytes)?;
        Ok(Self(BinaryMask::from_gray(&img)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CannyParams {
    pub sigma: f64,
    /// Fractions of the largest gradient magnitude in the crop.
    pub low: f64,
    pub high: f64,
}

impl Default for CannyParams {
    fn default() -> Self {
        Self {
            sigma: 1.4,
            low: 0.1,
            high: 0.2,
        }
    }
}

impl CannyParams {
    pub fn validate(&self) -> Result<(), HintError> {
        // larger sigmas could overflow the fixed-point accumulators
        if !(self.sigma > 0.0 && self.sigma <= 8.0) {
            return Err(HintError::Sigma(self.sigma));
        }
        if !(self.low > 0.0 && self.low < self.high && self.high.is_finite()) {
            return Err(HintError::Thresholds {
                low: self.low,
                high: self.high,
            });
        }
        Ok(())
    }
}

const WEIGHT_ONE: f64 = 65536.0;
// 408/985 ≈ tan(22.5°)
const TAN_NUM: i128 = 408;
const TAN_DEN: i128 = 985;

/// Luma scaled by 1000: 299R + 587G + 114B.
fn luma_1000(img: &ImageBuffer) -> Vec<i64> {
    let (w, h) = img.dims();
    let mut out = Vec::with_capacity(w as usize * h as usize);
    for y in 0..h {
        for x in 0..w {
            let p = img.pixel(x, y);
            let v = if img.channels() == Channels::Gray {
                1000 * i64::from(p[0])
            } else {
                299 * i64::from(p[0]) + 587 * i64::from(p[1]) + 114 * i64::from(p[2])
            };
            out.push(v);
        }
    }
    out
}

fn integer_kernel(sigma: f64) -> Vec<i64> {
    let r = imageops::kernel_radius(sigma) as i64;
    (-r..=r)
        .map(|i| ((-(i * i) as f64 / (2.0 * sigma * sigma)).exp() * WEIGHT_ONE).round() as i64)
        .collect()
}

fn smooth(plane: &[i64], w: usize, h: usize, kernel: &[i64]) -> Vec<i64> {
    let r = (kernel.len() / 2) as i64;
    let clamp = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
    let mut tmp = vec![0i64; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0i64;
            for (k, &wt) in kernel.iter().enumerate() {
                s += wt * plane[y * w + clamp(x as i64 + k as i64 - r, w)];
            }
            tmp[y * w + x] = s;
        }
    }
    let mut out = vec![0i64; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0i64;
            for (k, &wt) in kernel.iter().enumerate() {
                s += wt * tmp[clamp(y as i64 + k as i64 - r, h) * w + x];
            }
            out[y * w + x] = s;
        }
    }
    out
}

/// Gradient components and squared magnitude per pixel.
struct Gradients {
    gx: Vec<i64>,
    gy: Vec<i64>,
    mag2: Vec<i128>,
}

fn sobel(s: &[i64], w: usize, h: usize) -> Gradients {
    let at = |x: i64, y: i64| {
        let x = x.clamp(0, w as i64 - 1) as usize;
        let y = y.clamp(0, h as i64 - 1) as usize;
        s[y * w + x]
    };
    let mut gx = vec![0i64; w * h];
    let mut gy = vec![0i64; w * h];
    let mut mag2 = vec![0i128; w * h];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let dx = (at(x + 1, y - 1) + 2 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2 * at(x - 1, y) + at(x - 1, y + 1));
            let dy = (at(x - 1, y + 1) + 2 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2 * at(x, y - 1) + at(x + 1, y - 1));
            let i = y as usize * w + x as usize;
            gx[i] = dx;
            gy[i] = dy;
            mag2[i] = i128::from(dx) * i128::from(dx) + i128::from(dy) * i128::from(dy);
        }
    }
    Gradients { gx, gy, mag2 }
}

/// Neighbor offset along the quantized gradient direction.
fn direction(gx: i64, gy: i64) -> (i64, i64) {
    let ax = i128::from(gx).abs();
    let ay = i128::from(gy).abs();
    if ay * TAN_DEN < ax * TAN_NUM {
        (1, 0)
    } else if ax * TAN_DEN < ay * TAN_NUM {
        (0, 1)
    } else if (gx > 0) == (gy > 0) {
        (1, 1)
    } else {
        (1, -1)
    }
}

/// Classic Canny on the luma of `crop`; ties in non-maximum suppression are
/// kept.
pub fn canny_edges(crop: &ImageBuffer, params: &CannyParams) -> Result<EdgeMap, HintError> {
    params.validate()?;
    let (w, h) = (crop.width() as usize, crop.height() as usize);
    let luma = luma_1000(crop);
    let smoothed = smooth(&luma, w, h, &integer_kernel(params.sigma));
    let g = sobel(&smoothed, w, h);
    let max = g.mag2.iter().copied().max().unwrap_or(0);
    let mut edges = EdgeMap::empty(w as u32, h as u32)?;
    if max == 0 {
        return Ok(edges);
    }

    let at = |x: i64, y: i64| {
        let x = x.clamp(0, w as i64 - 1) as usize;
        let y = y.clamp(0, h as i64 - 1) as usize;
        g.mag2[y * w + x]
    };
    let high = params.high * params.high * max as f64;
    let low = params.low * params.low * max as f64;
    // 0 = suppressed, 1 = weak, 2 = strong
    let mut class = vec![0u8; w * h];
    let mut queue = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let m = g.mag2[i];
            if m == 0 {
                continue;
            }
            let (dx, dy) = direction(g.gx[i], g.gy[i]);
            let (xi, yi) = (x as i64, y as i64);
            if m < at(xi + dx, yi + dy) || m < at(xi - dx, yi - dy) {
                continue;
            }
            let mf = m as f64;
            if mf >= high {
                class[i] = 2;
                queue.push_back((x, y));
            } else if mf >= low {
                class[i] = 1;
            }
        }
    }
    while let Some((x, y)) = queue.pop_front() {
        edges.set(x as u32, y as u32, true);
        for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
            for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                let j = ny * w + nx;
                if class[j] == 1 {
                    class[j] = 2;
                    queue.push_back((nx, ny));
                }
            }
        }
    }
    Ok(edges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rgba_layer(w: u32, h: u32, color: [u8; 3], support: impl Fn(u32, u32) -> bool) -> ImageBuffer {
        ImageBuffer::from_fn(w, h, Channels::Rgba, |x, y, c| {
            if c == 3 {
                if support(x, y) { 255 } else { 0 }
            } else {
                color[c]
            }
        })
        .unwrap()
    }

    #[test]
    fn no_layers_is_identity() {
        let base = ImageBuffer::from_fn(8, 8, Channels::Rgb, |x, y, c| (x * 7 + y * 3 + c as u32) as u8).unwrap();
        assert_eq!(composite_hints(&base, &[]).unwrap(), base);
    }

    #[test]
    fn opaque_full_patch_replaces_base() {
        let base = ImageBuffer::filled(6, 4, &[10, 20, 30]).unwrap();
        let layer = HintLayer::new(HintKind::ColorPatch, rgba_layer(6, 4, [200, 100, 50], |_, _| true), 1.0).unwrap();
        let out = composite_hints(&base, &[layer]).unwrap();
        assert_eq!(out, ImageBuffer::filled(6, 4, &[200, 100, 50]).unwrap());
    }

    #[test]
    fn patch_opacity_point_eight() {
        let base = ImageBuffer::filled(4, 4, &[0, 0, 0, 77]).unwrap();
        let layer = HintLayer::new(HintKind::ColorPatch, rgba_layer(4, 4, [255, 255, 255], |x, _| x < 2), 0.8).unwrap();
        let out = composite_hints(&base, &[layer]).unwrap();
        assert_eq!(out.pixel(0, 0), &[204, 204, 204, 77]);
        assert_eq!(out.pixel(3, 0), &[0, 0, 0, 77]);
    }

    #[test]
    fn layers_apply_in_order() {
        let base = ImageBuffer::filled(2, 2, &[0, 0, 0]).unwrap();
        let red = HintLayer::new(HintKind::ColorPatch, rgba_layer(2, 2, [255, 0, 0], |_, _| true), 1.0).unwrap();
        let blue = HintLayer::new(HintKind::ReferencePaste, rgba_layer(2, 2, [0, 0, 255], |x, _| x == 0), 1.0).unwrap();
        let out = composite_hints(&base, &[red, blue]).unwrap();
        assert_eq!(out.pixel(0, 0), &[0, 0, 255]);
        assert_eq!(out.pixel(1, 0), &[255, 0, 0]);
    }

    #[test]
    fn layer_validation() {
        let base = ImageBuffer::filled(4, 4, &[0, 0, 0]).unwrap();
        let wrong = HintLayer::new(HintKind::ColorPatch, rgba_layer(5, 4, [1, 1, 1], |_, _| true), 0.5).unwrap();
        assert!(matches!(
            composite_hints(&base, &[wrong]),
            Err(HintError::DimensionMismatch { .. })
        ));
        assert!(HintLayer::new(HintKind::ColorPatch, base.clone(), 0.5).is_err());
        assert!(HintLayer::new(HintKind::ColorPatch, rgba_layer(4, 4, [0; 3], |_, _| true), 1.1).is_err());
    }

    fn step_image(w: u32, h: u32, lo: u8, hi: u8) -> ImageBuffer {
        ImageBuffer::from_fn(w, h, Channels::Rgb, |x, _, _| if x < w / 2 { lo } else { hi }).unwrap()
    }

    #[test]
    fn uniform_image_has_no_edges() {
        let img = ImageBuffer::filled(32, 32, &[128, 128, 128]).unwrap();
        assert_eq!(canny_edges(&img, &CannyParams::default()).unwrap().count(), 0);
    }

    #[test]
    fn vertical_step_edge_localized() {
        let img = step_image(64, 64, 0, 255);
        let e = canny_edges(&img, &CannyParams::default()).unwrap();
        for y in 0..64 {
            for x in 0..64 {
                if e.get(x, y) {
                    assert!((31..=32).contains(&x), "edge at column {x}");
                }
            }
            // the tie between the two columns flanking the step keeps both
            assert!(e.get(31, y) && e.get(32, y), "row {y}");
        }
    }

    #[test]
    fn transposed_input_gives_transposed_edges() {
        let img = ImageBuffer::from_fn(40, 30, Channels::Rgb, |x, y, c| {
            let d = (x as i32 - 18).pow(2) + (y as i32 - 13).pow(2);
            if d < 90 { 220 - c as u8 * 30 } else { 30 + (x as u8 % 3) }
        })
        .unwrap();
        let t = ImageBuffer::from_fn(30, 40, Channels::Rgb, |x, y, c| img.sample(y, x, c)).unwrap();
        let p = CannyParams::default();
        let e = canny_edges(&img, &p).unwrap();
        assert!(e.count() > 0);
        assert_eq!(canny_edges(&t, &p).unwrap(), e.transpose());
    }

    #[test]
    fn thresholds_validated() {
        let img = ImageBuffer::filled(8, 8, &[0, 0, 0]).unwrap();
        let bad = CannyParams { low: 0.3, high: 0.2, ..Default::default() };
        assert!(matches!(canny_edges(&img, &bad), Err(HintError::Thresholds { .. })));
        let bad = CannyParams { low: 0.0, ..Default::default() };
        assert!(canny_edges(&img, &bad).is_err());
    }

    #[test]
    fn edge_map_png_round_trip() {
        let e = canny_edges(&step_image(16, 16, 10, 240), &CannyParams::default()).unwrap();
        let back = EdgeMap::from_png(&e.to_png().unwrap()).unwrap();
        assert_eq!(back, e);
    }

    fn rotate90(img: &ImageBuffer) -> ImageBuffer {
        // clockwise: (x, y) -> (h-1-y, x)
        let (w, h) = img.dims();
        ImageBuffer::from_fn(h, w, img.channels(), |x, y, c| img.sample(y, h - 1 - x, c)).unwrap()
    }

    fn rotate_edges(e: &EdgeMap) -> EdgeMap {
        let (w, h) = e.dims();
        EdgeMap::new(BinaryMask::from_fn(h, w, |x, y| e.get(y, h - 1 - x)).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn rotation_equivariance(seed in any::<u64>(), w in 8u32..28, h in 8u32..28) {
            let img = ImageBuffer::from_fn(w, h, Channels::Rgb, |x, y, c| {
                (crate::rng::mix(seed ^ (u64::from(y) << 20) ^ (u64::from(x) << 4) ^ c as u64) >> 56) as u8
            }).unwrap();
            let p = CannyParams::default();
            let e = canny_edges(&img, &p).unwrap();
            prop_assert_eq!(canny_edges(&rotate90(&img), &p).unwrap(), rotate_edges(&e));
        }

        #[test]
        fn luma_offset_invariance(seed in any::<u64>(), offset in 1u8..60) {
            let img = ImageBuffer::from_fn(20, 20, Channels::Gray, |x, y, _| {
                (crate::rng::mix(seed ^ (u64::from(y) << 20) ^ u64::from(x)) >> 57) as u8
            }).unwrap();
            let shifted = ImageBuffer::from_fn(20, 20, Channels::Gray, |x, y, _| img.sample(x, y, 0) + offset).unwrap();
            let p = CannyParams::default();
            prop_assert_eq!(canny_edges(&img, &p).unwrap(), canny_edges(&shifted, &p).unwrap());
        }

        #[test]
        fn zero_opacity_is_identity(seed in any::<u64>()) {
            let base = ImageBuffer::from_fn(9, 7, Channels::Rgb, |x, y, c| (crate::rng::mix(seed ^ u64::from(x * 31 + y * 7 + c as u32)) >> 56) as u8).unwrap();
            let layer = HintLayer::new(HintKind::ColorPatch, rgba_layer(9, 7, [255, 0, 9], |x, y| (x + y) % 2 == 0), 0.0).unwrap();
            prop_assert_eq!(composite_hints(&base, &[layer]).unwrap(), base);
        }
    }
}
