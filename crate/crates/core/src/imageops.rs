//! Deterministic pixel kernels: resampling, separable Gaussian blur, soft
//! compositing, hue extraction and the PNG codec wrapper.
//!
//! All arithmetic runs on `f64` in `[0, 1]` with a fixed summation order, and
//! results are quantized with [`quantize`] (round half away from zero).

use std::io::Cursor;

use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageFormat};
use rayon::prelude::*;
use thiserror::Error;

use crate::model::{
    dequantize, quantize, BinaryMask, Channels, ImageBuffer, ModelError, SoftMask,
};

#[derive(Debug, Error)]
pub enum ImageOpsError {
    #[error("resize target must be at least 1x1, got {0}x{1}")]
    ZeroTarget(u32, u32),
    #[error("gaussian sigma must be positive and finite, got {0}")]
    InvalidSigma(f64),
    #[error("dimension mismatch: {0:?} vs {1:?}")]
    DimensionMismatch((u32, u32), (u32, u32)),
    #[error("channel layout mismatch: {0:?} vs {1:?}")]
    ChannelMismatch(Channels, Channels),
    #[error("malformed PNG: {0}")]
    Decode(String),
    #[error("unsupported PNG color type {0} (only 8-bit gray, RGB and RGBA are accepted)")]
    UnsupportedFormat(String),
    #[error("PNG encoding failed: {0}")]
    Encode(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Resampling kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ResampleFilter {
    /// Required for binary masks.
    Nearest,
    /// Used when upscaling rasters.
    Bilinear,
    /// Exact box-overlap averaging, used when downscaling rasters.
    AreaAverage,
}

impl ResampleFilter {
    /// Picks the raster filter for a `src -> dst` resize: area averaging when
    /// neither axis grows, bilinear otherwise.
    pub fn for_raster(src: (u32, u32), dst: (u32, u32)) -> Self {
        if dst.0 <= src.0 && dst.1 <= src.1 {
            Self::AreaAverage
        } else {
            Self::Bilinear
        }
    }
}

/// Contributions of a contiguous run of source samples to one output sample.
struct Taps {
    start: usize,
    weights: Vec<f64>,
}

fn taps_1d(src: u32, dst: u32, filter: ResampleFilter) -> Vec<Taps> {
    let (src, dst) = (u64::from(src), u64::from(dst));
    (0..dst)
        .map(|x| match filter {
            ResampleFilter::Nearest => {
                // floor((x + 0.5) * src / dst) in integers
                let i = ((2 * x + 1) * src / (2 * dst)).min(src - 1);
                Taps {
                    start: i as usize,
                    weights: vec![1.0],
                }
            }
            ResampleFilter::Bilinear => {
                let s = (x as f64 + 0.5) * src as f64 / dst as f64 - 0.5;
                let s = s.clamp(0.0, (src - 1) as f64);
                let i0 = s.floor() as u64;
                let t = s - i0 as f64;
                if i0 + 1 < src {
                    Taps {
                        start: i0 as usize,
                        weights: vec![1.0 - t, t],
                    }
                } else {
                    Taps {
                        start: i0 as usize,
                        weights: vec![1.0],
                    }
                }
            }
            ResampleFilter::AreaAverage => {
                // output x covers [x*src, (x+1)*src) in units of 1/dst source pixels
                let lo = x * src;
                let hi = (x + 1) * src;
                let first = lo / dst;
                let last = (hi - 1) / dst;
                let weights = (first..=last)
                    .map(|i| {
                        let overlap = hi.min((i + 1) * dst) - lo.max(i * dst);
                        overlap as f64 / src as f64
                    })
                    .collect();
                Taps {
                    start: first as usize,
                    weights,
                }
            }
        })
        .collect()
}

/// Resizes a single-channel plane of reals.
pub fn resize_plane(
    src: &[f64],
    width: u32,
    height: u32,
    dst_width: u32,
    dst_height: u32,
    filter: ResampleFilter,
) -> Result<Vec<f64>, ImageOpsError> {
    if dst_width == 0 || dst_height == 0 {
        return Err(ImageOpsError::ZeroTarget(dst_width, dst_height));
    }
    assert_eq!(src.len(), width as usize * height as usize);
    if (width, height) == (dst_width, dst_height) {
        return Ok(src.to_vec());
    }
    let (sw, dw, dh) = (width as usize, dst_width as usize, dst_height as usize);
    let htaps = taps_1d(width, dst_width, filter);
    let vtaps = taps_1d(height, dst_height, filter);

    let mut horizontal = vec![0.0; dw * height as usize];
    horizontal
        .par_chunks_mut(dw)
        .zip(src.par_chunks(sw))
        .for_each(|(out, row)| {
            for (o, taps) in out.iter_mut().zip(&htaps) {
                let mut acc = 0.0;
                for (k, w) in taps.weights.iter().enumerate() {
                    acc += w * row[taps.start + k];
                }
                *o = acc;
            }
        });

    let mut out = vec![0.0; dw * dh];
    out.par_chunks_mut(dw)
        .zip(vtaps.par_iter())
        .for_each(|(row, taps)| {
            for (k, w) in taps.weights.iter().enumerate() {
                let src_row = &horizontal[(taps.start + k) * dw..(taps.start + k + 1) * dw];
                for (o, v) in row.iter_mut().zip(src_row) {
                    *o += w * v;
                }
            }
        });
    Ok(out)
}

/// Resizes every channel of `image` independently.
pub fn resize(
    image: &ImageBuffer,
    dst_width: u32,
    dst_height: u32,
    filter: ResampleFilter,
) -> Result<ImageBuffer, ImageOpsError> {
    if dst_width == 0 || dst_height == 0 {
        return Err(ImageOpsError::ZeroTarget(dst_width, dst_height));
    }
    if image.dims() == (dst_width, dst_height) {
        return Ok(image.clone());
    }
    let cc = image.channels().count();
    let planes: Vec<Vec<f64>> = (0..cc)
        .map(|c| {
            let plane: Vec<f64> = image
                .data()
                .iter()
                .skip(c)
                .step_by(cc)
                .map(|&v| dequantize(v))
                .collect();
            resize_plane(
                &plane,
                image.width(),
                image.height(),
                dst_width,
                dst_height,
                filter,
            )
        })
        .collect::<Result<_, _>>()?;
    let n = dst_width as usize * dst_height as usize;
    let mut data = Vec::with_capacity(n * cc);
    for i in 0..n {
        for plane in &planes {
            data.push(quantize(plane[i]));
        }
    }
    Ok(ImageBuffer::from_raw(
        dst_width,
        dst_height,
        image.channels(),
        data,
    )?)
}

/// Nearest-neighbour resize of a binary mask.
pub fn resize_mask(
    mask: &BinaryMask,
    dst_width: u32,
    dst_height: u32,
) -> Result<BinaryMask, ImageOpsError> {
    if dst_width == 0 || dst_height == 0 {
        return Err(ImageOpsError::ZeroTarget(dst_width, dst_height));
    }
    if mask.dims() == (dst_width, dst_height) {
        return Ok(mask.clone());
    }
    let xs = taps_1d(mask.width(), dst_width, ResampleFilter::Nearest);
    let ys = taps_1d(mask.height(), dst_height, ResampleFilter::Nearest);
    Ok(BinaryMask::from_fn(dst_width, dst_height, |x, y| {
        mask.get(xs[x as usize].start as u32, ys[y as usize].start as u32)
    })?)
}

/// Kernel radius used for a given sigma: `ceil(3σ)`.
pub fn kernel_radius(sigma: f64) -> usize {
    (3.0 * sigma).ceil() as usize
}

/// Unnormalized Gaussian weights `exp(-i²/2σ²)` for `i` in `-r..=r`.
pub fn gaussian_weights(sigma: f64) -> Vec<f64> {
    let r = kernel_radius(sigma) as i64;
    let denom = 2.0 * sigma * sigma;
    (-r..=r).map(|i| (-((i * i) as f64) / denom).exp()).collect()
}

/// Separable Gaussian blur over a real-valued plane with clamp-to-edge borders.
///
/// Each pass accumulates `Σ wᵢ·v` in tap order and divides by `Σ wᵢ`
/// accumulated in the same order, so constant regions are reproduced exactly.
pub fn gaussian_blur_plane(
    src: &[f64],
    width: u32,
    height: u32,
    sigma: f64,
) -> Result<Vec<f64>, ImageOpsError> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(ImageOpsError::InvalidSigma(sigma));
    }
    let (w, h) = (width as usize, height as usize);
    assert_eq!(src.len(), w * h);
    let weights = gaussian_weights(sigma);
    let r = (weights.len() / 2) as isize;
    let norm: f64 = {
        let mut s = 0.0;
        for wt in &weights {
            s += wt;
        }
        s
    };

    let mut horizontal = vec![0.0; w * h];
    horizontal
        .par_chunks_mut(w)
        .zip(src.par_chunks(w))
        .for_each(|(out, row)| {
            for (x, o) in out.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (k, wt) in weights.iter().enumerate() {
                    let sx = (x as isize + k as isize - r).clamp(0, w as isize - 1) as usize;
                    acc += wt * row[sx];
                }
                *o = acc / norm;
            }
        });

    let mut out = vec![0.0; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (k, wt) in weights.iter().enumerate() {
            let sy = (y as isize + k as isize - r).clamp(0, h as isize - 1) as usize;
            let src_row = &horizontal[sy * w..(sy + 1) * w];
            for (o, v) in row.iter_mut().zip(src_row) {
                *o += wt * v;
            }
        }
        for o in row.iter_mut() {
            *o = (*o / norm).clamp(0.0, 1.0);
        }
    });
    Ok(out)
}

/// Blurs a mask into a [`SoftMask`].
pub fn gaussian_blur(mask: &SoftMask, sigma: f64) -> Result<SoftMask, ImageOpsError> {
    let values = gaussian_blur_plane(mask.values(), mask.width(), mask.height(), sigma)?;
    Ok(SoftMask::from_values(mask.width(), mask.height(), values)?)
}

/// `soft·edited + (1−soft)·original`, per pixel and channel.
///
/// Pixels where `soft` is exactly 0 (or 1) copy the original (or edited) bytes.
pub fn blend(
    original: &ImageBuffer,
    edited: &ImageBuffer,
    soft: &SoftMask,
) -> Result<ImageBuffer, ImageOpsError> {
    if original.dims() != edited.dims() {
        return Err(ImageOpsError::DimensionMismatch(
            original.dims(),
            edited.dims(),
        ));
    }
    if original.dims() != soft.dims() {
        return Err(ImageOpsError::DimensionMismatch(original.dims(), soft.dims()));
    }
    if original.channels() != edited.channels() {
        return Err(ImageOpsError::ChannelMismatch(
            original.channels(),
            edited.channels(),
        ));
    }
    let cc = original.channels().count();
    let mut data = original.data().to_vec();
    for (i, &s) in soft.values().iter().enumerate() {
        let px = i * cc..(i + 1) * cc;
        if s == 0.0 {
            continue;
        }
        if s == 1.0 {
            data[px.clone()].copy_from_slice(&edited.data()[px]);
            continue;
        }
        for j in px {
            let o = dequantize(original.data()[j]);
            let e = dequantize(edited.data()[j]);
            data[j] = quantize(s * e + (1.0 - s) * o);
        }
    }
    Ok(ImageBuffer::from_raw(
        original.width(),
        original.height(),
        original.channels(),
        data,
    )?)
}

/// Hexcone hue in `[0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hue {
    pub value: f64,
    /// Set when the input is gray (max = min) and the hue is undefined.
    pub degenerate: bool,
}

pub fn rgb_to_hsv_hue(r: f64, g: f64, b: f64) -> Hue {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    if delta <= 0.0 {
        return Hue {
            value: 0.0,
            degenerate: true,
        };
    }
    let sector = if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    let mut value = sector / 6.0;
    if value >= 1.0 {
        value -= 1.0;
    }
    Hue {
        value,
        degenerate: false,
    }
}

pub fn decode_png(bytes: &[u8]) -> Result<ImageBuffer, ImageOpsError> {
    let decoded = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| ImageOpsError::Decode(e.to_string()))?;
    let (w, h) = (decoded.width(), decoded.height());
    let (channels, data) = match decoded {
        DynamicImage::ImageLuma8(img) => (Channels::Gray, img.into_raw()),
        DynamicImage::ImageRgb8(img) => (Channels::Rgb, img.into_raw()),
        DynamicImage::ImageRgba8(img) => (Channels::Rgba, img.into_raw()),
        DynamicImage::ImageLumaA8(_) => (Channels::Rgba, decoded.to_rgba8().into_raw()),
        other => {
            return Err(ImageOpsError::UnsupportedFormat(format!(
                "{:?}",
                other.color()
            )))
        }
    };
    Ok(ImageBuffer::from_raw(w, h, channels, data)?)
}

pub fn encode_png(image: &ImageBuffer) -> Result<Vec<u8>, ImageOpsError> {
    let color = match image.channels() {
        Channels::Gray => ExtendedColorType::L8,
        Channels::Rgb => ExtendedColorType::Rgb8,
        Channels::Rgba => ExtendedColorType::Rgba8,
    };
    let mut out = Cursor::new(Vec::new());
    image::codecs::png::PngEncoder::new(&mut out)
        .write_image(image.data(), image.width(), image.height(), color)
        .map_err(|e| ImageOpsError::Encode(e.to_string()))?;
    Ok(out.into_inner())
}
