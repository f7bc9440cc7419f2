//! Raster and mask carriers shared across the pipeline.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ModelError;

/// Converts a real intensity in `[0, 1]` to the 8-bit canonical storage.
///
/// Ties round half away from zero; out-of-range inputs saturate.
#[inline]
pub fn quantize(value: f64) -> u8 {
    let scaled = (value * 255.0).round();
    if scaled.is_nan() || scaled <= 0.0 {
        0
    } else if scaled >= 255.0 {
        255
    } else {
        scaled as u8
    }
}

/// Converts an 8-bit sample to the `[0, 1]` arithmetic representation.
#[inline]
pub fn dequantize(value: u8) -> f64 {
    f64::from(value) / 255.0
}

/// Number of interleaved channels in an [`ImageBuffer`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channels {
    Gray,
    Rgb,
    Rgba,
}

impl Channels {
    pub const fn count(self) -> usize {
        match self {
            Self::Gray => 1,
            Self::Rgb => 3,
            Self::Rgba => 4,
        }
    }

    pub fn from_count(count: usize) -> Option<Self> {
        match count {
            1 => Some(Self::Gray),
            3 => Some(Self::Rgb),
            4 => Some(Self::Rgba),
            _ => None,
        }
    }

    /// Channels carrying color (everything except alpha).
    pub const fn color_count(self) -> usize {
        match self {
            Self::Gray => 1,
            Self::Rgb | Self::Rgba => 3,
        }
    }
}

/// An 8-bit interleaved raster, row-major, top-left origin.
#[derive(Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    width: u32,
    height: u32,
    channels: Channels,
    data: Vec<u8>,
}

impl std::fmt::Debug for ImageBuffer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ImageBuffer")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("channels", &self.channels)
            .finish_non_exhaustive()
    }
}

impl ImageBuffer {
    pub fn from_raw(
        width: u32,
        height: u32,
        channels: Channels,
        data: Vec<u8>,
    ) -> Result<Self, ModelError> {
        check_dims(width, height)?;
        let expected = width as usize * height as usize * channels.count();
        if data.len() != expected {
            return Err(ModelError::DataLength {
                expected,
                actual: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// A raster filled with one pixel value; `pixel.len()` picks the channel layout.
    pub fn filled(width: u32, height: u32, pixel: &[u8]) -> Result<Self, ModelError> {
        check_dims(width, height)?;
        let channels =
            Channels::from_count(pixel.len()).ok_or(ModelError::ChannelCount(pixel.len()))?;
        let n = width as usize * height as usize;
        let mut data = Vec::with_capacity(n * pixel.len());
        for _ in 0..n {
            data.extend_from_slice(pixel);
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_fn(
        width: u32,
        height: u32,
        channels: Channels,
        mut f: impl FnMut(u32, u32, usize) -> u8,
    ) -> Result<Self, ModelError> {
        check_dims(width, height)?;
        let mut data = Vec::with_capacity(width as usize * height as usize * channels.count());
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels.count() {
                    data.push(f(x, y, c));
                }
            }
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn channels(&self) -> Channels {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn index(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * self.channels.count()
    }

    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> &[u8] {
        let i = self.index(x, y);
        &self.data[i..i + self.channels.count()]
    }

    #[inline]
    pub fn sample(&self, x: u32, y: u32, c: usize) -> u8 {
        self.data[self.index(x, y) + c]
    }

    /// Copies out the sub-rectangle `bbox`.
    pub fn crop(&self, bbox: BoundingBox) -> Result<Self, ModelError> {
        if !bbox.fits_within(self.width, self.height) {
            return Err(ModelError::BoxOutside {
                bbox,
                width: self.width,
                height: self.height,
            });
        }
        let cc = self.channels.count();
        let row_len = bbox.width() as usize * cc;
        let mut data = Vec::with_capacity(row_len * bbox.height() as usize);
        for y in bbox.y0..bbox.y1 {
            let start = self.index(bbox.x0, y);
            data.extend_from_slice(&self.data[start..start + row_len]);
        }
        Self::from_raw(bbox.width(), bbox.height(), self.channels, data)
    }

    /// Writes `patch` with its top-left corner at `(x0, y0)`.
    pub fn paste(&mut self, patch: &ImageBuffer, x0: u32, y0: u32) -> Result<(), ModelError> {
        let bbox = BoundingBox::new(x0, y0, x0 + patch.width, y0 + patch.height)?;
        if !bbox.fits_within(self.width, self.height) {
            return Err(ModelError::BoxOutside {
                bbox,
                width: self.width,
                height: self.height,
            });
        }
        if patch.channels != self.channels {
            return Err(ModelError::ChannelMismatch {
                expected: self.channels,
                actual: patch.channels,
            });
        }
        let row_len = patch.width as usize * self.channels.count();
        for (row, y) in (y0..bbox.y1).enumerate() {
            let dst = self.index(x0, y);
            let src = row * row_len;
            self.data[dst..dst + row_len].copy_from_slice(&patch.data[src..src + row_len]);
        }
        Ok(())
    }

    /// Drops alpha (or expands gray) to a three-channel raster.
    pub fn to_rgb(&self) -> ImageBuffer {
        match self.channels {
            Channels::Rgb => self.clone(),
            Channels::Rgba => {
                let data = self
                    .data
                    .chunks_exact(4)
                    .flat_map(|p| [p[0], p[1], p[2]])
                    .collect();
                Self {
                    width: self.width,
                    height: self.height,
                    channels: Channels::Rgb,
                    data,
                }
            }
            Channels::Gray => {
                let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
                Self {
                    width: self.width,
                    height: self.height,
                    channels: Channels::Rgb,
                    data,
                }
            }
        }
    }

    /// SHA-256 over `width ‖ height ‖ channels ‖ raw bytes`; width and height as
    /// big-endian u32, channels as one byte.
    pub fn digest(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(self.width.to_be_bytes());
        hasher.update(self.height.to_be_bytes());
        hasher.update([self.channels.count() as u8]);
        hasher.update(&self.data);
        hasher.finalize().into()
    }

    pub fn digest_hex(&self) -> String {
        hex::encode(self.digest())
    }

    /// Whether `other` has identical dimensions (channel layout ignored).
    pub fn same_dims(&self, other: &ImageBuffer) -> bool {
        self.dims() == other.dims()
    }
}

fn check_dims(width: u32, height: u32) -> Result<(), ModelError> {
    if width == 0 || height == 0 {
        Err(ModelError::EmptyDimensions { width, height })
    } else {
        Ok(())
    }
}

/// Per-pixel boolean mask; `true` marks the editable region.
#[derive(Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl std::fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BinaryMask")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("count", &self.count())
            .finish()
    }
}

impl BinaryMask {
    pub fn empty(width: u32, height: u32) -> Result<Self, ModelError> {
        check_dims(width, height)?;
        Ok(Self {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        })
    }

    pub fn full(width: u32, height: u32) -> Result<Self, ModelError> {
        check_dims(width, height)?;
        Ok(Self {
            width,
            height,
            bits: vec![true; width as usize * height as usize],
        })
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Result<Self, ModelError> {
        check_dims(width, height)?;
        let expected = width as usize * height as usize;
        if bits.len() != expected {
            return Err(ModelError::DataLength {
                expected,
                actual: bits.len(),
            });
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn from_fn(
        width: u32,
        height: u32,
        mut f: impl FnMut(u32, u32) -> bool,
    ) -> Result<Self, ModelError> {
        check_dims(width, height)?;
        let mut bits = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    /// Thresholds a grayscale raster: foreground is value ≥ 128.
    pub fn from_gray(image: &ImageBuffer) -> Result<Self, ModelError> {
        if image.channels() != Channels::Gray {
            return Err(ModelError::ChannelMismatch {
                expected: Channels::Gray,
                actual: image.channels(),
            });
        }
        Self::from_bits(
            image.width(),
            image.height(),
            image.data().iter().map(|&v| v >= 128).collect(),
        )
    }

    /// Thresholds any raster. Gray uses its value, color uses luma, and
    /// pixels with alpha below 128 are background.
    pub fn from_image(image: &ImageBuffer) -> Result<Self, ModelError> {
        if image.channels() == Channels::Gray {
            return Self::from_gray(image);
        }
        Self::from_fn(image.width(), image.height(), |x, y| {
            let p = image.pixel(x, y);
            let luma = (0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2])) / 255.0;
            quantize(luma) >= 128 && p.get(3).is_none_or(|&a| a >= 128)
        })
    }

    /// Renders as grayscale with 255 for foreground.
    pub fn to_gray(&self) -> ImageBuffer {
        let data = self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
        ImageBuffer {
            width: self.width,
            height: self.height,
            channels: Channels::Gray,
            data,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        self.bits[y as usize * self.width as usize + x as usize] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Fills an axis-aligned rectangle, clipped to the mask.
    pub fn fill_rect(&mut self, x0: u32, y0: u32, x1: u32, y1: u32) {
        for y in y0.min(self.height)..y1.min(self.height) {
            for x in x0.min(self.width)..x1.min(self.width) {
                self.set(x, y, true);
            }
        }
    }

    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask, ModelError> {
        if self.dims() != other.dims() {
            return Err(ModelError::DimensionMismatch {
                expected: self.dims(),
                actual: other.dims(),
            });
        }
        let bits = self
            .bits
            .iter()
            .zip(&other.bits)
            .map(|(&a, &b)| a || b)
            .collect();
        Ok(BinaryMask {
            width: self.width,
            height: self.height,
            bits,
        })
    }

    /// Whether every foreground pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.dims() == other.dims() && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    pub fn crop(&self, bbox: BoundingBox) -> Result<BinaryMask, ModelError> {
        if !bbox.fits_within(self.width, self.height) {
            return Err(ModelError::BoxOutside {
                bbox,
                width: self.width,
                height: self.height,
            });
        }
        let mut bits = Vec::with_capacity(bbox.area() as usize);
        for y in bbox.y0..bbox.y1 {
            let start = y as usize * self.width as usize;
            bits.extend_from_slice(&self.bits[start + bbox.x0 as usize..start + bbox.x1 as usize]);
        }
        BinaryMask::from_bits(bbox.width(), bbox.height(), bits)
    }

    /// Real-valued copy (0.0 / 1.0) of the mask.
    pub fn to_soft(&self) -> SoftMask {
        SoftMask {
            width: self.width,
            height: self.height,
            values: self
                .bits
                .iter()
                .map(|&b| if b { 1.0 } else { 0.0 })
                .collect(),
        }
    }
}

/// A binary mask that may carry user-drawn context dots in addition to the edit strokes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextMask(pub BinaryMask);

impl ContextMask {
    pub fn new(mask: BinaryMask) -> Self {
        Self(mask)
    }

    pub fn mask(&self) -> &BinaryMask {
        &self.0
    }

    pub fn into_inner(self) -> BinaryMask {
        self.0
    }

    pub fn dims(&self) -> (u32, u32) {
        self.0.dims()
    }
}

impl From<BinaryMask> for ContextMask {
    fn from(mask: BinaryMask) -> Self {
        Self(mask)
    }
}

/// Continuous mask with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMask {
    width: u32,
    height: u32,
    values: Vec<f64>,
}

impl SoftMask {
    pub fn from_values(width: u32, height: u32, values: Vec<f64>) -> Result<Self, ModelError> {
        check_dims(width, height)?;
        let expected = width as usize * height as usize;
        if values.len() != expected {
            return Err(ModelError::DataLength {
                expected,
                actual: values.len(),
            });
        }
        if let Some(&bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(ModelError::SoftValue(bad));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn constant(width: u32, height: u32, value: f64) -> Result<Self, ModelError> {
        Self::from_values(width, height, vec![value; width as usize * height as usize])
    }

    /// Maps an 8-bit grayscale raster onto `[0, 1]` (value / 255).
    pub fn from_gray(image: &ImageBuffer) -> Result<Self, ModelError> {
        if image.channels() != Channels::Gray {
            return Err(ModelError::ChannelMismatch {
                expected: Channels::Gray,
                actual: image.channels(),
            });
        }
        Ok(Self {
            width: image.width(),
            height: image.height(),
            values: image.data().iter().map(|&v| dequantize(v)).collect(),
        })
    }

    pub fn to_gray(&self) -> ImageBuffer {
        ImageBuffer {
            width: self.width,
            height: self.height,
            channels: Channels::Gray,
            data: self.values.iter().map(|&v| quantize(v)).collect(),
        }
    }

    /// Snaps every value to the nearest multiple of 1/255, so the mask survives an
    /// 8-bit round trip unchanged.
    pub fn quantized(&self) -> SoftMask {
        SoftMask {
            width: self.width,
            height: self.height,
            values: self
                .values
                .iter()
                .map(|&v| dequantize(quantize(v)))
                .collect(),
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.values[y as usize * self.width as usize + x as usize]
    }

    /// Pixels with a strictly positive value.
    pub fn support(&self) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.values.iter().map(|&v| v > 0.0).collect(),
        }
    }
}

/// Axis-aligned box; `x0,y0` inclusive, `x1,y1` exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl BoundingBox {
    pub fn new(x0: u32, y0: u32, x1: u32, y1: u32) -> Result<Self, ModelError> {
        if x0 >= x1 || y0 >= y1 {
            return Err(ModelError::InvalidBox { x0, y0, x1, y1 });
        }
        Ok(Self { x0, y0, x1, y1 })
    }

    pub fn full(width: u32, height: u32) -> Self {
        Self {
            x0: 0,
            y0: 0,
            x1: width,
            y1: height,
        }
    }

    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> u64 {
        u64::from(self.width()) * u64::from(self.height())
    }

    pub fn contains_box(&self, other: &BoundingBox) -> bool {
        self.x0 <= other.x0 && self.y0 <= other.y0 && self.x1 >= other.x1 && self.y1 >= other.y1
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn fits_within(&self, width: u32, height: u32) -> bool {
        self.x1 <= width && self.y1 <= height
    }

    pub fn union(&self, other: &BoundingBox) -> BoundingBox {
        BoundingBox {
            x0: self.x0.min(other.x0),
            y0: self.y0.min(other.y0),
            x1: self.x1.max(other.x1),
            y1: self.y1.max(other.y1),
        }
    }
}

/// Working canvas of the denoising model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "ResolutionRepr", into = "ResolutionRepr")]
pub struct Resolution {
    width: u32,
    height: u32,
}

impl Resolution {
    pub const MIN_SIDE: u32 = 64;

    /// Both sides must be at least 64 and multiples of 8.
    pub fn new(width: u32, height: u32) -> Result<Self, ModelError> {
        for side in [width, height] {
            if side < Self::MIN_SIDE || side % 8 != 0 {
                return Err(ModelError::Resolution { width, height });
            }
        }
        Ok(Self { width, height })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }
}

impl Default for Resolution {
    fn default() -> Self {
        Self {
            width: 1216,
            height: 832,
        }
    }
}

impl std::fmt::Display for Resolution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

impl std::str::FromStr for Resolution {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (w, h) = s
            .split_once(['x', 'X', '×'])
            .ok_or_else(|| ModelError::ResolutionSyntax(s.to_owned()))?;
        let parse = |t: &str| {
            t.trim()
                .parse::<u32>()
                .map_err(|_| ModelError::ResolutionSyntax(s.to_owned()))
        };
        Self::new(parse(w)?, parse(h)?)
    }
}

#[derive(Serialize, Deserialize)]
struct ResolutionRepr {
    width: u32,
    height: u32,
}

impl TryFrom<ResolutionRepr> for Resolution {
    type Error = ModelError;

    fn try_from(r: ResolutionRepr) -> Result<Self, Self::Error> {
        Resolution::new(r.width, r.height)
    }
}

impl From<Resolution> for ResolutionRepr {
    fn from(r: Resolution) -> Self {
        Self {
            width: r.width,
            height: r.height,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantize_round_trip_is_identity() {
        for v in 0..=255u8 {
            assert_eq!(quantize(dequantize(v)), v);
        }
    }

    #[test]
    fn quantize_ties_round_away_from_zero() {
        assert_eq!(quantize(127.5 / 255.0), 128);
        assert_eq!(quantize(0.5 / 255.0), 1);
        assert_eq!(quantize(-0.2), 0);
        assert_eq!(quantize(1.7), 255);
    }

    #[test]
    fn zero_sized_image_is_rejected() {
        assert!(matches!(
            ImageBuffer::from_raw(0, 0, Channels::Rgb, vec![]),
            Err(ModelError::EmptyDimensions { .. })
        ));
        assert!(ImageBuffer::filled(1, 1, &[1, 2, 3]).is_ok());
    }

    #[test]
    fn data_length_is_checked() {
        assert!(matches!(
            ImageBuffer::from_raw(2, 2, Channels::Rgb, vec![0; 11]),
            Err(ModelError::DataLength {
                expected: 12,
                actual: 11
            })
        ));
    }

    #[test]
    fn crop_then_paste_restores() {
        let img = ImageBuffer::from_fn(7, 5, Channels::Rgb, |x, y, c| {
            (x * 31 + y * 7 + c as u32) as u8
        })
        .unwrap();
        let bbox = BoundingBox::new(2, 1, 6, 4).unwrap();
        let crop = img.crop(bbox).unwrap();
        assert_eq!(crop.dims(), (4, 3));
        assert_eq!(crop.pixel(0, 0), img.pixel(2, 1));
        let mut blank = ImageBuffer::filled(7, 5, &[0, 0, 0]).unwrap();
        blank.paste(&crop, 2, 1).unwrap();
        assert_eq!(blank.pixel(5, 3), img.pixel(5, 3));
        assert_eq!(blank.pixel(0, 0), &[0, 0, 0]);
    }

    #[test]
    fn resolution_rules() {
        assert!(Resolution::new(1216, 832).is_ok());
        assert!(Resolution::new(60, 64).is_err());
        assert!(Resolution::new(100, 64).is_err());
        assert_eq!("512x768".parse::<Resolution>().unwrap().dims(), (512, 768));
        assert!("512".parse::<Resolution>().is_err());
    }

    #[test]
    fn invalid_box_rejected() {
        assert!(BoundingBox::new(3, 3, 3, 4).is_err());
        assert!(BoundingBox::new(0, 0, 1, 1).is_ok());
    }

    #[test]
    fn mask_gray_threshold_at_128() {
        let gray = ImageBuffer::from_raw(3, 1, Channels::Gray, vec![127, 128, 255]).unwrap();
        let m = BinaryMask::from_gray(&gray).unwrap();
        assert_eq!(m.bits(), &[false, true, true]);
    }

    #[test]
    fn soft_mask_rejects_out_of_range() {
        assert!(SoftMask::from_values(1, 1, vec![1.5]).is_err());
        assert!(SoftMask::from_values(1, 1, vec![f64::NAN]).is_err());
    }
}
