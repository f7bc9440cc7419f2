//! Deterministic fixtures shared by the benchmarks.

use spice_core::{BinaryMask, Channels, ContextMask, ImageBuffer, SoftMask};

/// Smooth gradient with a checker overlay so the edge detector has work to do.
pub fn textured_image(width: u32, height: u32) -> ImageBuffer {
    ImageBuffer::from_fn(width, height, Channels::Rgb, |x, y, c| {
        let checker = if (x / 16 + y / 16) % 2 == 0 { 40 } else { 0 };
        let base = match c {
            0 => x * 200 / width,
            1 => y * 200 / height,
            _ => (x + y) * 100 / (width + height),
        };
        (base + checker) as u8
    })
    .expect("non-empty fixture")
}

/// A centred rectangle covering a quarter of the image, plus two corner dots.
pub fn edit_mask(width: u32, height: u32) -> ContextMask {
    let mut mask = BinaryMask::empty(width, height).expect("non-empty fixture");
    mask.fill_rect(width * 3 / 8, height * 3 / 8, width * 5 / 8, height * 5 / 8);
    mask.fill_rect(4, 4, 7, 7);
    mask.fill_rect(width - 7, height - 7, width - 4, height - 4);
    ContextMask::new(mask)
}

/// Hard-edged square mask as a soft raster.
pub fn square_soft_mask(side: u32) -> SoftMask {
    let lo = side / 4;
    let hi = side - lo;
    let values = (0..side * side)
        .map(|i| {
            let (x, y) = (i % side, i / side);
            if (lo..hi).contains(&x) && (lo..hi).contains(&y) {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    SoftMask::from_values(side, side, values).expect("non-empty fixture")
}
