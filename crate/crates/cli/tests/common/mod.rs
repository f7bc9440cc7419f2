#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;

use sha2::{Digest, Sha256};

use spice_core::imageops::encode_png;
use spice_core::{Channels, ImageBuffer};

/// The `spice` binary with backend environment overrides cleared.
pub fn spice() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_spice"));
    cmd.env_remove("SPICE_BACKEND_URL").env_remove("SPICE_EMBEDDER_URL");
    cmd
}

pub fn write_png(path: &Path, image: &ImageBuffer) {
    std::fs::write(path, encode_png(image).unwrap()).unwrap();
}

pub fn sha256_file(path: &Path) -> String {
    hex::encode(Sha256::digest(std::fs::read(path).unwrap()))
}

pub fn golden_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

/// 160×120 gradient image with a 40×30 edit square and two context dots.
pub fn fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let image = ImageBuffer::from_fn(160, 120, Channels::Rgb, |x, y, c| match c {
        0 => (x * 255 / 159) as u8,
        1 => (y * 255 / 119) as u8,
        _ => ((x + y) % 64 * 4) as u8,
    })
    .unwrap();
    let mask = ImageBuffer::from_fn(160, 120, Channels::Gray, |x, y, _| {
        let square = (60..100).contains(&x) && (45..75).contains(&y);
        let dot = ((20..24).contains(&x) || (136..140).contains(&x)) && (58..62).contains(&y);
        if square || dot {
            255
        } else {
            0
        }
    })
    .unwrap();
    let image_path = dir.join("image.png");
    let mask_path = dir.join("mask.png");
    write_png(&image_path, &image);
    write_png(&mask_path, &mask);
    (image_path, mask_path)
}
