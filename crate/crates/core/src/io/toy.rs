//! Procedural toy datasets: one flat-colored shape on a plain background.
//! Every palette color has its own 4-bit gray level, so the color image is a
//! function of its grayscale view.

use std::path::{Path, PathBuf};

use super::png::write_rgb;
use super::write_file;
use crate::auxiliary::ImageU8;
use crate::error::{Error, Result};

pub const PALETTE: [[u8; 3]; 8] = [
    [0, 0, 0],
    [0, 0, 200],
    [200, 0, 0],
    [0, 160, 0],
    [230, 120, 0],
    [0, 220, 220],
    [240, 240, 0],
    [255, 255, 255],
];

pub const TRAIN_IMAGES: usize = 16;
pub const TEST_IMAGES: usize = 4;

/// The `index`-th toy image at `size x size`; `size` must be a multiple of 8.
pub fn toy_image(index: usize, size: usize) -> Result<ImageU8> {
    if size == 0 || !size.is_multiple_of(8) {
        return Err(Error::InvalidArgument(format!(
            "toy size must be a multiple of 8, got {size}"
        )));
    }
    let s = size / 8;
    let bg = PALETTE[index % 8];
    let fg = PALETTE[(3 * index + 5) % 8];
    let shift = (index / 4) % 5;
    let mut img = ImageU8::filled(size, size, bg)?;
    for y in 0..size {
        for x in 0..size {
            let (cy, cx) = (y / s, x / s);
            let inside = match index % 4 {
                0 => (shift..shift + 4).contains(&cy) && (shift..shift + 4).contains(&cx),
                1 => (2 + shift / 2..4 + shift / 2).contains(&cy),
                2 => (1 + shift..3 + shift).contains(&cx),
                _ => cx + shift <= cy,
            };
            if inside {
                img.set_pixel(y, x, fg);
            }
        }
    }
    Ok(img)
}

/// The 16 training images.
pub fn toy_images(size: usize) -> Result<Vec<ImageU8>> {
    (0..TRAIN_IMAGES).map(|i| toy_image(i, size)).collect()
}

/// Held-out images, disjoint from the training set.
pub fn toy_test_images(size: usize) -> Result<Vec<ImageU8>> {
    (TRAIN_IMAGES..TRAIN_IMAGES + TEST_IMAGES)
        .map(|i| toy_image(i, size))
        .collect()
}

/// Writes the toy PNGs and a `manifest.tsv` (train and test splits) into `dir`.
pub fn write_toy_dataset(dir: &Path, size: usize) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::new();
    for i in 0..TRAIN_IMAGES + TEST_IMAGES {
        let name = format!("toy{size}_{i:02}.png");
        write_rgb(&dir.join(&name), &toy_image(i, size)?)?;
        let split = if i < TRAIN_IMAGES { "train" } else { "test" };
        manifest.push_str(&format!("{name}\t{split}\n"));
    }
    let path = dir.join("manifest.tsv");
    write_file(&path, manifest)?;
    Ok(path)
}
