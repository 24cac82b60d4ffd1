//! 8-bit PNG decoding and encoding, plus sample grids.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use image::codecs::png::PngDecoder;
use image::{ColorType, DynamicImage, ImageDecoder, ImageFormat};

use crate::auxiliary::{GrayImage4, ImageU8};
use crate::error::{Error, Result};

fn image_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Decoded 8-bit pixels as stored in the file.
pub enum Decoded {
    Rgb(ImageU8),
    /// Single-channel 8-bit values, row-major.
    Gray {
        height: usize,
        width: usize,
        data: Vec<u8>,
    },
}

/// Decodes an 8-bit gray or RGB PNG (alpha is dropped). Other depths are rejected.
pub fn decode(path: &Path) -> Result<Decoded> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = PngDecoder::new(BufReader::new(file)).map_err(|e| image_err(path, e.to_string()))?;
    let color = decoder.color_type();
    let gray = match color {
        ColorType::L8 | ColorType::La8 => true,
        ColorType::Rgb8 | ColorType::Rgba8 => false,
        other => {
            return Err(image_err(
                path,
                format!("unsupported bit depth or color type {other:?}; only 8-bit gray or RGB PNGs are accepted"),
            ))
        }
    };
    let img = DynamicImage::from_decoder(decoder).map_err(|e| image_err(path, e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if gray {
        Ok(Decoded::Gray {
            height: h,
            width: w,
            data: img.into_luma8().into_raw(),
        })
    } else {
        ImageU8::new(h, w, img.into_rgb8().into_raw())
            .map(Decoded::Rgb)
            .map_err(|e| image_err(path, e.to_string()))
    }
}

/// Reads an RGB image; gray files are expanded to three equal channels.
pub fn read_rgb(path: &Path) -> Result<ImageU8> {
    match decode(path)? {
        Decoded::Rgb(img) => Ok(img),
        Decoded::Gray { height, width, data } => {
            let rgb = data.iter().flat_map(|&v| [v, v, v]).collect();
            ImageU8::new(height, width, rgb).map_err(|e| image_err(path, e.to_string()))
        }
    }
}

/// Reads a 4-bit gray view: gray files map `v -> v / 16`, RGB files are quantized by luma.
pub fn read_gray4(path: &Path) -> Result<GrayImage4> {
    match decode(path)? {
        Decoded::Rgb(img) => Ok(crate::auxiliary::quantize_grayscale(&img)),
        Decoded::Gray { height, width, data } => {
            GrayImage4::from_gray8(height, width, &data).map_err(|e| image_err(path, e.to_string()))
        }
    }
}

pub fn write_rgb(path: &Path, img: &ImageU8) -> Result<()> {
    let buf = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, img.data().to_vec())
        .expect("buffer matches dimensions");
    buf.save_with_format(path, ImageFormat::Png)
        .map_err(|e| image_err(path, e.to_string()))
}

pub fn write_gray4(path: &Path, img: &GrayImage4) -> Result<()> {
    let buf = image::GrayImage::from_raw(img.width() as u32, img.height() as u32, img.to_gray8())
        .expect("buffer matches dimensions");
    buf.save_with_format(path, ImageFormat::Png)
        .map_err(|e| image_err(path, e.to_string()))
}

/// Tiles equally sized images row-major into a `rows x cols` grid; missing cells stay black.
pub fn grid(images: &[ImageU8], rows: usize, cols: usize) -> Result<ImageU8> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidArgument("grid of zero images".into()))?;
    if images.len() > rows * cols {
        return Err(Error::InvalidArgument(format!(
            "{} images do not fit a {rows}x{cols} grid",
            images.len()
        )));
    }
    let (h, w) = (first.height(), first.width());
    let mut out = ImageU8::filled(rows * h, cols * w, [0, 0, 0])?;
    for (i, img) in images.iter().enumerate() {
        if (img.height(), img.width()) != (h, w) {
            return Err(Error::InvalidArgument("grid images differ in size".into()));
        }
        let (r, c) = (i / cols, i % cols);
        for y in 0..h {
            for x in 0..w {
                out.set_pixel(r * h + y, c * w + x, img.pixel(y, x));
            }
        }
    }
    Ok(out)
}

/// Pyramid levels (finest first) upscaled by pixel repetition to the finest
/// size and placed left to right, coarsest first.
pub fn level_panel(levels: &[ImageU8]) -> Result<ImageU8> {
    let finest = levels
        .first()
        .ok_or_else(|| Error::InvalidArgument("panel of zero levels".into()))?;
    let (h, w) = (finest.height(), finest.width());
    let mut out = ImageU8::filled(h, w * levels.len(), [0, 0, 0])?;
    for (slot, img) in levels.iter().rev().enumerate() {
        let (sy, sx) = (h / img.height(), w / img.width());
        for y in 0..h {
            for x in 0..w {
                out.set_pixel(y, slot * w + x, img.pixel(y / sy, x / sx));
            }
        }
    }
    Ok(out)
}
