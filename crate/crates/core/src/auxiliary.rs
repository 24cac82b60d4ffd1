//! Discrete image containers and the deterministic auxiliary views: 4-bit
//! grayscale quantization, ×2 box downsampling and the recursive pyramid.

use crate::error::{Error, Result};

/// 8-bit RGB image, interleaved row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ImageU8 {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl ImageU8 {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument("image dimensions must be >= 1".into()));
        }
        if data.len() != height * width * 3 {
            return Err(Error::InvalidArgument(format!(
                "{height}x{width} RGB image needs {} bytes, got {}",
                height * width * 3,
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, rgb: [u8; 3]) -> Result<Self> {
        Self::new(height, width, rgb.repeat(height * width))
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Channel-major copy (`[3, H, W]`).
    pub fn planar(&self) -> Vec<u8> {
        let n = self.height * self.width;
        let mut out = vec![0; 3 * n];
        for (i, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * n + i] = px[c];
            }
        }
        out
    }

    pub fn from_planar(height: usize, width: usize, planar: &[u8]) -> Result<Self> {
        let n = height * width;
        if planar.len() != 3 * n {
            return Err(Error::InvalidArgument("planar buffer size".into()));
        }
        let mut data = vec![0; 3 * n];
        for i in 0..n {
            for c in 0..3 {
                data[i * 3 + c] = planar[c * n + i];
            }
        }
        Self::new(height, width, data)
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                out.set_pixel(y, self.width - 1 - x, self.pixel(y, x));
            }
        }
        out
    }

    /// Removes the given margins from each side.
    pub fn crop(&self, left: usize, right: usize, top: usize, bottom: usize) -> Result<Self> {
        if left + right >= self.width || top + bottom >= self.height {
            return Err(Error::InvalidArgument(format!(
                "crop margins exceed {}x{} image",
                self.height, self.width
            )));
        }
        let (h, w) = (self.height - top - bottom, self.width - left - right);
        let mut data = Vec::with_capacity(h * w * 3);
        for y in top..top + h {
            let row = (y * self.width + left) * 3;
            data.extend_from_slice(&self.data[row..row + w * 3]);
        }
        Self::new(h, w, data)
    }
}

/// Single-channel image with values in `0..=15`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GrayImage4 {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl GrayImage4 {
    pub const LEVELS: u8 = 16;

    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::InvalidArgument(format!(
                "{height}x{width} gray image needs {} bytes, got {}",
                height * width,
                data.len()
            )));
        }
        if let Some(&v) = data.iter().find(|&&v| v >= Self::LEVELS) {
            return Err(Error::ValueOutOfRange {
                what: "4-bit grayscale level",
                value: v as i64,
            });
        }
        Ok(Self { height, width, data })
    }

    /// 4-bit levels from 8-bit gray values via `floor(v / 16)`.
    pub fn from_gray8(height: usize, width: usize, gray: &[u8]) -> Result<Self> {
        Self::new(height, width, gray.iter().map(|v| v / 16).collect())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    /// Expands levels back to 8-bit gray for display (`level * 17`).
    pub fn to_gray8(&self) -> Vec<u8> {
        self.data.iter().map(|v| v * 17).collect()
    }
}

/// BT.601 luma quantized to 16 levels: `floor((0.299R + 0.587G + 0.114B) / 16)`.
///
/// Evaluated in exact integer arithmetic (luma scaled by 1000), so a gray
/// input `R = G = B = v` maps to exactly `floor(v / 16)`.
pub fn quantize_grayscale(img: &ImageU8) -> GrayImage4 {
    let data = img
        .data
        .chunks_exact(3)
        .map(|p| {
            let luma_milli = 299 * p[0] as u32 + 587 * p[1] as u32 + 114 * p[2] as u32;
            (luma_milli / 16_000).min(15) as u8
        })
        .collect();
    GrayImage4 {
        height: img.height,
        width: img.width,
        data,
    }
}

/// Averages each 2×2 block per channel, rounding halves up.
pub fn downsample2x(img: &ImageU8) -> Result<ImageU8> {
    if !img.height.is_multiple_of(2) || !img.width.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "downsample2x needs even dimensions, got {}x{}",
            img.height, img.width
        )));
    }
    let (h, w) = (img.height / 2, img.width / 2);
    let mut data = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let at = |yy: usize, xx: usize| img.data[(yy * img.width + xx) * 3 + c] as u32;
                let s = at(2 * y, 2 * x) + at(2 * y, 2 * x + 1) + at(2 * y + 1, 2 * x) + at(2 * y + 1, 2 * x + 1);
                data.push(((s + 2) / 4) as u8);
            }
        }
    }
    ImageU8::new(h, w, data)
}

/// Number of levels and base resolution of an image pyramid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PyramidSpec {
    levels: usize,
    height: usize,
    width: usize,
}

impl PyramidSpec {
    pub fn new(levels: usize, height: usize, width: usize) -> Result<Self> {
        if levels == 0 {
            return Err(Error::InvalidArgument("pyramid needs at least one level".into()));
        }
        let div = 1usize
            .checked_shl(levels as u32 - 1)
            .ok_or_else(|| Error::InvalidArgument("too many pyramid levels".into()))?;
        if !height.is_multiple_of(div) || !width.is_multiple_of(div) || height < div || width < div {
            return Err(Error::InvalidArgument(format!(
                "{height}x{width} is not divisible by 2^{} for a {levels}-level pyramid",
                levels - 1
            )));
        }
        Ok(Self { levels, height, width })
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    /// `(height, width)` per level, finest first.
    pub fn resolutions(&self) -> Vec<(usize, usize)> {
        (0..self.levels).map(|l| (self.height >> l, self.width >> l)).collect()
    }

    pub fn resolution(&self, level: usize) -> (usize, usize) {
        (self.height >> level, self.width >> level)
    }
}

/// `levels` views of `img`, finest first; each level halves the previous one.
pub fn build_pyramid(img: &ImageU8, levels: usize) -> Result<Vec<ImageU8>> {
    PyramidSpec::new(levels, img.height, img.width)?;
    let mut out = Vec::with_capacity(levels);
    out.push(img.clone());
    for l in 1..levels {
        let next = downsample2x(&out[l - 1])?;
        out.push(next);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn px(rgb: [u8; 3]) -> u8 {
        quantize_grayscale(&ImageU8::filled(1, 1, rgb).unwrap()).get(0, 0)
    }

    #[test]
    fn quantize_examples() {
        assert_eq!(px([0, 0, 0]), 0);
        assert_eq!(px([255, 255, 255]), 15);
        assert_eq!(px([255, 0, 0]), 4);
    }

    #[test]
    fn downsample_examples() {
        let c = ImageU8::filled(4, 4, [7, 99, 250]).unwrap();
        assert_eq!(downsample2x(&c).unwrap(), ImageU8::filled(2, 2, [7, 99, 250]).unwrap());

        let block = ImageU8::new(2, 2, [10, 20, 30, 40].iter().flat_map(|&v| [v; 3]).collect()).unwrap();
        assert_eq!(downsample2x(&block).unwrap().pixel(0, 0), [25; 3]);

        let checker = ImageU8::new(2, 2, [0, 255, 255, 0].iter().flat_map(|&v| [v; 3]).collect()).unwrap();
        assert_eq!(downsample2x(&checker).unwrap().pixel(0, 0), [128; 3]);

        assert!(downsample2x(&ImageU8::filled(3, 4, [0; 3]).unwrap()).is_err());
    }

    #[test]
    fn pyramid_resolutions() {
        let img = ImageU8::filled(128, 128, [1, 2, 3]).unwrap();
        let levels = build_pyramid(&img, 5).unwrap();
        let res: Vec<usize> = levels.iter().map(|l| l.height()).collect();
        assert_eq!(res, vec![128, 64, 32, 16, 8]);
        assert_eq!(build_pyramid(&img, 1).unwrap(), vec![img.clone()]);

        let small = ImageU8::filled(8, 8, [5, 5, 5]).unwrap();
        let two = build_pyramid(&small, 2).unwrap();
        assert_eq!(two[1], ImageU8::filled(4, 4, [5, 5, 5]).unwrap());

        assert!(build_pyramid(&ImageU8::filled(12, 12, [0; 3]).unwrap(), 4).is_err());
        assert!(build_pyramid(&img, 0).is_err());
    }

    #[test]
    fn crop_and_flip() {
        let img = ImageU8::new(1, 3, vec![1, 1, 1, 2, 2, 2, 3, 3, 3]).unwrap();
        assert_eq!(img.flip_horizontal().pixel(0, 0), [3; 3]);
        let big = ImageU8::filled(218, 178, [0; 3]).unwrap();
        let c = big.crop(25, 25, 50, 40).unwrap();
        assert_eq!((c.height(), c.width()), (128, 128));
    }

    fn arb_image(max: usize) -> impl Strategy<Value = ImageU8> {
        (1..=max, 1..=max).prop_flat_map(|(h, w)| {
            proptest::collection::vec(any::<u8>(), h * w * 3)
                .prop_map(move |d| ImageU8::new(2 * h, 2 * w, d.repeat(4)).unwrap())
        })
    }

    proptest! {
        #[test]
        fn gray_input_quantizes_to_floor(v in any::<u8>()) {
            prop_assert_eq!(px([v, v, v]), v / 16);
        }

        #[test]
        fn quantized_levels_stay_in_range(rgb in any::<[u8; 3]>()) {
            prop_assert!(px(rgb) <= 15);
        }

        #[test]
        fn pyramid_suffix_is_consistent(img in arb_image(8).prop_filter("div4", |i| i.height() % 4 == 0 && i.width() % 4 == 0)) {
            let levels = build_pyramid(&img, 3).unwrap();
            let rebuilt = build_pyramid(&levels[1], 2).unwrap();
            prop_assert_eq!(&levels[1..], &rebuilt[..]);
        }
    }
}
