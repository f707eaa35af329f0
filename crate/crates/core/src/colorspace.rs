//! RGB ↔ YUV conversion and PNG I/O.
//!
//! 8-bit RGB is scaled to `[0, 1]` and converted with the full-range BT.601
//! matrix: `Y = 0.299 R + 0.587 G + 0.114 B`, with the chroma differences
//! scaled so that `U = (B - Y) / 1.772` and `V = (R - Y) / 1.402` span exactly
//! `[-0.5, 0.5]` over the RGB cube. All three components are then mapped to
//! `[-1, 1]` (`Y' = 2Y - 1`, `U' = 2U`, `V' = 2V`) and clamped half a bin
//! inward, as the binning module requires.
//!
//! The inverse applies the exact algebraic inverse of the unclamped forward
//! transform, then rounds to 8 bits. Round trips are accurate to ±1 per
//! component on the gray axis and ±2 in general (the clamp at the range ends
//! accounts for the difference).

use std::path::Path;

use crate::binning::{BinningConfig, Channel};
use crate::error::{Error, Result};

const U_SCALE: f64 = 1.0 / 1.772;
const V_SCALE: f64 = 1.0 / 1.402;

/// An 8-bit RGB image, interleaved row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRgb8 {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl ImageRgb8 {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(
                "image dimensions must be positive".into(),
            ));
        }
        if data.len() != width * height * 3 {
            return Err(Error::LengthMismatch {
                expected: width * height * 3,
                actual: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Reads an 8-bit RGB PNG; an alpha channel, if present, is dropped.
    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?.to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        Self::new(w, h, img.into_raw())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let buf: image::RgbImage =
            image::ImageBuffer::from_raw(self.width as u32, self.height as u32, self.data.clone())
                .expect("buffer length was validated at construction");
        buf.save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }
}

/// Three YUV channels mapped to `[-1, 1]` and clamped to the histogram range.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageYuv {
    y: Channel,
    u: Channel,
    v: Channel,
}

impl ImageYuv {
    pub fn new(y: Channel, u: Channel, v: Channel) -> Result<Self> {
        for c in [&u, &v] {
            if c.height() != y.height() || c.width() != y.width() {
                return Err(Error::ShapeMismatch {
                    expected_height: y.height(),
                    expected_width: y.width(),
                    height: c.height(),
                    width: c.width(),
                });
            }
        }
        Ok(Self { y, u, v })
    }

    pub fn y(&self) -> &Channel {
        &self.y
    }

    pub fn u(&self) -> &Channel {
        &self.u
    }

    pub fn v(&self) -> &Channel {
        &self.v
    }

    pub fn channels(&self) -> [&Channel; 3] {
        [&self.y, &self.u, &self.v]
    }

    pub fn height(&self) -> usize {
        self.y.height()
    }

    pub fn width(&self) -> usize {
        self.y.width()
    }

    pub fn same_shape(&self, other: &ImageYuv) -> bool {
        self.height() == other.height() && self.width() == other.width()
    }
}

/// Converts 8-bit RGB to clamped YUV channels.
pub fn rgb_to_yuv(img: &ImageRgb8, config: &BinningConfig) -> ImageYuv {
    let n = img.pixel_count();
    let mut y = Vec::with_capacity(n);
    let mut u = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    for px in img.data().chunks_exact(3) {
        let r = px[0] as f64 / 255.0;
        let g = px[1] as f64 / 255.0;
        let b = px[2] as f64 / 255.0;
        let luma = 0.299 * r + 0.587 * g + 0.114 * b;
        let cu = ((b - luma) * U_SCALE).clamp(-0.5, 0.5);
        let cv = ((r - luma) * V_SCALE).clamp(-0.5, 0.5);
        y.push(config.clamp(2.0 * luma - 1.0));
        u.push(config.clamp(2.0 * cu));
        v.push(config.clamp(2.0 * cv));
    }
    let (h, w) = (img.height(), img.width());
    ImageYuv {
        y: Channel::new(h, w, y).expect("clamped values are in range"),
        u: Channel::new(h, w, u).expect("clamped values are in range"),
        v: Channel::new(h, w, v).expect("clamped values are in range"),
    }
}

/// Converts YUV channels back to 8-bit RGB, rounding to nearest and clipping
/// to `[0, 255]`.
pub fn yuv_to_rgb(img: &ImageYuv) -> ImageRgb8 {
    let n = img.y.pixel_count();
    let mut data = Vec::with_capacity(n * 3);
    for ((&yy, &uu), &vv) in img
        .y
        .values()
        .iter()
        .zip(img.u.values())
        .zip(img.v.values())
    {
        let luma = (yy + 1.0) / 2.0;
        let cu = uu / 2.0;
        let cv = vv / 2.0;
        let r = cv / V_SCALE + luma;
        let b = cu / U_SCALE + luma;
        let g = (luma - 0.299 * r - 0.114 * b) / 0.587;
        for c in [r, g, b] {
            data.push((c * 255.0).round().clamp(0.0, 255.0) as u8);
        }
    }
    ImageRgb8 {
        width: img.width(),
        height: img.height(),
        data,
    }
}
