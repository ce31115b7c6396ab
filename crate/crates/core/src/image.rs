//! Linear-RGB raster plus PNG input/output at the sRGB boundary.

use std::fs;
use std::io::Write;
use std::path::Path;

use image::codecs::png::PngEncoder;
use image::{ExtendedColorType, ImageEncoder};

use crate::colorimetry::{srgb_decode_channel, srgb_encode_channel, LinearRgb};
use crate::error::{Error, Result};

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Roi {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

/// Row-major image of linear RGB pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    pixels: Vec<[f64; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<[f64; 3]>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::Shape(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, color: LinearRgb) -> Self {
        Self {
            width,
            height,
            pixels: vec![color.to_array(); width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [[f64; 3]] {
        &mut self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, px: [f64; 3]) {
        self.pixels[y * self.width + x] = px;
    }

    /// Pixels of `roi`, row by row.
    pub fn region(&self, roi: Roi) -> impl Iterator<Item = [f64; 3]> + '_ {
        (roi.y..roi.y + roi.height).flat_map(move |y| {
            let start = y * self.width + roi.x;
            self.pixels[start..start + roi.width].iter().copied()
        })
    }

    pub fn full_roi(&self) -> Roi {
        Roi {
            x: 0,
            y: 0,
            width: self.width,
            height: self.height,
        }
    }

    pub fn contains_roi(&self, roi: Roi) -> bool {
        roi.x + roi.width <= self.width && roi.y + roi.height <= self.height
    }

    /// Decodes interleaved 8-bit sRGB samples.
    pub fn from_srgb8(width: usize, height: usize, data: &[u8]) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Shape(format!(
                "{} bytes for a {width}x{height} RGB image",
                data.len()
            )));
        }
        let lut: Vec<f64> = (0..=255u8)
            .map(|v| srgb_decode_channel(f64::from(v)))
            .collect();
        let pixels = data
            .chunks_exact(3)
            .map(|p| [lut[p[0] as usize], lut[p[1] as usize], lut[p[2] as usize]])
            .collect();
        Self::new(width, height, pixels)
    }

    /// Encodes to interleaved 8-bit sRGB, rounding to the nearest code.
    pub fn to_srgb8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .flat_map(|p| p.map(quantize8))
            .collect()
    }

    pub fn to_srgb16(&self) -> Vec<u16> {
        self.pixels
            .iter()
            .flat_map(|p| {
                p.map(|v| {
                    let d = srgb_encode_channel(v) / 255.0;
                    (d * 65535.0).round().clamp(0.0, 65535.0) as u16
                })
            })
            .collect()
    }
}

pub(crate) fn quantize8(linear: f64) -> u8 {
    srgb_encode_channel(linear).round().clamp(0.0, 255.0) as u8
}

/// Reads an 8- or 16-bit PNG (RGB, RGBA, gray) as linear RGB. Alpha is
/// discarded.
pub fn load_png(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let sixteen = matches!(
        img.color(),
        image::ColorType::Rgb16 | image::ColorType::Rgba16 | image::ColorType::L16 | image::ColorType::La16
    );
    if sixteen {
        let buf = img.to_rgb16();
        let pixels = buf
            .pixels()
            .map(|p| p.0.map(|v| srgb_decode_channel(f64::from(v) * 255.0 / 65535.0)))
            .collect();
        RgbImage::new(w, h, pixels)
    } else {
        let buf = img.to_rgb8();
        RgbImage::from_srgb8(w, h, buf.as_raw())
    }
}

fn encode_png(data: &[u8], width: usize, height: usize, color: ExtendedColorType) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    PngEncoder::new(&mut out)
        .write_image(data, width as u32, height as u32, color)
        .map_err(|e| Error::Image {
            path: "<memory>".into(),
            message: e.to_string(),
        })?;
    Ok(out)
}

/// PNG bytes of an 8-bit sRGB encoding of `img`.
pub fn encode_png_rgb8(img: &RgbImage) -> Result<Vec<u8>> {
    encode_png(&img.to_srgb8(), img.width, img.height, ExtendedColorType::Rgb8)
}

pub fn encode_png_gray8(data: &[u8], width: usize, height: usize) -> Result<Vec<u8>> {
    if data.len() != width * height {
        return Err(Error::Shape(format!(
            "{} bytes for a {width}x{height} gray image",
            data.len()
        )));
    }
    encode_png(data, width, height, ExtendedColorType::L8)
}

pub fn save_png_rgb8(path: impl AsRef<Path>, img: &RgbImage) -> Result<()> {
    write_atomic(path, &encode_png_rgb8(img)?)
}

/// 16-bit sRGB PNG, used where 8-bit quantization is too coarse.
pub fn save_png_rgb16(path: impl AsRef<Path>, img: &RgbImage) -> Result<()> {
    let bytes: Vec<u8> = img
        .to_srgb16()
        .iter()
        .flat_map(|v| v.to_ne_bytes())
        .collect();
    let png = encode_png(&bytes, img.width, img.height, ExtendedColorType::Rgb16)?;
    write_atomic(path, &png)
}

pub fn save_png_gray8(path: impl AsRef<Path>, data: &[u8], width: usize, height: usize) -> Result<()> {
    write_atomic(path, &encode_png_gray8(data, width, height)?)
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::Validation(format!("bad output path {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
