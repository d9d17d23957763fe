//! HDR image container plus PFM and PNG codecs.

use std::fs;
use std::io::Write;
use std::path::Path;

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ExtendedColorType, ImageEncoder};

use crate::error::{Error, Result};
use crate::train::tonemap::tonemap_scalar;

/// Linear RGB image stored top row first.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[f32; 3]>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Image {
            width,
            height,
            pixels: vec![[0.0; 3]; width * height],
        }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<[f32; 3]>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(Image {
            width,
            height,
            pixels,
        })
    }

    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, c: [f32; 3]) {
        self.pixels[y * self.width + x] = c;
    }

    pub fn add(&self, other: &Image) -> Result<Image> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(Error::InvalidArgument("image size mismatch".into()));
        }
        let pixels = self
            .pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| [a[0] + b[0], a[1] + b[1], a[2] + b[2]])
            .collect();
        Ok(Image {
            width: self.width,
            height: self.height,
            pixels,
        })
    }

    pub fn scaled(&self, k: f32) -> Image {
        Image {
            width: self.width,
            height: self.height,
            pixels: self
                .pixels
                .iter()
                .map(|p| [p[0] * k, p[1] * k, p[2] * k])
                .collect(),
        }
    }

    /// Negative channels set to zero; used only when an image leaves the
    /// renderer.
    pub fn clamp_negative(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            pixels: self
                .pixels
                .iter()
                .map(|p| [p[0].max(0.0), p[1].max(0.0), p[2].max(0.0)])
                .collect(),
        }
    }
}

pub fn write_pfm(path: &Path, img: &Image) -> Result<()> {
    fs::write(path, encode_pfm(img)).map_err(|e| Error::io(path, e))
}

pub fn encode_pfm(img: &Image) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + img.pixels.len() * 12);
    // Negative scale marks little-endian data.
    write!(out, "PF\n{} {}\n-1.0\n", img.width, img.height).unwrap();
    for y in (0..img.height).rev() {
        for x in 0..img.width {
            for c in img.get(x, y) {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
    }
    out
}

pub fn read_pfm(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pfm(&bytes)
}

pub fn decode_pfm(bytes: &[u8]) -> Result<Image> {
    let bad = |msg: &str| Error::format("PFM", msg.to_string());
    // Header is three whitespace-separated tokens lines: kind, dims, scale.
    let mut tokens = Vec::new();
    let mut pos = 0;
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ascii header"))?);
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let channels = match tokens[0] {
        "PF" => 3,
        "Pf" => 1,
        other => return Err(bad(&format!("unknown magic {other:?}"))),
    };
    let width: usize = tokens[1].parse().map_err(|_| bad("bad width"))?;
    let height: usize = tokens[2].parse().map_err(|_| bad("bad height"))?;
    let scale: f32 = tokens[3].parse().map_err(|_| bad("bad scale"))?;
    if width == 0 || height == 0 {
        return Err(bad("non-positive resolution"));
    }
    let little = scale < 0.0;
    let need = width * height * channels * 4;
    if bytes.len() < pos + need {
        return Err(bad("truncated raster"));
    }
    let raster = &bytes[pos..pos + need];
    let mut img = Image::new(width, height);
    let mut vals = raster.chunks_exact(4).map(|b| {
        let arr = [b[0], b[1], b[2], b[3]];
        if little {
            f32::from_le_bytes(arr)
        } else {
            f32::from_be_bytes(arr)
        }
    });
    for y in (0..height).rev() {
        for x in 0..width {
            let c = if channels == 3 {
                [vals.next().unwrap(), vals.next().unwrap(), vals.next().unwrap()]
            } else {
                let g = vals.next().unwrap();
                [g, g, g]
            };
            img.set(x, y, c);
        }
    }
    Ok(img)
}

fn srgb_encode(x: f32) -> f32 {
    if x <= 0.003_130_8 {
        12.92 * x
    } else {
        1.055 * x.powf(1.0 / 2.4) - 0.055
    }
}

/// 8-bit display values: mu-law tonemap, clamp, sRGB transfer curve.
pub fn display_rgb8(img: &Image) -> Vec<u8> {
    img.pixels
        .iter()
        .flat_map(|p| {
            p.map(|c| {
                let t = tonemap_scalar(c as f64, 10.0, 1.0).clamp(0.0, 1.0) as f32;
                (srgb_encode(t) * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
            })
        })
        .collect()
}

pub fn encode_png(img: &Image) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let enc = PngEncoder::new_with_quality(&mut out, CompressionType::Default, FilterType::Adaptive);
    enc.write_image(
        &display_rgb8(img),
        img.width as u32,
        img.height as u32,
        ExtendedColorType::Rgb8,
    )?;
    Ok(out)
}

pub fn write_png(path: &Path, img: &Image) -> Result<()> {
    let bytes = encode_png(img)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
