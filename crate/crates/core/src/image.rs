//! Single-channel float images and their file formats.
//!
//! * 16-bit binary PGM (`P5`, maxval 65535, big-endian samples), min-max
//!   normalized.
//! * 16-bit grayscale PNG with the same samples as the PGM export.
//! * Raw little-endian float32 with a JSON sidecar, lossless.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::io::{grid_paths, read_json, write_json};

/// Row-major image, `pixels[y * width + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image2D {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
}

impl Image2D {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter(format!("image size must be >= 1, got {width}x{height}")));
        }
        if pixels.len() != width * height {
            return Err(Error::SizeMismatch {
                expected: width * height,
                found: pixels.len(),
            });
        }
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("image pixels must be finite".into()));
        }
        Ok(Image2D { width, height, pixels })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Image2D {
            width,
            height,
            pixels: vec![0.0; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f32) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Image2D { width, height, pixels }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f32] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<f32> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.pixels[y * self.width + x] = v;
    }

    /// Clamp-to-edge access with signed coordinates.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f32 {
        let xi = x.clamp(0, self.width as isize - 1) as usize;
        let yi = y.clamp(0, self.height as isize - 1) as usize;
        self.pixels[yi * self.width + xi]
    }

    /// Bilinear sample at continuous pixel-center coordinates, clamped at the border.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let (tx, ty) = (x - x0, y - y0);
        let (xi, yi) = (x0 as isize, y0 as isize);
        let a = self.get_clamped(xi, yi) as f64;
        let b = self.get_clamped(xi + 1, yi) as f64;
        let c = self.get_clamped(xi, yi + 1) as f64;
        let d = self.get_clamped(xi + 1, yi + 1) as f64;
        (a * (1.0 - tx) + b * tx) * (1.0 - ty) + (c * (1.0 - tx) + d * tx) * ty
    }

    pub fn same_size(&self, other: &Image2D) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Image2D {
        Image2D {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.pixels
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().map(|&v| v as f64).sum::<f64>() / self.pixels.len() as f64
    }

    /// Min-max rescale to [0, 1]; a constant image maps to zeros.
    pub fn normalized(&self) -> Image2D {
        let (lo, hi) = self.min_max();
        let range = hi - lo;
        if range <= 0.0 {
            return Image2D::zeros(self.width, self.height);
        }
        self.map(|v| (v - lo) / range)
    }

    /// `max - v` for every pixel.
    pub fn inverted(&self) -> Image2D {
        let (_, hi) = self.min_max();
        self.map(|v| hi - v)
    }

    /// Rotate by 90 degrees counter-clockwise (as displayed, y down).
    pub fn rotated_90(&self) -> Image2D {
        let (w, h) = (self.width, self.height);
        Image2D::from_fn(h, w, |x, y| self.get(w - 1 - y, x))
    }

    /// 16-bit samples after min-max normalization.
    pub fn to_u16(&self) -> Vec<u16> {
        let (lo, hi) = self.min_max();
        let range = (hi - lo) as f64;
        self.pixels
            .iter()
            .map(|&v| {
                if range <= 0.0 {
                    0
                } else {
                    (((v - lo) as f64 / range) * 65535.0).round().clamp(0.0, 65535.0) as u16
                }
            })
            .collect()
    }

    pub fn encode_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n65535\n", self.width, self.height).into_bytes();
        for s in self.to_u16() {
            out.extend_from_slice(&s.to_be_bytes());
        }
        out
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            enc.set_color(png::ColorType::Grayscale);
            enc.set_depth(png::BitDepth::Sixteen);
            let mut writer = enc
                .write_header()
                .map_err(|e| Error::Format(format!("png: {e}")))?;
            let mut data = Vec::with_capacity(self.pixels.len() * 2);
            for s in self.to_u16() {
                data.extend_from_slice(&s.to_be_bytes());
            }
            writer
                .write_image_data(&data)
                .map_err(|e| Error::Format(format!("png: {e}")))?;
        }
        Ok(out)
    }
}

pub fn save_pgm(img: &Image2D, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&img.encode_pgm()).map_err(|e| Error::io(path, e))
}

pub fn save_png(img: &Image2D, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, img.encode_png()?).map_err(|e| Error::io(path, e))
}

/// Parse a binary PGM (8- or 16-bit). Samples are returned unscaled.
pub fn decode_pgm(bytes: &[u8]) -> Result<Image2D> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PGM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    if fields[0] != "P5" {
        return Err(Error::Format(format!("not a binary PGM (magic {:?})", fields[0])));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad PGM header field {s:?}")));
    let (w, h, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!("bad PGM maxval {maxval}")));
    }
    let bps = if maxval > 255 { 2 } else { 1 };
    let need = w * h * bps;
    let raster = bytes.get(pos..).unwrap_or(&[]);
    if raster.len() < need {
        return Err(Error::SizeMismatch {
            expected: w * h,
            found: raster.len() / bps,
        });
    }
    let pixels = if bps == 2 {
        raster[..need]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f32)
            .collect()
    } else {
        raster[..need].iter().map(|&b| b as f32).collect()
    };
    Image2D::new(w, h, pixels)
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<Image2D> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes)
}

#[derive(Debug, Serialize, Deserialize)]
struct ImageHeader {
    width: usize,
    height: usize,
    #[serde(default = "float32")]
    dtype: String,
}

fn float32() -> String {
    "float32".into()
}

pub fn save_raw(img: &Image2D, path: impl AsRef<Path>) -> Result<()> {
    let (raw, side) = grid_paths(path.as_ref());
    let mut bytes = Vec::with_capacity(img.pixels.len() * 4);
    for v in &img.pixels {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&raw, bytes).map_err(|e| Error::io(&raw, e))?;
    write_json(
        &side,
        &ImageHeader {
            width: img.width,
            height: img.height,
            dtype: float32(),
        },
    )
}

pub fn load_raw(path: impl AsRef<Path>) -> Result<Image2D> {
    let (raw, side) = grid_paths(path.as_ref());
    let h: ImageHeader = read_json(&side)?;
    if h.dtype != "float32" {
        return Err(Error::Format(format!("unsupported dtype {:?}", h.dtype)));
    }
    let bytes = fs::read(&raw).map_err(|e| Error::io(&raw, e))?;
    if bytes.len() != h.width * h.height * 4 {
        return Err(Error::SizeMismatch {
            expected: h.width * h.height,
            found: bytes.len() / 4,
        });
    }
    let pixels = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Image2D::new(h.width, h.height, pixels)
}

/// Load by extension: `.pgm` or raw float32 otherwise.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image2D> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => load_pgm(path),
        _ => load_raw(path),
    }
}

/// Save by extension: `.pgm`, `.png`, or raw float32 otherwise.
pub fn save_image(img: &Image2D, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => save_pgm(img, path),
        Some("png") => save_png(img, path),
        _ => save_raw(img, path),
    }
}
