//! Binary PPM (P6) export.

use std::fs;
use std::path::Path;

use cal_tensor::Tensor;

use crate::error::{Result, SynthError};

/// 8-bit RGB raster, rows top to bottom, pixels interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PpmImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl PpmImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != 3 * width * height {
            return Err(SynthError::Ppm(format!(
                "{width}×{height} image needs {} bytes, got {}",
                3 * width * height,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        Self::new(width, height, rgb.repeat(width * height))
    }

    /// Converts a `3×H×W` tensor with values in `[0, 1]`; values outside are clamped.
    pub fn from_tensor(image: &Tensor) -> Result<Self> {
        let s = image.shape();
        if s.len() != 3 || s[0] != 3 {
            return Err(SynthError::Ppm(format!(
                "expected a 3×H×W image, got {s:?}"
            )));
        }
        let (h, w) = (s[1], s[2]);
        let plane = h * w;
        let d = image.data();
        let mut pixels = Vec::with_capacity(3 * plane);
        for p in 0..plane {
            for c in 0..3 {
                pixels.push(to_byte(d[c * plane + p]));
            }
        }
        Self::new(w, h, pixels)
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = 3 * (y * self.width + x);
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(fs::write(path, self.to_bytes())?)
    }
}

pub fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}
