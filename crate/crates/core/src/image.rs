//! RGB images with pixel values in `[0, 1]`.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// An image stored as `height × width × channels`, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<f32>) -> Result<Self> {
        if height < 3 || width < 3 {
            return Err(Error::Input(format!(
                "image must be at least 3x3, got {height}x{width}"
            )));
        }
        if channels == 0 || pixels.len() != height * width * channels {
            return Err(Error::Input(format!(
                "pixel buffer of length {} does not match {height}x{width}x{channels}",
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Input(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Image {
            height,
            width,
            channels,
            pixels,
        })
    }

    /// Builds an image from interleaved 8-bit RGB bytes.
    pub fn from_rgb8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        let pixels = bytes.iter().map(|&b| f32::from(b) / 255.0).collect();
        Image::new(height, width, 3, pixels)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Result<Self> {
        Image::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn load(path: &Path) -> Result<Self> {
        let decoded = image::open(path)
            .map_err(|e| Error::Input(format!("cannot load image {}: {e}", path.display())))?
            .to_rgb8();
        let (w, h) = decoded.dimensions();
        Image::from_rgb8(h as usize, w as usize, decoded.as_raw())
    }

    /// Writes an 8-bit PNG (values are rounded to the nearest level).
    pub fn save_png(&self, path: &Path) -> Result<()> {
        if self.channels != 3 {
            return Err(Error::Input("only 3-channel images can be saved".into()));
        }
        let bytes: Vec<u8> = self
            .pixels
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        let buffer = image::RgbImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer size checked at construction");
        buffer
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::Input(format!("cannot write {}: {e}", path.display())))
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    /// Sets every channel of pixel `(y, x)`. Values are clamped into `[0, 1]`.
    pub fn fill_pixel(&mut self, y: usize, x: usize, value: f32) {
        let start = (y * self.width + x) * self.channels;
        for v in &mut self.pixels[start..start + self.channels] {
            *v = value.clamp(0.0, 1.0);
        }
    }

    /// Applies `f` to every pixel value and clamps the result into `[0, 1]`.
    pub fn map_clamped(&self, mut f: impl FnMut(usize, f32) -> f32) -> Image {
        let pixels = self
            .pixels
            .iter()
            .enumerate()
            .map(|(i, &v)| f(i, v).clamp(0.0, 1.0))
            .collect();
        Image {
            pixels,
            ..*self
        }
    }

    /// Channel-major tensor `[channels, height, width]` for the network.
    pub fn to_tensor(&self) -> Tensor {
        let (h, w, c) = (self.height, self.width, self.channels);
        let mut data = vec![0.0; h * w * c];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    data[(ch * h + y) * w + x] = self.pixels[(y * w + x) * c + ch];
                }
            }
        }
        Tensor::new(vec![c, h, w], data)
    }

    /// Hex SHA-256 over the shape and the little-endian pixel bytes.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for dim in [self.height, self.width, self.channels] {
            hasher.update((dim as u64).to_le_bytes());
        }
        for v in &self.pixels {
            hasher.update(v.to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }
}

/// Shape-only view used where pixel data is not needed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ImageDims {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl From<&Image> for ImageDims {
    fn from(img: &Image) -> Self {
        ImageDims {
            height: img.height,
            width: img.width,
            channels: img.channels,
        }
    }
}
