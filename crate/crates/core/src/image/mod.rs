//! Pixel container and the luminance projection.
//!
//! Images are `height × width × channels` tensors of `f64`, stored row-major
//! with channels interleaved (the PPM byte order). Nominal range is `[0, 1]`
//! but nothing here clamps except [`clamp01`].

mod io;

pub use io::{
    decode_lumf, decode_ppm, encode_lumf, encode_ppm, load_image, save_image, LUMF_MAGIC,
};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!(
                "channel count must be 1 or 3, got {channels}"
            )));
        }
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(Error::invalid(format!(
                "data length {} does not match {height}x{width}x{channels} = {expected}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite pixel value at index {i}")));
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Image::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Result<Self> {
        Image::filled(height, width, channels, 0.0)
    }

    /// Builds an image from `f(row, col, channel)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Image::new(height, width, channels, data)
    }

    /// Same shape as `self`, new data. Data must stay finite.
    pub(crate) fn with_data(&self, data: Vec<f64>) -> Image {
        debug_assert_eq!(data.len(), self.data.len());
        Image {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data,
        }
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

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Mutable access to a single element. Panics on non-finite values.
    pub fn set(&mut self, y: usize, x: usize, c: usize, value: f64) {
        assert!(value.is_finite(), "non-finite pixel value");
        let idx = (y * self.width + x) * self.channels + c;
        self.data[idx] = value;
    }

    /// Copies out the `h × w` window whose top-left corner is `(y, x)`.
    pub fn crop(&self, y: usize, x: usize, h: usize, w: usize) -> Result<Image> {
        if h == 0 || w == 0 || y + h > self.height || x + w > self.width {
            return Err(Error::invalid(format!(
                "crop {h}x{w} at ({y},{x}) exceeds {}x{} image",
                self.height, self.width
            )));
        }
        let c = self.channels;
        let mut data = Vec::with_capacity(h * w * c);
        for row in y..y + h {
            let start = (row * self.width + x) * c;
            data.extend_from_slice(&self.data[start..start + w * c]);
        }
        Ok(Image {
            height: h,
            width: w,
            channels: c,
            data,
        })
    }

    pub fn ensure_same_shape(&self, other: &Image) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::invalid(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    pub(crate) fn ensure_channels(&self, channels: usize, what: &str) -> Result<()> {
        if self.channels != channels {
            return Err(Error::invalid(format!(
                "{what} expects {channels}-channel input, got {}",
                self.channels
            )));
        }
        Ok(())
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &Image) -> Result<Image> {
        self.zip_map(other, |a, b| a - b)
    }

    /// Elementwise `self + other`.
    pub fn add(&self, other: &Image) -> Result<Image> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn scale(&self, k: f64) -> Image {
        self.map(|v| k * v)
    }

    /// Inner product over all elements.
    pub fn dot(&self, other: &Image) -> Result<f64> {
        self.ensure_same_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub(crate) fn map(&self, mut f: impl FnMut(f64) -> f64) -> Image {
        self.with_data(self.data.iter().map(|&v| f(v)).collect())
    }

    fn zip_map(&self, other: &Image, f: impl Fn(f64, f64) -> f64) -> Result<Image> {
        self.ensure_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(self.with_data(data))
    }
}

/// Grayscale projection coefficients for (R, G, B).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LuminanceWeights([f64; 3]);

impl LuminanceWeights {
    pub const DEFAULT: LuminanceWeights = LuminanceWeights([0.2989, 0.5870, 0.1140]);

    pub fn new(w: [f64; 3]) -> Result<Self> {
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid(format!(
                "luminance weights must be finite and nonnegative, got {w:?}"
            )));
        }
        Ok(LuminanceWeights(w))
    }

    pub fn as_array(&self) -> [f64; 3] {
        self.0
    }

    #[inline]
    pub fn project(&self, rgb: &[f64]) -> f64 {
        self.0[0] * rgb[0] + self.0[1] * rgb[1] + self.0[2] * rgb[2]
    }
}

impl Default for LuminanceWeights {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// Luminance image `w · (r, g, b)` per pixel. Not clamped or renormalised.
pub fn to_grayscale(img: &Image, w: &LuminanceWeights) -> Result<Image> {
    img.ensure_channels(3, "to_grayscale")?;
    let data = img.data.chunks_exact(3).map(|px| w.project(px)).collect();
    Image::new(img.height, img.width, 1, data)
}

/// Adjoint of [`to_grayscale`]: spreads each gradient back as `g · w[c]`.
pub fn grayscale_backward(grad_out: &Image, w: &LuminanceWeights) -> Result<Image> {
    grad_out.ensure_channels(1, "grayscale_backward")?;
    let [wr, wg, wb] = w.0;
    let mut data = Vec::with_capacity(grad_out.len() * 3);
    for &g in &grad_out.data {
        data.extend_from_slice(&[g * wr, g * wg, g * wb]);
    }
    Image::new(grad_out.height, grad_out.width, 3, data)
}

pub fn clamp01(img: &Image) -> Image {
    img.map(|v| v.clamp(0.0, 1.0))
}
