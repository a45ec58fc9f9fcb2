//! Floating-point image buffers and PNG I/O.

use std::path::Path;

use crate::error::{Error, Result};

/// Row-major, channel-interleaved `f64` image.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::ShapeMismatch(format!(
                "{}x{}x{} image needs {} values, got {}",
                width,
                height,
                channels,
                width * height * channels,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    #[inline]
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn ensure_same_shape(&self, other: &Image) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "{}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, other.width, other.height, other.channels
            )))
        }
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        match self.channels {
            1 => {
                let buf: Vec<u8> = self.data.iter().map(|&v| q(v)).collect();
                image::GrayImage::from_raw(self.width as u32, self.height as u32, buf)
                    .expect("buffer sized by construction")
                    .save(path)?;
            }
            3 => {
                let buf: Vec<u8> = self.data.iter().map(|&v| q(v)).collect();
                image::RgbImage::from_raw(self.width as u32, self.height as u32, buf)
                    .expect("buffer sized by construction")
                    .save(path)?;
            }
            c => {
                return Err(Error::InvalidInput(format!(
                    "cannot write {c}-channel image as PNG"
                )))
            }
        }
        Ok(())
    }

    /// Writes a 3-channel image as 16-bit-per-channel PNG, values scaled by `scale`
    /// per channel before rounding.
    pub fn save_png16(&self, path: impl AsRef<Path>, scale: [f64; 3]) -> Result<()> {
        if self.channels != 3 {
            return Err(Error::InvalidInput("16-bit export expects 3 channels".into()));
        }
        let buf: Vec<u16> = self
            .data
            .iter()
            .enumerate()
            .map(|(i, &v)| (v * scale[i % 3]).round().clamp(0.0, 65535.0) as u16)
            .collect();
        image::ImageBuffer::<image::Rgb<u16>, Vec<u16>>::from_raw(
            self.width as u32,
            self.height as u32,
            buf,
        )
        .expect("buffer sized by construction")
        .save(path)?;
        Ok(())
    }

    /// Loads an 8-bit PNG as RGB in `[0,1]`.
    pub fn load_png_rgb(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path)?.to_rgb8();
        let (w, h) = img.dimensions();
        let data = img.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
        Self::from_data(w as usize, h as usize, 3, data)
    }

    /// Values rounded through 8-bit quantization, as written by [`Image::save_png`].
    pub fn quantized(&self) -> Image {
        let mut out = self.clone();
        for v in &mut out.data {
            *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
        }
        out
    }
}
