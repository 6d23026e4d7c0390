//! Three-channel float images and their 8-bit PNG encoding.

use std::path::Path;

use crate::error::{Error, Result};

/// Row-major RGB image with `f64` channels, nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, [0.0; 3])
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::shape(width * height * 3, data.len()));
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn pixel(&self, index: usize) -> [f64; 3] {
        let o = index * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    pub fn set_pixel(&mut self, index: usize, rgb: [f64; 3]) {
        self.data[index * 3..index * 3 + 3].copy_from_slice(&rgb);
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn ensure_same_shape(&self, other: &Image) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::shape(
                format!("{}x{}", self.width, self.height),
                format!("{}x{}", other.width, other.height),
            ))
        }
    }

    pub fn mse(&self, other: &Image) -> Result<f64> {
        self.ensure_same_shape(other)?;
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(sum / self.data.len().max(1) as f64)
    }

    pub fn save_png(&self, path: impl AsRef<Path>, alpha: Option<&[f64]>) -> Result<()> {
        let (w, h) = (self.width as u32, self.height as u32);
        match alpha {
            None => {
                let buf: Vec<u8> = self.data.iter().map(|&v| to_u8(v)).collect();
                image::RgbImage::from_raw(w, h, buf)
                    .expect("buffer length matches dimensions")
                    .save(path)?;
            }
            Some(alpha) => {
                if alpha.len() != self.pixel_count() {
                    return Err(Error::shape(self.pixel_count(), alpha.len()));
                }
                let mut buf = Vec::with_capacity(self.pixel_count() * 4);
                for (px, &a) in self.data.chunks_exact(3).zip(alpha) {
                    buf.extend(px.iter().map(|&v| to_u8(v)));
                    buf.push(to_u8(a));
                }
                image::RgbaImage::from_raw(w, h, buf)
                    .expect("buffer length matches dimensions")
                    .save(path)?;
            }
        }
        Ok(())
    }

    /// Loads a PNG, dropping any alpha channel.
    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path)?.to_rgb8();
        let (w, h) = img.dimensions();
        let data = img.into_raw().into_iter().map(|v| f64::from(v) / 255.0).collect();
        Self::from_data(w as usize, h as usize, data)
    }
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_quantizes_to_8_bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let mut img = Image::new(3, 2);
        img.set_pixel(0, [1.0, 0.5, 0.0]);
        img.set_pixel(5, [0.2, 0.4, 0.6]);
        img.save_png(&path, None).unwrap();
        let back = Image::load_png(&path).unwrap();
        assert_eq!(back.width(), 3);
        assert_eq!(back.height(), 2);
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn rgba_png_carries_alpha() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let img = Image::filled(2, 2, [0.5; 3]);
        img.save_png(&path, Some(&[0.0, 1.0, 0.5, 1.0])).unwrap();
        let raw = image::open(&path).unwrap().to_rgba8();
        assert_eq!(raw.get_pixel(0, 0)[3], 0);
        assert_eq!(raw.get_pixel(1, 0)[3], 255);
        assert_eq!(raw.get_pixel(0, 1)[3], 128);
    }

    #[test]
    fn mse_rejects_shape_mismatch() {
        assert!(Image::new(2, 2).mse(&Image::new(2, 3)).is_err());
    }
}
