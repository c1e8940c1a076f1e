//! Dense float images and binary masks.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major, channel-interleaved float image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
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
        Self { width, height, channels, data: vec![value; width * height * channels] }
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::Shape { expected: width * height * channels, found: data.len() });
        }
        Ok(Self { width, height, channels, data })
    }

    /// RGB image filled with one color.
    pub fn solid(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut img = Self::new(width, height, 3);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[self.idx(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        let i = self.idx(x, y, c);
        self.data[i] = v;
    }

    pub fn same_shape(&self, o: &Image) -> bool {
        self.width == o.width && self.height == o.height && self.channels == o.channels
    }

    pub fn check_same_shape(&self, o: &Image) -> Result<()> {
        if self.same_shape(o) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                left: (self.width, self.height, self.channels),
                right: (o.width, o.height, o.channels),
            })
        }
    }

    /// Element-wise product with a binary mask broadcast over channels.
    pub fn masked(&self, mask: &Mask) -> Image {
        let mut out = self.clone();
        for (p, m) in mask.data.iter().enumerate() {
            if !*m {
                for c in 0..self.channels {
                    out.data[p * self.channels + c] = 0.0;
                }
            }
        }
        out
    }

    /// Single channel as its own image.
    pub fn channel(&self, c: usize) -> Image {
        let data = self.data.iter().skip(c).step_by(self.channels).copied().collect();
        Image { width: self.width, height: self.height, channels: 1, data }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image { width: self.width, height: self.height, channels: self.channels, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, o: &Image) -> f64 {
        self.data.iter().zip(&o.data).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Binary per-pixel mask.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, value: bool) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self::new(width, height, true)
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self::new(width, height, false)
    }

    pub fn from_threshold(img: &Image, channel: usize, threshold: f64) -> Self {
        let data = (0..img.pixel_count()).map(|p| img.data[p * img.channels + channel] > threshold).collect();
        Self { width: img.width, height: img.height, data }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|v| **v).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn and(&self, o: &Mask) -> Mask {
        let data = self.data.iter().zip(&o.data).map(|(a, b)| *a && *b).collect();
        Mask { width: self.width, height: self.height, data }
    }

    pub fn matches(&self, img: &Image) -> Result<()> {
        if self.width == img.width && self.height == img.height {
            Ok(())
        } else {
            Err(Error::ShapeMismatch { left: (self.width, self.height, 1), right: (img.width, img.height, 1) })
        }
    }
}
