//! PNG codecs for frames (8-bit RGB), depth (16-bit millimeters) and masks (0/255).

use std::path::Path;

use dynsplat_core::image::{Image, Mask};
use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::error::{Result, RunError};

/// Depth units per scene unit on disk.
pub const DEPTH_SCALE: f64 = 1000.0;

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// The image as it would come back from an 8-bit round trip.
pub fn quantized(img: &Image) -> Image {
    let mut out = img.clone();
    out.data.iter_mut().for_each(|v| *v = quantize(*v) as f64 / 255.0);
    out
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| RunError::io(dir, e))?;
    }
    Ok(())
}

pub fn write_rgb(path: &Path, img: &Image) -> Result<()> {
    if img.channels != 3 {
        return Err(RunError::Data(format!("{}: expected 3 channels, got {}", path.display(), img.channels)));
    }
    let buf = RgbImage::from_fn(img.width as u32, img.height as u32, |x, y| {
        let i = img.idx(x as usize, y as usize, 0);
        Rgb([quantize(img.data[i]), quantize(img.data[i + 1]), quantize(img.data[i + 2])])
    });
    ensure_parent(path)?;
    buf.save(path).map_err(|e| RunError::io(path, e))
}

pub fn read_rgb(path: &Path) -> Result<Image> {
    let img = image::open(path).map_err(|e| RunError::io(path, e))?;
    let rgb = match img {
        image::DynamicImage::ImageRgb8(b) => b,
        other => {
            return Err(RunError::Data(format!("{}: expected 8-bit RGB, got {:?}", path.display(), other.color())));
        }
    };
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let data = rgb.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
    Ok(Image::from_data(w, h, 3, data)?)
}

/// Non-positive or non-finite depths are written as 0 (no depth).
pub fn write_depth(path: &Path, depth: &[f64], width: usize, height: usize) -> Result<()> {
    if depth.len() != width * height {
        return Err(RunError::Data(format!("{}: depth buffer has {} values", path.display(), depth.len())));
    }
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(width as u32, height as u32, |x, y| {
        let d = depth[y as usize * width + x as usize];
        let v = if d.is_finite() && d > 0.0 { (d * DEPTH_SCALE).round().clamp(1.0, 65535.0) as u16 } else { 0 };
        Luma([v])
    });
    ensure_parent(path)?;
    buf.save(path).map_err(|e| RunError::io(path, e))
}

pub fn read_depth(path: &Path) -> Result<(Vec<f64>, usize, usize)> {
    let img = image::open(path).map_err(|e| RunError::io(path, e))?;
    let buf = match img {
        image::DynamicImage::ImageLuma16(b) => b,
        other => {
            return Err(RunError::Data(format!("{}: expected 16-bit gray depth, got {:?}", path.display(), other.color())));
        }
    };
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    Ok((buf.into_raw().into_iter().map(|v| v as f64 / DEPTH_SCALE).collect(), w, h))
}

pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    let buf = GrayImage::from_fn(mask.width as u32, mask.height as u32, |x, y| {
        Luma([if mask.get(x as usize, y as usize) { 255 } else { 0 }])
    });
    ensure_parent(path)?;
    buf.save(path).map_err(|e| RunError::io(path, e))
}

/// Masks are 8-bit single channel with values 0 or 255 only.
pub fn read_mask(path: &Path) -> Result<Mask> {
    let img = image::open(path).map_err(|e| RunError::io(path, e))?;
    let buf = match img {
        image::DynamicImage::ImageLuma8(b) => b,
        other => {
            return Err(RunError::Data(format!("{}: expected 8-bit gray mask, got {:?}", path.display(), other.color())));
        }
    };
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    let mut mask = Mask::empty(w, h);
    for (i, v) in buf.into_raw().into_iter().enumerate() {
        match v {
            0 => {}
            255 => mask.data[i] = true,
            other => {
                return Err(RunError::Data(format!(
                    "{}: mask value {other} at pixel ({}, {}); only 0 and 255 are allowed",
                    path.display(),
                    i % w,
                    i / w
                )));
            }
        }
    }
    Ok(mask)
}
