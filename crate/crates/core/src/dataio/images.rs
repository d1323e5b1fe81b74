use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};
use serde::{Deserialize, Serialize};

use super::interactions::ItemId;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        ImageShape {
            channels,
            height,
            width,
        }
    }

    pub fn numel(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }
}

/// Product photo in planar CHW layout with every pixel in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSample {
    pub item: ItemId,
    shape: ImageShape,
    pixels: Vec<f64>,
    pub label: Option<usize>,
}

impl ImageSample {
    pub fn new(item: ItemId, shape: ImageShape, pixels: Vec<f64>, label: Option<usize>) -> Result<Self> {
        if pixels.len() != shape.numel() {
            return Err(Error::shape(
                "image",
                format!("{:?} needs {} pixels, got {}", shape, shape.numel(), pixels.len()),
            ));
        }
        if let Some(bad) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidArgument(format!(
                "item {item}: pixel value {bad} outside [0, 1]"
            )));
        }
        Ok(ImageSample {
            item,
            shape,
            pixels,
            label,
        })
    }

    pub fn shape(&self) -> ImageShape {
        self.shape
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }
}

/// Rounds each pixel to the 16-bit grid a PNG round trip produces.
pub fn quantize16(pixels: &[f64]) -> Vec<f64> {
    pixels.iter().map(|&p| to_u16(p) as f64 / 65535.0).collect()
}

fn to_u16(p: f64) -> u16 {
    (p.clamp(0.0, 1.0) * 65535.0).round() as u16
}

/// Writes a lossless 16-bit PNG (greyscale for one channel, RGB for three).
pub fn write_png(path: impl AsRef<Path>, sample: &ImageSample) -> Result<()> {
    let path = path.as_ref();
    let ImageShape {
        channels,
        height,
        width,
    } = sample.shape;
    let plane = height * width;
    let (w, h) = (width as u32, height as u32);
    match channels {
        1 => {
            let buf: Vec<u16> = sample.pixels.iter().map(|&p| to_u16(p)).collect();
            let img: ImageBuffer<Luma<u16>, _> =
                ImageBuffer::from_raw(w, h, buf).expect("buffer sized from shape");
            img.save(path)?;
        }
        3 => {
            let mut buf = Vec::with_capacity(3 * plane);
            for idx in 0..plane {
                for c in 0..3 {
                    buf.push(to_u16(sample.pixels[c * plane + idx]));
                }
            }
            let img: ImageBuffer<Rgb<u16>, _> =
                ImageBuffer::from_raw(w, h, buf).expect("buffer sized from shape");
            img.save(path)?;
        }
        c => {
            return Err(Error::InvalidArgument(format!(
                "PNG export supports 1 or 3 channels, got {c}"
            )))
        }
    }
    Ok(())
}

/// Reads a PNG as RGB (or greyscale when `channels == 1`) into `[0, 1]`.
pub fn read_png(path: impl AsRef<Path>, item: ItemId, channels: usize) -> Result<ImageSample> {
    let path = path.as_ref();
    let img = image::open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let plane = w * h;
    let pixels = match channels {
        1 => img
            .to_luma16()
            .into_raw()
            .into_iter()
            .map(|v| v as f64 / 65535.0)
            .collect(),
        3 => {
            let raw = img.to_rgb16().into_raw();
            let mut out = vec![0.0; 3 * plane];
            for idx in 0..plane {
                for c in 0..3 {
                    out[c * plane + idx] = raw[idx * 3 + c] as f64 / 65535.0;
                }
            }
            out
        }
        c => {
            return Err(Error::InvalidArgument(format!(
                "PNG import supports 1 or 3 channels, got {c}"
            )))
        }
    };
    ImageSample::new(item, ImageShape::new(channels, h, w), pixels, None)
}

/// Writes `<dir>/<item_id>.png` for every sample.
pub fn write_image_dir(dir: impl AsRef<Path>, samples: &[ImageSample]) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for s in samples {
        write_png(dir.join(format!("{}.png", s.item)), s)?;
    }
    Ok(())
}

/// Loads every `<item_id>.png` in `dir`, sorted by item id.
pub fn read_image_dir(dir: impl AsRef<Path>, channels: usize) -> Result<Vec<ImageSample>> {
    let dir = dir.as_ref();
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("png") {
            continue;
        }
        let Some(item) = path
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| s.parse::<ItemId>().ok())
        else {
            continue;
        };
        out.push(read_png(&path, item, channels)?);
    }
    out.sort_by_key(|s| s.item);
    Ok(out)
}
