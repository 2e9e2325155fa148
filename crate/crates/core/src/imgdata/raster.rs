use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::ImageError;

/// Row-major 2-D grid of pixels.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Raster<T> {
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

pub type GrayImage = Raster<u8>;
pub type LabelMap = Raster<u8>;
pub type Mask = Raster<bool>;

impl<T: Copy> Raster<T> {
    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<T>) -> Result<Self, ImageError> {
        if data.len() != height * width {
            return Err(ImageError::DimensionMismatch(height, width, data.len(), 1));
        }
        Ok(Self { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                data.push(f(i, j));
            }
        }
        Self { height, width, data }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: T) {
        self.data[row * self.width + col] = v;
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Raster<U> {
        Raster {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// The window `[top, top+h) x [left, left+w)`, which must lie inside the raster.
    pub fn window(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Self, ImageError> {
        if top + h > self.height || left + w > self.width {
            return Err(ImageError::RegionOutOfBounds(self.height, self.width));
        }
        Ok(Self::from_fn(h, w, |i, j| self.get(top + i, left + j)))
    }

    /// Rotation by 90 degrees clockwise.
    pub fn rot90(&self) -> Self {
        Self::from_fn(self.width, self.height, |i, j| self.get(self.height - 1 - j, i))
    }

    pub fn ensure_same_dims<U>(&self, other: &Raster<U>) -> Result<(), ImageError> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(ImageError::DimensionMismatch(
                self.height,
                self.width,
                other.height,
                other.width,
            ));
        }
        Ok(())
    }
}

fn decode_err(path: &Path, e: impl std::fmt::Display) -> ImageError {
    ImageError::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Reads an 8-bit grayscale PNG or binary PGM.
pub fn read_gray(path: &Path) -> Result<GrayImage, ImageError> {
    let bytes = std::fs::read(path).map_err(|source| ImageError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let img = image::load_from_memory(&bytes).map_err(|e| decode_err(path, e))?;
    if !matches!(img.color(), image::ColorType::L8) {
        return Err(decode_err(path, format!("expected 8-bit grayscale, found {:?}", img.color())));
    }
    let img = img.into_luma8();
    let (w, h) = img.dimensions();
    Raster::from_vec(h as usize, w as usize, img.into_raw())
}

fn ensure_parent(path: &Path) -> Result<(), ImageError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| ImageError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    Ok(())
}

/// Writes an 8-bit grayscale raster; `.pgm` paths are written as binary PGM, anything else as PNG.
pub fn write_gray(path: &Path, raster: &GrayImage) -> Result<(), ImageError> {
    ensure_parent(path)?;
    let format = match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => image::ImageFormat::Pnm,
        _ => image::ImageFormat::Png,
    };
    let buf = image::GrayImage::from_raw(raster.width as u32, raster.height as u32, raster.data.clone())
        .expect("raster length matches dims");
    buf.save_with_format(path, format).map_err(|e| decode_err(path, e))
}

pub fn write_rgb(path: &Path, height: usize, width: usize, rgb: Vec<u8>) -> Result<(), ImageError> {
    ensure_parent(path)?;
    let buf = image::RgbImage::from_raw(width as u32, height as u32, rgb).expect("rgb length matches dims");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| decode_err(path, e))
}

pub fn mask_to_gray(mask: &Mask) -> GrayImage {
    mask.map(|m| if m { 255 } else { 0 })
}

pub fn gray_to_mask(img: &GrayImage) -> Mask {
    img.map(|v| v != 0)
}
