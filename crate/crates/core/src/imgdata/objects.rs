//! Binary masks, 4-connected object extraction, object crops and warps.

use serde::{Deserialize, Serialize};

use super::raster::{GrayImage, Mask, Raster};
use crate::error::ImageError;

/// Default minimum object area in pixels.
pub const MIN_OBJECT_AREA: usize = 30;

/// Which side of the threshold counts as foreground.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    /// Foreground where `intensity <= threshold`.
    #[default]
    Dark,
    /// Foreground where `intensity > threshold`.
    Bright,
}

pub fn threshold_mask(image: &GrayImage, threshold: u8, polarity: Polarity) -> Mask {
    match polarity {
        Polarity::Dark => image.map(|v| v <= threshold),
        Polarity::Bright => image.map(|v| v > threshold),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ObjectRegion {
    pub id: usize,
    /// `(row, col)` in raster order.
    pub pixels: Vec<(usize, usize)>,
    pub bbox: BBox,
}

impl ObjectRegion {
    pub fn area(&self) -> usize {
        self.pixels.len()
    }

    /// Builds a region from arbitrary pixels, computing the tight bounding box.
    pub fn from_pixels(id: usize, mut pixels: Vec<(usize, usize)>) -> Option<Self> {
        pixels.sort_unstable();
        pixels.dedup();
        let top = pixels.first()?.0;
        let bottom = pixels.last()?.0;
        let left = pixels.iter().map(|p| p.1).min()?;
        let right = pixels.iter().map(|p| p.1).max()?;
        Some(Self {
            id,
            pixels,
            bbox: BBox {
                top,
                left,
                height: bottom - top + 1,
                width: right - left + 1,
            },
        })
    }
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        parent[x as usize] = parent[parent[x as usize] as usize];
        x = parent[x as usize];
    }
    x
}

/// 4-connected foreground components with at least `min_object_area` pixels,
/// numbered from 0 in raster order of their first pixel.
pub fn connected_components(mask: &Mask, min_object_area: usize) -> Vec<ObjectRegion> {
    let (h, w) = mask.dims();
    let mut labels = vec![0u32; h * w];
    let mut parent: Vec<u32> = vec![0];
    for i in 0..h {
        for j in 0..w {
            if !mask.get(i, j) {
                continue;
            }
            let up = if i > 0 { labels[(i - 1) * w + j] } else { 0 };
            let left = if j > 0 { labels[i * w + j - 1] } else { 0 };
            labels[i * w + j] = match (up, left) {
                (0, 0) => {
                    let l = parent.len() as u32;
                    parent.push(l);
                    l
                }
                (a, 0) | (0, a) => a,
                (a, b) => {
                    let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                    let (lo, hi) = (ra.min(rb), ra.max(rb));
                    parent[hi as usize] = lo;
                    lo
                }
            };
        }
    }
    let mut slot = vec![usize::MAX; parent.len()];
    let mut groups: Vec<Vec<(usize, usize)>> = Vec::new();
    for i in 0..h {
        for j in 0..w {
            let l = labels[i * w + j];
            if l == 0 {
                continue;
            }
            let root = find(&mut parent, l) as usize;
            if slot[root] == usize::MAX {
                slot[root] = groups.len();
                groups.push(Vec::new());
            }
            groups[slot[root]].push((i, j));
        }
    }
    groups
        .into_iter()
        .filter(|g| g.len() >= min_object_area.max(1))
        .enumerate()
        .map(|(id, pixels)| ObjectRegion::from_pixels(id, pixels).expect("non-empty component"))
        .collect()
}

fn check_region(region: &ObjectRegion, h: usize, w: usize) -> Result<(), ImageError> {
    if region.pixels.iter().any(|&(r, c)| r >= h || c >= w) {
        return Err(ImageError::RegionOutOfBounds(h, w));
    }
    Ok(())
}

/// Crop of the region's bounding box grown by `pad` (clipped at the borders),
/// with every pixel outside the region set to 0.
pub fn crop_object(image: &GrayImage, region: &ObjectRegion, pad: usize) -> Result<GrayImage, ImageError> {
    let (h, w) = image.dims();
    check_region(region, h, w)?;
    let b = region.bbox;
    let top = b.top.saturating_sub(pad);
    let left = b.left.saturating_sub(pad);
    let bottom = (b.top + b.height + pad).min(h);
    let right = (b.left + b.width + pad).min(w);
    let mut out = Raster::filled(bottom - top, right - left, 0u8);
    for &(r, c) in &region.pixels {
        out.set(r - top, c - left, image.get(r, c));
    }
    Ok(out)
}

/// Bilinear resample to exactly `(target_h, target_w)` with pixel centers aligned
/// (`src = (dst + 0.5) * in/out - 0.5`, clamped to the border).
pub fn warp_resize(patch: &Raster<f64>, target: (usize, usize)) -> Result<Raster<f64>, ImageError> {
    let (th, tw) = target;
    if th == 0 || tw == 0 {
        return Err(ImageError::ZeroTarget);
    }
    let (h, w) = patch.dims();
    if h == 0 || w == 0 {
        return Err(ImageError::EmptyPatch);
    }
    let axis = |dst: usize, out: usize, inp: usize| -> (usize, usize, f64) {
        let src = ((dst as f64 + 0.5) * inp as f64 / out as f64 - 0.5).clamp(0.0, (inp - 1) as f64);
        let lo = src.floor() as usize;
        let hi = (lo + 1).min(inp - 1);
        (lo, hi, src - lo as f64)
    };
    let rows: Vec<_> = (0..th).map(|i| axis(i, th, h)).collect();
    let cols: Vec<_> = (0..tw).map(|j| axis(j, tw, w)).collect();
    Ok(Raster::from_fn(th, tw, |i, j| {
        let (r0, r1, fy) = rows[i];
        let (c0, c1, fx) = cols[j];
        let top = patch.get(r0, c0) * (1.0 - fx) + patch.get(r0, c1) * fx;
        let bottom = patch.get(r1, c0) * (1.0 - fx) + patch.get(r1, c1) * fx;
        top * (1.0 - fy) + bottom * fy
    }))
}
