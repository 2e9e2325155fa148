//! Sliding-window patch grids, per-class stride balancing, rotation augmentation.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::raster::{GrayImage, LabelMap};
use crate::error::ImageError;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub patch: (usize, usize),
    pub stride: (usize, usize),
    /// Top-left `(row, col)` of every patch, row-major.
    pub origins: Vec<(usize, usize)>,
}

fn axis_count(extent: usize, patch: usize, stride: usize) -> usize {
    (extent - patch) / stride + 1
}

/// Number of patches a grid would contain, without materializing it.
pub fn patch_count(height: usize, width: usize, patch: usize, stride: usize) -> usize {
    if patch > height || patch > width || stride == 0 {
        return 0;
    }
    axis_count(height, patch, stride) * axis_count(width, patch, stride)
}

/// Top-left anchored grid; a trailing remainder smaller than one stride is dropped.
pub fn compute_patch_grid(
    height: usize,
    width: usize,
    patch: (usize, usize),
    stride: (usize, usize),
) -> Result<PatchGrid, ImageError> {
    let (ph, pw) = patch;
    let (sy, sx) = stride;
    if sy == 0 || sx == 0 {
        return Err(ImageError::ZeroStride);
    }
    if ph == 0 || pw == 0 {
        return Err(ImageError::ZeroTarget);
    }
    if ph > height || pw > width {
        return Err(ImageError::PatchTooLarge {
            patch_h: ph,
            patch_w: pw,
            h: height,
            w: width,
        });
    }
    let ny = axis_count(height, ph, sy);
    let nx = axis_count(width, pw, sx);
    let origins = (0..ny).flat_map(|i| (0..nx).map(move |j| (i * sy, j * sx))).collect();
    Ok(PatchGrid { patch, stride, origins })
}

/// For every class (a list of its image dims), the largest square stride whose
/// summed patch count reaches `target`.
pub fn solve_balancing_stride(
    per_class_image_dims: &[Vec<(usize, usize)>],
    patch: usize,
    target: usize,
) -> Result<Vec<usize>, ImageError> {
    if target == 0 || patch == 0 {
        return Err(ImageError::ZeroTarget);
    }
    let total = |dims: &[(usize, usize)], stride| -> usize { dims.iter().map(|&(h, w)| patch_count(h, w, patch, stride)).sum() };
    let maxima: Vec<usize> = per_class_image_dims.iter().map(|d| total(d, 1)).collect();
    if maxima.iter().any(|&m| m < target) {
        return Err(ImageError::UnachievableTarget { target, maxima });
    }
    Ok(per_class_image_dims
        .iter()
        .map(|dims| {
            // Beyond the largest extent every image yields at most one patch.
            let limit = dims.iter().map(|&(h, w)| h.max(w)).max().unwrap_or(1).max(1);
            (1..=limit).rev().find(|&s| total(dims, s) >= target).unwrap_or(1)
        })
        .collect())
}

/// Chooses exactly `target` of `count` items uniformly with `seed`, returned in ascending order.
pub fn subsample_indices(count: usize, target: usize, seed: u64) -> Vec<usize> {
    if target >= count {
        return (0..count).collect();
    }
    let mut picked = sample(&mut ChaCha8Rng::seed_from_u64(seed), count, target).into_vec();
    picked.sort_unstable();
    picked
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledPatch {
    pub image: GrayImage,
    pub labels: LabelMap,
}

/// Each patch followed by its 90, 180 and 270 degree clockwise rotations.
pub fn augment_rotations(patches: &[LabeledPatch]) -> Result<Vec<LabeledPatch>, ImageError> {
    let mut out = Vec::with_capacity(patches.len() * 4);
    for p in patches {
        p.image.ensure_same_dims(&p.labels)?;
        if p.image.height != p.image.width {
            return Err(ImageError::NonSquare(p.image.height, p.image.width));
        }
        let mut cur = p.clone();
        for _ in 0..4 {
            let next = LabeledPatch {
                image: cur.image.rot90(),
                labels: cur.labels.rot90(),
            };
            out.push(cur);
            cur = next;
        }
    }
    Ok(out)
}
