//! Rasters and their I/O, object extraction, patch grids, and dataset manifests.

pub mod objects;
pub mod patches;
pub mod raster;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::ImageError;

pub use objects::{
    connected_components, crop_object, threshold_mask, warp_resize, BBox, ObjectRegion, Polarity, MIN_OBJECT_AREA,
};
pub use patches::{
    augment_rotations, compute_patch_grid, patch_count, solve_balancing_stride, subsample_indices, LabeledPatch,
    PatchGrid,
};
pub use raster::{read_gray, write_gray, write_rgb, GrayImage, LabelMap, Mask, Raster};

/// Class index of the background matrix phase.
pub const MATRIX: u8 = 0;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MicrographSample {
    pub image: GrayImage,
    /// Per-pixel class, 0 for matrix.
    pub label_map: LabelMap,
    pub mask: Mask,
    pub sample_class: Option<u8>,
}

impl MicrographSample {
    pub fn new(image: GrayImage, label_map: LabelMap, mask: Mask, sample_class: Option<u8>) -> Result<Self, ImageError> {
        image.ensure_same_dims(&label_map)?;
        image.ensure_same_dims(&mask)?;
        Ok(Self {
            image,
            label_map,
            mask,
            sample_class,
        })
    }

    /// Whether every labeled pixel lies on the mask foreground.
    pub fn labels_within_mask(&self) -> bool {
        self.label_map
            .data
            .iter()
            .zip(&self.mask.data)
            .all(|(&l, &m)| l == MATRIX || m)
    }
}

/// Objects per class: every mask component counts once for its majority label
/// (lowest class on ties); components labeled only as matrix are skipped.
pub fn count_objects_per_class(label_map: &LabelMap, mask: &Mask, n_classes: usize) -> Vec<usize> {
    let mut counts = vec![0; n_classes];
    for region in connected_components(mask, 1) {
        let mut hist = vec![0usize; n_classes];
        for &(r, c) in &region.pixels {
            let l = label_map.get(r, c) as usize;
            if l != MATRIX as usize && l < n_classes {
                hist[l] += 1;
            }
        }
        let best = (1..n_classes)
            .filter(|&k| hist[k] > 0)
            .max_by_key(|&k| (hist[k], std::cmp::Reverse(k)));
        if let Some(k) = best {
            counts[k] += 1;
        }
    }
    counts
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Paths are relative to the manifest's directory.
    pub image: PathBuf,
    pub label_map: PathBuf,
    pub mask: PathBuf,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_class: Option<u8>,
    /// Object count per class index, matrix first.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objects_per_class: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self, ImageError> {
        let text = std::fs::read_to_string(path).map_err(|source| ImageError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let entries: Vec<ManifestEntry> = serde_json::from_str(&text).map_err(|e| ImageError::Manifest {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Ok(Self {
            root: path.parent().map(Path::to_path_buf).unwrap_or_default(),
            entries,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), ImageError> {
        let json = serde_json::to_string_pretty(&self.entries).expect("manifest serializes");
        std::fs::write(path, json + "\n").map_err(|source| ImageError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn resolve(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn load_sample(&self, entry: &ManifestEntry) -> Result<MicrographSample, ImageError> {
        let image = read_gray(&self.resolve(&entry.image))?;
        let label_map = read_gray(&self.resolve(&entry.label_map))?;
        let mask = raster::gray_to_mask(&read_gray(&self.resolve(&entry.mask))?);
        let sample = MicrographSample::new(image, label_map, mask, entry.sample_class)?;
        if !sample.labels_within_mask() {
            return Err(ImageError::Manifest {
                path: self.resolve(&entry.label_map),
                message: format!("sample {} has labels outside its mask", entry.id),
            });
        }
        Ok(sample)
    }
}

/// Writes the three rasters of `sample` as PNGs named `<stem>_{image,labels,mask}.png` under `dir`.
pub fn write_sample(dir: &Path, stem: &str, sample: &MicrographSample) -> Result<[PathBuf; 3], ImageError> {
    let paths = [
        dir.join(format!("{stem}_image.png")),
        dir.join(format!("{stem}_labels.png")),
        dir.join(format!("{stem}_mask.png")),
    ];
    write_gray(&paths[0], &sample.image)?;
    write_gray(&paths[1], &sample.label_map)?;
    write_gray(&paths[2], &raster::mask_to_gray(&sample.mask))?;
    Ok(paths)
}
