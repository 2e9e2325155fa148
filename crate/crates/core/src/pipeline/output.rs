//! Color renderings and per-object CSV for segmentation results.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::PipelineError;
use crate::imgdata::{write_rgb, LabelMap, ObjectRegion};

use super::ObjectClassification;

pub const NOT_SEGMENTED_COLOR: [u8; 3] = [255, 255, 255];
pub const MATRIX_COLOR: [u8; 3] = [0, 0, 0];

/// Constituent classes 1..=4 map to red, green, blue, yellow; further classes cycle.
pub fn class_color(class: u8) -> [u8; 3] {
    const PALETTE: [[u8; 3]; 6] = [
        [230, 25, 25],
        [25, 200, 40],
        [30, 60, 230],
        [240, 220, 20],
        [200, 40, 220],
        [20, 210, 210],
    ];
    match class {
        0 => MATRIX_COLOR,
        c => PALETTE[(c as usize - 1) % PALETTE.len()],
    }
}

/// Pixel-level rendering of a label map.
pub fn render_labels(labels: &LabelMap) -> Vec<u8> {
    labels.data.iter().flat_map(|&l| class_color(l)).collect()
}

/// Every object painted in its voted color, white when not segmented; matrix black.
pub fn render_objects(h: usize, w: usize, regions: &[ObjectRegion], objects: &[ObjectClassification]) -> Vec<u8> {
    let mut rgb: Vec<u8> = std::iter::repeat_n(MATRIX_COLOR, h * w).flatten().collect();
    for (region, obj) in regions.iter().zip(objects) {
        let color = obj.voted.map_or(NOT_SEGMENTED_COLOR, class_color);
        for &(r, c) in &region.pixels {
            if r < h && c < w {
                rgb[3 * (r * w + c)..3 * (r * w + c) + 3].copy_from_slice(&color);
            }
        }
    }
    rgb
}

pub fn write_object_png(
    path: &Path,
    h: usize,
    w: usize,
    regions: &[ObjectRegion],
    objects: &[ObjectClassification],
) -> Result<(), PipelineError> {
    Ok(write_rgb(path, h, w, render_objects(h, w, regions, objects))?)
}

pub fn objects_csv(objects: &[ObjectClassification], n_cl: usize) -> String {
    let mut s = String::from("object_id,voted_class,area");
    for k in 0..n_cl {
        let _ = write!(s, ",votes_{k}");
    }
    s.push('\n');
    for o in objects {
        let voted = o.voted.map_or("not_segmented".to_string(), |c| c.to_string());
        let _ = write!(s, "{},{},{}", o.region_id, voted, o.area);
        for k in 0..n_cl {
            let _ = write!(s, ",{}", o.votes.get(k).copied().unwrap_or(0));
        }
        s.push('\n');
    }
    s
}
