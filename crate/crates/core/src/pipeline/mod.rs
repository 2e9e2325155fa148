//! Object-based CNN classification and max-voted FCN segmentation.

pub mod dataprep;
pub mod output;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arch::{ForwardMode, Network};
use crate::error::PipelineError;
use crate::imgdata::{GrayImage, LabelMap, ObjectRegion, Raster, MATRIX};
use crate::nn::loss::softmax;
use crate::tensor::{Real, Shape, Tensor};

/// Maps 8-bit intensities to roughly unit scale; shared by training and inference.
pub fn normalize_intensity(v: f64) -> f64 {
    (v - 127.5) / 64.0
}

pub fn image_tensor<R: Real>(image: &GrayImage) -> Tensor<R> {
    Tensor::from_fn(Shape::new(1, 1, image.height, image.width), |_, _, i, j| {
        R::from_f64(normalize_intensity(image.get(i, j) as f64))
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationResult {
    /// Per-pixel class probabilities `(1, n_cl, H, W)`, matrix first.
    pub score_map: Tensor<f64>,
    pub label_map: LabelMap,
}

/// Per-pixel argmax over channels, lowest index on ties.
pub fn argmax_labels(scores: &Tensor<f64>) -> LabelMap {
    let s = scores.shape();
    Raster::from_fn(s.h, s.w, |i, j| {
        let mut best = 0;
        for c in 1..s.c {
            if scores.get(0, c, i, j) > scores.get(0, best, i, j) {
                best = c;
            }
        }
        best as u8
    })
}

fn axis_origins(extent: usize, patch: usize, stride: usize) -> Vec<usize> {
    if extent <= patch {
        return vec![0];
    }
    let mut v: Vec<usize> = (0..=(extent - patch) / stride).map(|k| k * stride).collect();
    if v.last() != Some(&(extent - patch)) {
        v.push(extent - patch);
    }
    v
}

/// Tile origins covering an `h x w` image: the stride grid plus tiles anchored
/// at the right and bottom edges.
pub fn tile_origins(h: usize, w: usize, patch: usize, stride: usize) -> Vec<(usize, usize)> {
    let ys = axis_origins(h, patch, stride);
    let xs = axis_origins(w, patch, stride);
    ys.iter().flat_map(|&y| xs.iter().map(move |&x| (y, x))).collect()
}

/// Averages overlapping tile scores into an `h x w` map, accumulating tiles in order.
pub fn stitch_tiles(h: usize, w: usize, tiles: &[((usize, usize), Tensor<f64>)]) -> Result<Tensor<f64>, PipelineError> {
    let n_cl = tiles.first().map_or(0, |t| t.1.shape().c);
    let mut sum = Tensor::zeros(Shape::new(1, n_cl, h, w));
    let mut count = vec![0u32; h * w];
    for ((top, left), t) in tiles {
        let ts = t.shape();
        if ts.c != n_cl || top + ts.h > h || left + ts.w > w {
            return Err(PipelineError::DimensionMismatch(h, w, top + ts.h, left + ts.w));
        }
        for i in 0..ts.h {
            for j in 0..ts.w {
                count[(top + i) * w + left + j] += 1;
                for c in 0..n_cl {
                    let idx = sum.index(0, c, top + i, left + j);
                    sum.data_mut()[idx] += t.get(0, c, i, j);
                }
            }
        }
    }
    for c in 0..n_cl {
        for (v, &k) in sum.plane_mut(0, c).iter_mut().zip(&count) {
            if k > 0 {
                *v /= k as f64;
            }
        }
    }
    Ok(sum)
}

fn tile_probabilities<R: Real>(net: &Network<R>, input: &Tensor<R>) -> Result<Tensor<f64>, PipelineError> {
    let logits = net.forward(input, ForwardMode::Eval)?;
    Ok(crate::nn::loss::softmax_channels(&logits).convert())
}

/// Sliding-window segmentation: class probabilities of overlapping tiles are
/// averaged per pixel. Images smaller than the patch are zero-padded (in the
/// normalized domain) to one tile and cropped back.
pub fn segment_image<R: Real>(
    net: &Network<R>,
    image: &GrayImage,
    patch: usize,
    stride: usize,
) -> Result<SegmentationResult, PipelineError> {
    let k = net.spec.total_stride.max(1);
    if patch == 0 || !patch.is_multiple_of(k) {
        return Err(PipelineError::PatchNotAligned { patch, stride: k });
    }
    if stride == 0 || stride > patch {
        return Err(PipelineError::InvalidStride { stride, patch });
    }
    let (h, w) = image.dims();
    let (ph, pw) = (h.max(patch), w.max(patch));
    let mut input = image_tensor::<R>(image);
    if (ph, pw) != (h, w) {
        input = input.pad(0, 0, ph, pw)?;
    }
    let origins = tile_origins(ph, pw, patch, stride);
    let tiles = origins
        .par_iter()
        .map(|&(top, left)| {
            let tile = input.crop(top, left, patch, patch)?;
            Ok(((top, left), tile_probabilities(net, &tile)?))
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    let mut scores = stitch_tiles(ph, pw, &tiles)?;
    if (ph, pw) != (h, w) {
        scores = scores.crop(0, 0, h, w)?;
    }
    let label_map = argmax_labels(&scores);
    Ok(SegmentationResult { score_map: scores, label_map })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectClassification {
    pub region_id: usize,
    /// Voted constituent class, or `None` when no pixel was predicted as a constituent.
    pub voted: Option<u8>,
    /// Predicted-pixel count per class index, matrix included.
    pub votes: Vec<usize>,
    pub area: usize,
}

/// Assigns each region the constituent class predicted for most of its pixels.
/// The matrix class never wins; ties go to the lowest class.
pub fn max_vote_objects(
    label_map: &LabelMap,
    regions: &[ObjectRegion],
    n_cl: usize,
) -> Result<Vec<ObjectClassification>, PipelineError> {
    let (h, w) = label_map.dims();
    regions
        .iter()
        .map(|region| {
            let mut votes = vec![0usize; n_cl];
            for &(r, c) in &region.pixels {
                if r >= h || c >= w {
                    return Err(PipelineError::RegionOutOfBounds { id: region.id, h, w });
                }
                let l = label_map.get(r, c) as usize;
                if l < n_cl {
                    votes[l] += 1;
                }
            }
            let mut voted = None;
            for k in (MATRIX as usize + 1)..n_cl {
                if votes[k] > 0 && voted.is_none_or(|b: usize| votes[k] > votes[b]) {
                    voted = Some(k);
                }
            }
            Ok(ObjectClassification {
                region_id: region.id,
                voted: voted.map(|k| k as u8),
                votes,
                area: region.area(),
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageClass {
    Class(u8),
    /// No object received a constituent vote.
    Unclassifiable,
}

/// Majority class over voted objects, lowest class on ties.
pub fn classify_whole_image(objects: &[ObjectClassification]) -> ImageClass {
    let max_class = objects.iter().filter_map(|o| o.voted).max();
    let Some(max_class) = max_class else {
        return ImageClass::Unclassifiable;
    };
    let mut tally = vec![0usize; max_class as usize + 1];
    for o in objects {
        if let Some(c) = o.voted {
            tally[c as usize] += 1;
        }
    }
    let mut best = 0;
    for (c, &n) in tally.iter().enumerate() {
        if n > tally[best] {
            best = c;
        }
    }
    ImageClass::Class(best as u8)
}

/// Masked object crop, warped to `input_size` squared, in normalized intensities.
pub fn object_input<R: Real>(image: &GrayImage, region: &ObjectRegion, input_size: usize) -> Result<Tensor<R>, PipelineError> {
    Ok(dataprep::raster_tensor(&dataprep::object_raster(image, region, input_size)?))
}

/// Classifies one object: crop, warp, forward, softmax. Returns the winning
/// output index (lowest on ties) and the posterior.
pub fn classify_object_cnn<R: Real>(
    net: &Network<R>,
    image: &GrayImage,
    region: &ObjectRegion,
    input_size: usize,
) -> Result<(usize, Vec<f64>), PipelineError> {
    if net.spec.input_size != Some(input_size) {
        return Err(PipelineError::InputSizeMismatch {
            net: net.spec.input_size.unwrap_or(0),
            requested: input_size,
        });
    }
    let x = object_input::<R>(image, region, input_size)?;
    let logits: Vec<f64> = net.forward(&x, ForwardMode::Eval)?.data().iter().map(|v| v.to_f64()).collect();
    let posterior = softmax(&logits);
    let mut best = 0;
    for (k, &p) in posterior.iter().enumerate() {
        if p > posterior[best] {
            best = k;
        }
    }
    Ok((best, posterior))
}
