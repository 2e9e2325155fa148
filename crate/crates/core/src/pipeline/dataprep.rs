//! Training sets: class-balanced FCN patches and masked CNN object crops.

use crate::arch::network::derive_seed;
use crate::error::PipelineError;
use crate::imgdata::{
    augment_rotations, compute_patch_grid, connected_components, crop_object, solve_balancing_stride,
    subsample_indices, warp_resize, LabelMap, LabeledPatch, MicrographSample, ObjectRegion, Raster, MATRIX,
    MIN_OBJECT_AREA,
};
use crate::optim::TrainSample;
use crate::tensor::{Real, Shape, Tensor};

use super::{image_tensor, normalize_intensity};

/// Majority constituent label of a region, lowest class on ties; `None` if all matrix.
pub fn region_truth_class(label_map: &LabelMap, region: &ObjectRegion) -> Option<u8> {
    let mut hist = [0usize; 256];
    for &(r, c) in &region.pixels {
        hist[label_map.get(r, c) as usize] += 1;
    }
    (MATRIX as usize + 1..256)
        .filter(|&k| hist[k] > 0)
        .max_by_key(|&k| (hist[k], std::cmp::Reverse(k)))
        .map(|k| k as u8)
}

/// Image-level class: the declared sample class, else the most frequent constituent pixel label.
pub fn sample_class(sample: &MicrographSample) -> Option<u8> {
    sample.sample_class.or_else(|| {
        let mut hist = [0usize; 256];
        sample.label_map.data.iter().for_each(|&l| hist[l as usize] += 1);
        (1..256).filter(|&k| hist[k] > 0).max_by_key(|&k| (hist[k], std::cmp::Reverse(k))).map(|k| k as u8)
    })
}

/// Square patches drawn so every image class contributes exactly `target`
/// patches: each class gets the largest stride that yields at least `target`,
/// and the surplus is subsampled with `seed`. Classes are emitted in ascending order.
pub fn balanced_patches(
    samples: &[MicrographSample],
    patch: usize,
    target: usize,
    seed: u64,
) -> Result<Vec<LabeledPatch>, PipelineError> {
    let mut classes: Vec<u8> = samples.iter().filter_map(sample_class).collect();
    classes.sort_unstable();
    classes.dedup();
    let members: Vec<Vec<&MicrographSample>> = classes
        .iter()
        .map(|&c| samples.iter().filter(|s| sample_class(s) == Some(c)).collect())
        .collect();
    let dims: Vec<Vec<(usize, usize)>> = members
        .iter()
        .map(|m| m.iter().map(|s| s.image.dims()).filter(|&(h, w)| h >= patch && w >= patch).collect())
        .collect();
    let strides = solve_balancing_stride(&dims, patch, target)?;
    let mut out = Vec::with_capacity(target * classes.len());
    for ((&class, group), &stride) in classes.iter().zip(&members).zip(&strides) {
        let mut all = Vec::new();
        for s in group {
            let (h, w) = s.image.dims();
            if h < patch || w < patch {
                continue;
            }
            for (top, left) in compute_patch_grid(h, w, (patch, patch), (stride, stride))?.origins {
                all.push(LabeledPatch {
                    image: s.image.window(top, left, patch, patch)?,
                    labels: s.label_map.window(top, left, patch, patch)?,
                });
            }
        }
        for k in subsample_indices(all.len(), target, derive_seed(seed, class as u64)) {
            out.push(all[k].clone());
        }
    }
    Ok(out)
}

/// Balanced patches, optionally followed by their three right-angle rotations.
pub fn fcn_training_set<R: Real>(
    samples: &[MicrographSample],
    patch: usize,
    target: usize,
    augment: bool,
    seed: u64,
) -> Result<Vec<TrainSample<R>>, PipelineError> {
    let mut patches = balanced_patches(samples, patch, target, seed)?;
    if augment {
        patches = augment_rotations(&patches)?;
    }
    Ok(patches
        .iter()
        .map(|p| TrainSample {
            input: image_tensor(&p.image),
            labels: p.labels.data.clone(),
        })
        .collect())
}

/// Masked object crop warped to `size` squared, in normalized intensities.
pub fn object_raster(
    image: &crate::imgdata::GrayImage,
    region: &ObjectRegion,
    size: usize,
) -> Result<Raster<f64>, PipelineError> {
    if region.pixels.is_empty() {
        return Err(PipelineError::EmptyRegion(region.id));
    }
    let crop = crop_object(image, region, 0)?;
    Ok(warp_resize(&crop.map(|v| normalize_intensity(v as f64)), (size, size))?)
}

pub(crate) fn raster_tensor<R: Real>(r: &Raster<f64>) -> Tensor<R> {
    Tensor::from_fn(Shape::new(1, 1, r.height, r.width), |_, _, i, j| R::from_f64(r.get(i, j)))
}

/// One sample per mask object (area at least the minimum) with a constituent
/// label; the target is the constituent class minus one.
pub fn cnn_training_set<R: Real>(
    samples: &[MicrographSample],
    input_size: usize,
    augment: bool,
) -> Result<Vec<TrainSample<R>>, PipelineError> {
    let mut out = Vec::new();
    for s in samples {
        for region in connected_components(&s.mask, MIN_OBJECT_AREA) {
            let Some(class) = region_truth_class(&s.label_map, &region) else {
                continue;
            };
            let mut r = object_raster(&s.image, &region, input_size)?;
            for _ in 0..if augment { 4 } else { 1 } {
                out.push(TrainSample {
                    input: raster_tensor(&r),
                    labels: vec![class - 1],
                });
                r = r.rot90();
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgdata::GrayImage;

    fn sample(h: usize, w: usize, class: u8) -> MicrographSample {
        let labels = Raster::from_fn(h, w, |i, j| if (i / 8 + j / 8) % 2 == 0 { class } else { 0 });
        let image: GrayImage = labels.map(|l| if l == 0 { 200 } else { 60 });
        let mask = labels.map(|l| l != 0);
        MicrographSample::new(image, labels, mask, Some(class)).unwrap()
    }

    #[test]
    fn every_class_gets_exactly_target_patches() {
        let samples = vec![sample(96, 96, 1), sample(96, 96, 1), sample(64, 80, 2), sample(128, 64, 3)];
        let patches = balanced_patches(&samples, 32, 12, 5).unwrap();
        assert_eq!(patches.len(), 36);
        for (k, class) in [1u8, 2, 3].into_iter().enumerate() {
            for p in &patches[k * 12..(k + 1) * 12] {
                assert!(p.labels.data.iter().all(|&l| l == 0 || l == class));
                assert_eq!(p.image.dims(), (32, 32));
            }
        }
        assert_eq!(patches, balanced_patches(&samples, 32, 12, 5).unwrap());
        let aug = fcn_training_set::<f32>(&samples, 32, 12, true, 5).unwrap();
        assert_eq!(aug.len(), 144);
        assert_eq!(aug[0].labels.len(), 32 * 32);
    }

    #[test]
    fn unachievable_balance_is_an_error() {
        let samples = vec![sample(32, 32, 1), sample(96, 96, 2)];
        assert!(balanced_patches(&samples, 32, 2, 0).is_err());
    }

    #[test]
    fn cnn_objects_labeled_by_majority() {
        let mut labels = Raster::filled(40, 40, 0u8);
        for i in 5..15 {
            for j in 5..15 {
                labels.set(i, j, if j < 12 { 3 } else { 2 });
            }
        }
        for i in 25..27 {
            for j in 25..27 {
                labels.set(i, j, 1);
            }
        }
        let mask = labels.map(|l| l != 0);
        let image = labels.map(|l| l * 20);
        let s = MicrographSample::new(image, labels, mask, None).unwrap();
        let set = cnn_training_set::<f64>(std::slice::from_ref(&s), 16, false).unwrap();
        assert_eq!(set.len(), 1, "small object dropped");
        assert_eq!(set[0].labels, vec![2]);
        assert_eq!(set[0].input.shape(), Shape::new(1, 1, 16, 16));
        assert_eq!(cnn_training_set::<f64>(&[s], 16, true).unwrap().len(), 4);
    }
}
