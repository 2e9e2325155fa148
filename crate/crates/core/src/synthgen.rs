//! Deterministic synthetic micrographs: textured elliptical constituents on a
//! bright noisy matrix.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arch::network::derive_seed;
use crate::error::ImageError;
use crate::imgdata::{
    count_objects_per_class, write_sample, Manifest, ManifestEntry, MicrographSample, Raster, Split, MATRIX,
};

/// Number of constituent classes (labels 1..=4).
pub const N_CONSTITUENTS: usize = 4;

/// Brightest value a constituent pixel can take; the matrix never drops below
/// `matrix_level - matrix_noise`.
pub const CONSTITUENT_MAX: u8 = 130;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub objects_per_image: usize,
    /// Inclusive range of ellipse semi-axes in pixels.
    pub radius_range: (f64, f64),
    /// Minimum empty gap between objects in pixels.
    pub gap: usize,
    pub matrix_level: f64,
    /// Half-width of the uniform matrix noise.
    pub matrix_noise: f64,
    /// Half-width of the uniform noise added to constituent textures.
    pub texture_noise: f64,
    /// Placement attempts per object before giving up on it.
    pub max_attempts: usize,
    pub train_classes: Vec<u8>,
    pub test_classes: Vec<u8>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 2024,
            height: 192,
            width: 192,
            objects_per_image: 10,
            radius_range: (9.0, 16.0),
            gap: 2,
            matrix_level: 200.0,
            matrix_noise: 10.0,
            texture_noise: 8.0,
            max_attempts: 200,
            train_classes: vec![1, 2, 3, 4, 1, 2, 3, 4, 1, 2, 3],
            test_classes: vec![1, 2, 3, 4, 1, 2, 3, 4, 1, 2],
        }
    }
}

impl SynthConfig {
    /// Threshold that separates constituents from the matrix exactly (dark polarity).
    pub fn mask_threshold(&self) -> u8 {
        let matrix_min = (self.matrix_level - self.matrix_noise).floor().clamp(0.0, 255.0) as u8;
        CONSTITUENT_MAX + (matrix_min.saturating_sub(CONSTITUENT_MAX)) / 2
    }
}

/// Per-object texture parameters drawn once per object.
#[derive(Clone, Copy, Debug)]
struct TextureParams {
    phase_a: f64,
    phase_b: f64,
}

/// Noise-free texture value of `class` at `(row, col)`, centered on 85 with amplitude 35.
fn texture_value(class: u8, p: TextureParams, row: f64, col: f64, speckle: f64) -> f64 {
    let wave = |period: f64, angle_deg: f64, phase: f64| {
        let a = angle_deg.to_radians();
        (2.0 * PI * (col * a.cos() + row * a.sin()) / period + phase).cos()
    };
    let v = match class {
        1 => wave(4.0, 30.0, p.phase_a),
        2 => wave(10.0, 120.0, p.phase_a),
        3 => speckle,
        4 => (2.0 * PI * col / 12.0 + p.phase_a).cos() * (2.0 * PI * row / 12.0 + p.phase_b).cos(),
        _ => 0.0,
    };
    85.0 + 35.0 * v
}

fn constituent_pixel(class: u8, p: TextureParams, row: usize, col: usize, noise: f64, rng: &mut ChaCha8Rng) -> u8 {
    let speckle = rng.random_range(-1.0..=1.0);
    let jitter = if noise > 0.0 { rng.random_range(-noise..=noise) } else { 0.0 };
    let v = texture_value(class, p, row as f64, col as f64, speckle) + jitter;
    v.round().clamp(0.0, CONSTITUENT_MAX as f64) as u8
}

/// A `h x w` patch filled entirely with the texture of `class`.
pub fn render_texture(class: u8, h: usize, w: usize, noise: f64, seed: u64) -> Raster<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = TextureParams {
        phase_a: rng.random_range(0.0..2.0 * PI),
        phase_b: rng.random_range(0.0..2.0 * PI),
    };
    Raster::from_fn(h, w, |i, j| constituent_pixel(class, p, i, j, noise, &mut rng))
}

fn ellipse_pixels(h: usize, w: usize, cy: f64, cx: f64, a: f64, b: f64, theta: f64) -> Vec<(usize, usize)> {
    let r = a.max(b).ceil() as i64 + 1;
    let (s, c) = theta.sin_cos();
    let mut out = Vec::new();
    for i in (cy as i64 - r).max(0)..=(cy as i64 + r).min(h as i64 - 1) {
        for j in (cx as i64 - r).max(0)..=(cx as i64 + r).min(w as i64 - 1) {
            let dy = i as f64 - cy;
            let dx = j as f64 - cx;
            let u = dx * c + dy * s;
            let v = -dx * s + dy * c;
            if (u / a).powi(2) + (v / b).powi(2) <= 1.0 {
                out.push((i as usize, j as usize));
            }
        }
    }
    out
}

/// One sample of `class` (1..=4) and the number of objects actually placed.
pub fn generate_sample(config: &SynthConfig, class: u8, seed: u64) -> Result<(MicrographSample, usize), ImageError> {
    if !(1..=N_CONSTITUENTS as u8).contains(&class) {
        return Err(ImageError::Manifest {
            path: PathBuf::new(),
            message: format!("class {class} outside 1..={N_CONSTITUENTS}"),
        });
    }
    let (h, w) = (config.height, config.width);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut image = Raster::from_fn(h, w, |_, _| {
        let v = config.matrix_level + rng.random_range(-config.matrix_noise..=config.matrix_noise);
        v.round().clamp(0.0, 255.0) as u8
    });
    let mut labels = Raster::filled(h, w, MATRIX);
    // Cells within `gap` of an existing object.
    let mut blocked = Raster::filled(h, w, false);
    let (rmin, rmax) = config.radius_range;
    let mut placed = 0;
    for _ in 0..config.objects_per_image {
        let mut success = false;
        for _ in 0..config.max_attempts {
            let a = rng.random_range(rmin..=rmax);
            let b = rng.random_range(rmin..=rmax);
            let theta = rng.random_range(0.0..PI);
            let margin = a.max(b) + 1.0;
            if 2.0 * margin >= h.min(w) as f64 {
                break;
            }
            let cy = rng.random_range(margin..h as f64 - margin);
            let cx = rng.random_range(margin..w as f64 - margin);
            let pixels = ellipse_pixels(h, w, cy, cx, a, b, theta);
            if pixels.is_empty() || pixels.iter().any(|&(i, j)| blocked.get(i, j)) {
                continue;
            }
            let params = TextureParams {
                phase_a: rng.random_range(0.0..2.0 * PI),
                phase_b: rng.random_range(0.0..2.0 * PI),
            };
            let g = config.gap as i64;
            for &(i, j) in &pixels {
                labels.set(i, j, class);
                image.set(i, j, constituent_pixel(class, params, i, j, config.texture_noise, &mut rng));
                for di in -g..=g {
                    for dj in -g..=g {
                        let (y, x) = (i as i64 + di, j as i64 + dj);
                        if (0..h as i64).contains(&y) && (0..w as i64).contains(&x) {
                            blocked.set(y as usize, x as usize, true);
                        }
                    }
                }
            }
            placed += 1;
            success = true;
            break;
        }
        if !success {
            log::warn!(
                "placed only {placed} of {} objects (seed {seed})",
                config.objects_per_image
            );
            break;
        }
    }
    let mask = labels.map(|l| l != MATRIX);
    Ok((MicrographSample::new(image, labels, mask, Some(class))?, placed))
}

/// Writes every split sample plus `manifest.json` under `out`; returns the manifest.
pub fn generate_dataset(config: &SynthConfig, out: &Path) -> Result<Manifest, ImageError> {
    let jobs: Vec<(Split, usize, u8)> = config
        .train_classes
        .iter()
        .enumerate()
        .map(|(i, &c)| (Split::Train, i, c))
        .chain(config.test_classes.iter().enumerate().map(|(i, &c)| (Split::Test, i, c)))
        .collect();
    let entries = jobs
        .par_iter()
        .enumerate()
        .map(|(k, &(split, idx, class))| {
            let (sample, _) = generate_sample(config, class, derive_seed(config.seed, k as u64))?;
            let (dir, id) = match split {
                Split::Train => ("train", format!("train_{idx:02}")),
                Split::Test => ("test", format!("test_{idx:02}")),
            };
            let paths = write_sample(&out.join(dir), &id, &sample)?;
            let rel = |p: &PathBuf| p.strip_prefix(out).expect("written under out").to_path_buf();
            Ok(ManifestEntry {
                id,
                image: rel(&paths[0]),
                label_map: rel(&paths[1]),
                mask: rel(&paths[2]),
                split,
                sample_class: Some(class),
                objects_per_class: Some(count_objects_per_class(
                    &sample.label_map,
                    &sample.mask,
                    N_CONSTITUENTS + 1,
                )),
            })
        })
        .collect::<Result<Vec<_>, ImageError>>()?;
    let manifest = Manifest {
        root: out.to_path_buf(),
        entries,
    };
    manifest.write(&out.join("manifest.json"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgdata::{connected_components, threshold_mask, Polarity};

    fn small() -> SynthConfig {
        SynthConfig {
            height: 96,
            width: 96,
            objects_per_image: 5,
            train_classes: vec![1, 2],
            test_classes: vec![3, 4],
            ..SynthConfig::default()
        }
    }

    #[test]
    fn zero_objects_gives_pure_matrix() {
        let cfg = SynthConfig {
            objects_per_image: 0,
            ..small()
        };
        let (s, placed) = generate_sample(&cfg, 2, 1).unwrap();
        assert_eq!(placed, 0);
        assert!(s.label_map.data.iter().all(|&l| l == MATRIX));
        assert!(s.mask.data.iter().all(|&m| !m));
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = small();
        assert_eq!(generate_sample(&cfg, 3, 7).unwrap(), generate_sample(&cfg, 3, 7).unwrap());
        assert_ne!(generate_sample(&cfg, 3, 7).unwrap(), generate_sample(&cfg, 3, 8).unwrap());
    }

    #[test]
    fn invalid_class_rejected() {
        assert!(generate_sample(&small(), 0, 1).is_err());
        assert!(generate_sample(&small(), 5, 1).is_err());
    }

    #[test]
    fn component_count_equals_placed_objects_and_threshold_is_exact() {
        let cfg = SynthConfig::default();
        for class in 1..=4 {
            for seed in 0..3 {
                let (s, placed) = generate_sample(&cfg, class, seed).unwrap();
                assert_eq!(placed, cfg.objects_per_image);
                assert_eq!(connected_components(&s.mask, 1).len(), placed);
                assert_eq!(threshold_mask(&s.image, cfg.mask_threshold(), Polarity::Dark), s.mask);
                assert!(s.labels_within_mask());
                assert!(s.label_map.data.iter().zip(&s.mask.data).all(|(&l, &m)| (l != 0) == m));
            }
        }
    }

    #[test]
    fn crowded_config_places_fewer_objects() {
        let cfg = SynthConfig {
            height: 40,
            width: 40,
            objects_per_image: 20,
            max_attempts: 20,
            ..SynthConfig::default()
        };
        let (s, placed) = generate_sample(&cfg, 1, 3).unwrap();
        assert!(placed < 20);
        assert_eq!(connected_components(&s.mask, 1).len(), placed);
    }

    #[test]
    fn dataset_is_complete_and_regenerates_identically() {
        let cfg = small();
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ma = generate_dataset(&cfg, a.path()).unwrap();
        generate_dataset(&cfg, b.path()).unwrap();
        assert_eq!(ma.entries.len(), 4);
        let files = |root: &Path| {
            let mut v: Vec<(PathBuf, Vec<u8>)> = Vec::new();
            for sub in ["", "train", "test"] {
                for e in std::fs::read_dir(root.join(sub)).unwrap() {
                    let p = e.unwrap().path();
                    if p.is_file() {
                        v.push((p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
                    }
                }
            }
            v.sort();
            v
        };
        let fa = files(a.path());
        assert_eq!(fa.len(), 4 * 3 + 1);
        assert_eq!(fa, files(b.path()));
        let back = Manifest::read(&a.path().join("manifest.json")).unwrap();
        for e in &back.entries {
            let s = back.load_sample(e).unwrap();
            assert_eq!(e.objects_per_class, Some(count_objects_per_class(&s.label_map, &s.mask, 5)));
        }
    }

    fn spectrum_class(patch: &Raster<u8>) -> u8 {
        // Separable DFT power spectrum of the mean-removed patch.
        let n = patch.height;
        let mean = patch.data.iter().map(|&v| v as f64).sum::<f64>() / (n * n) as f64;
        let x: Vec<f64> = patch.data.iter().map(|&v| v as f64 - mean).collect();
        let tw = |k: usize, t: usize| {
            let a = -2.0 * PI * ((k * t) % n) as f64 / n as f64;
            (a.cos(), a.sin())
        };
        let mut rows = vec![(0.0, 0.0); n * n];
        for i in 0..n {
            for k in 0..n {
                let mut acc = (0.0, 0.0);
                for t in 0..n {
                    let (c, s) = tw(k, t);
                    acc.0 += x[i * n + t] * c;
                    acc.1 += x[i * n + t] * s;
                }
                rows[i * n + k] = acc;
            }
        }
        let mut power = vec![0.0; n * n];
        for k in 0..n {
            for ky in 0..n {
                let mut acc = (0.0, 0.0);
                for t in 0..n {
                    let (c, s) = tw(ky, t);
                    let (re, im) = rows[t * n + k];
                    acc.0 += re * c - im * s;
                    acc.1 += re * s + im * c;
                }
                power[ky * n + k] = acc.0 * acc.0 + acc.1 * acc.1;
            }
        }
        let total: f64 = power.iter().sum();
        let (peak, &pmax) = power.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
        if pmax / total < 0.05 {
            return 3;
        }
        let (ky, kx) = (peak / n, peak % n);
        let mirrored = power[((n - ky) % n) * n + kx];
        if mirrored / pmax > 0.5 {
            return 4;
        }
        let signed = |k: usize| if k > n / 2 { k as f64 - n as f64 } else { k as f64 };
        let radius = (signed(kx).powi(2) + signed(ky).powi(2)).sqrt();
        if radius > 10.0 {
            1
        } else {
            2
        }
    }

    #[test]
    fn texture_families_separable_by_spectrum() {
        for class in 1..=4u8 {
            for seed in 0..10 {
                let patch = render_texture(class, 60, 60, 8.0, seed);
                assert_eq!(spectrum_class(&patch), class, "class {class} seed {seed}");
                assert_eq!(spectrum_class(&patch.rot90()), class, "rotated class {class} seed {seed}");
            }
        }
    }
}
