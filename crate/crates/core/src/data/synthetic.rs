//! Seeded synthetic volumes: two bright ellipsoids over Gaussian background
//! noise whose aspect ratio depends on the class.
//!
//! Every class has the same ellipsoid count and volume, so the classes differ
//! in local shape rather than in total intensity.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::manifest::{DatasetManifest, ManifestEntry};
use super::nifti::write_nifti;
use super::volume::Volume;
use crate::error::{Error, Result};
use crate::seed;

pub const MIN_EXTENT: usize = 16;
pub const SYNTH_SPACING_MM: f64 = 2.0;

/// Ellipsoid centers as fractions of the extent along (D, H, W).
const ANCHORS: [[f64; 3]; 2] = [[0.35, 0.3, 0.3], [0.65, 0.7, 0.7]];

const STRETCH: f64 = 1.8;

/// Per-class semi-axis factors along (D, H, W); each product is 1.
fn class_shape(class: usize) -> [f64; 3] {
    let long = STRETCH;
    let short = 1.0 / STRETCH.sqrt();
    let flat = 1.0 / STRETCH;
    let wide = STRETCH.sqrt();
    match class {
        0 => [1.0, 1.0, 1.0],
        1 => [long, short, short],
        2 => [short, short, long],
        3 => [short, long, short],
        4 => [flat, wide, wide],
        5 => [wide, wide, flat],
        _ => [wide, flat, wide],
    }
}

pub const MAX_CLASSES: usize = 7;

pub fn class_label(class: usize) -> String {
    format!("class{class}")
}

/// The volume of subject `index` in `class`; depends only on the arguments.
pub fn synthetic_volume(class: usize, index: usize, extent: usize, seed: u64) -> Result<Volume> {
    if extent < MIN_EXTENT {
        return Err(Error::InvalidGeometry(format!(
            "synthetic extent {extent} below the minimum {MIN_EXTENT}"
        )));
    }
    if class >= MAX_CLASSES {
        return Err(Error::Parameter(format!("at most {MAX_CLASSES} synthetic classes are supported")));
    }
    let mut rng = seed::rng(seed, &[seed::SYNTH, class as u64, index as u64]);
    let e = extent as f64;
    let noise = Normal::new(0.1, 0.05).expect("valid normal");
    let mut data: Vec<f32> = (0..extent.pow(3)).map(|_| noise.sample(&mut rng) as f32).collect();

    let jitter = e / 32.0;
    let shape = class_shape(class);
    for anchor in &ANCHORS {
        let center: [f64; 3] = std::array::from_fn(|a| anchor[a] * e + rng.gen_range(-jitter..=jitter));
        let size = e / 8.0 * rng.gen_range(0.9..=1.1);
        let axes: [f64; 3] = std::array::from_fn(|a| size * shape[a] * rng.gen_range(0.95..=1.05));
        let intensity = rng.gen_range(0.9..=1.1) as f32;
        for d in 0..extent {
            for h in 0..extent {
                for w in 0..extent {
                    let p = [d as f64, h as f64, w as f64];
                    let r2: f64 = (0..3).map(|a| ((p[a] - center[a]) / axes[a]).powi(2)).sum();
                    if r2 <= 1.0 {
                        data[(d * extent + h) * extent + w] += intensity;
                    }
                }
            }
        }
    }
    Volume::new([extent; 3], [SYNTH_SPACING_MM; 3], data)
}

/// Writes `classes × per_class` volumes plus `manifest.csv` into `dir`.
pub fn generate_synthetic(
    dir: impl AsRef<Path>,
    classes: usize,
    per_class: usize,
    extent: usize,
    seed: u64,
) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    if classes == 0 || per_class == 0 {
        return Err(Error::Parameter("synthetic dataset needs at least one class and one sample".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(classes * per_class);
    for class in 0..classes {
        for index in 0..per_class {
            let vol = synthetic_volume(class, index, extent, seed)?;
            let path = dir.join(format!("class{class}_{index:03}.nii"));
            write_nifti(&vol, &path)?;
            entries.push(ManifestEntry {
                path,
                label: class_label(class),
                subject_id: format!("syn-{class}-{index:03}"),
            });
        }
    }
    let manifest = DatasetManifest::new(entries)?;
    manifest.write_csv(dir.join("manifest.csv"))?;
    Ok(manifest)
}
