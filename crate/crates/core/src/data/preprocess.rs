use serde::{Deserialize, Serialize};

use super::volume::{sample_trilinear, Boundary, Volume};
use crate::error::{Error, Result};

/// Resampling then percentile normalization, as applied to every volume
/// before it reaches a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    /// Isotropic target spacing in mm; `None` keeps the native grid.
    pub target_spacing: Option<f64>,
    pub percentile_lo: f64,
    pub percentile_hi: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            target_spacing: Some(2.0),
            percentile_lo: 0.5,
            percentile_hi: 99.5,
        }
    }
}

pub fn preprocess(vol: &Volume, cfg: &PreprocessConfig) -> Result<Volume> {
    let resampled = match cfg.target_spacing {
        Some(t) => resample_isotropic(vol, t)?,
        None => vol.clone(),
    };
    percentile_normalize(&resampled, cfg.percentile_lo, cfg.percentile_hi)
}

/// Percentile of ascending-sorted values with linear interpolation between
/// order statistics (rank `p/100 · (n-1)`).
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = (p / 100.0) * (n - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

pub fn percentile(values: &[f32], p: f64) -> f64 {
    let mut sorted: Vec<f64> = values.iter().map(|&v| v as f64).collect();
    sorted.sort_by(f64::total_cmp);
    percentile_sorted(&sorted, p)
}

/// Clips intensities to the `[lo, hi]` percentiles and rescales them onto
/// `[0, 1]`.
pub fn percentile_normalize(vol: &Volume, lo: f64, hi: f64) -> Result<Volume> {
    if !(0.0..=100.0).contains(&lo) || !(0.0..=100.0).contains(&hi) || lo >= hi {
        return Err(Error::Parameter(format!(
            "percentiles must satisfy 0 <= lo < hi <= 100, got ({lo}, {hi})"
        )));
    }
    if vol.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("volume contains non-finite intensities".into()));
    }
    let mut sorted: Vec<f64> = vol.data().iter().map(|&v| v as f64).collect();
    sorted.sort_by(f64::total_cmp);
    let p_lo = percentile_sorted(&sorted, lo);
    let p_hi = percentile_sorted(&sorted, hi);
    if p_hi <= p_lo {
        return Err(Error::DegenerateStatistics(format!(
            "intensity percentiles coincide (p{lo} = p{hi} = {p_lo})"
        )));
    }
    let span = p_hi - p_lo;
    let data = vol
        .data()
        .iter()
        .map(|&v| ((v as f64).clamp(p_lo, p_hi) - p_lo) as f32 / span as f32)
        .map(|v| v.clamp(0.0, 1.0))
        .collect();
    Volume::new(vol.dims(), vol.spacing(), data)
}

/// Extent of an axis after resampling from spacing `from` to `to`.
pub fn resampled_extent(n: usize, from: f64, to: f64) -> usize {
    (n as f64 * from / to).round() as usize
}

/// Trilinear resampling onto an isotropic grid of spacing `target` mm.
///
/// Voxel centers are aligned: output index `i` samples input coordinate
/// `(i + 0.5)·target/spacing - 0.5`, clamped at the borders.
pub fn resample_isotropic(vol: &Volume, target: f64) -> Result<Volume> {
    if !(target > 0.0 && target.is_finite()) {
        return Err(Error::Parameter(format!("target spacing {target} must be positive")));
    }
    let dims = vol.dims();
    let spacing = vol.spacing();
    let mut out_dims = [0usize; 3];
    for a in 0..3 {
        out_dims[a] = resampled_extent(dims[a], spacing[a], target);
        if out_dims[a] == 0 {
            return Err(Error::InvalidGeometry(format!(
                "axis {a} of extent {} at {} mm vanishes at {target} mm",
                dims[a], spacing[a]
            )));
        }
    }
    if out_dims == dims && spacing.iter().all(|&s| s == target) {
        return Ok(vol.clone());
    }
    let ratio = [target / spacing[0], target / spacing[1], target / spacing[2]];
    let coord = |i: usize, a: usize| (i as f64 + 0.5) * ratio[a] - 0.5;
    let mut data = Vec::with_capacity(out_dims.iter().product());
    for d in 0..out_dims[0] {
        for h in 0..out_dims[1] {
            for w in 0..out_dims[2] {
                data.push(sample_trilinear(vol, [coord(d, 0), coord(h, 1), coord(w, 2)], Boundary::Clamp));
            }
        }
    }
    Volume::new(out_dims, [target; 3], data)
}
