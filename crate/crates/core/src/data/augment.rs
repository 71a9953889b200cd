use rand::Rng;
use serde::{Deserialize, Serialize};

use super::volume::{sample_trilinear, Boundary, Volume};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub enabled: bool,
    /// Inclusive isotropic scale range.
    pub scale_range: (f64, f64),
    /// Rotation about each axis is drawn from `[-max, max]` degrees.
    pub max_rotation_deg: f64,
    pub flip_probability: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            enabled: true,
            scale_range: (0.9, 1.2),
            max_rotation_deg: 10.0,
            flip_probability: 0.25,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        AugmentConfig {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::Parameter(format!("scale range ({lo}, {hi}) must satisfy 0 < lo <= hi")));
        }
        if !(self.max_rotation_deg >= 0.0 && self.max_rotation_deg.is_finite()) {
            return Err(Error::Parameter(format!("max rotation {} must be >= 0", self.max_rotation_deg)));
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(Error::Parameter(format!("flip probability {} outside [0, 1]", self.flip_probability)));
        }
        Ok(())
    }
}

/// The random parameters of one affine augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineDraw {
    pub scale: f64,
    /// Rotation angles about the D, H and W axes in degrees.
    pub angles_deg: [f64; 3],
}

impl AffineDraw {
    pub const IDENTITY: AffineDraw = AffineDraw {
        scale: 1.0,
        angles_deg: [0.0; 3],
    };
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

pub fn sample_affine<R: Rng + ?Sized>(cfg: &AugmentConfig, rng: &mut R) -> AffineDraw {
    let scale = uniform(rng, cfg.scale_range.0, cfg.scale_range.1);
    let m = cfg.max_rotation_deg;
    let angles_deg = [uniform(rng, -m, m), uniform(rng, -m, m), uniform(rng, -m, m)];
    AffineDraw { scale, angles_deg }
}

type Mat3 = [[f64; 3]; 3];

fn matmul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

fn axis_rotation(axis: usize, deg: f64) -> Mat3 {
    let (s, c) = deg.to_radians().sin_cos();
    let (i, j) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let mut m = [[0.0; 3]; 3];
    m[axis][axis] = 1.0;
    m[i][i] = c;
    m[j][j] = c;
    m[i][j] = -s;
    m[j][i] = s;
    m
}

/// Rotation matrix `R_W · R_H · R_D` acting on (d, h, w) physical vectors.
pub fn rotation_matrix(angles_deg: [f64; 3]) -> Mat3 {
    let r = matmul(&axis_rotation(1, angles_deg[1]), &axis_rotation(0, angles_deg[0]));
    matmul(&axis_rotation(2, angles_deg[2]), &r)
}

/// Scales and rotates the volume about its center in physical space.
///
/// Output voxels are pulled back through the inverse transform and sampled
/// trilinearly; samples falling outside the input are zero.
pub fn apply_affine(vol: &Volume, draw: &AffineDraw) -> Volume {
    if *draw == AffineDraw::IDENTITY {
        return vol.clone();
    }
    let dims = vol.dims();
    let sp = vol.spacing();
    let center = [
        (dims[0] as f64 - 1.0) / 2.0,
        (dims[1] as f64 - 1.0) / 2.0,
        (dims[2] as f64 - 1.0) / 2.0,
    ];
    let r = rotation_matrix(draw.angles_deg);
    let inv_s = 1.0 / draw.scale;
    let mut data = Vec::with_capacity(vol.len());
    for d in 0..dims[0] {
        for h in 0..dims[1] {
            for w in 0..dims[2] {
                let idx = [d, h, w];
                let p: [f64; 3] = std::array::from_fn(|a| (idx[a] as f64 - center[a]) * sp[a]);
                // inverse: R^T p / s
                let q: [f64; 3] =
                    std::array::from_fn(|a| (r[0][a] * p[0] + r[1][a] * p[1] + r[2][a] * p[2]) * inv_s);
                let src: [f64; 3] = std::array::from_fn(|a| center[a] + q[a] / sp[a]);
                data.push(sample_trilinear(vol, src, Boundary::Zero));
            }
        }
    }
    Volume::new(dims, sp, data).expect("same geometry")
}

pub fn random_affine<R: Rng + ?Sized>(vol: &Volume, cfg: &AugmentConfig, rng: &mut R) -> (Volume, AffineDraw) {
    let draw = sample_affine(cfg, rng);
    (apply_affine(vol, &draw), draw)
}

/// Mirrors the left-right (W) axis.
pub fn flip_lr(vol: &Volume) -> Volume {
    let [d, h, w] = vol.dims();
    let mut data = Vec::with_capacity(vol.len());
    for z in 0..d {
        for y in 0..h {
            for x in (0..w).rev() {
                data.push(vol.at(z, y, x));
            }
        }
    }
    Volume::new(vol.dims(), vol.spacing(), data).expect("same geometry")
}

/// Flips with probability `p`; the flag records whether it happened.
pub fn random_flip_lr<R: Rng + ?Sized>(vol: &Volume, p: f64, rng: &mut R) -> (Volume, bool) {
    let flipped = rng.gen::<f64>() < p;
    if flipped {
        (flip_lr(vol), true)
    } else {
        (vol.clone(), false)
    }
}

/// Affine then flip, or a copy when augmentation is disabled.
pub fn augment<R: Rng + ?Sized>(vol: &Volume, cfg: &AugmentConfig, rng: &mut R) -> Volume {
    if !cfg.enabled {
        return vol.clone();
    }
    let (v, _) = random_affine(vol, cfg, rng);
    random_flip_lr(&v, cfg.flip_probability, rng).0
}
