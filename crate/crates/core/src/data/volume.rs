use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// A 3-D scalar image stored row-major as (D, H, W), with W fastest.
///
/// W is the left-right axis. `spacing` is in millimetres per axis, in the
/// same (D, H, W) order.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    spacing: [f64; 3],
    data: Vec<f32>,
}

impl Volume {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], data: Vec<f32>) -> Result<Self> {
        if dims.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!(
                "volume dims {dims:?} need {} voxels, got {}",
                dims.iter().product::<usize>(),
                data.len()
            )));
        }
        if dims.contains(&0) {
            return Err(Error::InvalidGeometry(format!("volume dims {dims:?} contain zero")));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Parameter(format!("voxel spacing {spacing:?} must be positive")));
        }
        Ok(Volume { dims, spacing, data })
    }

    pub fn filled(dims: [usize; 3], spacing: [f64; 3], value: f32) -> Result<Self> {
        Self::new(dims, spacing, vec![value; dims.iter().product()])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, d: usize, h: usize, w: usize) -> usize {
        (d * self.dims[1] + h) * self.dims[2] + w
    }

    #[inline]
    pub fn at(&self, d: usize, h: usize, w: usize) -> f32 {
        self.data[self.index(d, h, w)]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// `[1, D, H, W]` tensor (single channel).
    pub fn to_tensor<T: Element>(&self) -> Tensor<T> {
        let [d, h, w] = self.dims;
        Tensor::new(&[1, d, h, w], self.data.iter().map(|&v| T::from_f64(v as f64)).collect())
            .expect("dims match data")
    }
}

/// Outside-grid behaviour of [`sample_trilinear`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    /// Coordinates are clamped into the grid.
    Clamp,
    /// Voxels outside the grid contribute zero.
    Zero,
}

/// Trilinear interpolation at fractional voxel coordinates `(d, h, w)`.
pub fn sample_trilinear(vol: &Volume, pos: [f64; 3], boundary: Boundary) -> f32 {
    let dims = vol.dims;
    let mut base = [0isize; 3];
    let mut frac = [0.0f64; 3];
    let mut p = pos;
    for a in 0..3 {
        if boundary == Boundary::Clamp {
            p[a] = p[a].clamp(0.0, (dims[a] - 1) as f64);
        }
        let f = p[a].floor();
        base[a] = f as isize;
        frac[a] = p[a] - f;
    }
    let fetch = |d: isize, h: isize, w: isize| -> f64 {
        let idx = [d, h, w];
        let mut c = [0usize; 3];
        for a in 0..3 {
            if idx[a] < 0 || idx[a] >= dims[a] as isize {
                match boundary {
                    Boundary::Zero => return 0.0,
                    Boundary::Clamp => c[a] = idx[a].clamp(0, dims[a] as isize - 1) as usize,
                }
            } else {
                c[a] = idx[a] as usize;
            }
        }
        vol.at(c[0], c[1], c[2]) as f64
    };
    let mut acc = 0.0;
    for dz in 0..2 {
        let wz = if dz == 0 { 1.0 - frac[0] } else { frac[0] };
        if wz == 0.0 {
            continue;
        }
        for dy in 0..2 {
            let wy = if dy == 0 { 1.0 - frac[1] } else { frac[1] };
            if wy == 0.0 {
                continue;
            }
            for dx in 0..2 {
                let wx = if dx == 0 { 1.0 - frac[2] } else { frac[2] };
                if wx == 0.0 {
                    continue;
                }
                acc += wz * wy * wx * fetch(base[0] + dz, base[1] + dy, base[2] + dx);
            }
        }
    }
    acc as f32
}
