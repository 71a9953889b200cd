//! Single-file NIfTI-1 (`.nii`) reading and writing.
//!
//! Reads int16, float32 and float64 voxels in either byte order and writes
//! little-endian float32 with `vox_offset = 352`. Axis `dim[1]` (x, fastest)
//! maps to the volume's W axis, `dim[3]` to D.

use std::fs;
use std::path::Path;

use super::volume::Volume;
use crate::error::{Error, Result};

pub const HEADER_SIZE: usize = 348;
pub const VOX_OFFSET: usize = 352;
const MAGIC_OFFSET: usize = 344;
const MAGIC: &[u8; 4] = b"n+1\0";

const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;
const DT_FLOAT64: i16 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endian {
    Little,
    Big,
}

struct Reader<'a> {
    bytes: &'a [u8],
    endian: Endian,
}

impl Reader<'_> {
    fn raw<const N: usize>(&self, off: usize) -> [u8; N] {
        let mut b: [u8; N] = self.bytes[off..off + N].try_into().expect("in bounds");
        if self.endian == Endian::Big {
            b.reverse();
        }
        b
    }

    fn i16(&self, off: usize) -> i16 {
        i16::from_le_bytes(self.raw(off))
    }

    fn f32(&self, off: usize) -> f32 {
        f32::from_le_bytes(self.raw(off))
    }

    fn f64(&self, off: usize) -> f64 {
        f64::from_le_bytes(self.raw(off))
    }
}

/// Parses an in-memory `.nii` file.
pub fn parse_nifti(bytes: &[u8]) -> Result<Volume> {
    if bytes.len() < HEADER_SIZE {
        return Err(Error::format("sizeof_hdr", format!("file is only {} bytes", bytes.len())));
    }
    let le = i32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes"));
    let be = i32::from_be_bytes(bytes[0..4].try_into().expect("4 bytes"));
    let endian = match (le, be) {
        (348, _) => Endian::Little,
        (_, 348) => Endian::Big,
        _ => return Err(Error::format("sizeof_hdr", format!("expected 348, found {le}"))),
    };
    let r = Reader { bytes, endian };
    if &bytes[MAGIC_OFFSET..MAGIC_OFFSET + 4] != MAGIC {
        return Err(Error::format(
            "magic",
            format!("expected \"n+1\\0\", found {:?}", &bytes[MAGIC_OFFSET..MAGIC_OFFSET + 4]),
        ));
    }

    let dim: Vec<i16> = (0..8).map(|i| r.i16(40 + 2 * i)).collect();
    let ndim = dim[0];
    if !(1..=7).contains(&ndim) {
        return Err(Error::format("dim[0]", format!("{ndim} is not in 1..=7")));
    }
    let ndim = ndim as usize;
    let mut extents = [1usize; 3];
    for i in 1..=ndim {
        if dim[i] < 1 {
            return Err(Error::format(format!("dim[{i}]"), format!("non-positive extent {}", dim[i])));
        }
        if i <= 3 {
            extents[i - 1] = dim[i] as usize;
        } else if dim[i] != 1 {
            return Err(Error::format(
                format!("dim[{i}]"),
                format!("only 3-D volumes are supported, found extent {}", dim[i]),
            ));
        }
    }
    let [nx, ny, nz] = extents;

    let datatype = r.i16(70);
    let elem = match datatype {
        DT_INT16 => 2,
        DT_FLOAT32 => 4,
        DT_FLOAT64 => 8,
        other => {
            return Err(Error::format(
                "datatype",
                format!("unsupported code {other} (int16=4, float32=16, float64=64)"),
            ))
        }
    };

    let mut spacing = [1.0f64; 3];
    for (i, s) in spacing.iter_mut().enumerate().take(ndim.min(3)) {
        let v = r.f32(76 + 4 * (i + 1)).abs() as f64;
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::format(format!("pixdim[{}]", i + 1), format!("invalid spacing {v}")));
        }
        *s = v;
    }

    let vox_offset = r.f32(108);
    if vox_offset.is_nan() || vox_offset < VOX_OFFSET as f32 {
        return Err(Error::format("vox_offset", format!("{vox_offset} < 352")));
    }
    let start = vox_offset as usize;
    let count = nx * ny * nz;
    let end = start + count * elem;
    if bytes.len() < end {
        return Err(Error::format(
            "voxel data",
            format!("truncated: need {end} bytes, file has {}", bytes.len()),
        ));
    }
    let data = Reader {
        bytes: &bytes[start..end],
        endian,
    };
    let mut voxels: Vec<f32> = match datatype {
        DT_INT16 => (0..count).map(|i| data.i16(2 * i) as f32).collect(),
        DT_FLOAT32 => (0..count).map(|i| data.f32(4 * i)).collect(),
        _ => (0..count).map(|i| data.f64(8 * i) as f32).collect(),
    };

    let (slope, inter) = (r.f32(112), r.f32(116));
    if slope != 0.0 && slope.is_finite() && inter.is_finite() && !(slope == 1.0 && inter == 0.0) {
        voxels.iter_mut().for_each(|v| *v = *v * slope + inter);
    }

    // (x, y, z) with x fastest is (W, H, D) row-major
    Volume::new([nz, ny, nx], [spacing[2], spacing[1], spacing[0]], voxels)
}

/// Encodes a float32 single-file NIfTI-1 image.
pub fn encode_nifti(volume: &Volume, endian: Endian) -> Vec<u8> {
    let mut buf = vec![0u8; VOX_OFFSET + 4 * volume.len()];
    let put = |buf: &mut [u8], off: usize, mut b: Vec<u8>| {
        if endian == Endian::Big {
            b.reverse();
        }
        buf[off..off + b.len()].copy_from_slice(&b);
    };
    let [d, h, w] = volume.dims();
    let [sd, sh, sw] = volume.spacing();

    put(&mut buf, 0, 348i32.to_le_bytes().to_vec());
    buf[38] = b'r';
    let dims = [3i16, w as i16, h as i16, d as i16, 1, 1, 1, 1];
    for (i, v) in dims.iter().enumerate() {
        put(&mut buf, 40 + 2 * i, v.to_le_bytes().to_vec());
    }
    put(&mut buf, 70, DT_FLOAT32.to_le_bytes().to_vec());
    put(&mut buf, 72, 32i16.to_le_bytes().to_vec());
    let pixdim = [1.0f32, sw as f32, sh as f32, sd as f32, 0.0, 0.0, 0.0, 0.0];
    for (i, v) in pixdim.iter().enumerate() {
        put(&mut buf, 76 + 4 * i, v.to_le_bytes().to_vec());
    }
    put(&mut buf, 108, (VOX_OFFSET as f32).to_le_bytes().to_vec());
    put(&mut buf, 112, 1.0f32.to_le_bytes().to_vec());
    // xyzt_units: millimetres
    buf[123] = 2;
    // sform_code 1 (scanner) with a diagonal affine
    put(&mut buf, 254, 1i16.to_le_bytes().to_vec());
    let srows = [[sw as f32, 0.0, 0.0, 0.0], [0.0, sh as f32, 0.0, 0.0], [0.0, 0.0, sd as f32, 0.0]];
    for (r, row) in srows.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            put(&mut buf, 280 + 16 * r + 4 * c, v.to_le_bytes().to_vec());
        }
    }
    buf[MAGIC_OFFSET..MAGIC_OFFSET + 4].copy_from_slice(MAGIC);

    for (i, v) in volume.data().iter().enumerate() {
        put(&mut buf, VOX_OFFSET + 4 * i, v.to_le_bytes().to_vec());
    }
    buf
}

pub fn read_nifti(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_nifti(&bytes).map_err(|e| match e {
        Error::Format { field, reason } => Error::Format {
            field: format!("{} ({})", field, path.display()),
            reason,
        },
        other => other,
    })
}

pub fn write_nifti(volume: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_nifti(volume, Endian::Little)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Volume {
        Volume::new([2, 3, 4], [2.5, 1.0, 0.75], (0..24).map(|i| i as f32 * 0.5 - 3.0).collect()).unwrap()
    }

    #[test]
    fn magic_and_length() {
        let bytes = encode_nifti(&sample(), Endian::Little);
        assert_eq!(&bytes[344..348], b"n+1\0");
        assert_eq!(bytes.len(), 352 + 4 * 24);
    }

    #[test]
    fn big_endian_parses_like_little_endian() {
        let v = sample();
        let be = encode_nifti(&v, Endian::Big);
        assert_eq!(i32::from_be_bytes(be[0..4].try_into().unwrap()), 348);
        assert_eq!(parse_nifti(&be).unwrap(), parse_nifti(&encode_nifti(&v, Endian::Little)).unwrap());
    }

    #[test]
    fn uint8_is_unsupported() {
        let mut bytes = encode_nifti(&sample(), Endian::Little);
        bytes[70..72].copy_from_slice(&2i16.to_le_bytes());
        let err = parse_nifti(&bytes).unwrap_err();
        assert!(matches!(err, Error::Format { ref field, .. } if field == "datatype"), "{err}");
    }

    #[test]
    fn bad_magic_and_truncation() {
        let mut bytes = encode_nifti(&sample(), Endian::Little);
        bytes.truncate(bytes.len() - 1);
        assert!(matches!(parse_nifti(&bytes), Err(Error::Format { ref field, .. }) if field == "voxel data"));
        bytes[345] = b'i';
        assert!(matches!(parse_nifti(&bytes), Err(Error::Format { ref field, .. }) if field == "magic"));
    }

    #[test]
    fn four_d_with_unit_time_is_accepted_otherwise_rejected() {
        let mut bytes = encode_nifti(&sample(), Endian::Little);
        bytes[40..42].copy_from_slice(&4i16.to_le_bytes());
        assert!(parse_nifti(&bytes).is_ok());
        bytes[48..50].copy_from_slice(&2i16.to_le_bytes());
        assert!(matches!(parse_nifti(&bytes), Err(Error::Format { ref field, .. }) if field == "dim[4]"));
    }

    #[test]
    fn int16_with_scaling() {
        let mut bytes = encode_nifti(&Volume::filled([1, 1, 2], [1.0; 3], 0.0).unwrap(), Endian::Little);
        bytes.truncate(352);
        bytes[70..72].copy_from_slice(&DT_INT16.to_le_bytes());
        bytes[72..74].copy_from_slice(&16i16.to_le_bytes());
        bytes[112..116].copy_from_slice(&2.0f32.to_le_bytes());
        bytes[116..120].copy_from_slice(&1.0f32.to_le_bytes());
        bytes.extend_from_slice(&(-3i16).to_le_bytes());
        bytes.extend_from_slice(&5i16.to_le_bytes());
        assert_eq!(parse_nifti(&bytes).unwrap().data(), &[-5.0, 11.0]);
    }
}
