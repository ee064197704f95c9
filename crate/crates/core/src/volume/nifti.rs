//! Import of uncompressed single-file NIfTI-1 volumes (`.nii`).
//!
//! Orientation and affine fields are ignored: inputs are expected to be
//! aligned already. Axis order is kept exactly as stored.

use std::fs;
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian};

use super::{LabelVolume3, RawData, Volume3, VolumeHeader};
use crate::error::{Error, Result};
use crate::grid::Shape3;

const HEADER_SIZE: usize = 348;
const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;

struct Fields {
    big_endian: bool,
    dim: [i16; 8],
    datatype: i16,
    pixdim: [f32; 8],
    vox_offset: usize,
    scl_slope: f32,
    scl_inter: f32,
}

fn parse_header(bytes: &[u8]) -> Result<Fields> {
    if bytes.len() < HEADER_SIZE {
        return Err(Error::Truncated {
            expected: HEADER_SIZE,
            found: bytes.len(),
        });
    }
    if &bytes[344..348] != b"n+1\0" {
        return Err(Error::BadMagic {
            expected: "n+1\\0".into(),
            found: String::from_utf8_lossy(&bytes[344..348]).into_owned(),
        });
    }
    let big_endian = match (LittleEndian::read_i32(bytes), BigEndian::read_i32(bytes)) {
        (348, _) => false,
        (_, 348) => true,
        (n, _) => return Err(Error::MalformedHeader(format!("sizeof_hdr is {n}, expected 348"))),
    };
    let i16_at = |o: usize| {
        if big_endian {
            BigEndian::read_i16(&bytes[o..])
        } else {
            LittleEndian::read_i16(&bytes[o..])
        }
    };
    let f32_at = |o: usize| {
        if big_endian {
            BigEndian::read_f32(&bytes[o..])
        } else {
            LittleEndian::read_f32(&bytes[o..])
        }
    };
    let mut dim = [0i16; 8];
    let mut pixdim = [0f32; 8];
    for i in 0..8 {
        dim[i] = i16_at(40 + 2 * i);
        pixdim[i] = f32_at(76 + 4 * i);
    }
    let vox_offset = f32_at(108);
    if !(vox_offset.is_finite() && vox_offset >= HEADER_SIZE as f32) {
        return Err(Error::MalformedHeader(format!("vox_offset {vox_offset}")));
    }
    Ok(Fields {
        big_endian,
        dim,
        datatype: i16_at(70),
        pixdim,
        vox_offset: vox_offset as usize,
        scl_slope: f32_at(112),
        scl_inter: f32_at(116),
    })
}

fn spatial_shape(dim: &[i16; 8]) -> Result<Shape3> {
    let ndim = dim[0];
    if !(1..=7).contains(&ndim) {
        return Err(Error::UnsupportedDimensions(format!("dim[0] = {ndim}")));
    }
    let ndim = ndim as usize;
    let extent = |i: usize| if i <= ndim { dim[i] } else { 1 };
    for i in 4..=ndim {
        if dim[i] != 1 {
            return Err(Error::UnsupportedDimensions(format!(
                "dimension {i} has extent {}, only 3D volumes are supported",
                dim[i]
            )));
        }
    }
    let s = [extent(1), extent(2), extent(3)];
    if s.iter().any(|&d| d < 1) {
        return Err(Error::UnsupportedDimensions(format!("non-positive extent in {s:?}")));
    }
    Ok(Shape3([s[0] as usize, s[1] as usize, s[2] as usize]))
}

/// Reads a `.nii` file. With `as_labels` the values must be non-negative
/// integers below 65536 and come back as `u16`; otherwise they are converted
/// to `f32` with `scl_slope`/`scl_inter` applied when the slope is nonzero.
pub fn import_nifti(path: impl AsRef<Path>, as_labels: bool) -> Result<(VolumeHeader, RawData)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_nifti(&bytes, as_labels)
}

pub(crate) fn decode_nifti(bytes: &[u8], as_labels: bool) -> Result<(VolumeHeader, RawData)> {
    let f = parse_header(bytes)?;
    let shape = spatial_shape(&f.dim)?;
    let width = match f.datatype {
        DT_UINT8 => 1,
        DT_INT16 => 2,
        DT_FLOAT32 => 4,
        other => return Err(Error::UnsupportedDatatype(other)),
    };
    let n = shape.voxels();
    let end = f.vox_offset + n * width;
    if bytes.len() < end {
        return Err(Error::Truncated {
            expected: end,
            found: bytes.len(),
        });
    }
    let payload = &bytes[f.vox_offset..end];
    let values: Vec<f64> = match f.datatype {
        DT_UINT8 => payload.iter().map(|&b| b as f64).collect(),
        DT_INT16 => payload
            .chunks_exact(2)
            .map(|c| {
                if f.big_endian {
                    BigEndian::read_i16(c) as f64
                } else {
                    LittleEndian::read_i16(c) as f64
                }
            })
            .collect(),
        _ => payload
            .chunks_exact(4)
            .map(|c| {
                if f.big_endian {
                    BigEndian::read_f32(c) as f64
                } else {
                    LittleEndian::read_f32(c) as f64
                }
            })
            .collect(),
    };
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let voxel_size = [1, 2, 3].map(|i| {
        let p = f.pixdim[i].abs() as f64;
        if p > 0.0 && p.is_finite() {
            p
        } else {
            1.0
        }
    });

    if as_labels {
        let mut labels = Vec::with_capacity(n);
        for (i, &v) in values.iter().enumerate() {
            if v < 0.0 || v > u16::MAX as f64 || v.fract() != 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "voxel {i} holds {v}, not a label in 0..65536"
                )));
            }
            labels.push(v as u16);
        }
        let header = VolumeHeader::labels(shape).with_voxel_size(voxel_size);
        return Ok((header, RawData::U16(labels)));
    }

    let scaled: Vec<f32> = if f.scl_slope != 0.0 && f.scl_slope.is_finite() && f.scl_inter.is_finite() {
        values
            .iter()
            .map(|&v| (v * f.scl_slope as f64 + f.scl_inter as f64) as f32)
            .collect()
    } else {
        values.iter().map(|&v| v as f32).collect()
    };
    let header = VolumeHeader::image(shape, 1).with_voxel_size(voxel_size);
    Ok((header, RawData::F32(scaled)))
}

pub fn import_nifti_image(path: impl AsRef<Path>) -> Result<Volume3> {
    match import_nifti(path, false)? {
        (h, RawData::F32(v)) => Volume3::from_header(h, v.into_iter().map(f64::from).collect()),
        _ => unreachable!("image import yields f32"),
    }
}

pub fn import_nifti_labels(path: impl AsRef<Path>) -> Result<LabelVolume3> {
    match import_nifti(path, true)? {
        (h, RawData::U16(v)) => LabelVolume3::from_header(h, v),
        _ => unreachable!("label import yields u16"),
    }
}
