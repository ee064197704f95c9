//! IVR container: 8-byte magic, little-endian u32 JSON header length, the
//! JSON header, then the raw little-endian payload.

use std::fs;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};

use super::{Dtype, VolumeHeader};
use crate::error::{Error, Result};

pub const IVR_MAGIC: &[u8; 8] = b"IVRVOL01";

/// Payload of an IVR file, typed by the header dtype.
#[derive(Clone, Debug, PartialEq)]
pub enum RawData {
    F32(Vec<f32>),
    U16(Vec<u16>),
}

impl RawData {
    pub fn len(&self) -> usize {
        match self {
            RawData::F32(v) => v.len(),
            RawData::U16(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> Dtype {
        match self {
            RawData::F32(_) => Dtype::F32,
            RawData::U16(_) => Dtype::U16,
        }
    }
}

pub(crate) fn encode_ivr(header: &VolumeHeader, data: &RawData) -> Result<Vec<u8>> {
    header.validate()?;
    if data.dtype() != header.dtype {
        return Err(Error::MalformedHeader(format!(
            "payload is {:?} but header says {:?}",
            data.dtype(),
            header.dtype
        )));
    }
    if data.len() != header.len() {
        return Err(Error::LengthMismatch {
            expected: header.len(),
            found: data.len(),
        });
    }
    let json = serde_json::to_vec(header)?;
    let mut out = Vec::with_capacity(12 + json.len() + data.len() * 4);
    out.extend_from_slice(IVR_MAGIC);
    let mut len = [0u8; 4];
    LittleEndian::write_u32(&mut len, json.len() as u32);
    out.extend_from_slice(&len);
    out.extend_from_slice(&json);
    match data {
        RawData::F32(v) => {
            if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite(i));
            }
            let start = out.len();
            out.resize(start + v.len() * 4, 0);
            LittleEndian::write_f32_into(v, &mut out[start..]);
        }
        RawData::U16(v) => {
            let start = out.len();
            out.resize(start + v.len() * 2, 0);
            LittleEndian::write_u16_into(v, &mut out[start..]);
        }
    }
    Ok(out)
}

pub(crate) fn decode_ivr(bytes: &[u8]) -> Result<(VolumeHeader, RawData)> {
    if bytes.len() < 12 || &bytes[..8] != IVR_MAGIC {
        let found = String::from_utf8_lossy(&bytes[..bytes.len().min(8)]).into_owned();
        return Err(Error::BadMagic {
            expected: String::from_utf8_lossy(IVR_MAGIC).into_owned(),
            found,
        });
    }
    let hlen = LittleEndian::read_u32(&bytes[8..12]) as usize;
    let body = &bytes[12..];
    if body.len() < hlen {
        return Err(Error::MalformedHeader(format!(
            "header length {hlen} exceeds file size"
        )));
    }
    let header: VolumeHeader = serde_json::from_slice(&body[..hlen])
        .map_err(|e| Error::MalformedHeader(e.to_string()))?;
    header.validate()?;
    let payload = &body[hlen..];
    let width = match header.dtype {
        Dtype::F32 => 4,
        Dtype::U16 => 2,
    };
    let expected = header.len() * width;
    if payload.len() != expected {
        if payload.len() < expected {
            return Err(Error::Truncated {
                expected,
                found: payload.len(),
            });
        }
        return Err(Error::MalformedHeader(format!(
            "{} trailing bytes after payload",
            payload.len() - expected
        )));
    }
    let data = match header.dtype {
        Dtype::F32 => {
            let mut v = vec![0f32; header.len()];
            LittleEndian::read_f32_into(payload, &mut v);
            if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite(i));
            }
            RawData::F32(v)
        }
        Dtype::U16 => {
            let mut v = vec![0u16; header.len()];
            LittleEndian::read_u16_into(payload, &mut v);
            RawData::U16(v)
        }
    };
    Ok((header, data))
}

pub fn save_ivr(path: impl AsRef<Path>, header: &VolumeHeader, data: &RawData) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_ivr(header, data)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_ivr(path: impl AsRef<Path>) -> Result<(VolumeHeader, RawData)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ivr(&bytes)
}
