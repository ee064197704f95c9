//! Checkpoint file: magic `IVRCKPT1`, little-endian u32 JSON length, a JSON
//! config object, then every parameter as a little-endian `f32` in layer
//! declaration order (encoder, forward decoder, backward decoder).

use std::fs;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};
use serde::{Deserialize, Serialize};

use super::{Network, NetworkConfig, UpsampleMode};
use crate::error::{Error, Result};
use crate::grid::Shape3;

pub const CKPT_MAGIC: &[u8; 8] = b"IVRCKPT1";

/// Training context stored next to the architecture.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointInfo {
    pub window: usize,
    pub cycle_weight: f64,
    pub seed: u64,
    pub epoch: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    levels: usize,
    base_channels: usize,
    input_shape: Shape3,
    window: usize,
    cycle_weight: f64,
    seed: u64,
    epoch: usize,
    #[serde(default, skip_serializing_if = "is_nearest")]
    upsample: UpsampleMode,
}

fn is_nearest(m: &UpsampleMode) -> bool {
    *m == UpsampleMode::Nearest
}

pub(crate) fn encode_checkpoint(net: &Network, info: &CheckpointInfo) -> Result<Vec<u8>> {
    let cfg = net.config();
    let header = Header {
        levels: cfg.levels,
        base_channels: cfg.base_channels,
        input_shape: cfg.input_shape,
        window: info.window,
        cycle_weight: info.cycle_weight,
        seed: info.seed,
        epoch: info.epoch,
        upsample: cfg.upsample,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(12 + json.len() + 4 * net.param_count());
    out.extend_from_slice(CKPT_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    let params: Vec<f32> = net.params().iter().map(|&p| p as f32).collect();
    let start = out.len();
    out.resize(start + 4 * params.len(), 0);
    LittleEndian::write_f32_into(&params, &mut out[start..]);
    Ok(out)
}

pub(crate) fn decode_checkpoint(bytes: &[u8]) -> Result<(Network, CheckpointInfo)> {
    if bytes.len() < 12 || &bytes[..8] != CKPT_MAGIC {
        return Err(Error::BadMagic {
            expected: "IVRCKPT1".into(),
            found: String::from_utf8_lossy(&bytes[..bytes.len().min(8)]).into_owned(),
        });
    }
    let n = LittleEndian::read_u32(&bytes[8..12]) as usize;
    if bytes.len() < 12 + n {
        return Err(Error::MalformedHeader("checkpoint header runs past end of file".into()));
    }
    let h: Header =
        serde_json::from_slice(&bytes[12..12 + n]).map_err(|e| Error::MalformedHeader(e.to_string()))?;
    let config = NetworkConfig {
        levels: h.levels,
        base_channels: h.base_channels,
        input_shape: h.input_shape,
        upsample: h.upsample,
    };
    let mut net = Network::zeroed(config)?;
    let payload = &bytes[12 + n..];
    let expected = 4 * net.param_count();
    if payload.len() != expected {
        return Err(Error::Truncated {
            expected,
            found: payload.len(),
        });
    }
    let mut params = vec![0f32; net.param_count()];
    LittleEndian::read_f32_into(payload, &mut params);
    if let Some(i) = params.iter().position(|p| !p.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    for (dst, src) in net.params_mut().iter_mut().zip(&params) {
        *dst = *src as f64;
    }
    let info = CheckpointInfo {
        window: h.window,
        cycle_weight: h.cycle_weight,
        seed: h.seed,
        epoch: h.epoch,
    };
    Ok((net, info))
}

/// Parameters are rounded to `f32` on disk.
pub fn save_checkpoint(net: &Network, info: &CheckpointInfo, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(net, info)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Network, CheckpointInfo)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// Loads parameters into an existing network, which must have the same
/// architecture as the checkpoint.
pub fn load_checkpoint_into(net: &mut Network, path: impl AsRef<Path>) -> Result<CheckpointInfo> {
    let (loaded, info) = load_checkpoint(path)?;
    if loaded.config() != net.config() {
        return Err(Error::ArchitectureMismatch(format!(
            "checkpoint has {:?}, network has {:?}",
            loaded.config(),
            net.config()
        )));
    }
    net.params_mut().copy_from_slice(loaded.params());
    Ok(info)
}
