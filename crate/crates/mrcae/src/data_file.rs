//! `MRCAE-DATA` snapshot files plus a JSON provenance sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use mrcae_core::{Dims, SnapshotTensor};

use crate::error::{Error, Result};
use crate::framing::{push_f64s, read_f64s, u32_at, Layout};

pub const MAGIC: &[u8; 11] = b"MRCAE-DATA\0";
pub const VERSION: u16 = 1;

const LAYOUT: Layout = Layout { what: "data", magic: MAGIC, version: VERSION, fixed_header: 12 };

fn payload_bytes(t: u32, h: u32, w: u32) -> Option<u64> {
    (t as u64).checked_mul(h as u64)?.checked_mul(w as u64)?.checked_mul(8)
}

pub fn encode_data(x: &SnapshotTensor) -> Result<Vec<u8>> {
    let d = x.dims();
    if d.c != 1 {
        return Err(Error::Format { what: "data", reason: format!("data files hold single-channel fields, got {d}") });
    }
    let dim = |v: usize| u32::try_from(v).map_err(|_| Error::Format { what: "data", reason: format!("dimension {v} exceeds u32") });
    let mut body = Vec::with_capacity(12 + x.as_slice().len() * 8);
    for v in [d.t, d.h, d.w] {
        body.extend_from_slice(&dim(v)?.to_le_bytes());
    }
    push_f64s(&mut body, x.as_slice());
    Ok(LAYOUT.seal(&body))
}

pub fn decode_data(bytes: &[u8]) -> Result<SnapshotTensor> {
    let declared = |b: &[u8]| {
        let h = LAYOUT.header(b)?;
        let payload = payload_bytes(u32_at(h, 0), u32_at(h, 4), u32_at(h, 8))?;
        payload.checked_add(LAYOUT.min_len() as u64)
    };
    let body = LAYOUT.open(bytes, declared)?;
    let (t, h, w) = (u32_at(body, 0), u32_at(body, 4), u32_at(body, 8));
    let payload = &body[12..];
    if payload_bytes(t, h, w) != Some(payload.len() as u64) {
        return Err(Error::Format {
            what: "data",
            reason: format!("header dims ({t},{h},{w}) do not match a payload of {} bytes", payload.len()),
        });
    }
    let dims = Dims::new(t as usize, 1, h as usize, w as usize);
    Ok(SnapshotTensor::from_vec(dims, read_f64s(payload))?)
}

pub fn write_data(x: &SnapshotTensor, path: &Path) -> Result<u32> {
    let bytes = encode_data(x)?;
    fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap()))
}

pub fn read_data(path: &Path) -> Result<SnapshotTensor> {
    decode_data(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// `d.mrd` → `d.mrd.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_sidecar(path: &Path, provenance: &serde_json::Value) -> Result<()> {
    let side = sidecar_path(path);
    let mut text = serde_json::to_string_pretty(provenance)?;
    text.push('\n');
    fs::write(&side, text).map_err(|e| Error::io(side, e))
}

/// Provenance shipped next to a data file, if any.
pub fn read_sidecar(path: &Path) -> Result<Option<serde_json::Value>> {
    let side = sidecar_path(path);
    match fs::read(&side) {
        Ok(b) => Ok(Some(serde_json::from_slice(&b)?)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::io(side, e)),
    }
}
