//! `MRCAE-CKPT` model checkpoints: JSON manifest followed by raw weight blobs.

use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use mrcae_core::conv::{ConvKernel, DeconvKernel};
use mrcae_core::model::Provenance;
use mrcae_core::{Activation, LevelBlock, MrCaeModel, SpatialMask, WideningGroup};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::framing::{push_f64s, read_f64s, u32_at, Layout};

pub const MAGIC: &[u8; 11] = b"MRCAE-CKPT\0";
pub const VERSION: u16 = 1;

const LAYOUT: Layout = Layout { what: "checkpoint", magic: MAGIC, version: VERSION, fixed_header: 4 };
const FORMAT_TAG: &str = "mrcae-checkpoint";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format: String,
    finest: [usize; 2],
    n_levels: usize,
    activation: Activation,
    provenance: Provenance,
    levels: Vec<LevelEntry>,
    blobs: Vec<BlobEntry>,
    metadata: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LevelEntry {
    level: usize,
    dims: [usize; 2],
    groups: Vec<GroupEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GroupEntry {
    channels: usize,
    mask: MaskEntry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MaskEntry {
    h: usize,
    w: usize,
    active: usize,
    /// Alternating run lengths as little-endian u32, starting with an inactive run.
    rle: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BlobEntry {
    name: String,
    len: usize,
}

/// A loaded checkpoint: the model plus whatever metadata was stored with it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: MrCaeModel,
    pub metadata: serde_json::Value,
}

fn format_err(reason: impl Into<String>) -> Error {
    Error::Format { what: "checkpoint", reason: reason.into() }
}

pub fn mask_to_rle(m: &SpatialMask) -> String {
    let mut runs: Vec<u32> = Vec::new();
    let mut current = false;
    let mut len = 0u32;
    for &b in m.bits() {
        if b == current {
            len += 1;
        } else {
            runs.push(len);
            current = b;
            len = 1;
        }
    }
    runs.push(len);
    let bytes: Vec<u8> = runs.iter().flat_map(|r| r.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

pub fn mask_from_rle(h: usize, w: usize, rle: &str) -> Result<SpatialMask> {
    let bytes = STANDARD.decode(rle).map_err(|e| format_err(format!("mask run lengths: {e}")))?;
    if bytes.len() % 4 != 0 {
        return Err(format_err("mask run lengths are not whole u32 values"));
    }
    let mut bits = Vec::with_capacity(h * w);
    let mut value = false;
    for chunk in bytes.chunks_exact(4) {
        let run = u32::from_le_bytes(chunk.try_into().unwrap()) as usize;
        if bits.len() + run > h * w {
            return Err(format_err(format!("mask runs overflow a {h}x{w} grid")));
        }
        bits.extend(std::iter::repeat(value).take(run));
        value = !value;
    }
    if bits.len() != h * w {
        return Err(format_err(format!("mask runs cover {} of {} cells", bits.len(), h * w)));
    }
    Ok(SpatialMask::from_bits(h, w, bits)?)
}

fn blob_names(model: &MrCaeModel) -> Vec<String> {
    let mut names = Vec::new();
    for b in model.levels() {
        let l = b.level();
        for part in ["deepen_conv", "deepen_deconv"] {
            names.push(format!("level{l}.{part}.weights"));
            names.push(format!("level{l}.{part}.bias"));
        }
        for j in 0..b.groups().len() {
            for part in ["conv", "deconv"] {
                names.push(format!("level{l}.group{j}.{part}.weights"));
                names.push(format!("level{l}.group{j}.{part}.bias"));
            }
        }
    }
    names
}

fn manifest_for(model: &MrCaeModel, metadata: serde_json::Value) -> Manifest {
    let (h, w) = model.finest_dims();
    Manifest {
        format: FORMAT_TAG.into(),
        finest: [h, w],
        n_levels: model.n_levels(),
        activation: model.activation(),
        provenance: model.provenance,
        levels: model
            .levels()
            .iter()
            .map(|b| LevelEntry {
                level: b.level(),
                dims: [b.dims().0, b.dims().1],
                groups: b
                    .groups()
                    .iter()
                    .map(|g| {
                        let (mh, mw) = g.mask().dims();
                        GroupEntry {
                            channels: g.channels(),
                            mask: MaskEntry { h: mh, w: mw, active: g.mask().active_count(), rle: mask_to_rle(g.mask()) },
                        }
                    })
                    .collect(),
            })
            .collect(),
        blobs: blob_names(model)
            .into_iter()
            .zip(model.param_arrays())
            .map(|(name, a)| BlobEntry { name, len: a.len() })
            .collect(),
        metadata,
    }
}

pub fn encode_checkpoint(model: &MrCaeModel, metadata: &serde_json::Value) -> Result<Vec<u8>> {
    let manifest = serde_json::to_vec(&manifest_for(model, metadata.clone()))?;
    let mut body = Vec::new();
    let len = u32::try_from(manifest.len()).map_err(|_| format_err("manifest exceeds 4 GiB"))?;
    body.extend_from_slice(&len.to_le_bytes());
    body.extend_from_slice(&manifest);
    for a in model.param_arrays() {
        push_f64s(&mut body, a);
    }
    Ok(LAYOUT.seal(&body))
}

fn declared_len(bytes: &[u8]) -> Option<u64> {
    let mlen = u32_at(LAYOUT.header(bytes)?, 0) as u64;
    let start = (LAYOUT.min_len() - 4) as u64;
    let bare = start + mlen + 4;
    let manifest = bytes.get(start as usize..(start + mlen) as usize);
    let blobs = manifest
        .and_then(|m| serde_json::from_slice::<Manifest>(m).ok())
        .map_or(0, |m| m.blobs.iter().map(|b| b.len as u64 * 8).sum());
    Some(bare + blobs)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let body = LAYOUT.open(bytes, declared_len)?;
    let mlen = u32_at(body, 0) as usize;
    let manifest_bytes = body.get(4..4 + mlen).ok_or_else(|| format_err("manifest length runs past the end of the file"))?;
    let manifest: Manifest = serde_json::from_slice(manifest_bytes).map_err(|e| format_err(format!("manifest: {e}")))?;
    if manifest.format != FORMAT_TAG {
        return Err(format_err(format!("manifest format tag {:?}", manifest.format)));
    }
    let blob_bytes = &body[4 + mlen..];
    let expected: usize = manifest.blobs.iter().map(|b| b.len * 8).sum();
    if expected != blob_bytes.len() {
        return Err(format_err(format!("manifest lists {expected} blob bytes, file holds {}", blob_bytes.len())));
    }
    let mut values = read_f64s(blob_bytes).into_iter();
    let mut blobs = manifest.blobs.iter();
    let mut next = |name: &str| -> Result<Vec<f64>> {
        let b = blobs.next().ok_or_else(|| format_err(format!("missing blob {name}")))?;
        if b.name != name {
            return Err(format_err(format!("blob {:?} where {name:?} was expected", b.name)));
        }
        Ok(values.by_ref().take(b.len).collect())
    };

    let mut levels = Vec::with_capacity(manifest.levels.len());
    for entry in &manifest.levels {
        let l = entry.level;
        let dc_w = next(&format!("level{l}.deepen_conv.weights"))?;
        let dc_b = next(&format!("level{l}.deepen_conv.bias"))?;
        let dd_w = next(&format!("level{l}.deepen_deconv.weights"))?;
        let dd_b = next(&format!("level{l}.deepen_deconv.bias"))?;
        let mut groups = Vec::with_capacity(entry.groups.len());
        for (j, g) in entry.groups.iter().enumerate() {
            let mask = mask_from_rle(g.mask.h, g.mask.w, &g.mask.rle)?;
            if mask.active_count() != g.mask.active {
                return Err(format_err(format!("level {l} group {j}: mask active count disagrees with its runs")));
            }
            let cw = next(&format!("level{l}.group{j}.conv.weights"))?;
            let cb = next(&format!("level{l}.group{j}.conv.bias"))?;
            let dw = next(&format!("level{l}.group{j}.deconv.weights"))?;
            let db = next(&format!("level{l}.group{j}.deconv.bias"))?;
            groups.push(WideningGroup::from_parts(
                ConvKernel::from_parts(g.channels, 1, cw, cb)?,
                DeconvKernel::from_parts(g.channels, 1, dw, db)?,
                mask,
                manifest.activation,
            )?);
        }
        levels.push(LevelBlock::from_parts(
            l,
            (entry.dims[0], entry.dims[1]),
            ConvKernel::from_parts(1, 1, dc_w, dc_b)?,
            DeconvKernel::from_parts(1, 1, dd_w, dd_b)?,
            groups,
        )?);
    }
    if blobs.next().is_some() {
        return Err(format_err("manifest lists more blobs than the topology uses"));
    }
    let model = MrCaeModel::from_levels(
        (manifest.finest[0], manifest.finest[1]),
        manifest.n_levels,
        manifest.activation,
        levels,
        manifest.provenance,
    )?;
    Ok(Checkpoint { model, metadata: manifest.metadata })
}

pub fn save_checkpoint(model: &MrCaeModel, metadata: &serde_json::Value, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(model, metadata)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
