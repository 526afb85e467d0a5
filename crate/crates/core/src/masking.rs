//! Binary spatial masks that gate widening-group features.

use alloc::vec;
use alloc::vec::Vec;

use crate::conv::local_average_downsample;
use crate::tensor::{reduce_time_mean_sq, SnapshotTensor};
use crate::{Error, Result};

/// A `{0,1}` field at feature (coarse) resolution.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SpatialMask {
    h: usize,
    w: usize,
    bits: Vec<bool>,
    active: usize,
}

impl SpatialMask {
    pub fn from_bits(h: usize, w: usize, bits: Vec<bool>) -> Result<Self> {
        if h == 0 || w == 0 || bits.len() != h * w {
            return Err(Error::shape(
                "SpatialMask::from_bits",
                alloc::format!("({h},{w})"),
                alloc::format!("{} cells", bits.len()),
            ));
        }
        let active = bits.iter().filter(|&&b| b).count();
        Ok(SpatialMask { h, w, bits, active })
    }

    pub fn ones(h: usize, w: usize) -> Self {
        SpatialMask { h, w, bits: vec![true; h * w], active: h * w }
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        SpatialMask { h, w, bits: vec![false; h * w], active: 0 }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn active_count(&self) -> usize {
        self.active
    }

    pub fn is_empty(&self) -> bool {
        self.active == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.w + j]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// Row-major `(i, j)` of every active cell.
    pub fn active_cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(k, _)| (k / self.w, k % self.w))
    }
}

/// Threshold the locally averaged, time-averaged squared residual at `eps` (inclusive).
pub fn compute_mask(data: &SnapshotTensor, recon: &SnapshotTensor, eps: f64) -> Result<SpatialMask> {
    if !(eps >= 0.0) {
        return Err(Error::Config(alloc::format!("mask tolerance must be >= 0, got {eps}")));
    }
    let residual = reduce_time_mean_sq(data, recon)?;
    let averaged = local_average_downsample(&residual)?;
    let (h, w) = averaged.dims();
    let bits = averaged.as_slice().iter().map(|&v| v >= eps).collect();
    SpatialMask::from_bits(h, w, bits)
}

/// Zero every feature outside the mask, identically for all snapshots and channels.
pub fn apply_mask(features: &SnapshotTensor, mask: &SpatialMask) -> Result<SnapshotTensor> {
    let d = features.dims();
    if (d.h, d.w) != mask.dims() {
        return Err(Error::shape(
            "apply_mask",
            d,
            alloc::format!("mask ({},{})", mask.h, mask.w),
        ));
    }
    let mut out = features.clone();
    let plane = d.plane();
    for chunk in out.as_mut_slice().chunks_exact_mut(plane) {
        for (v, &keep) in chunk.iter_mut().zip(&mask.bits) {
            if !keep {
                *v = 0.0;
            }
        }
    }
    Ok(out)
}
