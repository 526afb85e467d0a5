//! Dense `(T, C, H, W)` arrays of `f64`, row-major with `W` fastest.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::{Error, Result};

/// Snapshot count, channels, rows, columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Dims {
    pub t: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub const fn new(t: usize, c: usize, h: usize, w: usize) -> Self {
        Dims { t, c, h, w }
    }

    pub const fn len(&self) -> usize {
        self.t * self.c * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    #[inline]
    pub const fn index(&self, t: usize, c: usize, i: usize, j: usize) -> usize {
        ((t * self.c + c) * self.h + i) * self.w + j
    }

    /// Inverse of [`Dims::index`].
    pub const fn unravel(&self, flat: usize) -> (usize, usize, usize, usize) {
        let j = flat % self.w;
        let rest = flat / self.w;
        let i = rest % self.h;
        let rest = rest / self.h;
        let c = rest % self.c;
        let t = rest / self.c;
        (t, c, i, j)
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{},{})", self.t, self.c, self.h, self.w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotTensor {
    dims: Dims,
    data: Vec<f64>,
}

impl SnapshotTensor {
    pub fn zeros(dims: Dims) -> Self {
        SnapshotTensor {
            dims,
            data: vec![0.0; dims.len()],
        }
    }

    pub fn filled(dims: Dims, value: f64) -> Self {
        SnapshotTensor {
            dims,
            data: vec![value; dims.len()],
        }
    }

    pub fn from_vec(dims: Dims, data: Vec<f64>) -> Result<Self> {
        if dims.t == 0 || dims.c == 0 || dims.h == 0 || dims.w == 0 {
            return Err(Error::InvalidShape {
                op: "SnapshotTensor::from_vec",
                shape: alloc::format!("{dims}"),
                reason: "every dimension must be at least 1",
            });
        }
        if data.len() != dims.len() {
            return Err(Error::shape(
                "SnapshotTensor::from_vec",
                dims,
                alloc::format!("{} values", data.len()),
            ));
        }
        Ok(SnapshotTensor { dims, data })
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for t in 0..dims.t {
            for c in 0..dims.c {
                for i in 0..dims.h {
                    for j in 0..dims.w {
                        data.push(f(t, c, i, j));
                    }
                }
            }
        }
        SnapshotTensor { dims, data }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.dims)
    }

    #[inline]
    pub fn dims(&self) -> Dims {
        self.dims
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, t: usize, c: usize, i: usize, j: usize) -> f64 {
        self.data[self.dims.index(t, c, i, j)]
    }

    #[inline]
    pub fn set(&mut self, t: usize, c: usize, i: usize, j: usize, v: f64) {
        let k = self.dims.index(t, c, i, j);
        self.data[k] = v;
    }

    /// One `(C, H, W)` block as a flat slice.
    pub fn snapshot(&self, t: usize) -> &[f64] {
        let n = self.dims.c * self.dims.plane();
        &self.data[t * n..(t + 1) * n]
    }

    /// The snapshots at `indices`, in that order.
    pub fn select_snapshots(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&t| t >= self.dims.t) {
            return Err(Error::InvalidShape {
                op: "select_snapshots",
                shape: alloc::format!("{} (index {bad})", self.dims),
                reason: "snapshot index out of range",
            });
        }
        if indices.is_empty() {
            return Err(Error::InvalidShape {
                op: "select_snapshots",
                shape: alloc::format!("{}", self.dims),
                reason: "empty selection",
            });
        }
        let mut data = Vec::with_capacity(indices.len() * self.dims.c * self.dims.plane());
        for &t in indices {
            data.extend_from_slice(self.snapshot(t));
        }
        Ok(SnapshotTensor {
            dims: Dims { t: indices.len(), ..self.dims },
            data,
        })
    }

    pub fn elementwise(&self, other: &Self, op: BinaryOp) -> Result<Self> {
        if self.dims != other.dims {
            return Err(Error::shape("elementwise", self.dims, other.dims));
        }
        let f: fn(f64, f64) -> f64 = match op {
            BinaryOp::Add => |a, b| a + b,
            BinaryOp::Sub => |a, b| a - b,
            BinaryOp::Mul => |a, b| a * b,
        };
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(SnapshotTensor { dims: self.dims, data })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.elementwise(other, BinaryOp::Add)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.elementwise(other, BinaryOp::Sub)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.elementwise(other, BinaryOp::Mul)
    }

    /// In-place `self += other`.
    pub(crate) fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.dims, other.dims);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        SnapshotTensor {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        if self.dims != other.dims {
            return Err(Error::shape("dot", self.dims, other.dims));
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Population variance over every stored value.
    pub fn variance(&self) -> f64 {
        let n = self.data.len() as f64;
        let mean = self.data.iter().sum::<f64>() / n;
        self.data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
    }
}

/// A single `H × W` plane.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(h: usize, w: usize) -> Self {
        ScalarField { h, w, data: vec![0.0; h * w] }
    }

    pub fn from_vec(h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if h == 0 || w == 0 || data.len() != h * w {
            return Err(Error::shape(
                "ScalarField::from_vec",
                alloc::format!("({h},{w})"),
                alloc::format!("{} values", data.len()),
            ));
        }
        Ok(ScalarField { h, w, data })
    }

    pub fn from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(h * w);
        for i in 0..h {
            for j in 0..w {
                data.push(f(i, j));
            }
        }
        ScalarField { h, w, data }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.w + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.w + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// View as a `(1, 1, H, W)` tensor.
    pub fn into_tensor(self) -> SnapshotTensor {
        SnapshotTensor {
            dims: Dims::new(1, 1, self.h, self.w),
            data: self.data,
        }
    }
}

/// Per-pixel `(1/T) Σ_t (data − recon)²` for single-channel stacks.
pub fn reduce_time_mean_sq(data: &SnapshotTensor, recon: &SnapshotTensor) -> Result<ScalarField> {
    if data.dims != recon.dims {
        return Err(Error::shape("reduce_time_mean_sq", data.dims, recon.dims));
    }
    let d = data.dims;
    if d.c != 1 {
        return Err(Error::InvalidShape {
            op: "reduce_time_mean_sq",
            shape: alloc::format!("{d}"),
            reason: "expected a single channel",
        });
    }
    let plane = d.plane();
    let mut acc = vec![0.0; plane];
    for t in 0..d.t {
        let a = &data.data[t * plane..(t + 1) * plane];
        let b = &recon.data[t * plane..(t + 1) * plane];
        for ((s, x), y) in acc.iter_mut().zip(a).zip(b) {
            let r = x - y;
            *s += r * r;
        }
    }
    let inv_t = 1.0 / d.t as f64;
    for s in &mut acc {
        *s *= inv_t;
    }
    Ok(ScalarField { h: d.h, w: d.w, data: acc })
}
