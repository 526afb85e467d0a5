//! Synthetic snapshot generators, the resolution pyramid and train/val/test splits.

use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::conv::decimate;
use crate::model::lattice_exponent;
use crate::tensor::{Dims, SnapshotTensor};
use crate::{Error, Result};

/// Parameters of the oscillating two-mode field.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModeParams {
    /// Angular frequency of the broad mode.
    pub omega0: f64,
    /// Angular frequency of the localised mode.
    pub omega1: f64,
    /// Length scale of the broad `cosh` mode.
    pub sigma0: f64,
    /// Width of the Gaussian bump.
    pub sigma1: f64,
    /// Listed alongside the drifting-mode setup but not used by its formula
    /// (the drift speed 0.5 is fixed). Kept for provenance only.
    pub v: f64,
}

impl Default for ModeParams {
    fn default() -> Self {
        ModeParams { omega0: 0.5, omega1: 4.0, sigma0: 10.0, sigma1: 0.25, v: 1.0 }
    }
}

/// Sampling grid: inclusive uniform grid over `[x0,x1] × [y0,y1]` and `[t0,t1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub nt: usize,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub t_range: (f64, f64),
}

impl Grid {
    /// 127×127 over `[−5,5]²` with 500 snapshots on `[0, t_end]`.
    pub fn reference(t_end: f64) -> Self {
        Grid { nx: 127, ny: 127, nt: 500, x_range: (-5.0, 5.0), y_range: (-5.0, 5.0), t_range: (0.0, t_end) }
    }

    fn validate(&self) -> Result<()> {
        if lattice_exponent(self.nx).is_none() || lattice_exponent(self.ny).is_none() {
            return Err(Error::Config(alloc::format!(
                "grid {}x{} is not of the form (2^p-1) x (2^q-1)",
                self.nx,
                self.ny
            )));
        }
        if self.nt == 0 {
            return Err(Error::Config("snapshot count must be at least 1".into()));
        }
        Ok(())
    }

    fn node(range: (f64, f64), n: usize, k: usize) -> f64 {
        if n == 1 {
            range.0
        } else {
            range.0 + (range.1 - range.0) * k as f64 / (n - 1) as f64
        }
    }

    /// Column `j` ↦ x.
    pub fn x(&self, j: usize) -> f64 {
        Self::node(self.x_range, self.nx, j)
    }

    /// Row `i` ↦ y.
    pub fn y(&self, i: usize) -> f64 {
        Self::node(self.y_range, self.ny, i)
    }

    pub fn t(&self, s: usize) -> f64 {
        Self::node(self.t_range, self.nt, s)
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.nt, 1, self.ny, self.nx)
    }
}

fn broad_mode(p: &ModeParams, x: f64, y: f64) -> f64 {
    libm::cosh((x + 1.0) / p.sigma0) * libm::cosh((y - 1.0) / p.sigma0)
}

fn bump(p: &ModeParams, x: f64, y: f64, cx: f64, cy: f64) -> f64 {
    let r2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
    libm::exp(-r2 / (2.0 * p.sigma1 * p.sigma1)) / libm::sqrt(2.0 * PI * p.sigma1)
}

/// Centre of the drifting bump at time `t`.
pub fn drift_center(t: f64) -> (f64, f64) {
    (3.0 - 0.5 * t, -3.0 + 0.5 * t)
}

/// `u(x,y)·cos(ω0 t) + v(x,y)·cos(ω1 t + π/4)` with a fixed bump at `(1, −1)`.
pub fn two_modes_value(p: &ModeParams, x: f64, y: f64, t: f64) -> f64 {
    broad_mode(p, x, y) * libm::cos(p.omega0 * t) + bump(p, x, y, 1.0, -1.0) * libm::cos(p.omega1 * t + PI / 4.0)
}

/// Same as [`two_modes_value`] but the bump travels along [`drift_center`].
pub fn drifting_modes_value(p: &ModeParams, x: f64, y: f64, t: f64) -> f64 {
    let (cx, cy) = drift_center(t);
    broad_mode(p, x, y) * libm::cos(p.omega0 * t) + bump(p, x, y, cx, cy) * libm::cos(p.omega1 * t + PI / 4.0)
}

fn sample(grid: &Grid, f: impl Fn(f64, f64, f64) -> f64) -> Result<SnapshotTensor> {
    grid.validate()?;
    Ok(SnapshotTensor::from_fn(grid.dims(), |s, _, i, j| f(grid.x(j), grid.y(i), grid.t(s))))
}

pub fn gen_two_modes(grid: &Grid, p: &ModeParams) -> Result<SnapshotTensor> {
    sample(grid, |x, y, t| two_modes_value(p, x, y, t))
}

pub fn gen_drifting_modes(grid: &Grid, p: &ModeParams) -> Result<SnapshotTensor> {
    sample(grid, |x, y, t| drifting_modes_value(p, x, y, t))
}

/// Snapshot indices of each split, ascending within a split.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitKind {
    Train,
    Val,
    Test,
}

impl Split {
    /// Shuffle `0..t` with `seed` and cut it 70/20/rest.
    pub fn shuffled(t: usize, seed: u64) -> Self {
        let mut idx: Vec<usize> = (0..t).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_train = t * 7 / 10;
        let n_val = t * 2 / 10;
        let mut train = idx[..n_train].to_vec();
        let mut val = idx[n_train..n_train + n_val].to_vec();
        let mut test = idx[n_train + n_val..].to_vec();
        train.sort_unstable();
        val.sort_unstable();
        test.sort_unstable();
        Split { train, val, test }
    }

    pub fn indices(&self, kind: SplitKind) -> &[usize] {
        match kind {
            SplitKind::Train => &self.train,
            SplitKind::Val => &self.val,
            SplitKind::Test => &self.test,
        }
    }
}

/// Data at every resolution, coarsest first, with one split shared by all levels.
#[derive(Debug, Clone, PartialEq)]
pub struct DataPyramid {
    pub levels: Vec<SnapshotTensor>,
    pub split: Split,
    pub provenance: String,
}

impl DataPyramid {
    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn finest(&self) -> &SnapshotTensor {
        self.levels.last().expect("pyramid has at least one level")
    }

    /// Level-`k` data restricted to one split.
    pub fn level_split(&self, k: usize, kind: SplitKind) -> Result<SnapshotTensor> {
        let data = self.levels.get(k).ok_or(Error::LevelOutOfRange { level: k, top: self.levels.len().checked_sub(1) })?;
        data.select_snapshots(self.split.indices(kind))
    }
}

/// Repeatedly decimate `finest` into `n_levels` levels and draw the split from `seed`.
pub fn build_pyramid(finest: SnapshotTensor, n_levels: usize, seed: u64) -> Result<DataPyramid> {
    let d = finest.dims();
    if d.c != 1 {
        return Err(Error::Config(alloc::format!("pyramid data must be single-channel, got {d}")));
    }
    let (p, q) = match (lattice_exponent(d.h), lattice_exponent(d.w)) {
        (Some(p), Some(q)) => (p as usize, q as usize),
        _ => return Err(Error::Config(alloc::format!("data dims ({},{}) are not (2^p-1, 2^q-1)", d.h, d.w))),
    };
    if n_levels == 0 || p <= n_levels || q <= n_levels {
        return Err(Error::Config(alloc::format!(
            "data dims ({},{}) give p={p}, q={q}; {n_levels} levels need p, q > {n_levels}",
            d.h,
            d.w
        )));
    }
    if d.t < 5 {
        return Err(Error::Config(alloc::format!(
            "{} snapshots leave an empty train or validation split; need at least 5",
            d.t
        )));
    }
    let mut levels = Vec::with_capacity(n_levels);
    levels.push(finest);
    for _ in 1..n_levels {
        let next = decimate(levels.last().unwrap())?;
        levels.push(next);
    }
    levels.reverse();
    Ok(DataPyramid { levels, split: Split::shuffled(d.t, seed), provenance: String::new() })
}

/// Bilinear resampling of every snapshot onto an `h × w` grid with aligned
/// corners. Approximate: intended for bringing external data onto the
/// `2^p − 1` lattice, not for anything that needs to be exact.
pub fn resize_bilinear(x: &SnapshotTensor, h: usize, w: usize) -> Result<SnapshotTensor> {
    let d = x.dims();
    if h == 0 || w == 0 {
        return Err(Error::Config("resize target must be non-empty".into()));
    }
    let coord = |k: usize, n_out: usize, n_in: usize| -> (usize, usize, f64) {
        if n_out == 1 || n_in == 1 {
            return (0, 0, 0.0);
        }
        let pos = k as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
        let lo = (libm::floor(pos) as usize).min(n_in - 1);
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, pos - lo as f64)
    };
    Ok(SnapshotTensor::from_fn(Dims::new(d.t, d.c, h, w), |t, c, i, j| {
        let (i0, i1, fi) = coord(i, h, d.h);
        let (j0, j1, fj) = coord(j, w, d.w);
        let top = x.get(t, c, i0, j0) * (1.0 - fj) + x.get(t, c, i0, j1) * fj;
        let bot = x.get(t, c, i1, j0) * (1.0 - fj) + x.get(t, c, i1, j1) * fj;
        top * (1.0 - fi) + bot * fi
    }))
}
