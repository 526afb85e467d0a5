//! Level loss (weighted MSE + worst-pixel term) and the cross-resolution
//! global metric measured against the finest data.

use crate::conv::{bilinear_upsample, decimate};
use crate::model::MrCaeModel;
use crate::tensor::{reduce_time_mean_sq, ScalarField, SnapshotTensor};
use crate::{Error, Result};

/// `total = omega·mse_part + (1 − omega)·max_part`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub mse_part: f64,
    pub max_part: f64,
    pub omega: f64,
}

impl LossValue {
    fn combine(mse_part: f64, max_part: f64, omega: f64) -> Self {
        LossValue {
            total: omega * mse_part + (1.0 - omega) * max_part,
            mse_part,
            max_part,
            omega,
        }
    }
}

pub fn check_omega(omega: f64) -> Result<()> {
    if (0.0..=1.0).contains(&omega) {
        Ok(())
    } else {
        Err(Error::Config(alloc::format!("omega must lie in [0, 1], got {omega}")))
    }
}

/// Lowest flat index attaining the maximum.
fn argmax(field: &ScalarField) -> usize {
    let s = field.as_slice();
    let mut best = 0;
    for (k, &v) in s.iter().enumerate().skip(1) {
        if v > s[best] {
            best = k;
        }
    }
    best
}

pub fn level_loss(data: &SnapshotTensor, recon: &SnapshotTensor, omega: f64) -> Result<LossValue> {
    Ok(evaluate(data, recon, omega)?.0)
}

fn evaluate(data: &SnapshotTensor, recon: &SnapshotTensor, omega: f64) -> Result<(LossValue, usize)> {
    check_omega(omega)?;
    let per_pixel = reduce_time_mean_sq(data, recon)?;
    let mse_part = per_pixel.as_slice().iter().sum::<f64>() / per_pixel.as_slice().len() as f64;
    let peak = argmax(&per_pixel);
    let max_part = per_pixel.as_slice()[peak];
    Ok((LossValue::combine(mse_part, max_part, omega), peak))
}

/// (Sub)gradient of [`level_loss`]'s total with respect to `recon`.
///
/// The max term routes its gradient through a single pixel; ties go to the
/// lowest flat pixel index.
pub fn level_loss_backward(data: &SnapshotTensor, recon: &SnapshotTensor, omega: f64) -> Result<SnapshotTensor> {
    Ok(level_loss_with_grad(data, recon, omega)?.1)
}

/// Loss and its gradient in one pass.
pub fn level_loss_with_grad(
    data: &SnapshotTensor,
    recon: &SnapshotTensor,
    omega: f64,
) -> Result<(LossValue, SnapshotTensor)> {
    let (loss, peak) = evaluate(data, recon, omega)?;
    let d = data.dims();
    let plane = d.plane();
    let mse_scale = omega * 2.0 / (d.t * plane) as f64;
    let max_scale = (1.0 - omega) * 2.0 / d.t as f64;
    let mut grad = recon.zeros_like();
    let g = grad.as_mut_slice();
    for (k, ((gv, &r), &x)) in g.iter_mut().zip(recon.as_slice()).zip(data.as_slice()).enumerate() {
        let diff = r - x;
        *gv = mse_scale * diff;
        if k % plane == peak {
            *gv += max_scale * diff;
        }
    }
    Ok((loss, grad))
}

/// Evaluate a level-`k` reconstruction against the finest data: restrict
/// `finest` down to level `k`, reconstruct, prolong back up with bilinear
/// interpolation and score with [`level_loss`].
pub fn global_loss(model: &MrCaeModel, k: usize, finest: &SnapshotTensor, omega: f64) -> Result<LossValue> {
    let (recon, _) = global_reconstruction(model, k, finest)?;
    level_loss(finest, &recon, omega)
}

/// Level-`k` reconstruction prolonged to the finest grid, plus the level-`k` view it came from.
pub fn global_reconstruction(
    model: &MrCaeModel,
    k: usize,
    finest: &SnapshotTensor,
) -> Result<(SnapshotTensor, SnapshotTensor)> {
    let n = model.n_levels();
    if k >= n || model.top_level().map_or(true, |top| k > top) {
        return Err(Error::LevelOutOfRange { level: k, top: model.top_level() });
    }
    let d = finest.dims();
    let (h, w) = model.finest_dims();
    if d.c != 1 || (d.h, d.w) != (h, w) {
        return Err(Error::shape("global_loss", d, crate::Dims::new(d.t, 1, h, w)));
    }
    let mut view = finest.clone();
    for _ in k + 1..n {
        view = decimate(&view)?;
    }
    let mut recon = model.forward(&view, k)?;
    for _ in k + 1..n {
        recon = bilinear_upsample(&recon)?;
    }
    Ok((recon, view))
}
