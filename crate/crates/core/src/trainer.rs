//! Gradient training of a fixed topology and the progressive
//! deepen-then-widen loop over a data pyramid.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::conv::bilinear_upsample;
use crate::datasets::{DataPyramid, SplitKind};
use crate::masking::{compute_mask, SpatialMask};
use crate::model::{Activation, MrCaeModel};
use crate::objectives::{check_omega, level_loss, level_loss_with_grad, LossValue};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::tensor::SnapshotTensor;
use crate::{Error, Result};

/// How many groups to add at each level.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum WidenSchedule {
    /// Widen while the residual mask is non-empty, up to `max_groups`.
    Auto,
    /// Exactly this many groups per level, coarsest first.
    Explicit(Vec<usize>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum MaskMode {
    /// Threshold the residual.
    #[default]
    Adaptive,
    /// Every group sees every cell.
    Dense,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub omega: f64,
    /// Mask tolerance per level. When absent, `eps_tau · Var(train data at that level)`.
    pub eps: Option<Vec<f64>>,
    pub eps_tau: f64,
    pub max_epochs: usize,
    pub adam: AdamConfig,
    /// Snapshots per gradient step; `None` is full batch.
    pub batch_size: Option<usize>,
    pub group_channels: usize,
    pub max_groups: usize,
    pub widen_schedule: WidenSchedule,
    pub init_noise: f64,
    pub seed: u64,
    pub mask_mode: MaskMode,
    pub activation: Activation,
    /// Only train the top level's arrays.
    pub freeze_lower: bool,
    pub early_stop_window: usize,
    pub early_stop_min_rel_decrease: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            omega: 0.5,
            eps: None,
            eps_tau: 0.01,
            max_epochs: 500,
            adam: AdamConfig::default(),
            batch_size: Some(5),
            group_channels: 4,
            max_groups: 3,
            widen_schedule: WidenSchedule::Auto,
            init_noise: 1e-3,
            seed: 0,
            mask_mode: MaskMode::Adaptive,
            activation: Activation::Linear,
            freeze_lower: false,
            early_stop_window: 10,
            early_stop_min_rel_decrease: 1e-3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n_levels: usize) -> Result<()> {
        check_omega(self.omega)?;
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1");
        }
        if !(self.adam.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if self.group_channels == 0 {
            return bad("group width must be at least 1");
        }
        if self.batch_size == Some(0) {
            return bad("batch size must be at least 1");
        }
        if self.early_stop_window == 0 {
            return bad("early-stop window must be at least 1");
        }
        if !(self.init_noise >= 0.0) || !(self.eps_tau >= 0.0) {
            return bad("init noise and eps_tau must be >= 0");
        }
        if let Some(eps) = &self.eps {
            if eps.len() != n_levels {
                return Err(Error::Config(format!("{} mask tolerances for {n_levels} levels", eps.len())));
            }
            if eps.iter().any(|e| !(*e >= 0.0)) {
                return bad("mask tolerances must be >= 0");
            }
        }
        if let WidenSchedule::Explicit(counts) = &self.widen_schedule {
            if counts.len() != n_levels {
                return Err(Error::Config(format!(
                    "widen schedule lists {} levels but the pyramid has {n_levels}",
                    counts.len()
                )));
            }
        }
        Ok(())
    }

    /// Mask tolerance at level `k` given that level's training data.
    pub fn eps_for(&self, k: usize, train: &SnapshotTensor) -> f64 {
        match &self.eps {
            Some(e) => e[k],
            None => self.eps_tau * train.variance(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowOp {
    Deepen,
    Widen,
    Train,
}

impl RowOp {
    pub fn as_str(self) -> &'static str {
        match self {
            RowOp::Deepen => "deepen",
            RowOp::Widen => "widen",
            RowOp::Train => "train",
        }
    }
}

/// One metrics line: an epoch, or a growth event (epoch 0, metrics right after growth).
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub level: usize,
    pub phase: usize,
    pub op: RowOp,
    pub epoch: usize,
    pub train: LossValue,
    pub val: LossValue,
    pub val_global: LossValue,
    pub params: usize,
    pub encoding_size: usize,
    pub wall_ms: u64,
}

/// Summary of one growth operation and the training that followed it.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseRecord {
    pub phase: usize,
    pub level: usize,
    pub op: RowOp,
    pub params_after: usize,
    pub encoding_size_after: usize,
    pub mask_active: Option<usize>,
    pub epochs_run: usize,
    pub stopped_early: bool,
    /// Validation global loss at the end of the phase's training.
    pub final_val_global: LossValue,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub rows: Vec<MetricsRow>,
    pub phases: Vec<PhaseRecord>,
}

impl TrainHistory {
    /// Last epoch row of each level.
    pub fn level_end_rows(&self) -> Vec<&MetricsRow> {
        let mut out: Vec<&MetricsRow> = Vec::new();
        for r in &self.rows {
            match out.last_mut() {
                Some(last) if last.level == r.level => *last = r,
                _ => out.push(r),
            }
        }
        out
    }
}

/// Hooks for wall-clock timing and progress reporting.
pub trait TrainMonitor {
    fn now_ms(&mut self) -> u64 {
        0
    }

    fn on_row(&mut self, _row: &MetricsRow) {}
}

impl TrainMonitor for () {}

/// Stop when the loss has not dropped by a relative `min_rel_decrease` over
/// the last `window` epochs, checked at every multiple of `window`.
#[derive(Debug, Clone)]
pub struct EarlyStop {
    window: usize,
    min_rel_decrease: f64,
    history: Vec<f64>,
}

impl EarlyStop {
    /// `baseline` is the loss before the first epoch.
    pub fn new(window: usize, min_rel_decrease: f64, baseline: f64) -> Self {
        let mut history = Vec::new();
        history.push(baseline);
        EarlyStop { window, min_rel_decrease, history }
    }

    /// Record the loss of the next epoch; true when training should stop.
    pub fn push(&mut self, loss: f64) -> bool {
        self.history.push(loss);
        let epoch = self.history.len() - 1;
        if epoch % self.window != 0 {
            return false;
        }
        let before = self.history[epoch - self.window];
        if before <= 0.0 {
            return true;
        }
        (before - loss) / before < self.min_rel_decrease
    }
}

/// Level-`k` slices of the pyramid used during training.
#[derive(Debug, Clone)]
pub struct LevelData {
    pub level: usize,
    pub train: SnapshotTensor,
    pub val: SnapshotTensor,
    /// Validation split at the finest resolution.
    pub finest_val: SnapshotTensor,
}

impl LevelData {
    pub fn from_pyramid(pyramid: &DataPyramid, k: usize) -> Result<Self> {
        Ok(LevelData {
            level: k,
            train: pyramid.level_split(k, SplitKind::Train)?,
            val: pyramid.level_split(k, SplitKind::Val)?,
            finest_val: pyramid.level_split(pyramid.n_levels() - 1, SplitKind::Val)?,
        })
    }
}

struct Snapshot {
    train: LossValue,
    val: LossValue,
    val_global: LossValue,
}

fn evaluate(model: &MrCaeModel, data: &LevelData, omega: f64, train: Option<LossValue>) -> Result<Snapshot> {
    let k = data.level;
    let train = match train {
        Some(t) => t,
        None => level_loss(&data.train, &model.forward(&data.train, k)?, omega)?,
    };
    let recon = model.forward(&data.val, k)?;
    let val = level_loss(&data.val, &recon, omega)?;
    let mut up = recon;
    for _ in k + 1..model.n_levels() {
        up = bilinear_upsample(&up)?;
    }
    let val_global = level_loss(&data.finest_val, &up, omega)?;
    Ok(Snapshot { train, val, val_global })
}

fn frozen_mask(model: &MrCaeModel, level: usize, cfg: &TrainConfig) -> Option<Vec<bool>> {
    cfg.freeze_lower
        .then(|| model.param_array_levels().into_iter().map(|l| l < level).collect())
}

/// One full gradient pass over `data.train`; returns the training loss seen during the pass.
fn run_epoch(
    model: &mut MrCaeModel,
    data: &LevelData,
    cfg: &TrainConfig,
    state: &mut AdamState,
    frozen: Option<&[bool]>,
    rng: &mut ChaCha8Rng,
) -> Result<LossValue> {
    let k = data.level;
    let step = |model: &mut MrCaeModel, batch: &SnapshotTensor, state: &mut AdamState| -> Result<LossValue> {
        let trace = model.forward_trace(batch, k)?;
        let (loss, grad) = level_loss_with_grad(batch, &trace.output, cfg.omega)?;
        let grads = model.backward(&trace, &grad)?;
        adam_step(&mut model.param_arrays_mut(), &grads, state, &cfg.adam, frozen)?;
        Ok(loss)
    };
    let t = data.train.dims().t;
    match cfg.batch_size {
        Some(b) if b < t => {
            let mut order: Vec<usize> = (0..t).collect();
            order.shuffle(rng);
            for chunk in order.chunks(b) {
                step(model, &data.train.select_snapshots(chunk)?, state)?;
            }
            level_loss(&data.train, &model.forward(&data.train, k)?, cfg.omega)
        }
        _ => step(model, &data.train, state),
    }
}

/// Train the current topology on one level for up to `cfg.max_epochs` epochs.
///
/// `phase` and `baseline` (the training loss before the first epoch) label
/// the rows and seed the early-stop rule.
pub fn train_phase<M: TrainMonitor + ?Sized>(
    model: &mut MrCaeModel,
    data: &LevelData,
    cfg: &TrainConfig,
    phase: usize,
    baseline: f64,
    rng: &mut ChaCha8Rng,
    history: &mut TrainHistory,
    monitor: &mut M,
) -> Result<(usize, bool, LossValue)> {
    let k = data.level;
    if model.top_level() != Some(k) {
        return Err(Error::LevelOutOfRange { level: k, top: model.top_level() });
    }
    let mut state = AdamState::for_shapes(model.param_arrays());
    let frozen = frozen_mask(model, k, cfg);
    let mut stop = EarlyStop::new(cfg.early_stop_window, cfg.early_stop_min_rel_decrease, baseline);
    let params = model.count_params();
    let encoding_size = model.encoding_size();
    let mut last_global = None;
    for epoch in 1..=cfg.max_epochs {
        let train = run_epoch(model, data, cfg, &mut state, frozen.as_deref(), rng)?;
        if !train.total.is_finite() {
            return Err(Error::NonFinite { level: k, epoch, value: train.total });
        }
        let snap = evaluate(model, data, cfg.omega, Some(train))?;
        let row = MetricsRow {
            level: k,
            phase,
            op: RowOp::Train,
            epoch,
            train: snap.train,
            val: snap.val,
            val_global: snap.val_global,
            params,
            encoding_size,
            wall_ms: monitor.now_ms(),
        };
        monitor.on_row(&row);
        history.rows.push(row);
        last_global = Some(snap.val_global);
        if stop.push(train.total) {
            return Ok((epoch, true, snap.val_global));
        }
    }
    Ok((cfg.max_epochs, false, last_global.expect("max_epochs >= 1")))
}

/// Derive an independent seed for stream `index` from `seed` (SplitMix64 finaliser).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct Run<'a, M: ?Sized> {
    cfg: &'a TrainConfig,
    rng: ChaCha8Rng,
    history: TrainHistory,
    monitor: &'a mut M,
}

impl<M: TrainMonitor + ?Sized> Run<'_, M> {
    fn grow_and_train(
        &mut self,
        model: &mut MrCaeModel,
        data: &LevelData,
        op: RowOp,
        mask_active: Option<usize>,
    ) -> Result<()> {
        let phase = self.history.phases.len();
        let snap = evaluate(model, data, self.cfg.omega, None)?;
        let row = MetricsRow {
            level: data.level,
            phase,
            op,
            epoch: 0,
            train: snap.train,
            val: snap.val,
            val_global: snap.val_global,
            params: model.count_params(),
            encoding_size: model.encoding_size(),
            wall_ms: self.monitor.now_ms(),
        };
        self.monitor.on_row(&row);
        self.history.rows.push(row);
        let (epochs_run, stopped_early, final_val_global) = train_phase(
            model,
            data,
            self.cfg,
            phase,
            snap.train.total,
            &mut self.rng,
            &mut self.history,
            self.monitor,
        )?;
        self.history.phases.push(PhaseRecord {
            phase,
            level: data.level,
            op,
            params_after: model.count_params(),
            encoding_size_after: model.encoding_size(),
            mask_active,
            epochs_run,
            stopped_early,
            final_val_global,
        });
        Ok(())
    }
}

/// Grow and train a model level by level over `pyramid`.
pub fn progressive_train<M: TrainMonitor + ?Sized>(
    pyramid: &DataPyramid,
    cfg: &TrainConfig,
    monitor: &mut M,
) -> Result<(MrCaeModel, TrainHistory)> {
    let n = pyramid.n_levels();
    cfg.validate(n)?;
    let finest = pyramid.finest().dims();
    let mut model = MrCaeModel::new((finest.h, finest.w), n, cfg.activation)?;
    model.provenance.seed = cfg.seed;
    let mut run = Run {
        cfg,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        history: TrainHistory::default(),
        monitor,
    };
    for k in 0..n {
        let data = LevelData::from_pyramid(pyramid, k)?;
        model.deepen(cfg.init_noise, &mut run.rng)?;
        run.grow_and_train(&mut model, &data, RowOp::Deepen, None)?;

        let eps = cfg.eps_for(k, &data.train);
        let (hc, wc) = model.levels()[k].coarse_dims();
        loop {
            let groups = model.levels()[k].groups().len();
            let target = match &cfg.widen_schedule {
                WidenSchedule::Explicit(counts) => counts[k],
                WidenSchedule::Auto => cfg.max_groups,
            };
            if groups >= target {
                break;
            }
            let recon = model.forward(&data.train, k)?;
            let residual_mask = compute_mask(&data.train, &recon, eps)?;
            if cfg.widen_schedule == WidenSchedule::Auto && residual_mask.is_empty() {
                break;
            }
            let mask = match cfg.mask_mode {
                MaskMode::Adaptive => residual_mask,
                MaskMode::Dense => SpatialMask::ones(hc, wc),
            };
            let active = mask.active_count();
            model.widen(mask, cfg.group_channels, cfg.init_noise, &mut run.rng)?;
            run.grow_and_train(&mut model, &data, RowOp::Widen, Some(active))?;
        }
    }
    Ok((model, run.history))
}
