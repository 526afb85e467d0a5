//! Architecture-matched comparison of masked, dense and ReLU variants.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::datasets::DataPyramid;
use crate::model::Activation;
use crate::trainer::{derive_seed, progressive_train, MaskMode, TrainConfig, TrainMonitor, WidenSchedule};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum VariantKind {
    Pr,
    Dense,
    PrRelu,
    DenseRelu,
}

impl VariantKind {
    pub const ALL: [VariantKind; 4] = [VariantKind::Pr, VariantKind::Dense, VariantKind::PrRelu, VariantKind::DenseRelu];

    pub fn as_str(self) -> &'static str {
        match self {
            VariantKind::Pr => "pr",
            VariantKind::Dense => "dense",
            VariantKind::PrRelu => "pr_relu",
            VariantKind::DenseRelu => "dense_relu",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }

    pub fn mask_mode(self) -> MaskMode {
        match self {
            VariantKind::Pr | VariantKind::PrRelu => MaskMode::Adaptive,
            VariantKind::Dense | VariantKind::DenseRelu => MaskMode::Dense,
        }
    }

    pub fn activation(self) -> Activation {
        match self {
            VariantKind::Pr | VariantKind::Dense => Activation::Linear,
            VariantKind::PrRelu | VariantKind::DenseRelu => Activation::Relu,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantSpec {
    pub kind: VariantKind,
    pub config: TrainConfig,
}

impl VariantSpec {
    /// `base` with this variant's mask mode and activation forced.
    pub fn new(kind: VariantKind, base: &TrainConfig) -> Self {
        let config = TrainConfig {
            mask_mode: kind.mask_mode(),
            activation: kind.activation(),
            ..base.clone()
        };
        VariantSpec { kind, config }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchPoint {
    pub params: usize,
    pub encoding_size: usize,
    pub val_global_total: f64,
    pub val_global_mse: f64,
    pub val_global_max: f64,
    pub level: usize,
    pub phase: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchCurve {
    pub variant: VariantKind,
    pub points: Vec<BenchPoint>,
    /// Set when training this variant failed; `points` then holds what was reached.
    pub error: Option<String>,
}

/// Train one variant and turn its phase summaries into a curve.
pub fn run_variant<M: TrainMonitor + ?Sized>(
    pyramid: &DataPyramid,
    spec: &VariantSpec,
    index: usize,
    monitor: &mut M,
) -> BenchCurve {
    let config = TrainConfig { seed: derive_seed(spec.config.seed, index as u64), ..spec.config.clone() };
    match progressive_train(pyramid, &config, monitor) {
        Ok((_, history)) => BenchCurve {
            variant: spec.kind,
            points: history
                .phases
                .iter()
                .map(|p| BenchPoint {
                    params: p.params_after,
                    encoding_size: p.encoding_size_after,
                    val_global_total: p.final_val_global.total,
                    val_global_mse: p.final_val_global.mse_part,
                    val_global_max: p.final_val_global.max_part,
                    level: p.level,
                    phase: p.phase,
                })
                .collect(),
            error: None,
        },
        Err(e) => BenchCurve { variant: spec.kind, points: Vec::new(), error: Some(e.to_string()) },
    }
}

/// Variants must share an explicit group schedule and group width so their
/// topologies match phase for phase.
pub fn check_matched(variants: &[VariantSpec]) -> Result<()> {
    let first = variants.first().ok_or_else(|| Error::Config("no variants to benchmark".into()))?;
    if !matches!(first.config.widen_schedule, WidenSchedule::Explicit(_)) {
        return Err(Error::Config("benchmarks need an explicit group schedule so variants stay architecture-matched".into()));
    }
    for v in variants {
        if v.config.widen_schedule != first.config.widen_schedule || v.config.group_channels != first.config.group_channels {
            return Err(Error::Config(alloc::format!(
                "variant {} does not share the group schedule of variant {}",
                v.kind.as_str(),
                first.kind.as_str()
            )));
        }
    }
    Ok(())
}

/// Train every variant in order. A failing variant is recorded in its curve
/// and does not stop the others.
pub fn run_benchmark(pyramid: &DataPyramid, variants: &[VariantSpec]) -> Result<Vec<BenchCurve>> {
    check_matched(variants)?;
    Ok(variants
        .iter()
        .enumerate()
        .map(|(i, v)| run_variant(pyramid, v, i, &mut ()))
        .collect())
}
