//! Command-line interface: `gen`, `train`, `eval`, `bench`, `report`.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use mrcae_core::bench::{run_benchmark, VariantKind, VariantSpec};
use mrcae_core::conv::local_average_downsample;
use mrcae_core::datasets::{build_pyramid, DataPyramid, SplitKind};
use mrcae_core::objectives::{global_loss, global_reconstruction};
use mrcae_core::tensor::reduce_time_mean_sq;
use mrcae_core::trainer::progressive_train;
use mrcae_core::{Dims, LossValue, MrCaeModel, SnapshotTensor};
use serde_json::json;

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::{Example, RunConfig};
use crate::data_file::{read_data, read_sidecar, write_data, write_sidecar};
use crate::error::{Error, Result};
use crate::metrics::{read_metrics, write_metrics, WallClock};
use crate::report::{bench_records, emit_report, emit_training_curve, read_bench};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFIG_ECHO: &str = "config.toml";

#[derive(Debug, Parser)]
#[command(name = "mrcae", version, about = "Multi-resolution convolutional autoencoder")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Suppress progress output.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a synthetic example into a data file.
    Gen(GenArgs),
    /// Grow and train a model on a data file.
    Train(TrainArgs),
    /// Score a checkpoint level by level against the finest data.
    Eval(EvalArgs),
    /// Train several variants on the same schedule and chart them.
    Bench(BenchArgs),
    /// Render charts from a metrics or benchmark CSV.
    Report(ReportArgs),
}

fn parse_example(s: &str) -> std::result::Result<Example, String> {
    Example::parse(s).ok_or_else(|| format!("unknown example {s:?} (expected modes2 or modes2-drift)"))
}

fn parse_variant(s: &str) -> std::result::Result<VariantKind, String> {
    VariantKind::parse(s).ok_or_else(|| format!("unknown variant {s:?} (expected pr, dense, pr_relu or dense_relu)"))
}

fn parse_split(s: &str) -> std::result::Result<SplitKind, String> {
    match s {
        "train" => Ok(SplitKind::Train),
        "val" => Ok(SplitKind::Val),
        "test" => Ok(SplitKind::Test),
        _ => Err(format!("unknown split {s:?} (expected train, val or test)")),
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_parser = parse_example)]
    pub example: Option<Example>,
    #[arg(long)]
    pub nx: Option<usize>,
    #[arg(long)]
    pub ny: Option<usize>,
    #[arg(long)]
    pub nt: Option<usize>,
    #[arg(long)]
    pub t_end: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Training flags shared by `train` and `bench`.
#[derive(Debug, Args, Default)]
pub struct RunArgs {
    /// Data file; the configured generator is sampled in memory when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub levels: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Widening groups per level, coarsest first.
    #[arg(long, value_delimiter = ',', conflicts_with = "auto_widen")]
    pub groups: Option<Vec<usize>>,
    /// Widen while the residual mask is non-empty (up to --max-groups).
    #[arg(long)]
    pub auto_widen: bool,
    /// Mask tolerance per level.
    #[arg(long, value_delimiter = ',')]
    pub eps: Option<Vec<f64>>,
    /// Mask tolerance as a fraction of each level's data variance.
    #[arg(long)]
    pub eps_tau: Option<f64>,
    #[arg(long)]
    pub omega: Option<f64>,
    /// Maximum epochs per phase.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub group_channels: Option<usize>,
    #[arg(long)]
    pub max_groups: Option<usize>,
    #[arg(long)]
    pub init_noise: Option<f64>,
    #[arg(long)]
    pub freeze_lower: bool,
    #[arg(long)]
    pub early_stop_window: Option<usize>,
    #[arg(long)]
    pub early_stop_min_rel: Option<f64>,
}

impl RunArgs {
    pub fn apply(&self, c: &mut RunConfig) {
        fn set<T: Clone>(slot: &mut T, v: &Option<T>) {
            if let Some(v) = v {
                *slot = v.clone();
            }
        }
        if self.data.is_some() {
            c.paths.data = self.data.clone();
        }
        set(&mut c.levels, &self.levels);
        set(&mut c.seed, &self.seed);
        let t = &mut c.train;
        if self.groups.is_some() {
            t.groups = self.groups.clone();
        }
        if self.auto_widen {
            t.groups = None;
        }
        if self.eps.is_some() {
            t.eps = self.eps.clone();
        }
        set(&mut t.eps_tau, &self.eps_tau);
        set(&mut t.omega, &self.omega);
        set(&mut t.max_epochs, &self.epochs);
        set(&mut t.learning_rate, &self.lr);
        if self.batch_size.is_some() {
            t.batch_size = self.batch_size;
        }
        set(&mut t.group_channels, &self.group_channels);
        set(&mut t.max_groups, &self.max_groups);
        set(&mut t.init_noise, &self.init_noise);
        t.freeze_lower |= self.freeze_lower;
        set(&mut t.early_stop_window, &self.early_stop_window);
        set(&mut t.early_stop_min_rel, &self.early_stop_min_rel);
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<VariantKind>,
    /// Output directory for the checkpoint, metrics and resolved config.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Data file; defaults to the data recorded in the checkpoint's config.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "val", value_parser = parse_split)]
    pub split: SplitKind,
    /// Write per-level reconstructions and residual maps as data files here.
    #[arg(long)]
    pub dump_recon: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_delimiter = ',', value_parser = parse_variant, default_value = "pr,dense,pr_relu,dense_relu")]
    pub variants: Vec<VariantKind>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Metrics CSV from `train`; renders the training curve.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// `bench.csv` from `bench`; re-renders the benchmark charts.
    #[arg(long)]
    pub bench: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn base_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

/// Load the data named by the config, or sample its generator.
pub fn load_dataset(cfg: &RunConfig) -> Result<(SnapshotTensor, serde_json::Value)> {
    match &cfg.paths.data {
        Some(path) => {
            let data = read_data(path)?;
            let provenance = read_sidecar(path)?.unwrap_or(serde_json::Value::Null);
            let meta = json!({ "source": "file", "dims": data.dims().to_string(), "provenance": provenance });
            Ok((data, meta))
        }
        None => {
            let data = cfg.generator.generate()?;
            Ok((data, json!({ "source": "generator", "generator": cfg.generator })))
        }
    }
}

fn pyramid_for(cfg: &RunConfig, data: SnapshotTensor) -> Result<DataPyramid> {
    let mut pyramid = build_pyramid(data, cfg.levels, cfg.seed)?;
    pyramid.provenance = format!("config {}", cfg.hash_hex());
    Ok(pyramid)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn cmd_gen(cfg: &RunConfig, out: &Path) -> Result<(Dims, u32)> {
    let data = cfg.generator.generate()?;
    let crc = write_data(&data, out)?;
    let provenance = json!({
        "generator": cfg.generator,
        "dims": data.dims().to_string(),
        "crc32": format!("{crc:08x}"),
        "config_hash": cfg.hash_hex(),
    });
    write_sidecar(out, &provenance)?;
    Ok((data.dims(), crc))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MrCaeModel,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub final_val_global: Option<LossValue>,
}

/// Train per `cfg` and write the checkpoint, metrics CSV and resolved config into `out`.
pub fn cmd_train(cfg: &RunConfig, out: &Path, verbose: bool) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (data, data_provenance) = load_dataset(cfg)?;
    let pyramid = pyramid_for(cfg, data)?;
    create_dir(out)?;
    let metrics = out.join(METRICS_FILE);
    let echo = out.join(CONFIG_ECHO);
    std::fs::write(&echo, format!("# config hash {}\n{}", cfg.hash_hex(), cfg.to_toml())).map_err(|e| Error::io(&echo, e))?;

    let mut monitor = WallClock::new(verbose);
    let result = progressive_train(&pyramid, &cfg.train_config(), &mut monitor);
    monitor.finish();
    // metrics are kept even when training aborts
    write_metrics(&monitor.rows, &metrics)?;
    let (mut model, history) = result?;
    model.provenance.config_hash = cfg.hash_u64();
    // eval falls back to the recorded data file; the output directory is left out
    let mut recorded = cfg.reproducible();
    recorded.paths.data = cfg.paths.data.clone();
    let metadata = json!({
        "config": recorded,
        "config_hash": cfg.hash_hex(),
        "data": data_provenance,
        "split": pyramid.split,
    });
    let checkpoint = out.join(CHECKPOINT_FILE);
    save_checkpoint(&model, &metadata, &checkpoint)?;
    Ok(TrainOutcome {
        model,
        checkpoint,
        metrics,
        final_val_global: history.phases.last().map(|p| p.final_val_global),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelScore {
    pub level: usize,
    pub loss: LossValue,
}

/// Global loss of every trained level on one split.
pub fn cmd_eval(
    checkpoint: &Path,
    data_path: Option<&Path>,
    split: SplitKind,
    dump: Option<&Path>,
) -> Result<(Vec<LevelScore>, usize)> {
    let ckpt = load_checkpoint(checkpoint)?;
    let mut cfg: RunConfig = serde_json::from_value(ckpt.metadata["config"].clone())
        .map_err(|e| Error::Format { what: "checkpoint", reason: format!("stored config: {e}") })?;
    if let Some(p) = data_path {
        cfg.paths.data = Some(p.to_path_buf());
    }
    let model = ckpt.model;
    let (data, _) = load_dataset(&cfg)?;
    let d = data.dims();
    let (h, w) = model.finest_dims();
    if (d.c, d.h, d.w) != (1, h, w) {
        return Err(Error::Mismatch(format!(
            "data {d} does not fit the checkpoint, whose finest level expects (T,1,{h},{w})"
        )));
    }
    let pyramid = build_pyramid(data, model.n_levels(), cfg.seed)?;
    let finest = pyramid.level_split(model.n_levels() - 1, split)?;
    let top = model.top_level().ok_or_else(|| Error::Mismatch("checkpoint holds an untrained model".into()))?;
    let omega = cfg.train.omega;
    let mut scores = Vec::new();
    for k in 0..=top {
        scores.push(LevelScore { level: k, loss: global_loss(&model, k, &finest, omega)? });
        if let Some(dir) = dump {
            create_dir(dir)?;
            let (_, view) = global_reconstruction(&model, k, &finest)?;
            let recon = model.forward(&view, k)?;
            write_data(&recon, &dir.join(format!("recon_level{k}.mrd")))?;
            let residual = reduce_time_mean_sq(&view, &recon)?;
            write_data(&residual.clone().into_tensor(), &dir.join(format!("residual_level{k}.mrd")))?;
            let coarse = local_average_downsample(&residual)?;
            write_data(&coarse.into_tensor(), &dir.join(format!("residual_cells_level{k}.mrd")))?;
        }
    }
    Ok((scores, finest.dims().t))
}

pub fn cmd_bench(cfg: &RunConfig, variants: &[VariantKind], out: &Path) -> Result<Vec<mrcae_core::bench::BenchCurve>> {
    if variants.is_empty() {
        return Err(Error::Usage("--variants needs at least one variant".into()));
    }
    cfg.validate()?;
    let (data, _) = load_dataset(cfg)?;
    let pyramid = pyramid_for(cfg, data)?;
    let base = cfg.train_config();
    let specs: Vec<VariantSpec> = variants.iter().map(|k| VariantSpec::new(*k, &base)).collect();
    let curves = run_benchmark(&pyramid, &specs).map_err(|e| match e {
        mrcae_core::Error::Config(m) => Error::Config(m),
        other => Error::Core(other),
    })?;
    emit_report(&bench_records(&curves), out)?;
    Ok(curves)
}

pub fn cmd_report(metrics: Option<&Path>, bench: Option<&Path>, out: &Path) -> Result<Vec<PathBuf>> {
    if metrics.is_none() && bench.is_none() {
        return Err(Error::Usage("report needs --metrics and/or --bench".into()));
    }
    let mut written = Vec::new();
    if let Some(m) = metrics {
        written.push(emit_training_curve(&read_metrics(m)?, out)?);
    }
    if let Some(b) = bench {
        written.extend(emit_report(&read_bench(b)?, out)?);
    }
    Ok(written)
}

fn fmt_loss(l: &LossValue) -> String {
    format!("total {:.6e}  mse {:.6e}  max {:.6e}", l.total, l.mse_part, l.max_part)
}

/// Dispatch a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = base_config(cli.config.as_deref())?;
    let verbose = !cli.quiet;
    match cli.command {
        Command::Gen(a) => {
            let g = &mut cfg.generator;
            if let Some(e) = a.example {
                g.example = e;
            }
            g.nx = a.nx.unwrap_or(g.nx);
            g.ny = a.ny.unwrap_or(g.ny);
            g.nt = a.nt.unwrap_or(g.nt);
            if a.t_end.is_some() {
                g.t_end = a.t_end;
            }
            let (dims, crc) = cmd_gen(&cfg, &a.out)?;
            println!("wrote {} dims {dims} crc32 {crc:08x}", a.out.display());
        }
        Command::Train(a) => {
            a.run.apply(&mut cfg);
            if let Some(v) = a.variant {
                cfg.variant = v;
            }
            if a.out.is_some() {
                cfg.paths.out = a.out.clone();
            }
            let out = cfg.paths.out.clone().ok_or_else(|| Error::Usage("train needs --out (or paths.out in the config)".into()))?;
            let o = cmd_train(&cfg, &out, verbose)?;
            println!("checkpoint {}", o.checkpoint.display());
            println!("metrics    {}", o.metrics.display());
            println!("params {}  encoding size {}", o.model.count_params(), o.model.encoding_size());
            if let Some(l) = o.final_val_global {
                println!("final validation global loss: {}", fmt_loss(&l));
            }
        }
        Command::Eval(a) => {
            let (scores, t) = cmd_eval(&a.checkpoint, a.data.as_deref(), a.split, a.dump_recon.as_deref())?;
            println!("{t} snapshots");
            for s in scores {
                println!("level {}: {}", s.level, fmt_loss(&s.loss));
            }
        }
        Command::Bench(a) => {
            a.run.apply(&mut cfg);
            let curves = cmd_bench(&cfg, &a.variants, &a.out)?;
            for c in &curves {
                match (&c.error, c.points.last()) {
                    (Some(e), _) => println!("{}: failed: {e}", c.variant.as_str()),
                    (None, Some(p)) => println!(
                        "{}: params {} encoding {} val global {:.6e}",
                        c.variant.as_str(),
                        p.params,
                        p.encoding_size,
                        p.val_global_total
                    ),
                    (None, None) => println!("{}: no points", c.variant.as_str()),
                }
            }
            println!("report in {}", a.out.display());
        }
        Command::Report(a) => {
            for p in cmd_report(a.metrics.as_deref(), a.bench.as_deref(), &a.out)? {
                println!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}
