//! Benchmark CSV and static SVG charts with logarithmic axes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use mrcae_core::bench::BenchCurve;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricsRecord;

pub const BENCH_CSV: &str = "bench.csv";
pub const PARAMS_SVG: &str = "error_vs_params.svg";
pub const ENCODING_SVG: &str = "error_vs_encoding.svg";
pub const TRAINING_SVG: &str = "training_curve.svg";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub variant: String,
    pub level: usize,
    pub phase: usize,
    pub params: usize,
    pub encoding_size: usize,
    pub val_global_total: f64,
    pub val_global_mse: f64,
    pub val_global_max: f64,
}

pub fn bench_records(curves: &[BenchCurve]) -> Vec<BenchRecord> {
    curves
        .iter()
        .flat_map(|c| {
            c.points.iter().map(|p| BenchRecord {
                variant: c.variant.as_str().to_string(),
                level: p.level,
                phase: p.phase,
                params: p.params,
                encoding_size: p.encoding_size,
                val_global_total: p.val_global_total,
                val_global_mse: p.val_global_mse,
                val_global_max: p.val_global_max,
            })
        })
        .collect()
}

pub fn bench_csv(records: &[BenchRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::Csv(e.into_error().into()))
}

pub fn read_bench(path: &Path) -> Result<Vec<BenchRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<Vec<BenchRecord>, _>>()?)
}

/// One named polyline.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axes {
    pub log_x: bool,
    pub log_y: bool,
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

struct Scale {
    log: bool,
    lo: f64,
    hi: f64,
}

impl Scale {
    fn new(values: impl Iterator<Item = f64>, log: bool) -> Scale {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            let v = if log { v.log10() } else { v };
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if log {
            lo = lo.floor();
            hi = hi.ceil().max(lo + 1.0);
        } else if hi - lo < 1e-12 {
            (lo, hi) = (lo - 0.5, hi + 0.5);
        }
        Scale { log, lo, hi }
    }

    fn unit(&self, v: f64) -> f64 {
        let v = if self.log { v.log10() } else { v };
        (v - self.lo) / (self.hi - self.lo)
    }

    fn ticks(&self) -> Vec<(f64, String)> {
        if self.log {
            (self.lo as i32..=self.hi as i32).map(|e| (10f64.powi(e), format!("1e{e}"))).collect()
        } else {
            (0..=4)
                .map(|i| {
                    let v = self.lo + (self.hi - self.lo) * i as f64 / 4.0;
                    (v, format!("{v:.3}"))
                })
                .collect()
        }
    }
}

/// A line chart. Points that cannot sit on a log axis (≤ 0 or non-finite) are dropped.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, axes: Axes, series: &[Series]) -> String {
    let keep = |&(x, y): &(f64, f64)| {
        x.is_finite() && y.is_finite() && (!axes.log_x || x > 0.0) && (!axes.log_y || y > 0.0)
    };
    let cleaned: Vec<Vec<(f64, f64)>> = series.iter().map(|s| s.points.iter().copied().filter(keep).collect()).collect();
    let sx = Scale::new(cleaned.iter().flatten().map(|p| p.0), axes.log_x);
    let sy = Scale::new(cleaned.iter().flatten().map(|p| p.1), axes.log_y);
    let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);
    let px = |x: f64| LEFT + sx.unit(x) * pw;
    let py = |y: f64| TOP + (1.0 - sy.unit(y)) * ph;

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, LEFT + pw / 2.0, escape(title));
    let _ = writeln!(s, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    for (v, label) in sx.ticks() {
        let x = px(v);
        let _ = writeln!(s, r##"<line x1="{x:.2}" y1="{TOP}" x2="{x:.2}" y2="{:.2}" stroke="#ddd"/>"##, TOP + ph);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{label}</text>"#, TOP + ph + 16.0);
    }
    for (v, label) in sy.ticks() {
        let y = py(v);
        let _ = writeln!(s, r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/>"##, LEFT + pw);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{label}</text>"#, LEFT - 6.0, y + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, H - 15.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{1}</text>"#,
        TOP + ph / 2.0,
        escape(y_label)
    );
    for (i, (ser, pts)) in series.iter().zip(&cleaned).enumerate() {
        let color = COLORS[i % COLORS.len()];
        let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline data-series="{}" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            escape(&ser.name),
            coords.join(" ")
        );
        let ly = TOP + 10.0 + 18.0 * i as f64;
        let lx = LEFT + pw + 12.0;
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 20.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 26.0, ly + 4.0, escape(&ser.name));
    }
    s.push_str("</svg>\n");
    s
}

fn series_by_variant(records: &[BenchRecord], x: impl Fn(&BenchRecord) -> f64) -> Vec<Series> {
    let mut order: Vec<String> = Vec::new();
    let mut map: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for r in records {
        if !map.contains_key(&r.variant) {
            order.push(r.variant.clone());
        }
        map.entry(r.variant.clone()).or_default().push((x(r), r.val_global_total));
    }
    order.into_iter().map(|name| Series { points: map.remove(&name).unwrap(), name }).collect()
}

fn write_file(path: PathBuf, bytes: &[u8]) -> Result<PathBuf> {
    std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// `bench.csv` plus the two log-log error charts.
pub fn emit_report(records: &[BenchRecord], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if records.is_empty() {
        return Err(Error::Usage("no benchmark points to report".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let log = Axes { log_x: true, log_y: true };
    let by_params = series_by_variant(records, |r| r.params as f64);
    let by_encoding = series_by_variant(records, |r| r.encoding_size as f64);
    Ok(vec![
        write_file(out_dir.join(BENCH_CSV), &bench_csv(records)?)?,
        write_file(
            out_dir.join(PARAMS_SVG),
            line_chart("Validation error vs parameters", "parameters", "validation global loss", log, &by_params).as_bytes(),
        )?,
        write_file(
            out_dir.join(ENCODING_SVG),
            line_chart("Validation error vs encoding size", "encoding size per snapshot", "validation global loss", log, &by_encoding)
                .as_bytes(),
        )?,
    ])
}

/// Validation global loss against the running epoch count, one polyline per level.
pub fn training_curve(records: &[MetricsRecord]) -> String {
    let mut per_level: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        per_level.entry(r.level).or_default().push((i as f64, r.val_global_total));
    }
    let series: Vec<Series> =
        per_level.into_iter().map(|(l, points)| Series { name: format!("level {l}"), points }).collect();
    line_chart(
        "Training progress",
        "metrics row (growth events and epochs)",
        "validation global loss",
        Axes { log_x: false, log_y: true },
        &series,
    )
}

pub fn emit_training_curve(records: &[MetricsRecord], out_dir: &Path) -> Result<PathBuf> {
    if records.is_empty() {
        return Err(Error::Usage("metrics file has no rows".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_file(out_dir.join(TRAINING_SVG), training_curve(records).as_bytes())
}
