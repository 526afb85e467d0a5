//! Acceptance suite: one test per criterion, named `cNN_*`.
//!
//! Run with `cargo test -p mrcae --test acceptance -- --include-ignored --nocapture`
//! to see every verdict line, including the criteria that are known to be red.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use mrcae::checkpoint::{decode_checkpoint, encode_checkpoint};
use mrcae::cli::cmd_train;
use mrcae::config::RunConfig;
use mrcae::data_file::{decode_data, encode_data};
use mrcae::Error;
use mrcae_core::bench::{VariantKind, VariantSpec};
use mrcae_core::conv::{
    conv2d_backward, conv2d_forward, deconv2d_backward, deconv2d_forward, local_average_downsample, relu,
    relu_backward, ConvKernel, DeconvKernel,
};
use mrcae_core::datasets::{build_pyramid, DataPyramid, SplitKind};
use mrcae_core::masking::compute_mask;
use mrcae_core::objectives::{global_loss, level_loss, level_loss_backward};
use mrcae_core::tensor::reduce_time_mean_sq;
use mrcae_core::trainer::{progressive_train, RowOp, TrainConfig, TrainHistory};
use mrcae_core::{Activation, Dims, MrCaeModel, SnapshotTensor, SpatialMask};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(id: &str, ok: bool, detail: String) {
    println!("criterion {id}: {} | {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {id} failed: {detail}");
}

fn random_tensor(rng: &mut ChaCha8Rng, d: Dims) -> SnapshotTensor {
    SnapshotTensor::from_fn(d, |_, _, _, _| rng.gen_range(-1.0..1.0))
}

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn fd_grad(p: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let h = 1e-6;
    let mut q = p.to_vec();
    (0..p.len())
        .map(|k| {
            q[k] = p[k] + h;
            let up = f(&q);
            q[k] = p[k] - h;
            let down = f(&q);
            q[k] = p[k];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Worst entrywise error, relative to the largest gradient magnitude (at least 1).
fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let scale = numeric.iter().chain(analytic).fold(1.0f64, |m, v| m.max(v.abs()));
    analytic.iter().zip(numeric).map(|(a, n)| (a - n).abs() / scale).fold(0.0, f64::max)
}

#[test]
fn c01_gradients_match_finite_differences() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..25 {
        let t = rng.gen_range(1..=3);
        let (ci, co) = (rng.gen_range(1..=2), rng.gen_range(1..=2));
        let (h, w) = (2 * rng.gen_range(1..=3) + 1, 2 * rng.gen_range(1..=3) + 1);

        let x = random_tensor(&mut rng, Dims::new(t, ci, h, w));
        let k = ConvKernel::from_parts(co, ci, uniform(&mut rng, co * ci * 9), uniform(&mut rng, co)).unwrap();
        let probe = random_tensor(&mut rng, conv2d_forward(&x, &k).unwrap().dims());
        let g = conv2d_backward(&x, &k, &probe).unwrap();
        let fx = |v: &[f64]| conv2d_forward(&SnapshotTensor::from_vec(x.dims(), v.to_vec()).unwrap(), &k).unwrap().dot(&probe).unwrap();
        let fw = |v: &[f64]| {
            let k = ConvKernel::from_parts(co, ci, v.to_vec(), k.bias().to_vec()).unwrap();
            conv2d_forward(&x, &k).unwrap().dot(&probe).unwrap()
        };
        let fb = |v: &[f64]| {
            let k = ConvKernel::from_parts(co, ci, k.weights().to_vec(), v.to_vec()).unwrap();
            conv2d_forward(&x, &k).unwrap().dot(&probe).unwrap()
        };
        worst = worst.max(rel_err(g.x.as_slice(), &fd_grad(x.as_slice(), fx)));
        worst = worst.max(rel_err(&g.weights, &fd_grad(k.weights(), fw)));
        worst = worst.max(rel_err(&g.bias, &fd_grad(k.bias(), fb)));

        let (hc, wc) = ((h - 1) / 2, (w - 1) / 2);
        let z = random_tensor(&mut rng, Dims::new(t, ci, hc, wc));
        let d = DeconvKernel::from_parts(ci, co, uniform(&mut rng, co * ci * 9), uniform(&mut rng, co)).unwrap();
        let probe = random_tensor(&mut rng, deconv2d_forward(&z, &d).unwrap().dims());
        let g = deconv2d_backward(&z, &d, &probe).unwrap();
        let fx = |v: &[f64]| deconv2d_forward(&SnapshotTensor::from_vec(z.dims(), v.to_vec()).unwrap(), &d).unwrap().dot(&probe).unwrap();
        let fw = |v: &[f64]| {
            let d = DeconvKernel::from_parts(ci, co, v.to_vec(), d.bias().to_vec()).unwrap();
            deconv2d_forward(&z, &d).unwrap().dot(&probe).unwrap()
        };
        let fb = |v: &[f64]| {
            let d = DeconvKernel::from_parts(ci, co, d.weights().to_vec(), v.to_vec()).unwrap();
            deconv2d_forward(&z, &d).unwrap().dot(&probe).unwrap()
        };
        worst = worst.max(rel_err(g.x.as_slice(), &fd_grad(z.as_slice(), fx)));
        worst = worst.max(rel_err(&g.weights, &fd_grad(d.weights(), fw)));
        worst = worst.max(rel_err(&g.bias, &fd_grad(d.bias(), fb)));

        // relu: keep inputs away from the kink so central differences stay one-sided-free
        let r = SnapshotTensor::from_fn(x.dims(), |_, _, _, _| {
            let v: f64 = rng.gen_range(1e-3..1.0);
            if rng.gen_bool(0.5) { v } else { -v }
        });
        let probe = random_tensor(&mut rng, r.dims());
        let g = relu_backward(&r, &probe).unwrap();
        let f = |v: &[f64]| relu(&SnapshotTensor::from_vec(r.dims(), v.to_vec()).unwrap()).dot(&probe).unwrap();
        worst = worst.max(rel_err(g.as_slice(), &fd_grad(r.as_slice(), f)));

        let dd = Dims::new(t, 1, h, w);
        let data = random_tensor(&mut rng, dd);
        let mut recon = random_tensor(&mut rng, dd);
        // a clear per-snapshot maximum keeps the max term differentiable at the probe point
        let (pi, pj) = (rng.gen_range(0..h), rng.gen_range(0..w));
        for s in 0..t {
            recon.set(s, 0, pi, pj, data.get(s, 0, pi, pj) + 3.0);
        }
        let omega: f64 = rng.gen_range(0.0..=1.0);
        let g = level_loss_backward(&data, &recon, omega).unwrap();
        let f = |v: &[f64]| level_loss(&data, &SnapshotTensor::from_vec(dd, v.to_vec()).unwrap(), omega).unwrap().total;
        worst = worst.max(rel_err(g.as_slice(), &fd_grad(recon.as_slice(), f)));
    }
    let secs = start.elapsed().as_secs_f64();
    verdict("1", worst <= 1e-6 && secs < 30.0, format!("25 instances, worst rel error {worst:.2e}, {secs:.2}s"));
}

fn toy_run_config(nt: usize) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.generator.nx = 63;
    cfg.generator.ny = 63;
    cfg.generator.nt = nt;
    cfg.levels = 3;
    cfg.train.groups = Some(vec![1, 2, 3]);
    cfg
}

fn pyramid(cfg: &RunConfig) -> DataPyramid {
    build_pyramid(cfg.generator.generate().unwrap(), cfg.levels, cfg.seed).unwrap()
}

#[test]
fn c02_transfer_invariance_at_deepening() {
    let start = Instant::now();
    let mut run = toy_run_config(20);
    run.train.init_noise = 0.0;
    run.train.max_epochs = 10;
    run.train.groups = Some(vec![1, 1, 1]);
    let (_, history) = progressive_train(&pyramid(&run), &run.train_config(), &mut ()).unwrap();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (i, row) in history.rows.iter().enumerate() {
        if row.op == RowOp::Deepen && row.epoch == 0 && row.level > 0 {
            let before = &history.rows[i - 1];
            assert_eq!(before.level, row.level - 1);
            worst = worst.max((row.val_global.total - before.val_global.total).abs());
            checked += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "2",
        checked == 2 && worst <= 1e-12 && secs < 10.0,
        format!("{checked} deepenings on a trained 63x63 pyramid, max |delta| {worst:.2e}, {secs:.2}s"),
    );
}

fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize) -> SpatialMask {
    let mut bits: Vec<bool> = (0..h * w).map(|_| rng.gen_bool(0.5)).collect();
    bits[rng.gen_range(0..h * w)] = true;
    SpatialMask::from_bits(h, w, bits).unwrap()
}

fn randomise(m: &mut MrCaeModel, rng: &mut ChaCha8Rng) {
    for a in m.param_arrays_mut() {
        for v in a.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
    }
}

#[test]
fn c03_affine_superposition_for_linear_models() {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut m = MrCaeModel::new((31, 31), 3, Activation::Linear).unwrap();
    let mut worst: f64 = 0.0;
    let mut pairs = 0;
    // ten growth steps, one pair checked at each stage
    for step in 0..10 {
        let grow_deeper = m.top_level().is_none() || (step % 3 == 0 && !m.is_fully_grown());
        if grow_deeper {
            m.deepen(0.5, &mut rng).unwrap();
        } else {
            let (h, w) = m.levels()[m.top_level().unwrap()].coarse_dims();
            let ch = rng.gen_range(1..=4);
            m.widen(random_mask(&mut rng, h, w), ch, 0.5, &mut rng).unwrap();
        }
        randomise(&mut m, &mut rng);
        let k = m.top_level().unwrap();
        let (h, w) = m.level_dims(k);
        let d = Dims::new(2, 1, h, w);
        let x = random_tensor(&mut rng, d).map(|v| 5.0 * v);
        let y = random_tensor(&mut rng, d);
        let f = |v: &SnapshotTensor| m.forward(v, k).unwrap();
        let f0 = f(&SnapshotTensor::zeros(d));
        let lhs = f(&x.add(&y).unwrap()).sub(&f0).unwrap();
        let rhs = f(&x).sub(&f0).unwrap().add(&f(&y).sub(&f0).unwrap()).unwrap();
        let dev = lhs.sub(&rhs).unwrap().max_abs() / x.max_abs().max(y.max_abs()).max(1.0);
        worst = worst.max(dev);
        pairs += 1;
    }
    verdict("3", worst <= 1e-10, format!("{pairs} pairs across growth stages, worst scaled deviation {worst:.2e}"));
}

/// Cell activity straight from the definition, with its averaged values.
fn naive_mask(data: &SnapshotTensor, recon: &SnapshotTensor, eps: f64) -> (Vec<bool>, Vec<f64>) {
    let d = data.dims();
    let mut pix = vec![0.0; d.h * d.w];
    for i in 0..d.h {
        for j in 0..d.w {
            let mut s = 0.0;
            for t in 0..d.t {
                let r = data.get(t, 0, i, j) - recon.get(t, 0, i, j);
                s += r * r;
            }
            pix[i * d.w + j] = s * (1.0 / d.t as f64);
        }
    }
    let (hc, wc) = ((d.h - 1) / 2, (d.w - 1) / 2);
    let mut avg = Vec::with_capacity(hc * wc);
    for i in 0..hc {
        for j in 0..wc {
            let mut s = 0.0;
            for r in 2 * i..2 * i + 3 {
                for c in 2 * j..2 * j + 3 {
                    s += pix[r * d.w + c];
                }
            }
            avg.push(s / 9.0);
        }
    }
    (avg.iter().map(|a| *a >= eps).collect(), avg)
}

#[test]
fn c04_mask_matches_naive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let d = Dims::new(4, 1, 15, 15);
    let (mut cases, mut mismatches, mut ties) = (0, 0, 0);
    for _ in 0..20 {
        let data = random_tensor(&mut rng, d);
        let recon = random_tensor(&mut rng, d);
        let (_, avg) = naive_mask(&data, &recon, 0.0);
        let mut sorted = avg.clone();
        sorted.sort_by(f64::total_cmp);
        // three tolerances sit exactly on an averaged value
        let tols = [0.0, sorted[10], sorted[24], sorted[40], sorted[48] * 2.0];
        // the library's own averaged field must agree bit for bit too
        let lib_avg = local_average_downsample(&reduce_time_mean_sq(&data, &recon).unwrap()).unwrap();
        if lib_avg.as_slice().iter().zip(&avg).any(|(a, b)| a.to_bits() != b.to_bits()) {
            mismatches += 1;
        }
        for eps in tols {
            let (want, _) = naive_mask(&data, &recon, eps);
            let got = compute_mask(&data, &recon, eps).unwrap();
            ties += avg.iter().filter(|a| **a == eps).count();
            if got.bits() != want.as_slice() {
                mismatches += 1;
            }
            cases += 1;
        }
    }
    verdict("4", mismatches == 0 && ties >= 60, format!("{cases} cases, {ties} exact ties, {mismatches} mismatches"));
}

struct Toy {
    pyramid: DataPyramid,
    pr: MrCaeModel,
    pr_history: TrainHistory,
    pr_time: Duration,
    dense_history: TrainHistory,
}

/// The default configuration on the two-mode toy problem, trained once and shared.
fn toy() -> &'static Toy {
    static TOY: OnceLock<Toy> = OnceLock::new();
    TOY.get_or_init(|| {
        let run = toy_run_config(200);
        let pyramid = pyramid(&run);
        let base: TrainConfig = run.train_config();
        let start = Instant::now();
        let (pr, pr_history) = progressive_train(&pyramid, &VariantSpec::new(VariantKind::Pr, &base).config, &mut ()).unwrap();
        let pr_time = start.elapsed();
        let (_, dense_history) =
            progressive_train(&pyramid, &VariantSpec::new(VariantKind::Dense, &base).config, &mut ()).unwrap();
        Toy { pyramid, pr, pr_history, pr_time, dense_history }
    })
}

#[test]
#[ignore = "known red: the loss levels off near a factor of 9, see the decisions ledger"]
fn c05a_toy_loss_drops_tenfold() {
    let t = toy();
    let after_first = t.pr_history.phases[0].final_val_global.total;
    let end = t.pr_history.phases.iter().rev().find(|p| p.level == 2).unwrap().final_val_global.total;
    let ratio = after_first / end;
    verdict("5a", ratio >= 10.0, format!("level-0 deepening {after_first:.4e}, end of level 2 {end:.4e}, ratio {ratio:.2}"));
}

#[test]
fn c05b_toy_level_ends_non_increasing() {
    let t = toy();
    let ends: Vec<f64> = t.pr_history.level_end_rows().iter().map(|r| r.val_global.total).collect();
    let ok = ends.len() == 3 && ends.windows(2).all(|w| w[1] <= w[0]);
    verdict("5b", ok, format!("end-of-level validation global loss {:?}", ends.iter().map(|v| format!("{v:.4e}")).collect::<Vec<_>>()));
}

#[test]
fn c05c_toy_wall_clock() {
    let secs = toy().pr_time.as_secs_f64();
    verdict("5c", secs < 600.0, format!("{secs:.1}s single-threaded"));
}

#[test]
#[ignore = "known red: the last mask covers most of the domain, see the decisions ledger"]
fn c06_mask_localises_on_the_bump() {
    let t = toy();
    let top = &t.pr.levels()[2];
    let mask = top.groups().last().unwrap().mask();
    // cell (i, j) is centred on fine pixel (2i+1, 2j+1) of the 63-point grid over [-5, 5]
    let grid = toy_run_config(200).generator.grid();
    let cells: Vec<(usize, usize)> = mask.active_cells().collect();
    let near = cells
        .iter()
        .filter(|&&(i, j)| {
            let (x, y) = (grid.x(2 * j + 1), grid.y(2 * i + 1));
            ((x - 1.0).powi(2) + (y + 1.0).powi(2)).sqrt() <= 1.5
        })
        .count();
    let frac = near as f64 / cells.len().max(1) as f64;
    verdict("6", frac >= 0.8, format!("{near} of {} active cells within 1.5 of (1,-1), {:.1}%", cells.len(), 100.0 * frac));
}

#[test]
fn c07_sparse_encoding_beats_dense() {
    let t = toy();
    let params = |h: &TrainHistory| h.phases.iter().map(|p| p.params_after).collect::<Vec<_>>();
    let same_params = params(&t.pr_history) == params(&t.dense_history);
    let pr = t.pr_history.phases.last().unwrap().encoding_size_after;
    let dense = t.dense_history.phases.last().unwrap().encoding_size_after;
    assert_eq!(pr, t.pr.encoding_size());
    verdict(
        "7",
        same_params && pr < dense,
        format!("final encoding pr {pr} vs dense {dense}, params curves identical: {same_params}"),
    );
}

/// Parameters counted by walking every kernel of the topology.
fn walked_params(m: &MrCaeModel) -> usize {
    m.levels()
        .iter()
        .map(|b| {
            let k = b.deepen_conv().weights().len() + b.deepen_conv().bias().len();
            let d = b.deepen_deconv().weights().len() + b.deepen_deconv().bias().len();
            k + d
                + b.groups()
                    .iter()
                    .map(|g| g.conv().weights().len() + g.conv().bias().len() + g.deconv().weights().len() + g.deconv().bias().len())
                    .sum::<usize>()
        })
        .sum()
}

#[test]
fn c08_counting_formulas() {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut bad = Vec::new();
    for case in 0..10 {
        let n = rng.gen_range(1..=3);
        let mut m = MrCaeModel::new((31, 31), n, Activation::Linear).unwrap();
        let mut formula = 0;
        for _ in 0..n {
            m.deepen(0.1, &mut rng).unwrap();
            formula += 20;
            let (h, w) = m.levels()[m.top_level().unwrap()].coarse_dims();
            for _ in 0..rng.gen_range(0..=3) {
                let g = rng.gen_range(1..=5);
                m.widen(random_mask(&mut rng, h, w), g, 0.1, &mut rng).unwrap();
                formula += 19 * g + 1;
            }
        }
        let k = m.top_level().unwrap();
        let (h, w) = m.level_dims(k);
        let x = random_tensor(&mut rng, Dims::new(3, 1, h, w));
        let code = m.encode(&x).unwrap();
        let ok = m.count_params() == formula
            && walked_params(&m) == formula
            && code.payload_len() == 3 * m.encoding_size()
            && code.size_per_snapshot() == m.encoding_size();
        if !ok {
            bad.push(case);
        }
    }
    verdict("8", bad.is_empty(), format!("10 random topologies, failing cases {bad:?}"));
}

#[test]
fn c09_format_round_trips_and_corruption() {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let data = random_tensor(&mut rng, Dims::new(4, 1, 15, 15));
    let data_bytes = encode_data(&data).unwrap();
    let bits = |t: &SnapshotTensor| t.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let data_ok = bits(&decode_data(&data_bytes).unwrap()) == bits(&data);

    let mut m = MrCaeModel::new((15, 15), 2, Activation::Relu).unwrap();
    m.deepen(0.3, &mut rng).unwrap();
    m.widen(random_mask(&mut rng, 3, 3), 2, 0.3, &mut rng).unwrap();
    m.deepen(0.3, &mut rng).unwrap();
    m.widen(random_mask(&mut rng, 7, 7), 3, 0.3, &mut rng).unwrap();
    randomise(&mut m, &mut rng);
    let meta = serde_json::json!({ "note": "acceptance" });
    let ckpt_bytes = encode_checkpoint(&m, &meta).unwrap();
    let back = decode_checkpoint(&ckpt_bytes).unwrap();
    let ckpt_ok = back.model == m && back.metadata == meta && encode_checkpoint(&back.model, &back.metadata).unwrap() == ckpt_bytes;

    // bytes that declare lengths: data dims, and the checkpoint's manifest length and manifest
    let prefix = 11 + 2;
    let manifest_len = u32::from_le_bytes(ckpt_bytes[prefix..prefix + 4].try_into().unwrap()) as usize;
    let mut silent = 0;
    let mut unexpected = Vec::new();
    for case in 0..50 {
        let (bytes, length_bearing) =
            if case % 2 == 0 { (&data_bytes, prefix..prefix + 12) } else { (&ckpt_bytes, prefix..prefix + 4 + manifest_len) };
        let mut bad = bytes.clone();
        let pos = rng.gen_range(0..bad.len());
        bad[pos] ^= rng.gen_range(1..=255u8);
        let err = if case % 2 == 0 { decode_data(&bad).err() } else { decode_checkpoint(&bad).err() };
        match err {
            None => silent += 1,
            Some(Error::Checksum { .. }) => {}
            Some(Error::Truncated { .. }) if length_bearing.contains(&pos) => {}
            Some(e) => unexpected.push(format!("byte {pos}: {e}")),
        }
    }
    verdict(
        "9",
        data_ok && ckpt_ok && silent == 0 && unexpected.is_empty(),
        format!("round trips data {data_ok} checkpoint {ckpt_ok}; 50 corruptions, {silent} accepted, other errors {unexpected:?}"),
    );
}

fn strip_wall_clock(csv: &str) -> String {
    csv.lines().map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head)).collect::<Vec<_>>().join("\n")
}

#[test]
fn c10_training_is_deterministic() {
    let mut run = RunConfig::default();
    run.generator.nx = 31;
    run.generator.ny = 31;
    run.generator.nt = 30;
    run.levels = 2;
    run.train.max_epochs = 20;
    run.train.groups = Some(vec![1, 2]);
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let outs: Vec<_> = dirs.iter().map(|d| cmd_train(&run, d.path(), false).unwrap()).collect();
    let read = |p: &std::path::Path| std::fs::read(p).unwrap();
    let same_ckpt = read(&outs[0].checkpoint) == read(&outs[1].checkpoint);
    let csv = |p: &std::path::Path| strip_wall_clock(&String::from_utf8(read(p)).unwrap());
    let (a, b) = (csv(&outs[0].metrics), csv(&outs[1].metrics));
    assert!(a.starts_with("level,phase,op,epoch") && !a.contains("wall_ms"));
    let rows = a.lines().count() - 1;
    verdict("10", same_ckpt && a == b && rows > 0, format!("checkpoints identical {same_ckpt}, {rows} metrics rows identical {}", a == b));
}

#[test]
fn eval_split_sizes_follow_the_pyramid() {
    let t = toy();
    let finest = t.pyramid.level_split(2, SplitKind::Val).unwrap();
    assert_eq!(finest.dims().t, 40);
    let l = global_loss(&t.pr, 2, &finest, 0.5).unwrap();
    assert_eq!(l, t.pr_history.rows.last().unwrap().val_global);
}
