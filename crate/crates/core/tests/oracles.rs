//! Independent reference implementations checked against the library.

use mrcae_core::conv::{
    bilinear_upsample, conv2d_backward, conv2d_forward, decimate, deconv2d_backward, deconv2d_forward,
    local_average_downsample, relu, relu_backward, ConvKernel, DeconvKernel, BILINEAR_STENCIL, RESTRICT_STENCIL,
};
use mrcae_core::masking::{apply_mask, compute_mask};
use mrcae_core::objectives::{level_loss, level_loss_backward};
use mrcae_core::tensor::reduce_time_mean_sq;
use mrcae_core::{Dims, ScalarField, SnapshotTensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(rng: &mut ChaCha8Rng, d: Dims) -> SnapshotTensor {
    SnapshotTensor::from_fn(d, |_, _, _, _| rng.gen_range(-1.0..1.0))
}

fn random_conv(rng: &mut ChaCha8Rng, c_out: usize, c_in: usize) -> ConvKernel {
    let w = (0..c_out * c_in * 9).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let b = (0..c_out).map(|_| rng.gen_range(-1.0..1.0)).collect();
    ConvKernel::from_parts(c_out, c_in, w, b).unwrap()
}

fn random_deconv(rng: &mut ChaCha8Rng, c_in: usize, c_out: usize) -> DeconvKernel {
    let w = (0..c_out * c_in * 9).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let b = (0..c_out).map(|_| rng.gen_range(-1.0..1.0)).collect();
    DeconvKernel::from_parts(c_in, c_out, w, b).unwrap()
}

/// Straight nested-loop strided convolution.
fn naive_conv(x: &SnapshotTensor, k: &ConvKernel) -> SnapshotTensor {
    let d = x.dims();
    let (hc, wc) = ((d.h - 3) / 2 + 1, (d.w - 3) / 2 + 1);
    SnapshotTensor::from_fn(Dims::new(d.t, k.c_out(), hc, wc), |t, o, i, j| {
        let mut s = k.bias()[o];
        for c in 0..d.c {
            for u in 0..3 {
                for v in 0..3 {
                    s += k.weights()[((o * d.c + c) * 3 + u) * 3 + v] * x.get(t, c, 2 * i + u, 2 * j + v);
                }
            }
        }
        s
    })
}

/// Transposed convolution written as a gather over contributing inputs.
fn naive_deconv(x: &SnapshotTensor, k: &DeconvKernel) -> SnapshotTensor {
    let d = x.dims();
    SnapshotTensor::from_fn(Dims::new(d.t, k.c_out(), 2 * d.h + 1, 2 * d.w + 1), |t, o, r, s| {
        let mut acc = k.bias()[o];
        for c in 0..d.c {
            for i in 0..d.h {
                for j in 0..d.w {
                    if r >= 2 * i && r - 2 * i < 3 && s >= 2 * j && s - 2 * j < 3 {
                        let (u, v) = (r - 2 * i, s - 2 * j);
                        acc += k.weights()[((c * k.c_out() + o) * 3 + u) * 3 + v] * x.get(t, c, i, j);
                    }
                }
            }
        }
        acc
    })
}

fn max_abs_diff(a: &SnapshotTensor, b: &SnapshotTensor) -> f64 {
    assert_eq!(a.dims(), b.dims());
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Central differences of a scalar function over every entry of `p`.
fn fd_grad(p: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
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

fn assert_rel_close(analytic: &[f64], numeric: &[f64], tol: f64, what: &str) {
    let scale = numeric.iter().chain(analytic).fold(1.0f64, |m, v| m.max(v.abs()));
    for (k, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let err = (a - n).abs() / scale;
        assert!(err <= tol, "{what}[{k}]: analytic {a} vs numeric {n} (rel {err:e})");
    }
}

#[test]
fn time_mean_sq_matches_naive_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let d = Dims::new(4, 1, 3, 3);
    let a = random_tensor(&mut rng, d);
    let b = random_tensor(&mut rng, d);
    let got = reduce_time_mean_sq(&a, &b).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            let mut s = 0.0;
            for t in 0..4 {
                let r = a.get(t, 0, i, j) - b.get(t, 0, i, j);
                s += r * r;
            }
            assert!((got.get(i, j) - s / 4.0).abs() <= 1e-15);
        }
    }
}

#[test]
fn bilinear_stencil_dot_on_ramp() {
    // naive dot product: .25·1 + .5·2 + .25·3 + .5·4 + 1·5 + .5·6 + .25·7 + .5·8 + .25·9 = 20
    let x = SnapshotTensor::from_fn(Dims::new(1, 1, 3, 3), |_, _, i, j| (3 * i + j + 1) as f64);
    let k = ConvKernel::from_stencil(BILINEAR_STENCIL);
    let y = conv2d_forward(&x, &k).unwrap();
    assert_eq!(y.as_slice(), naive_conv(&x, &k).as_slice());
    assert_eq!(y.as_slice(), &[20.0]);
}

#[test]
fn conv_and_deconv_match_naive_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..10 {
        let (ci, co) = (rng.gen_range(1..4), rng.gen_range(1..4));
        let x = random_tensor(&mut rng, Dims::new(2, ci, 7, 5));
        let k = random_conv(&mut rng, co, ci);
        assert!(max_abs_diff(&conv2d_forward(&x, &k).unwrap(), &naive_conv(&x, &k)) < 1e-14);
        let xc = random_tensor(&mut rng, Dims::new(2, ci, 3, 4));
        let dk = random_deconv(&mut rng, ci, co);
        assert!(max_abs_diff(&deconv2d_forward(&xc, &dk).unwrap(), &naive_deconv(&xc, &dk)) < 1e-14);
    }
}

#[test]
fn conv_deconv_adjoint_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..20 {
        let (ci, co) = (rng.gen_range(1..4), rng.gen_range(1..4));
        let mut k = random_conv(&mut rng, co, ci);
        k.bias_mut().fill(0.0);
        let x = random_tensor(&mut rng, Dims::new(2, ci, 7, 9));
        let y = random_tensor(&mut rng, Dims::new(2, co, 3, 4));
        let lhs = conv2d_forward(&x, &k).unwrap().dot(&y).unwrap();
        let rhs = x.dot(&deconv2d_forward(&y, &k.transposed()).unwrap()).unwrap();
        assert!((lhs - rhs).abs() <= 1e-12, "{lhs} vs {rhs}");
    }
}

#[test]
fn conv_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..5 {
        let (ci, co) = (rng.gen_range(1..3), rng.gen_range(1..3));
        let x = random_tensor(&mut rng, Dims::new(2, ci, 5, 7));
        let k = random_conv(&mut rng, co, ci);
        let probe = random_tensor(&mut rng, conv2d_forward(&x, &k).unwrap().dims());
        let g = conv2d_backward(&x, &k, &probe).unwrap();
        let loss_x = |v: &[f64]| {
            let x = SnapshotTensor::from_vec(x.dims(), v.to_vec()).unwrap();
            conv2d_forward(&x, &k).unwrap().dot(&probe).unwrap()
        };
        assert_rel_close(g.x.as_slice(), &fd_grad(x.as_slice(), 1e-6, loss_x), 1e-6, "conv dx");
        let loss_w = |v: &[f64]| {
            let k = ConvKernel::from_parts(co, ci, v.to_vec(), k.bias().to_vec()).unwrap();
            conv2d_forward(&x, &k).unwrap().dot(&probe).unwrap()
        };
        assert_rel_close(&g.weights, &fd_grad(k.weights(), 1e-6, loss_w), 1e-6, "conv dw");
        let loss_b = |v: &[f64]| {
            let k = ConvKernel::from_parts(co, ci, k.weights().to_vec(), v.to_vec()).unwrap();
            conv2d_forward(&x, &k).unwrap().dot(&probe).unwrap()
        };
        assert_rel_close(&g.bias, &fd_grad(k.bias(), 1e-6, loss_b), 1e-6, "conv db");
    }
}

#[test]
fn deconv_gradients_match_finite_differences_and_adjoint() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..5 {
        let (ci, co) = (rng.gen_range(1..3), rng.gen_range(1..3));
        let x = random_tensor(&mut rng, Dims::new(2, ci, 3, 2));
        let k = random_deconv(&mut rng, ci, co);
        let probe = random_tensor(&mut rng, deconv2d_forward(&x, &k).unwrap().dims());
        let g = deconv2d_backward(&x, &k, &probe).unwrap();
        let loss_x = |v: &[f64]| {
            let x = SnapshotTensor::from_vec(x.dims(), v.to_vec()).unwrap();
            deconv2d_forward(&x, &k).unwrap().dot(&probe).unwrap()
        };
        assert_rel_close(g.x.as_slice(), &fd_grad(x.as_slice(), 1e-6, loss_x), 1e-6, "deconv dx");
        let loss_w = |v: &[f64]| {
            let k = DeconvKernel::from_parts(ci, co, v.to_vec(), k.bias().to_vec()).unwrap();
            deconv2d_forward(&x, &k).unwrap().dot(&probe).unwrap()
        };
        assert_rel_close(&g.weights, &fd_grad(k.weights(), 1e-6, loss_w), 1e-6, "deconv dw");
        let loss_b = |v: &[f64]| {
            let k = DeconvKernel::from_parts(ci, co, k.weights().to_vec(), v.to_vec()).unwrap();
            deconv2d_forward(&x, &k).unwrap().dot(&probe).unwrap()
        };
        assert_rel_close(&g.bias, &fd_grad(k.bias(), 1e-6, loss_b), 1e-6, "deconv db");

        let via_conv = conv2d_forward(&probe, &k.transposed()).unwrap();
        assert!(max_abs_diff(&g.x, &via_conv) <= 1e-13);
    }
}

#[test]
fn relu_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let x = SnapshotTensor::from_fn(Dims::new(2, 2, 3, 3), |_, _, _, _| {
        let v: f64 = rng.gen_range(1e-3..1.0);
        if rng.gen_bool(0.5) { v } else { -v }
    });
    let probe = random_tensor(&mut rng, x.dims());
    let g = relu_backward(&x, &probe).unwrap();
    let f = |v: &[f64]| relu(&SnapshotTensor::from_vec(x.dims(), v.to_vec()).unwrap()).dot(&probe).unwrap();
    assert_rel_close(g.as_slice(), &fd_grad(x.as_slice(), 1e-6, f), 1e-6, "relu");
}

#[test]
fn level_loss_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for omega in [1.0, 0.5, 0.0] {
        let d = Dims::new(3, 1, 5, 5);
        let data = random_tensor(&mut rng, d);
        let mut recon = random_tensor(&mut rng, d);
        // make the worst pixel unambiguous
        for t in 0..3 {
            recon.set(t, 0, 2, 3, data.get(t, 0, 2, 3) + 3.0);
        }
        let g = level_loss_backward(&data, &recon, omega).unwrap();
        let f = |v: &[f64]| level_loss(&data, &SnapshotTensor::from_vec(d, v.to_vec()).unwrap(), omega).unwrap().total;
        assert_rel_close(g.as_slice(), &fd_grad(recon.as_slice(), 1e-6, f), 1e-6, "level_loss");
    }
}

#[test]
fn decimate_inverts_upsample_exhaustively() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    for h in 1..6 {
        for w in 1..6 {
            let x = random_tensor(&mut rng, Dims::new(2, 1, h, w));
            assert_eq!(decimate(&bilinear_upsample(&x).unwrap()).unwrap(), x);
        }
    }
}

#[test]
fn upsample_is_deconv_with_bilinear_stencil() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let x = random_tensor(&mut rng, Dims::new(3, 1, 4, 6));
    let k = DeconvKernel::from_stencil(BILINEAR_STENCIL);
    assert_eq!(bilinear_upsample(&x).unwrap(), deconv2d_forward(&x, &k).unwrap());
    let fine = random_tensor(&mut rng, Dims::new(3, 1, 9, 13));
    assert_eq!(conv2d_forward(&fine, &ConvKernel::from_stencil(RESTRICT_STENCIL)).unwrap(), decimate(&fine).unwrap());
}

#[test]
fn local_average_matches_windowed_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let f = ScalarField::from_fn(7, 7, |_, _| rng.gen_range(-2.0..2.0));
    let a = local_average_downsample(&f).unwrap();
    assert_eq!(a.dims(), (3, 3));
    for i in 0..3 {
        for j in 0..3 {
            let mut window = Vec::new();
            for r in 2 * i..2 * i + 3 {
                for s in 2 * j..2 * j + 3 {
                    window.push(f.get(r, s));
                }
            }
            let mean = window.iter().sum::<f64>() / 9.0;
            assert!((a.get(i, j) - mean).abs() <= 1e-15);
        }
    }
}

/// Per-cell mask oracle built from scratch (no library reductions).
pub fn naive_mask(data: &SnapshotTensor, recon: &SnapshotTensor, eps: f64) -> Vec<bool> {
    let d = data.dims();
    let mut per_pixel = vec![vec![0.0; d.w]; d.h];
    for (i, row) in per_pixel.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            let mut s = 0.0;
            for t in 0..d.t {
                let r = data.get(t, 0, i, j) - recon.get(t, 0, i, j);
                s += r * r;
            }
            *cell = s * (1.0 / d.t as f64);
        }
    }
    let (hc, wc) = ((d.h - 1) / 2, (d.w - 1) / 2);
    let mut out = Vec::with_capacity(hc * wc);
    for i in 0..hc {
        for j in 0..wc {
            let mut s = 0.0;
            for r in 2 * i..2 * i + 3 {
                for c in 2 * j..2 * j + 3 {
                    s += per_pixel[r][c];
                }
            }
            out.push(s / 9.0 >= eps);
        }
    }
    out
}

#[test]
fn mask_matches_oracle_at_median_threshold() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let d = Dims::new(5, 1, 7, 7);
    let data = random_tensor(&mut rng, d);
    let recon = random_tensor(&mut rng, d);
    let averaged = local_average_downsample(&reduce_time_mean_sq(&data, &recon).unwrap()).unwrap();
    let mut vals = averaged.as_slice().to_vec();
    vals.sort_by(f64::total_cmp);
    let eps = vals[vals.len() / 2];
    let m = compute_mask(&data, &recon, eps).unwrap();
    assert_eq!(m.bits(), naive_mask(&data, &recon, eps).as_slice());
    assert!(m.active_count() >= 1);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn mask_monotone_in_tolerance(seed in any::<u64>(), e1 in 0.0f64..0.5, de in 0.0f64..0.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Dims::new(3, 1, 7, 9);
        let data = random_tensor(&mut rng, d);
        let recon = random_tensor(&mut rng, d);
        let loose = compute_mask(&data, &recon, e1).unwrap();
        let tight = compute_mask(&data, &recon, e1 + de).unwrap();
        for (a, b) in loose.bits().iter().zip(tight.bits()) {
            prop_assert!(*a || !*b);
        }
    }

    #[test]
    fn apply_mask_idempotent(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = random_tensor(&mut rng, Dims::new(2, 3, 4, 5));
        let bits: Vec<bool> = (0..20).map(|_| rng.gen_bool(0.5)).collect();
        let m = mrcae_core::SpatialMask::from_bits(4, 5, bits).unwrap();
        let once = apply_mask(&f, &m).unwrap();
        prop_assert_eq!(apply_mask(&once, &m).unwrap(), once);
    }

    #[test]
    fn level_loss_permutation_invariant_and_max_dominates(seed in any::<u64>(), omega in 0.0f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Dims::new(5, 1, 4, 3);
        let data = random_tensor(&mut rng, d);
        let recon = random_tensor(&mut rng, d);
        let l = level_loss(&data, &recon, omega).unwrap();
        let perm = [3usize, 0, 4, 1, 2];
        let lp = level_loss(
            &data.select_snapshots(&perm).unwrap(),
            &recon.select_snapshots(&perm).unwrap(),
            omega,
        ).unwrap();
        prop_assert!((l.total - lp.total).abs() <= 1e-14 * l.total.max(1.0));
        prop_assert!((l.max_part - lp.max_part).abs() <= 1e-14 * l.max_part.max(1.0));
        // mean of per-pixel values never exceeds their max (up to summation rounding)
        prop_assert!(l.max_part >= l.mse_part * (1.0 - 1e-15));
        prop_assert!((l.total - (omega * l.mse_part + (1.0 - omega) * l.max_part)).abs() <= 1e-15 * l.total.max(1.0));
    }
}
