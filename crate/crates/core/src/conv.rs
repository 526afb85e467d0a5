//! Fixed-geometry spatial operators: 3×3 stride-2 valid convolution and its
//! transpose (with reverse-mode gradients), bilinear prolongation, local
//! average restriction, odd-index decimation and ReLU.
//!
//! With `H = 2^p − 1`, convolution maps `H → 2^{p−1} − 1` and the transposed
//! convolution maps it back, so every level of the pyramid stays on the
//! `2^p − 1` lattice. Output cell `(i, j)` of a convolution is centred on
//! input pixel `(2i + 1, 2j + 1)`; restriction and decimation use the same
//! centres.

use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::{Dims, ScalarField, SnapshotTensor};
use crate::{Error, Result};

pub const KSIZE: usize = 3;
const KAREA: usize = KSIZE * KSIZE;

/// Center-pick restriction stencil.
pub const RESTRICT_STENCIL: [f64; KAREA] = [0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0];

/// Bilinear interpolation stencil.
pub const BILINEAR_STENCIL: [f64; KAREA] = [0.25, 0.5, 0.25, 0.5, 1.0, 0.5, 0.25, 0.5, 0.25];

/// Convolution weights laid out `(C_out, C_in, 3, 3)` plus one bias per output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel {
    c_out: usize,
    c_in: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

/// Transposed-convolution weights laid out `(C_in, C_out, 3, 3)` plus one bias per output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct DeconvKernel {
    c_in: usize,
    c_out: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

macro_rules! kernel_common {
    ($ty:ident, $first:ident, $second:ident) => {
        impl $ty {
            pub fn zeros($first: usize, $second: usize) -> Self {
                $ty {
                    $first,
                    $second,
                    weights: vec![0.0; $first * $second * KAREA],
                    bias: vec![0.0; c_out_of!($first, $second, $ty)],
                }
            }

            pub fn from_parts($first: usize, $second: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
                let k = Self::zeros($first, $second);
                if weights.len() != k.weights.len() || bias.len() != k.bias.len() {
                    return Err(Error::shape(
                        concat!(stringify!($ty), "::from_parts"),
                        alloc::format!("{} weights + {} biases", k.weights.len(), k.bias.len()),
                        alloc::format!("{} weights + {} biases", weights.len(), bias.len()),
                    ));
                }
                Ok($ty { weights, bias, ..k })
            }

            pub fn c_in(&self) -> usize {
                self.c_in
            }

            pub fn c_out(&self) -> usize {
                self.c_out
            }

            pub fn weights(&self) -> &[f64] {
                &self.weights
            }

            pub fn bias(&self) -> &[f64] {
                &self.bias
            }

            pub fn weights_mut(&mut self) -> &mut [f64] {
                &mut self.weights
            }

            pub fn bias_mut(&mut self) -> &mut [f64] {
                &mut self.bias
            }

            /// Weights and bias, mutably and at once.
            pub fn parts_mut(&mut self) -> (&mut [f64], &mut [f64]) {
                (&mut self.weights, &mut self.bias)
            }

            pub fn param_count(&self) -> usize {
                self.weights.len() + self.bias.len()
            }

            /// Weight index of tap `(u, v)` between channels `(a, b)` in storage order.
            #[inline]
            pub fn tap(&self, a: usize, b: usize, u: usize, v: usize) -> usize {
                ((a * self.$second + b) * KSIZE + u) * KSIZE + v
            }
        }
    };
}

macro_rules! c_out_of {
    ($first:ident, $second:ident, ConvKernel) => {
        $first
    };
    ($first:ident, $second:ident, DeconvKernel) => {
        $second
    };
}

kernel_common!(ConvKernel, c_out, c_in);
kernel_common!(DeconvKernel, c_in, c_out);

impl ConvKernel {
    /// Single-channel kernel with the given 3×3 stencil and zero bias.
    pub fn from_stencil(stencil: [f64; KAREA]) -> Self {
        ConvKernel {
            c_out: 1,
            c_in: 1,
            weights: stencil.to_vec(),
            bias: vec![0.0],
        }
    }

    /// The adjoint kernel: same taps, channel roles swapped, zero bias.
    pub fn transposed(&self) -> DeconvKernel {
        DeconvKernel {
            c_in: self.c_out,
            c_out: self.c_in,
            weights: self.weights.clone(),
            bias: vec![0.0; self.c_in],
        }
    }
}

impl DeconvKernel {
    pub fn from_stencil(stencil: [f64; KAREA]) -> Self {
        DeconvKernel {
            c_in: 1,
            c_out: 1,
            weights: stencil.to_vec(),
            bias: vec![0.0],
        }
    }

    pub fn transposed(&self) -> ConvKernel {
        ConvKernel {
            c_out: self.c_in,
            c_in: self.c_out,
            weights: self.weights.clone(),
            bias: vec![0.0; self.c_in],
        }
    }
}

/// Gradients of a kernel-parameterised op: input, weights, bias.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelGrads {
    pub x: SnapshotTensor,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Output size of a valid 3×3 stride-2 convolution, if the input is odd and at least 3.
pub fn coarse_len(n: usize) -> Option<usize> {
    (n >= KSIZE && n % 2 == 1).then(|| (n - KSIZE) / 2 + 1)
}

fn check_odd_spatial(op: &'static str, h: usize, w: usize) -> Result<(usize, usize)> {
    match (coarse_len(h), coarse_len(w)) {
        (Some(hc), Some(wc)) => Ok((hc, wc)),
        _ => Err(Error::InvalidShape {
            op,
            shape: alloc::format!("({h},{w})"),
            reason: "spatial dims must be odd and at least 3",
        }),
    }
}

pub fn conv2d_forward(x: &SnapshotTensor, k: &ConvKernel) -> Result<SnapshotTensor> {
    let d = x.dims();
    if d.c != k.c_in {
        return Err(Error::shape("conv2d_forward", d, alloc::format!("kernel with {} input channels", k.c_in)));
    }
    let (hc, wc) = check_odd_spatial("conv2d_forward", d.h, d.w)?;
    let od = Dims::new(d.t, k.c_out, hc, wc);
    let mut out = SnapshotTensor::zeros(od);
    let xs = x.as_slice();
    let os = out.as_mut_slice();
    for t in 0..d.t {
        for o in 0..k.c_out {
            let ob = od.index(t, o, 0, 0);
            let plane = &mut os[ob..ob + hc * wc];
            plane.fill(k.bias[o]);
            for c in 0..d.c {
                let xb = d.index(t, c, 0, 0);
                for u in 0..KSIZE {
                    for v in 0..KSIZE {
                        let wv = k.weights[k.tap(o, c, u, v)];
                        for i in 0..hc {
                            let row = xb + (2 * i + u) * d.w + v;
                            let orow = &mut plane[i * wc..(i + 1) * wc];
                            for (j, acc) in orow.iter_mut().enumerate() {
                                *acc += wv * xs[row + 2 * j];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Reverse-mode gradients of [`conv2d_forward`].
pub fn conv2d_backward(x: &SnapshotTensor, k: &ConvKernel, grad_out: &SnapshotTensor) -> Result<KernelGrads> {
    conv2d_backward_impl(x, k, grad_out, true)
}

pub(crate) fn conv2d_backward_impl(
    x: &SnapshotTensor,
    k: &ConvKernel,
    grad_out: &SnapshotTensor,
    want_x: bool,
) -> Result<KernelGrads> {
    let d = x.dims();
    if d.c != k.c_in {
        return Err(Error::shape("conv2d_backward", d, alloc::format!("kernel with {} input channels", k.c_in)));
    }
    let (hc, wc) = check_odd_spatial("conv2d_backward", d.h, d.w)?;
    let od = Dims::new(d.t, k.c_out, hc, wc);
    if grad_out.dims() != od {
        return Err(Error::shape("conv2d_backward", od, grad_out.dims()));
    }
    let mut gx = if want_x { SnapshotTensor::zeros(d) } else { SnapshotTensor::zeros(Dims::new(1, 1, 1, 1)) };
    let mut gw = vec![0.0; k.weights.len()];
    let mut gb = vec![0.0; k.bias.len()];
    let xs = x.as_slice();
    let gs = grad_out.as_slice();
    for t in 0..d.t {
        for o in 0..k.c_out {
            let gbase = od.index(t, o, 0, 0);
            let g = &gs[gbase..gbase + hc * wc];
            gb[o] += g.iter().sum::<f64>();
            for c in 0..d.c {
                let xb = d.index(t, c, 0, 0);
                for u in 0..KSIZE {
                    for v in 0..KSIZE {
                        let tap = k.tap(o, c, u, v);
                        let wv = k.weights[tap];
                        let mut acc = 0.0;
                        for i in 0..hc {
                            let row = xb + (2 * i + u) * d.w + v;
                            let grow = &g[i * wc..(i + 1) * wc];
                            for (j, &gv) in grow.iter().enumerate() {
                                acc += gv * xs[row + 2 * j];
                            }
                            if want_x {
                                let gxs = gx.as_mut_slice();
                                for (j, &gv) in grow.iter().enumerate() {
                                    gxs[row + 2 * j] += wv * gv;
                                }
                            }
                        }
                        gw[tap] += acc;
                    }
                }
            }
        }
    }
    Ok(KernelGrads { x: gx, weights: gw, bias: gb })
}

pub fn deconv2d_forward(x: &SnapshotTensor, k: &DeconvKernel) -> Result<SnapshotTensor> {
    let d = x.dims();
    if d.c != k.c_in {
        return Err(Error::shape("deconv2d_forward", d, alloc::format!("kernel with {} input channels", k.c_in)));
    }
    let (hf, wf) = (2 * d.h + 1, 2 * d.w + 1);
    let od = Dims::new(d.t, k.c_out, hf, wf);
    let mut out = SnapshotTensor::zeros(od);
    let xs = x.as_slice();
    let os = out.as_mut_slice();
    for t in 0..d.t {
        for o in 0..k.c_out {
            let ob = od.index(t, o, 0, 0);
            let plane = &mut os[ob..ob + hf * wf];
            plane.fill(k.bias[o]);
            for c in 0..d.c {
                let xb = d.index(t, c, 0, 0);
                for u in 0..KSIZE {
                    for v in 0..KSIZE {
                        let wv = k.weights[k.tap(c, o, u, v)];
                        for i in 0..d.h {
                            let xrow = &xs[xb + i * d.w..xb + (i + 1) * d.w];
                            let orow = (2 * i + u) * wf + v;
                            for (j, &xv) in xrow.iter().enumerate() {
                                plane[orow + 2 * j] += wv * xv;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Reverse-mode gradients of [`deconv2d_forward`].
pub fn deconv2d_backward(x: &SnapshotTensor, k: &DeconvKernel, grad_out: &SnapshotTensor) -> Result<KernelGrads> {
    deconv2d_backward_impl(x, k, grad_out, true)
}

pub(crate) fn deconv2d_backward_impl(
    x: &SnapshotTensor,
    k: &DeconvKernel,
    grad_out: &SnapshotTensor,
    want_x: bool,
) -> Result<KernelGrads> {
    let d = x.dims();
    if d.c != k.c_in {
        return Err(Error::shape("deconv2d_backward", d, alloc::format!("kernel with {} input channels", k.c_in)));
    }
    let (hf, wf) = (2 * d.h + 1, 2 * d.w + 1);
    let od = Dims::new(d.t, k.c_out, hf, wf);
    if grad_out.dims() != od {
        return Err(Error::shape("deconv2d_backward", od, grad_out.dims()));
    }
    let mut gx = if want_x { SnapshotTensor::zeros(d) } else { SnapshotTensor::zeros(Dims::new(1, 1, 1, 1)) };
    let mut gw = vec![0.0; k.weights.len()];
    let mut gb = vec![0.0; k.bias.len()];
    let xs = x.as_slice();
    let gs = grad_out.as_slice();
    for t in 0..d.t {
        for o in 0..k.c_out {
            let gbase = od.index(t, o, 0, 0);
            let g = &gs[gbase..gbase + hf * wf];
            gb[o] += g.iter().sum::<f64>();
            for c in 0..d.c {
                let xb = d.index(t, c, 0, 0);
                for u in 0..KSIZE {
                    for v in 0..KSIZE {
                        let tap = k.tap(c, o, u, v);
                        let wv = k.weights[tap];
                        let mut acc = 0.0;
                        for i in 0..d.h {
                            let grow = (2 * i + u) * wf + v;
                            let xrow = &xs[xb + i * d.w..xb + (i + 1) * d.w];
                            for (j, &xv) in xrow.iter().enumerate() {
                                acc += xv * g[grow + 2 * j];
                            }
                            if want_x {
                                let gxs = &mut gx.as_mut_slice()[xb + i * d.w..xb + (i + 1) * d.w];
                                for (j, gxv) in gxs.iter_mut().enumerate() {
                                    *gxv += wv * g[grow + 2 * j];
                                }
                            }
                        }
                        gw[tap] += acc;
                    }
                }
            }
        }
    }
    Ok(KernelGrads { x: gx, weights: gw, bias: gb })
}

fn require_single_channel(op: &'static str, d: Dims) -> Result<()> {
    if d.c != 1 {
        return Err(Error::InvalidShape {
            op,
            shape: alloc::format!("{d}"),
            reason: "expected a single channel",
        });
    }
    Ok(())
}

/// Fixed bilinear prolongation `(T,1,H,W) → (T,1,2H+1,2W+1)`.
pub fn bilinear_upsample(x: &SnapshotTensor) -> Result<SnapshotTensor> {
    require_single_channel("bilinear_upsample", x.dims())?;
    deconv2d_forward(x, &DeconvKernel::from_stencil(BILINEAR_STENCIL))
}

/// Mean over the 3×3 window centred on `(2i+1, 2j+1)`.
pub fn local_average_downsample(f: &ScalarField) -> Result<ScalarField> {
    let (h, w) = f.dims();
    let (hc, wc) = check_odd_spatial("local_average_downsample", h, w)?;
    Ok(ScalarField::from_fn(hc, wc, |i, j| {
        let mut s = 0.0;
        for u in 0..KSIZE {
            for v in 0..KSIZE {
                s += f.get(2 * i + u, 2 * j + v);
            }
        }
        s / KAREA as f64
    }))
}

/// Odd-index subsampling: `out[t,0,i,j] = f[t,0,2i+1,2j+1]`.
pub fn decimate(f: &SnapshotTensor) -> Result<SnapshotTensor> {
    let d = f.dims();
    require_single_channel("decimate", d)?;
    let (hc, wc) = check_odd_spatial("decimate", d.h, d.w)?;
    Ok(SnapshotTensor::from_fn(Dims::new(d.t, 1, hc, wc), |t, _, i, j| {
        f.get(t, 0, 2 * i + 1, 2 * j + 1)
    }))
}

pub fn relu(x: &SnapshotTensor) -> SnapshotTensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

pub fn relu_backward(x: &SnapshotTensor, grad_out: &SnapshotTensor) -> Result<SnapshotTensor> {
    if x.dims() != grad_out.dims() {
        return Err(Error::shape("relu_backward", x.dims(), grad_out.dims()));
    }
    let mut g = grad_out.clone();
    for (gv, &xv) in g.as_mut_slice().iter_mut().zip(x.as_slice()) {
        if xv <= 0.0 {
            *gv = 0.0;
        }
    }
    Ok(g)
}
