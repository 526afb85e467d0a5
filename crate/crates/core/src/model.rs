//! The grown network: one block per resolution level, each holding a
//! deepening conv/deconv pair and an ordered list of masked filter groups.
//!
//! For an input `x` at level `k` the output is
//!
//! ```text
//! f_k(x) = d_k( f_{k-1}( c_k(x) ) ) + Σ_j d_kj( act( mask_kj ⊙ c_kj(x) ) )
//! ```
//!
//! with `f_{-1}` the identity. The output of the innermost convolution
//! `c_0 ∘ … ∘ c_k` is the dense part of the encoding; masked group features
//! at active cells are the sparse part.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::conv::{
    self, coarse_len, ConvKernel, DeconvKernel, KernelGrads, BILINEAR_STENCIL, RESTRICT_STENCIL,
};
use crate::masking::{apply_mask, SpatialMask};
use crate::tensor::{Dims, SnapshotTensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Activation {
    #[default]
    Linear,
    Relu,
}

impl Activation {
    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Linear => "linear",
            Activation::Relu => "relu",
        }
    }
}

/// One masked bottleneck pathway `1 → g → 1` at a single level.
#[derive(Debug, Clone, PartialEq)]
pub struct WideningGroup {
    conv: ConvKernel,
    deconv: DeconvKernel,
    mask: SpatialMask,
    activation: Activation,
}

impl WideningGroup {
    pub fn from_parts(conv: ConvKernel, deconv: DeconvKernel, mask: SpatialMask, activation: Activation) -> Result<Self> {
        if conv.c_in() != 1 || deconv.c_out() != 1 || conv.c_out() != deconv.c_in() || conv.c_out() == 0 {
            return Err(Error::Topology(format!(
                "group kernels must be 1→g and g→1, got {}→{} and {}→{}",
                conv.c_in(),
                conv.c_out(),
                deconv.c_in(),
                deconv.c_out()
            )));
        }
        Ok(WideningGroup { conv, deconv, mask, activation })
    }

    pub fn channels(&self) -> usize {
        self.conv.c_out()
    }

    pub fn conv(&self) -> &ConvKernel {
        &self.conv
    }

    pub fn deconv(&self) -> &DeconvKernel {
        &self.deconv
    }

    pub fn mask(&self) -> &SpatialMask {
        &self.mask
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn param_count(&self) -> usize {
        self.conv.param_count() + self.deconv.param_count()
    }

    fn features(&self, x: &SnapshotTensor) -> Result<(SnapshotTensor, SnapshotTensor)> {
        let pre = apply_mask(&conv::conv2d_forward(x, &self.conv)?, &self.mask)?;
        let post = match self.activation {
            Activation::Linear => pre.clone(),
            Activation::Relu => conv::relu(&pre),
        };
        Ok((pre, post))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelBlock {
    level: usize,
    dims: (usize, usize),
    deepen_conv: ConvKernel,
    deepen_deconv: DeconvKernel,
    groups: Vec<WideningGroup>,
}

impl LevelBlock {
    pub fn from_parts(
        level: usize,
        dims: (usize, usize),
        deepen_conv: ConvKernel,
        deepen_deconv: DeconvKernel,
        groups: Vec<WideningGroup>,
    ) -> Result<Self> {
        let single = |a: usize, b: usize| a == 1 && b == 1;
        if !single(deepen_conv.c_in(), deepen_conv.c_out()) || !single(deepen_deconv.c_in(), deepen_deconv.c_out()) {
            return Err(Error::Topology(format!("level {level}: deepening kernels must be single-channel")));
        }
        let coarse = coarse_dims(dims)
            .ok_or_else(|| Error::Topology(format!("level {level}: dims {dims:?} too small for a 3x3 stride-2 kernel")))?;
        if let Some((j, g)) = groups.iter().enumerate().find(|(_, g)| g.mask.dims() != coarse) {
            return Err(Error::Topology(format!(
                "level {level} group {j}: mask dims {:?} differ from feature dims {coarse:?}",
                g.mask.dims()
            )));
        }
        Ok(LevelBlock { level, dims, deepen_conv, deepen_deconv, groups })
    }

    pub fn level(&self) -> usize {
        self.level
    }

    /// Spatial dims of this level's input and output.
    pub fn dims(&self) -> (usize, usize) {
        self.dims
    }

    /// Spatial dims of this level's convolved features (and masks).
    pub fn coarse_dims(&self) -> (usize, usize) {
        coarse_dims(self.dims).expect("validated at construction")
    }

    pub fn deepen_conv(&self) -> &ConvKernel {
        &self.deepen_conv
    }

    pub fn deepen_deconv(&self) -> &DeconvKernel {
        &self.deepen_deconv
    }

    pub fn groups(&self) -> &[WideningGroup] {
        &self.groups
    }

    pub fn param_count(&self) -> usize {
        self.deepen_conv.param_count()
            + self.deepen_deconv.param_count()
            + self.groups.iter().map(WideningGroup::param_count).sum::<usize>()
    }
}

fn coarse_dims((h, w): (usize, usize)) -> Option<(usize, usize)> {
    Some((coarse_len(h)?, coarse_len(w)?))
}

/// Exponent `p` with `n = 2^p − 1`, if `n` has that form.
pub fn lattice_exponent(n: usize) -> Option<u32> {
    n.checked_add(1).filter(|m| m.is_power_of_two()).map(|m| m.trailing_zeros()).filter(|&p| p >= 1)
}

/// Reproducibility metadata carried by a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Provenance {
    pub config_hash: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MrCaeModel {
    finest: (usize, usize),
    n_levels: usize,
    activation: Activation,
    levels: Vec<LevelBlock>,
    pub provenance: Provenance,
}

/// Sparse latent code: innermost dense field plus masked group features.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoding {
    pub innermost: SnapshotTensor,
    pub groups: Vec<GroupCode>,
}

/// Features of one group at its active cells, laid out `(t, channel, active cell)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupCode {
    pub level: usize,
    pub group: usize,
    pub channels: usize,
    pub mask: SpatialMask,
    pub values: Vec<f64>,
}

impl Encoding {
    /// Stored values per snapshot, excluding mask positions.
    pub fn size_per_snapshot(&self) -> usize {
        let d = self.innermost.dims();
        d.plane() + self.groups.iter().map(|g| g.channels * g.mask.active_count()).sum::<usize>()
    }

    /// Total stored values across all snapshots.
    pub fn payload_len(&self) -> usize {
        self.innermost.as_slice().len() + self.groups.iter().map(|g| g.values.len()).sum::<usize>()
    }
}

/// Activations retained by [`MrCaeModel::forward_trace`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    level: usize,
    /// `inputs[m]` is the level-`m` input: `x` at the top, deepening-conv outputs below.
    inputs: Vec<SnapshotTensor>,
    /// `deconv_inputs[m]` is what level `m`'s deepening deconvolution consumed.
    deconv_inputs: Vec<SnapshotTensor>,
    /// `(pre, post)` activation per group per level.
    group_features: Vec<Vec<(SnapshotTensor, SnapshotTensor)>>,
    pub output: SnapshotTensor,
}

impl ForwardTrace {
    pub fn innermost(&self) -> &SnapshotTensor {
        &self.deconv_inputs[0]
    }
}

impl MrCaeModel {
    /// An empty model for data whose finest grid is `finest` with `n_levels` resolution levels.
    pub fn new(finest: (usize, usize), n_levels: usize, activation: Activation) -> Result<Self> {
        let (h, w) = finest;
        let (p, q) = match (lattice_exponent(h), lattice_exponent(w)) {
            (Some(p), Some(q)) => (p as usize, q as usize),
            _ => return Err(Error::Config(format!("finest dims ({h},{w}) are not of the form (2^p-1, 2^q-1)"))),
        };
        if n_levels == 0 {
            return Err(Error::Config("level count must be at least 1".into()));
        }
        if p <= n_levels || q <= n_levels {
            return Err(Error::Config(format!(
                "finest dims ({h},{w}) give p={p}, q={q}; {n_levels} levels need p, q > {n_levels}"
            )));
        }
        Ok(MrCaeModel {
            finest,
            n_levels,
            activation,
            levels: Vec::new(),
            provenance: Provenance::default(),
        })
    }

    /// Reassemble a model from stored blocks, validating the shape chain.
    pub fn from_levels(
        finest: (usize, usize),
        n_levels: usize,
        activation: Activation,
        levels: Vec<LevelBlock>,
        provenance: Provenance,
    ) -> Result<Self> {
        let mut m = Self::new(finest, n_levels, activation)?;
        if levels.len() > n_levels {
            return Err(Error::Topology(format!("{} level blocks for a {n_levels}-level model", levels.len())));
        }
        for (k, block) in levels.iter().enumerate() {
            if block.level != k || block.dims != m.level_dims(k) {
                return Err(Error::Topology(format!(
                    "block {k} claims level {} with dims {:?}, expected dims {:?}",
                    block.level,
                    block.dims,
                    m.level_dims(k)
                )));
            }
            if let Some(g) = block.groups.iter().find(|g| g.activation != activation) {
                return Err(Error::Topology(format!(
                    "level {k}: group activation {} differs from model activation {}",
                    g.activation.as_str(),
                    activation.as_str()
                )));
            }
        }
        m.levels = levels;
        m.provenance = provenance;
        Ok(m)
    }

    pub fn n_levels(&self) -> usize {
        self.n_levels
    }

    pub fn finest_dims(&self) -> (usize, usize) {
        self.finest
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn levels(&self) -> &[LevelBlock] {
        &self.levels
    }

    pub fn level_mut(&mut self, k: usize) -> Option<&mut LevelBlock> {
        self.levels.get_mut(k)
    }

    /// Highest grown level, if any.
    pub fn top_level(&self) -> Option<usize> {
        self.levels.len().checked_sub(1)
    }

    pub fn is_fully_grown(&self) -> bool {
        self.levels.len() == self.n_levels
    }

    /// Spatial dims of level-`k` data (`k` may exceed the grown levels).
    pub fn level_dims(&self, k: usize) -> (usize, usize) {
        let mut d = self.finest;
        for _ in k + 1..self.n_levels {
            d = coarse_dims(d).expect("validated at construction");
        }
        d
    }

    /// Spatial dims of the innermost code, one halving below level 0.
    pub fn innermost_dims(&self) -> (usize, usize) {
        coarse_dims(self.level_dims(0)).expect("validated at construction")
    }

    /// Append a level whose deepening pair starts at the restriction and
    /// bilinear stencils plus `U(−noise, noise)` per tap.
    pub fn deepen<R: Rng + ?Sized>(&mut self, noise: f64, rng: &mut R) -> Result<()> {
        if self.is_fully_grown() {
            return Err(Error::Growth(format!("all {} levels already exist", self.n_levels)));
        }
        check_noise(noise)?;
        let k = self.levels.len();
        let mut c = RESTRICT_STENCIL;
        let mut d = BILINEAR_STENCIL;
        perturb(&mut c, noise, rng);
        perturb(&mut d, noise, rng);
        self.levels.push(LevelBlock {
            level: k,
            dims: self.level_dims(k),
            deepen_conv: ConvKernel::from_stencil(c),
            deepen_deconv: DeconvKernel::from_stencil(d),
            groups: Vec::new(),
        });
        Ok(())
    }

    /// Append a `channels`-wide masked group to the top level with all weights `U(−noise, noise)`.
    pub fn widen<R: Rng + ?Sized>(&mut self, mask: SpatialMask, channels: usize, noise: f64, rng: &mut R) -> Result<()> {
        check_noise(noise)?;
        if channels == 0 {
            return Err(Error::Growth("group width must be at least 1".into()));
        }
        let activation = self.activation;
        let top = self
            .levels
            .last_mut()
            .ok_or_else(|| Error::Growth("widen before any deepening".into()))?;
        let coarse = top.coarse_dims();
        if mask.dims() != coarse {
            return Err(Error::shape("widen", format!("mask {:?}", mask.dims()), format!("level features {coarse:?}")));
        }
        let mut cw = vec![0.0; 9 * channels];
        let mut dw = vec![0.0; 9 * channels];
        perturb(&mut cw, noise, rng);
        perturb(&mut dw, noise, rng);
        top.groups.push(WideningGroup {
            conv: ConvKernel::from_parts(channels, 1, cw, vec![0.0; channels])?,
            deconv: DeconvKernel::from_parts(channels, 1, dw, vec![0.0])?,
            mask,
            activation,
        });
        Ok(())
    }

    fn check_input(&self, x: &SnapshotTensor, k: usize) -> Result<()> {
        if k >= self.levels.len() {
            return Err(Error::LevelOutOfRange { level: k, top: self.top_level() });
        }
        let (h, w) = self.level_dims(k);
        let d = x.dims();
        if d.c != 1 || d.h != h || d.w != w {
            return Err(Error::shape("forward", d, Dims::new(d.t, 1, h, w)));
        }
        Ok(())
    }

    /// Reconstruction of level-`k` input `x`.
    pub fn forward(&self, x: &SnapshotTensor, k: usize) -> Result<SnapshotTensor> {
        Ok(self.forward_trace(x, k)?.output)
    }

    /// Forward pass that keeps every intermediate needed by [`MrCaeModel::backward`].
    pub fn forward_trace(&self, x: &SnapshotTensor, k: usize) -> Result<ForwardTrace> {
        self.check_input(x, k)?;
        let mut inputs = Vec::with_capacity(k + 1);
        inputs.push(x.clone());
        for m in (1..=k).rev() {
            let next = conv::conv2d_forward(inputs.last().unwrap(), &self.levels[m].deepen_conv)?;
            inputs.push(next);
        }
        inputs.reverse();
        let innermost = conv::conv2d_forward(&inputs[0], &self.levels[0].deepen_conv)?;

        let mut deconv_inputs = Vec::with_capacity(k + 1);
        let mut group_features = Vec::with_capacity(k + 1);
        let mut cur = innermost;
        for (m, block) in self.levels[..=k].iter().enumerate() {
            let mut out = conv::deconv2d_forward(&cur, &block.deepen_deconv)?;
            let mut feats = Vec::with_capacity(block.groups.len());
            for g in &block.groups {
                let (pre, post) = g.features(&inputs[m])?;
                out.add_assign(&conv::deconv2d_forward(&post, &g.deconv)?);
                feats.push((pre, post));
            }
            deconv_inputs.push(cur);
            group_features.push(feats);
            cur = out;
        }
        Ok(ForwardTrace { level: k, inputs, deconv_inputs, group_features, output: cur })
    }

    /// Parameter gradients for `grad_output = ∂loss/∂output` of a traced forward pass.
    /// The result follows [`MrCaeModel::param_arrays`] order.
    pub fn backward(&self, trace: &ForwardTrace, grad_output: &SnapshotTensor) -> Result<Vec<Vec<f64>>> {
        let k = trace.level;
        if grad_output.dims() != trace.output.dims() {
            return Err(Error::shape("backward", trace.output.dims(), grad_output.dims()));
        }
        let mut level_grads: Vec<Vec<Vec<f64>>> = vec![Vec::new(); k + 1];
        let mut deconv_grads: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(k + 1);
        let mut group_grads: Vec<Vec<[Vec<f64>; 4]>> = vec![Vec::new(); k + 1];
        // ∂/∂inputs[m] accumulated from groups; the top input needs none.
        let mut input_grads: Vec<Option<SnapshotTensor>> = vec![None; k + 1];

        let mut g = grad_output.clone();
        for m in (0..=k).rev() {
            let block = &self.levels[m];
            let mut gg = Vec::with_capacity(block.groups.len());
            for (group, (pre, post)) in block.groups.iter().zip(&trace.group_features[m]) {
                let dg = conv::deconv2d_backward(post, &group.deconv, &g)?;
                let mut g_pre = match group.activation {
                    Activation::Linear => dg.x,
                    Activation::Relu => conv::relu_backward(pre, &dg.x)?,
                };
                g_pre = apply_mask(&g_pre, &group.mask)?;
                let cg = conv::conv2d_backward_impl(&trace.inputs[m], &group.conv, &g_pre, m < k)?;
                if m < k {
                    accumulate(&mut input_grads[m], cg.x);
                }
                gg.push([cg.weights, cg.bias, dg.weights, dg.bias]);
            }
            group_grads[m] = gg;
            let dd = conv::deconv2d_backward(&trace.deconv_inputs[m], &block.deepen_deconv, &g)?;
            deconv_grads.push((dd.weights, dd.bias));
            g = dd.x;
        }
        deconv_grads.reverse();

        // g is now ∂/∂innermost; walk the deepening convolutions outward.
        let mut g_code = g;
        for m in 0..=k {
            let cg: KernelGrads = conv::conv2d_backward_impl(&trace.inputs[m], &self.levels[m].deepen_conv, &g_code, m < k)?;
            level_grads[m] = vec![cg.weights, cg.bias];
            if m < k {
                let mut gi = cg.x;
                if let Some(extra) = input_grads[m].take() {
                    gi.add_assign(&extra);
                }
                g_code = gi;
            }
        }

        let mut out = Vec::with_capacity(self.param_array_count_through(k));
        for (m, (lg, (dw, db))) in level_grads.into_iter().zip(deconv_grads).enumerate() {
            out.extend(lg);
            out.push(dw);
            out.push(db);
            for arrays in core::mem::take(&mut group_grads[m]) {
                out.extend(arrays);
            }
        }
        // Levels above k do not influence a level-k forward.
        for block in &self.levels[k + 1..] {
            for a in block_arrays(block) {
                out.push(vec![0.0; a.len()]);
            }
        }
        Ok(out)
    }

    fn param_array_count_through(&self, k: usize) -> usize {
        self.levels.iter().take(k + 1).map(|b| 4 + 4 * b.groups.len()).sum()
    }

    /// Every parameter array in a fixed order: per level the deepening conv
    /// weights and bias, the deepening deconv weights and bias, then each
    /// group's conv weights, conv bias, deconv weights, deconv bias.
    pub fn param_arrays(&self) -> Vec<&[f64]> {
        self.levels.iter().flat_map(block_arrays).collect()
    }

    pub fn param_arrays_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for b in &mut self.levels {
            let kernels = [b.deepen_conv.parts_mut(), b.deepen_deconv.parts_mut()]
                .into_iter()
                .chain(b.groups.iter_mut().flat_map(|g| [g.conv.parts_mut(), g.deconv.parts_mut()]));
            for (w, bias) in kernels {
                out.push(w);
                out.push(bias);
            }
        }
        out
    }

    /// Level owning each entry of [`MrCaeModel::param_arrays`].
    pub fn param_array_levels(&self) -> Vec<usize> {
        self.levels
            .iter()
            .flat_map(|b| core::iter::repeat(b.level).take(4 + 4 * b.groups.len()))
            .collect()
    }

    /// Closed-form parameter count: 20 per level plus `19g + 1` per group.
    pub fn count_params(&self) -> usize {
        self.levels
            .iter()
            .map(|b| 20 + b.groups.iter().map(|g| 19 * g.channels() + 1).sum::<usize>())
            .sum()
    }

    /// Values per snapshot in the sparse encoding.
    pub fn encoding_size(&self) -> usize {
        let (h, w) = self.innermost_dims();
        h * w
            + self
                .levels
                .iter()
                .flat_map(|b| &b.groups)
                .map(|g| g.channels() * g.mask.active_count())
                .sum::<usize>()
    }

    pub fn encode(&self, x: &SnapshotTensor) -> Result<Encoding> {
        let k = self
            .top_level()
            .ok_or(Error::LevelOutOfRange { level: 0, top: None })?;
        let trace = self.forward_trace(x, k)?;
        let t = x.dims().t;
        let mut groups = Vec::new();
        for (m, block) in self.levels.iter().enumerate() {
            for (j, (g, (_, post))) in block.groups.iter().zip(&trace.group_features[m]).enumerate() {
                let ch = g.channels();
                let cells: Vec<(usize, usize)> = g.mask.active_cells().collect();
                let mut values = Vec::with_capacity(t * ch * cells.len());
                for s in 0..t {
                    for c in 0..ch {
                        values.extend(cells.iter().map(|&(i, jj)| post.get(s, c, i, jj)));
                    }
                }
                groups.push(GroupCode { level: m, group: j, channels: ch, mask: g.mask.clone(), values });
            }
        }
        Ok(Encoding { innermost: trace.deconv_inputs[0].clone(), groups })
    }

    pub fn decode(&self, e: &Encoding) -> Result<SnapshotTensor> {
        if self.levels.is_empty() {
            return Err(Error::LevelOutOfRange { level: 0, top: None });
        }
        let d = e.innermost.dims();
        let (ih, iw) = self.innermost_dims();
        if d.c != 1 || (d.h, d.w) != (ih, iw) {
            return Err(Error::Topology(format!("innermost code {d} does not match model innermost dims ({ih},{iw})")));
        }
        let n_groups: usize = self.levels.iter().map(|b| b.groups.len()).sum();
        if e.groups.len() != n_groups {
            return Err(Error::Topology(format!("encoding has {} groups, model has {n_groups}", e.groups.len())));
        }
        let t = d.t;
        let mut codes = e.groups.iter();
        let mut cur = e.innermost.clone();
        for (m, block) in self.levels.iter().enumerate() {
            let mut out = conv::deconv2d_forward(&cur, &block.deepen_deconv)?;
            for (j, g) in block.groups.iter().enumerate() {
                let code = codes.next().expect("group count checked");
                if code.level != m || code.group != j || code.channels != g.channels() || code.mask != g.mask {
                    return Err(Error::Topology(format!(
                        "encoding entry ({}, {}) does not match model group ({m}, {j})",
                        code.level, code.group
                    )));
                }
                let ch = g.channels();
                let (hc, wc) = block.coarse_dims();
                let n_active = g.mask.active_count();
                if code.values.len() != t * ch * n_active {
                    return Err(Error::Topology(format!(
                        "group ({m}, {j}) carries {} values, expected {}",
                        code.values.len(),
                        t * ch * n_active
                    )));
                }
                let mut dense = SnapshotTensor::zeros(Dims::new(t, ch, hc, wc));
                let mut vals = code.values.iter();
                for s in 0..t {
                    for c in 0..ch {
                        for (i, jj) in g.mask.active_cells() {
                            dense.set(s, c, i, jj, *vals.next().unwrap());
                        }
                    }
                }
                out.add_assign(&conv::deconv2d_forward(&dense, &g.deconv)?);
            }
            cur = out;
        }
        Ok(cur)
    }
}

fn block_arrays(b: &LevelBlock) -> impl Iterator<Item = &[f64]> {
    [b.deepen_conv.weights(), b.deepen_conv.bias(), b.deepen_deconv.weights(), b.deepen_deconv.bias()]
        .into_iter()
        .chain(b.groups.iter().flat_map(|g| [g.conv.weights(), g.conv.bias(), g.deconv.weights(), g.deconv.bias()]))
}

fn accumulate(slot: &mut Option<SnapshotTensor>, g: SnapshotTensor) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

fn check_noise(noise: f64) -> Result<()> {
    if noise >= 0.0 && noise.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("initialisation noise must be finite and >= 0, got {noise}")))
    }
}

fn perturb<R: Rng + ?Sized>(w: &mut [f64], noise: f64, rng: &mut R) {
    if noise == 0.0 {
        return;
    }
    for v in w {
        *v += rng.gen_range(-noise..=noise);
    }
}
