//! A 3D U-Net with hand-written backpropagation.
//!
//! Topology for `depth = d` and `base_channels = b` (level `l` carries
//! `b * 2^l` channels):
//!
//! ```text
//! encoder l = 0..d-1 : conv3+relu, conv3+relu, then 2x2x2 max-pool
//! bottleneck (l = d) : conv3+relu, conv3+relu
//! decoder l = d-1..0 : 2x nearest upsample, conv3+relu (c_{l+1} -> c_l),
//!                      concat [encoder skip, upsampled], conv3+relu, conv3+relu
//! head               : 1x1x1 conv c_0 -> 2, linear
//! ```
//!
//! All 3x3x3 convolutions are zero-padded so every level keeps its dims.
//! The two output channels are the left and right response maps. The head is
//! linear because suppression targets are negative.
//!
//! A conv layer `a -> c` holds `27 a c + c` values (`a c + c` for the head),
//! so the total is
//!
//! ```text
//! sum over layers (27 * cin * cout + cout) + 2 b + 2
//! ```
//!
//! For `d = 1, b = 2` that is 56 + 110 + 220 + 436 + 218 + 218 + 110 + 6 = 1374.

#[doc(hidden)]
pub mod conv;
mod ops;
mod tensor;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

pub use tensor::FeatureTensor;

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::scalar::Real;
use crate::volume::VolumeGrid;
use conv::{Padded, TAPS};

pub const IN_CHANNELS: usize = 1;
pub const OUT_CHANNELS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetArch {
    /// Number of pooling levels.
    pub depth: usize,
    pub base_channels: usize,
}

impl Default for NetArch {
    fn default() -> Self {
        Self { depth: 3, base_channels: 8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv3,
    Conv1,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub cin: usize,
    pub cout: usize,
}

impl LayerSpec {
    fn new(name: String, kind: LayerKind, cin: usize, cout: usize) -> Self {
        Self { name, kind, cin, cout }
    }

    pub fn weight_len(&self) -> usize {
        match self.kind {
            LayerKind::Conv3 => TAPS * self.cin * self.cout,
            LayerKind::Conv1 => self.cin * self.cout,
        }
    }

    pub fn fan_in(&self) -> usize {
        match self.kind {
            LayerKind::Conv3 => TAPS * self.cin,
            LayerKind::Conv1 => self.cin,
        }
    }
}

impl NetArch {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base_channels == 0 {
            return Err(Error::invalid(format!(
                "depth and base_channels must be >= 1, got {} / {}",
                self.depth, self.base_channels
            )));
        }
        if self.depth > 16 || self.base_channels.checked_shl(self.depth as u32).is_none() {
            return Err(Error::invalid("network too large"));
        }
        Ok(())
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Layers in canonical parameter order.
    pub fn layers(&self) -> Vec<LayerSpec> {
        use LayerKind::*;
        let d = self.depth;
        let mut v = Vec::with_capacity(5 * d + 3);
        for l in 0..d {
            let cin = if l == 0 { IN_CHANNELS } else { self.channels(l - 1) };
            v.push(LayerSpec::new(format!("enc{l}a"), Conv3, cin, self.channels(l)));
            v.push(LayerSpec::new(format!("enc{l}b"), Conv3, self.channels(l), self.channels(l)));
        }
        v.push(LayerSpec::new(String::from("bottom_a"), Conv3, self.channels(d - 1), self.channels(d)));
        v.push(LayerSpec::new(String::from("bottom_b"), Conv3, self.channels(d), self.channels(d)));
        for l in (0..d).rev() {
            let c = self.channels(l);
            v.push(LayerSpec::new(format!("up{l}"), Conv3, self.channels(l + 1), c));
            v.push(LayerSpec::new(format!("dec{l}a"), Conv3, 2 * c, c));
            v.push(LayerSpec::new(format!("dec{l}b"), Conv3, c, c));
        }
        v.push(LayerSpec::new(String::from("head"), Conv1, self.channels(0), OUT_CHANNELS));
        v
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|l| l.weight_len() + l.cout).sum()
    }

    /// Input dims must be divisible by `2^depth` on every axis.
    pub fn check_dims(&self, dims: [usize; 3]) -> Result<()> {
        let m = 1usize << self.depth;
        if dims.iter().any(|&d| d == 0 || d % m != 0) {
            return Err(Error::invalid(format!("input dims {dims:?} not divisible by 2^{} = {m}", self.depth)));
        }
        Ok(())
    }

    fn enc(&self, l: usize) -> (usize, usize) {
        (2 * l, 2 * l + 1)
    }

    fn bottom(&self) -> (usize, usize) {
        (2 * self.depth, 2 * self.depth + 1)
    }

    fn dec(&self, l: usize) -> (usize, usize, usize) {
        let base = 2 * self.depth + 2 + 3 * (self.depth - 1 - l);
        (base, base + 1, base + 2)
    }

    fn head(&self) -> usize {
        5 * self.depth + 2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    /// `[cout][cin][27]` for 3x3x3 layers, `[cout][cin]` for the head.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// Trainable tensors, one entry per [`LayerSpec`] in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams<T> {
    pub layers: Vec<LayerParams<T>>,
}

impl<T: Real> NetParams<T> {
    pub fn zeros(arch: &NetArch) -> Self {
        let layers = arch
            .layers()
            .iter()
            .map(|l| LayerParams { weight: vec![T::ZERO; l.weight_len()], bias: vec![T::ZERO; l.cout] })
            .collect();
        Self { layers }
    }

    /// He-scaled normal kernels (std `sqrt(2 / fan_in)`), zero biases.
    pub fn init(arch: &NetArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = SplitMix64::new(seed);
        let layers = arch
            .layers()
            .iter()
            .map(|l| {
                let std = libm::sqrt(2.0 / l.fan_in() as f64);
                let weight = (0..l.weight_len()).map(|_| T::from_f64(std * rng.normal())).collect();
                LayerParams { weight, bias: vec![T::ZERO; l.cout] }
            })
            .collect();
        Ok(Self { layers })
    }

    /// Whether tensor shapes match `arch`.
    pub fn matches(&self, arch: &NetArch) -> bool {
        let specs = arch.layers();
        specs.len() == self.layers.len()
            && specs.iter().zip(&self.layers).all(|(s, p)| p.weight.len() == s.weight_len() && p.bias.len() == s.cout)
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Tensors in canonical order: each layer's weight, then its bias.
    pub fn tensors(&self) -> impl Iterator<Item = &[T]> {
        self.layers.iter().flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Vec<T>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    /// All values flattened in canonical order.
    pub fn flatten(&self) -> Vec<T> {
        let mut v = Vec::with_capacity(self.len());
        for t in self.tensors() {
            v.extend_from_slice(t);
        }
        v
    }

    /// Inverse of [`flatten`](Self::flatten).
    pub fn from_flat(arch: &NetArch, flat: &[T]) -> Result<Self> {
        let mut p = Self::zeros(arch);
        if flat.len() != p.len() {
            return Err(Error::invalid(format!("expected {} parameters for {arch:?}, got {}", p.len(), flat.len())));
        }
        let mut at = 0;
        for t in p.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        Ok(p)
    }

    pub fn map<U: Real>(&self, f: impl Fn(T) -> U) -> NetParams<U> {
        NetParams {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    weight: l.weight.iter().map(|&v| f(v)).collect(),
                    bias: l.bias.iter().map(|&v| f(v)).collect(),
                })
                .collect(),
        }
    }

    /// Whether every tensor has the same length as in `other`.
    pub fn matches_shape<U>(&self, other: &NetParams<U>) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weight.len() == b.weight.len() && a.bias.len() == b.bias.len())
    }

    pub fn add_assign(&mut self, other: &NetParams<T>) {
        for (a, b) in self.tensors_mut().zip(other.tensors()) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: T) {
        for t in self.tensors_mut() {
            for x in t.iter_mut() {
                *x = *x * factor;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

struct EncoderLevel<T> {
    a: FeatureTensor<T>,
    b: FeatureTensor<T>,
    pooled: FeatureTensor<T>,
    argmax: Vec<u32>,
}

struct DecoderLevel<T> {
    upsampled: FeatureTensor<T>,
    up: FeatureTensor<T>,
    cat: FeatureTensor<T>,
    a: FeatureTensor<T>,
    b: FeatureTensor<T>,
}

/// Activations kept by [`forward`] for [`backward`].
pub struct ForwardCache<T> {
    arch: NetArch,
    input: FeatureTensor<T>,
    encoder: Vec<EncoderLevel<T>>,
    bottom_a: FeatureTensor<T>,
    bottom_b: FeatureTensor<T>,
    /// Indexed by level.
    decoder: Vec<DecoderLevel<T>>,
    output: FeatureTensor<T>,
}

impl<T: Real> ForwardCache<T> {
    /// Two-channel output: channel 0 is the left map, channel 1 the right.
    pub fn output(&self) -> &FeatureTensor<T> {
        &self.output
    }

    /// Post-ReLU activations of the second encoder convolution at `level`
    /// (the tensor that is pooled and skipped).
    pub fn encoder_features(&self, level: usize) -> &FeatureTensor<T> {
        &self.encoder[level].b
    }

    pub fn arch(&self) -> NetArch {
        self.arch
    }

    /// Hash of every ReLU on/off state and every max-pool winner.
    ///
    /// Two evaluations with equal signatures lie in the same linear piece of
    /// the network, where the output is affine in any single parameter.
    pub fn activation_signature(&self) -> u64 {
        const PRIME: u64 = 0x0000_0100_0000_01B3;
        let mut h: u64 = 0xCBF2_9CE4_8422_2325;
        let mut eat = |v: u64| {
            h ^= v;
            h = h.wrapping_mul(PRIME);
        };
        let mut relu = |t: &FeatureTensor<T>| {
            for chunk in t.data.chunks(64) {
                let mut bits = 0u64;
                for (i, v) in chunk.iter().enumerate() {
                    bits |= u64::from(*v > T::ZERO) << i;
                }
                eat(bits);
            }
        };
        for e in &self.encoder {
            relu(&e.a);
            relu(&e.b);
        }
        relu(&self.bottom_a);
        relu(&self.bottom_b);
        for d in &self.decoder {
            relu(&d.up);
            relu(&d.a);
            relu(&d.b);
        }
        for e in &self.encoder {
            for &a in &e.argmax {
                eat(u64::from(a));
            }
        }
        h
    }
}

fn conv3_layer<T: Real>(p: &LayerParams<T>, spec: &LayerSpec, x: &FeatureTensor<T>) -> FeatureTensor<T> {
    conv::conv3(&Padded::from_tensor(x), &p.weight, Some(&p.bias), spec.cout, true)
}

/// Runs the network on a single-channel input.
pub fn forward<T: Real>(params: &NetParams<T>, arch: &NetArch, input: &FeatureTensor<T>) -> Result<ForwardCache<T>> {
    arch.validate()?;
    arch.check_dims(input.dims)?;
    if input.channels != IN_CHANNELS {
        return Err(Error::invalid(format!("expected {IN_CHANNELS} input channel, got {}", input.channels)));
    }
    if !params.matches(arch) {
        return Err(Error::invalid("parameters do not match the architecture"));
    }
    let specs = arch.layers();
    let layer = |i: usize, x: &FeatureTensor<T>| conv3_layer(&params.layers[i], &specs[i], x);

    let mut encoder: Vec<EncoderLevel<T>> = Vec::with_capacity(arch.depth);
    for l in 0..arch.depth {
        let (ia, ib) = arch.enc(l);
        let x = if l == 0 { input } else { &encoder[l - 1].pooled };
        let a = layer(ia, x);
        let b = layer(ib, &a);
        let (pooled, argmax) = ops::max_pool2(&b);
        encoder.push(EncoderLevel { a, b, pooled, argmax });
    }
    let (ia, ib) = arch.bottom();
    let bottom_a = layer(ia, &encoder[arch.depth - 1].pooled);
    let bottom_b = layer(ib, &bottom_a);

    let mut decoder: Vec<Option<DecoderLevel<T>>> = (0..arch.depth).map(|_| None).collect();
    for l in (0..arch.depth).rev() {
        let (iu, ia, ib) = arch.dec(l);
        let below = match decoder.get(l + 1) {
            Some(Some(d)) => &d.b,
            _ => &bottom_b,
        };
        let upsampled = ops::upsample2(below);
        let up = layer(iu, &upsampled);
        let cat = ops::concat(&encoder[l].b, &up);
        let a = layer(ia, &cat);
        let b = layer(ib, &a);
        decoder[l] = Some(DecoderLevel { upsampled, up, cat, a, b });
    }
    let decoder: Vec<DecoderLevel<T>> = decoder.into_iter().map(|d| d.expect("every level decoded")).collect();

    let h = arch.head();
    let hp = &params.layers[h];
    let output = conv::conv1(&decoder[0].b, &hp.weight, &hp.bias, OUT_CHANNELS);
    Ok(ForwardCache { arch: *arch, input: input.clone(), encoder, bottom_a, bottom_b, decoder, output })
}

/// Gradients of one conv3+ReLU layer; the input gradient is skipped when not needed.
fn conv3_layer_backward<T: Real>(
    p: &LayerParams<T>,
    spec: &LayerSpec,
    input: &FeatureTensor<T>,
    output: &FeatureTensor<T>,
    grad_out: &FeatureTensor<T>,
    need_input_grad: bool,
) -> (LayerParams<T>, Option<FeatureTensor<T>>) {
    let g = ops::relu_mask(grad_out, output);
    let db = conv::channel_sums(&g);
    let gp = Padded::from_tensor(&g);
    let dw = conv::conv3_weight_grad(&Padded::from_tensor(input), &gp);
    let dx = need_input_grad.then(|| {
        let wt = conv::transpose_flip(&p.weight, spec.cin, spec.cout);
        conv::conv3(&gp, &wt, None, spec.cin, false)
    });
    (LayerParams { weight: dw, bias: db }, dx)
}

/// Backpropagates per-voxel output gradients (`grad_left`, `grad_right`, each
/// with the input's dims) into parameter gradients.
pub fn backward<T: Real>(
    params: &NetParams<T>,
    cache: &ForwardCache<T>,
    grad_left: &[T],
    grad_right: &[T],
) -> Result<NetParams<T>> {
    let arch = cache.arch;
    let n = cache.input.voxels();
    if grad_left.len() != n || grad_right.len() != n {
        return Err(Error::invalid(format!(
            "output gradients have {} / {} values, cache expects {n}",
            grad_left.len(),
            grad_right.len()
        )));
    }
    if !params.matches(&arch) {
        return Err(Error::invalid("parameters do not match the cached architecture"));
    }
    let specs = arch.layers();
    let mut grads: Vec<Option<LayerParams<T>>> = (0..specs.len()).map(|_| None).collect();
    let mut bw = |i: usize, input: &FeatureTensor<T>, output: &FeatureTensor<T>, g: &FeatureTensor<T>, need: bool| {
        let (lp, dx) = conv3_layer_backward(&params.layers[i], &specs[i], input, output, g, need);
        grads[i] = Some(lp);
        dx
    };

    let mut gdata = Vec::with_capacity(2 * n);
    gdata.extend_from_slice(grad_left);
    gdata.extend_from_slice(grad_right);
    let gout = FeatureTensor::from_data(OUT_CHANNELS, cache.input.dims, gdata);

    let h = arch.head();
    let (dw, db, mut g) = conv::conv1_backward(&cache.decoder[0].b, &params.layers[h].weight, &gout);
    let head_grad = LayerParams { weight: dw, bias: db };

    let mut skip_grads: Vec<FeatureTensor<T>> = Vec::with_capacity(arch.depth);
    for l in 0..arch.depth {
        let (iu, ia, ib) = arch.dec(l);
        let d = &cache.decoder[l];
        let ga = bw(ib, &d.a, &d.b, &g, true).expect("input grad");
        let gcat = bw(ia, &d.cat, &d.a, &ga, true).expect("input grad");
        let (gskip, gup) = ops::split(&gcat, arch.channels(l));
        let gups = bw(iu, &d.upsampled, &d.up, &gup, true).expect("input grad");
        skip_grads.push(gskip);
        g = ops::upsample2_backward(&gups);
    }

    let (ia, ib) = arch.bottom();
    let ga = bw(ib, &cache.bottom_a, &cache.bottom_b, &g, true).expect("input grad");
    let mut gpooled = bw(ia, &cache.encoder[arch.depth - 1].pooled, &cache.bottom_a, &ga, true).expect("input grad");

    for l in (0..arch.depth).rev() {
        let (ia, ib) = arch.enc(l);
        let e = &cache.encoder[l];
        let mut gb = ops::max_pool2_backward(&gpooled, &e.argmax, e.b.dims);
        ops::add_assign(&mut gb, &skip_grads[l]);
        let ga = bw(ib, &e.a, &e.b, &gb, true).expect("input grad");
        let input = if l == 0 { &cache.input } else { &cache.encoder[l - 1].pooled };
        if let Some(gx) = bw(ia, input, &e.a, &ga, l > 0) {
            gpooled = gx;
        }
    }

    grads[h] = Some(head_grad);
    Ok(NetParams { layers: grads.into_iter().map(|g| g.expect("every layer has a gradient")).collect() })
}

/// Converts a volume into a single-channel network input.
pub fn input_from_volume<T: Real>(vol: &VolumeGrid) -> FeatureTensor<T> {
    FeatureTensor::from_data(1, vol.dims(), vol.data().iter().map(|&v| T::from_f32(v)).collect())
}

/// Runs the network on a volume and returns the (left, right) response maps
/// with the input's geometry.
pub fn predict(params: &NetParams<f32>, arch: &NetArch, vol: &VolumeGrid) -> Result<(VolumeGrid, VolumeGrid)> {
    let cache = forward(params, arch, &input_from_volume::<f32>(vol))?;
    let out = cache.output();
    Ok((vol.with_data(out.channel(0).to_vec())?, vol.with_data(out.channel(1).to_vec())?))
}
