//! Dense 3x3x3 and 1x1x1 convolutions on zero-haloed buffers.
//!
//! Every channel is copied into a buffer with a one-voxel zero halo plus
//! `LANES` slack values. In that layout each of the 27 taps is a constant
//! offset, so the interior of all planes can be swept as one contiguous range
//! of flat indices; halo positions inside the sweep produce values that are
//! discarded. Outputs are blocked over `CB` output channels times `LANES`
//! consecutive positions, which keeps the accumulators in registers.
//!
//! Every output value is accumulated in a fixed order (bias, then input
//! channel, then tap), so results do not depend on blocking.

use alloc::vec;
use alloc::vec::Vec;

use super::tensor::FeatureTensor;
use crate::scalar::Real;

pub const LANES: usize = 16;
pub const TAPS: usize = 27;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PadGeom {
    pub dims: [usize; 3],
    pub row: usize,
    pub plane: usize,
    /// Values per channel, halo included, slack excluded.
    pub len: usize,
    /// First interior flat index.
    pub start: usize,
    /// One past the last interior flat index.
    pub end: usize,
    pub offsets: [isize; TAPS],
}

impl PadGeom {
    pub fn new(dims: [usize; 3]) -> Self {
        let [nx, ny, nz] = dims;
        let row = nx + 2;
        let plane = row * (ny + 2);
        let len = plane * (nz + 2);
        let start = plane + row + 1;
        let end = nz * plane + ny * row + nx + 1;
        let mut offsets = [0isize; TAPS];
        for (t, off) in offsets.iter_mut().enumerate() {
            let dz = (t / 9) as isize - 1;
            let dy = ((t / 3) % 3) as isize - 1;
            let dx = (t % 3) as isize - 1;
            *off = dz * plane as isize + dy * row as isize + dx;
        }
        Self { dims, row, plane, len, start, end, offsets }
    }

    /// Channel stride of a padded buffer.
    #[inline]
    pub fn stride(&self) -> usize {
        self.len + LANES
    }

    #[inline]
    fn padded_index(&self, i: usize, j: usize, k: usize) -> usize {
        (i + 1) + self.row * ((j + 1) + (self.dims[1] + 2) * (k + 1))
    }
}

/// A zero-haloed copy of a feature tensor.
pub struct Padded<T> {
    pub geom: PadGeom,
    pub channels: usize,
    pub data: Vec<T>,
}

impl<T: Real> Padded<T> {
    pub fn from_tensor(x: &FeatureTensor<T>) -> Self {
        let geom = PadGeom::new(x.dims);
        let stride = geom.stride();
        let [nx, ny, nz] = x.dims;
        let mut data = vec![T::ZERO; stride * x.channels];
        for c in 0..x.channels {
            let src = x.channel(c);
            let dst = &mut data[c * stride..(c + 1) * stride];
            for k in 0..nz {
                for j in 0..ny {
                    let s = nx * (j + ny * k);
                    let d = geom.padded_index(0, j, k);
                    dst[d..d + nx].copy_from_slice(&src[s..s + nx]);
                }
            }
        }
        Self { geom, channels: x.channels, data }
    }

    #[inline]
    pub fn channel(&self, c: usize) -> &[T] {
        let s = self.geom.stride();
        &self.data[c * s..(c + 1) * s]
    }
}

/// Copies the interior of `CB` padded channels into `out` starting at channel `c0`.
fn extract<T: Real>(scratch: &[T], geom: &PadGeom, channels: usize, out: &mut FeatureTensor<T>, c0: usize, relu: bool) {
    let [nx, ny, nz] = geom.dims;
    let stride = geom.stride();
    for c in 0..channels {
        let src = &scratch[c * stride..(c + 1) * stride];
        let dst = out.channel_mut(c0 + c);
        for k in 0..nz {
            for j in 0..ny {
                let s = geom.padded_index(0, j, k);
                let d = nx * (j + ny * k);
                let (srow, drow) = (&src[s..s + nx], &mut dst[d..d + nx]);
                if relu {
                    for (o, &v) in drow.iter_mut().zip(srow) {
                        *o = if v > T::ZERO { v } else { T::ZERO };
                    }
                } else {
                    drow.copy_from_slice(srow);
                }
            }
        }
    }
}

#[inline(always)]
fn lanes<T: Copy>(s: &[T], at: usize) -> &[T; LANES] {
    s[at..at + LANES].try_into().unwrap()
}

/// `CB` output channels of a 3x3x3 correlation. `wpack` is laid out
/// `[ci][tap][cb]` and `taps[ci * 27 + t]` is the flat offset of tap `t` of
/// input channel `ci` relative to the output position.
fn conv_block<T: Real, const CB: usize>(
    input: &Padded<T>,
    taps: &[isize],
    wpack: &[T],
    bias: &[T; CB],
    scratch: &mut [T],
) {
    let geom = &input.geom;
    let stride = geom.stride();
    let src = &input.data[..];
    let mut q0 = geom.start;
    while q0 < geom.end {
        let mut acc = [[T::ZERO; LANES]; CB];
        for (a, &b) in acc.iter_mut().zip(bias) {
            *a = [b; LANES];
        }
        for (&tap, wt) in taps.iter().zip(wpack.chunks_exact(CB)) {
            let v: [T; LANES] = *lanes(src, (q0 as isize + tap) as usize);
            for (a, &wc) in acc.iter_mut().zip(wt) {
                for (x, &y) in a.iter_mut().zip(&v) {
                    *x += wc * y;
                }
            }
        }
        for c in 0..CB {
            scratch[c * stride + q0..c * stride + q0 + LANES].copy_from_slice(&acc[c]);
        }
        q0 += LANES;
    }
}

fn conv_blocked<T: Real, const CB: usize>(
    input: &Padded<T>,
    weight: &[T],
    bias: Option<&[T]>,
    co: usize,
    scratch: &mut Vec<T>,
    out: &mut FeatureTensor<T>,
    relu: bool,
) {
    let cin = input.channels;
    let mut wpack = vec![T::ZERO; cin * TAPS * CB];
    for c in 0..CB {
        for ci in 0..cin {
            for t in 0..TAPS {
                wpack[(ci * TAPS + t) * CB + c] = weight[((co + c) * cin + ci) * TAPS + t];
            }
        }
    }
    let b: [T; CB] = core::array::from_fn(|c| bias.map_or(T::ZERO, |b| b[co + c]));
    let need = CB * input.geom.stride();
    if scratch.len() < need {
        scratch.resize(need, T::ZERO);
    }
    let stride = input.geom.stride() as isize;
    let taps: Vec<isize> =
        (0..cin).flat_map(|ci| input.geom.offsets.iter().map(move |&o| ci as isize * stride + o)).collect();
    conv_block::<T, CB>(input, &taps, &wpack, &b, scratch);
    extract(scratch, &input.geom, CB, out, co, relu);
}

/// Same-padded 3x3x3 correlation: `out[co] = bias[co] + sum_ci sum_t w[co][ci][t] * in[ci](p + d_t)`.
pub fn conv3<T: Real>(
    input: &Padded<T>,
    weight: &[T],
    bias: Option<&[T]>,
    cout: usize,
    relu: bool,
) -> FeatureTensor<T> {
    debug_assert_eq!(weight.len(), cout * input.channels * TAPS);
    let mut out = FeatureTensor::zeros(cout, input.geom.dims);
    let mut scratch = Vec::new();
    let mut co = 0;
    while co < cout {
        let rem = cout - co;
        if rem >= 8 {
            conv_blocked::<T, 8>(input, weight, bias, co, &mut scratch, &mut out, relu);
            co += 8;
        } else if rem >= 4 {
            conv_blocked::<T, 4>(input, weight, bias, co, &mut scratch, &mut out, relu);
            co += 4;
        } else if rem >= 2 {
            conv_blocked::<T, 2>(input, weight, bias, co, &mut scratch, &mut out, relu);
            co += 2;
        } else {
            conv_blocked::<T, 1>(input, weight, bias, co, &mut scratch, &mut out, relu);
            co += 1;
        }
    }
    out
}

/// Kernel for the input gradient: `w'[ci][co][t] = w[co][ci][26 - t]`.
pub fn transpose_flip<T: Real>(weight: &[T], cin: usize, cout: usize) -> Vec<T> {
    let mut out = vec![T::ZERO; weight.len()];
    for co in 0..cout {
        for ci in 0..cin {
            for t in 0..TAPS {
                out[(ci * cout + co) * TAPS + t] = weight[(co * cin + ci) * TAPS + (TAPS - 1 - t)];
            }
        }
    }
    out
}

#[inline]
fn reduce<T: Real>(a: &[T; LANES]) -> T {
    let mut s = T::ZERO;
    for &v in a {
        s += v;
    }
    s
}

/// Weight gradients for `CB` output channels. Each pass handles one kernel
/// row (fixed `dz`, `dy`) of one input channel, so the three `dx` taps share
/// the gradient loads.
fn weight_grad_block<T: Real, const CB: usize>(input: &Padded<T>, grad: &Padded<T>, co: usize, out: &mut [T]) {
    let geom = &input.geom;
    let cin = input.channels;
    let g: [&[T]; CB] = core::array::from_fn(|c| grad.channel(co + c));
    for ci in 0..cin {
        let src = input.channel(ci);
        for r in 0..9 {
            // offset of the dx = -1 tap of this row
            let off = geom.offsets[3 * r];
            let mut acc = [[[T::ZERO; LANES]; 3]; CB];
            let mut q0 = geom.start;
            while q0 < geom.end {
                let base = (q0 as isize + off) as usize;
                let v: [[T; LANES]; 3] = [*lanes(src, base), *lanes(src, base + 1), *lanes(src, base + 2)];
                for (a, gc) in acc.iter_mut().zip(&g) {
                    let gv: [T; LANES] = *lanes(gc, q0);
                    for (ad, vd) in a.iter_mut().zip(&v) {
                        for l in 0..LANES {
                            ad[l] += vd[l] * gv[l];
                        }
                    }
                }
                q0 += LANES;
            }
            for (c, a) in acc.iter().enumerate() {
                for (dx, ad) in a.iter().enumerate() {
                    out[((co + c) * cin + ci) * TAPS + 3 * r + dx] = reduce(ad);
                }
            }
        }
    }
}

/// `dw[co][ci][t] = sum_p grad[co](p) * in[ci](p + d_t)`; `grad` must have a zero halo.
pub fn conv3_weight_grad<T: Real>(input: &Padded<T>, grad: &Padded<T>) -> Vec<T> {
    debug_assert_eq!(input.geom, grad.geom);
    let cout = grad.channels;
    let mut out = vec![T::ZERO; cout * input.channels * TAPS];
    let mut co = 0;
    while co < cout {
        let rem = cout - co;
        if rem >= 4 {
            weight_grad_block::<T, 4>(input, grad, co, &mut out);
            co += 4;
        } else if rem >= 2 {
            weight_grad_block::<T, 2>(input, grad, co, &mut out);
            co += 2;
        } else {
            weight_grad_block::<T, 1>(input, grad, co, &mut out);
            co += 1;
        }
    }
    out
}

/// Per-channel sum in lane-blocked order.
pub fn channel_sums<T: Real>(x: &FeatureTensor<T>) -> Vec<T> {
    (0..x.channels)
        .map(|c| {
            let ch = x.channel(c);
            let mut acc = [T::ZERO; LANES];
            let mut chunks = ch.chunks_exact(LANES);
            for chunk in &mut chunks {
                for l in 0..LANES {
                    acc[l] += chunk[l];
                }
            }
            for (l, &v) in chunks.remainder().iter().enumerate() {
                acc[l] += v;
            }
            reduce(&acc)
        })
        .collect()
}

/// Pointwise (1x1x1) linear map: `out[o] = bias[o] + sum_c w[o][c] * x[c]`.
pub fn conv1<T: Real>(x: &FeatureTensor<T>, weight: &[T], bias: &[T], cout: usize) -> FeatureTensor<T> {
    let cin = x.channels;
    let mut out = FeatureTensor::zeros(cout, x.dims);
    for o in 0..cout {
        let dst = out.channel_mut(o);
        dst.fill(bias[o]);
        for c in 0..cin {
            let w = weight[o * cin + c];
            for (d, &s) in dst.iter_mut().zip(x.channel(c)) {
                *d += w * s;
            }
        }
    }
    out
}

/// Gradients of [`conv1`]: `(dw, db, dx)`.
pub fn conv1_backward<T: Real>(
    x: &FeatureTensor<T>,
    weight: &[T],
    grad: &FeatureTensor<T>,
) -> (Vec<T>, Vec<T>, FeatureTensor<T>) {
    let cin = x.channels;
    let cout = grad.channels;
    let mut dw = vec![T::ZERO; cout * cin];
    for o in 0..cout {
        for c in 0..cin {
            dw[o * cin + c] = dot(grad.channel(o), x.channel(c));
        }
    }
    let db = channel_sums(grad);
    let mut dx = FeatureTensor::zeros(cin, x.dims);
    for c in 0..cin {
        let dst = dx.channel_mut(c);
        for o in 0..cout {
            let w = weight[o * cin + c];
            for (d, &g) in dst.iter_mut().zip(grad.channel(o)) {
                *d += w * g;
            }
        }
    }
    (dw, db, dx)
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::ZERO; LANES];
    let mut ca = a.chunks_exact(LANES);
    let mut cb = b.chunks_exact(LANES);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..LANES {
            acc[l] += x[l] * y[l];
        }
    }
    for (l, (&x, &y)) in ca.remainder().iter().zip(cb.remainder()).enumerate() {
        acc[l] += x * y;
    }
    reduce(&acc)
}
