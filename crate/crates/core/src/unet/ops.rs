//! Pooling, upsampling, concatenation and their adjoints.

use alloc::vec;
use alloc::vec::Vec;

use super::tensor::FeatureTensor;
use crate::scalar::Real;

/// 2x2x2 max pooling. Returns the pooled tensor and, per output value, the
/// flat source index (within its channel) of the winning voxel. Ties keep the
/// first voxel in x-fastest scan order.
pub(crate) fn max_pool2<T: Real>(x: &FeatureTensor<T>) -> (FeatureTensor<T>, Vec<u32>) {
    let [nx, ny, nz] = x.dims;
    let od = [nx / 2, ny / 2, nz / 2];
    let mut out = FeatureTensor::zeros(x.channels, od);
    let mut arg = vec![0u32; out.data.len()];
    let on = out.voxels();
    for c in 0..x.channels {
        let src = x.channel(c);
        for k in 0..od[2] {
            for j in 0..od[1] {
                for i in 0..od[0] {
                    let mut best_idx = 2 * i + nx * (2 * j + ny * 2 * k);
                    let mut best = src[best_idx];
                    for dz in 0..2 {
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let idx = (2 * i + dx) + nx * ((2 * j + dy) + ny * (2 * k + dz));
                                if src[idx] > best {
                                    best = src[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                    }
                    let o = c * on + i + od[0] * (j + od[1] * k);
                    out.data[o] = best;
                    arg[o] = best_idx as u32;
                }
            }
        }
    }
    (out, arg)
}

pub(crate) fn max_pool2_backward<T: Real>(
    grad: &FeatureTensor<T>,
    arg: &[u32],
    src_dims: [usize; 3],
) -> FeatureTensor<T> {
    let mut dx = FeatureTensor::zeros(grad.channels, src_dims);
    let on = grad.voxels();
    for c in 0..grad.channels {
        let g = grad.channel(c);
        let a = &arg[c * on..(c + 1) * on];
        let dst = dx.channel_mut(c);
        for (&gi, &ai) in g.iter().zip(a) {
            dst[ai as usize] += gi;
        }
    }
    dx
}

/// Nearest-neighbour 2x upsampling.
pub(crate) fn upsample2<T: Real>(x: &FeatureTensor<T>) -> FeatureTensor<T> {
    let [nx, ny, nz] = x.dims;
    let od = [2 * nx, 2 * ny, 2 * nz];
    let mut out = FeatureTensor::zeros(x.channels, od);
    for c in 0..x.channels {
        let src = x.channel(c);
        let dst = out.channel_mut(c);
        for k in 0..od[2] {
            for j in 0..od[1] {
                let srow = &src[nx * (j / 2 + ny * (k / 2))..][..nx];
                let drow = &mut dst[od[0] * (j + od[1] * k)..][..od[0]];
                for (i, d) in drow.iter_mut().enumerate() {
                    *d = srow[i / 2];
                }
            }
        }
    }
    out
}

/// Adjoint of [`upsample2`]: sums each 2x2x2 block.
pub(crate) fn upsample2_backward<T: Real>(grad: &FeatureTensor<T>) -> FeatureTensor<T> {
    let [nx, ny, nz] = grad.dims;
    let od = [nx / 2, ny / 2, nz / 2];
    let mut out = FeatureTensor::zeros(grad.channels, od);
    for c in 0..grad.channels {
        let src = grad.channel(c);
        let dst = out.channel_mut(c);
        for k in 0..od[2] {
            for j in 0..od[1] {
                for i in 0..od[0] {
                    let mut s = T::ZERO;
                    for dz in 0..2 {
                        for dy in 0..2 {
                            for dx in 0..2 {
                                s += src[(2 * i + dx) + nx * ((2 * j + dy) + ny * (2 * k + dz))];
                            }
                        }
                    }
                    dst[i + od[0] * (j + od[1] * k)] = s;
                }
            }
        }
    }
    out
}

/// Channel concatenation `[a; b]`.
pub(crate) fn concat<T: Real>(a: &FeatureTensor<T>, b: &FeatureTensor<T>) -> FeatureTensor<T> {
    debug_assert_eq!(a.dims, b.dims);
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    FeatureTensor::from_data(a.channels + b.channels, a.dims, data)
}

pub(crate) fn split<T: Real>(x: &FeatureTensor<T>, first: usize) -> (FeatureTensor<T>, FeatureTensor<T>) {
    let cut = first * x.voxels();
    (
        FeatureTensor::from_data(first, x.dims, x.data[..cut].to_vec()),
        FeatureTensor::from_data(x.channels - first, x.dims, x.data[cut..].to_vec()),
    )
}

/// `grad * [activation > 0]`: the ReLU adjoint expressed through its output.
pub(crate) fn relu_mask<T: Real>(grad: &FeatureTensor<T>, activation: &FeatureTensor<T>) -> FeatureTensor<T> {
    let data = grad.data.iter().zip(&activation.data).map(|(&g, &a)| if a > T::ZERO { g } else { T::ZERO }).collect();
    FeatureTensor::from_data(grad.channels, grad.dims, data)
}

pub(crate) fn add_assign<T: Real>(a: &mut FeatureTensor<T>, b: &FeatureTensor<T>) {
    for (x, &y) in a.data.iter_mut().zip(&b.data) {
        *x += y;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_ties_take_first_voxel() {
        let x = FeatureTensor::from_data(1, [2, 2, 2], vec![1.0f64, 3.0, 3.0, 0.0, 3.0, 0.0, 0.0, 3.0]);
        let (p, arg) = max_pool2(&x);
        assert_eq!(p.data, vec![3.0]);
        assert_eq!(arg, vec![1]);
        let g = max_pool2_backward(&FeatureTensor::from_data(1, [1, 1, 1], vec![2.0]), &arg, [2, 2, 2]);
        assert_eq!(g.data, vec![0.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn upsample_adjoint() {
        let x = FeatureTensor::from_data(2, [2, 1, 1], vec![1.0f64, 2.0, 3.0, 4.0]);
        let u = upsample2(&x);
        assert_eq!(u.dims, [4, 2, 2]);
        assert_eq!(&u.channel(0)[..4], &[1.0, 1.0, 2.0, 2.0]);
        let y: Vec<f64> = (0..u.data.len()).map(|i| i as f64 * 0.5).collect();
        let yt = FeatureTensor::from_data(2, u.dims, y.clone());
        let lhs: f64 = u.data.iter().zip(&y).map(|(a, b)| a * b).sum();
        let back = upsample2_backward(&yt);
        let rhs: f64 = x.data.iter().zip(&back.data).map(|(a, b)| a * b).sum();
        assert_eq!(lhs, rhs);
    }
}
