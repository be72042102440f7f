//! The volume carrier and geometric preprocessing.
//!
//! Voxel data is stored x-fastest: the flat index of `(i, j, k)` is
//! `i + nx * (j + ny * k)`. The physical position of voxel `(i, j, k)` is
//! `origin + spacing * (i, j, k)` in millimetres.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Integer voxel coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct VoxelIndex {
    pub i: usize,
    pub j: usize,
    pub k: usize,
}

impl VoxelIndex {
    pub const fn new(i: usize, j: usize, k: usize) -> Self {
        Self { i, j, k }
    }

    pub fn as_array(self) -> [usize; 3] {
        [self.i, self.j, self.k]
    }

    pub fn inside(self, dims: [usize; 3]) -> bool {
        self.i < dims[0] && self.j < dims[1] && self.k < dims[2]
    }

    /// Squared Euclidean distance in voxel units.
    pub fn dist2(self, other: VoxelIndex) -> f64 {
        let d = |a: usize, b: usize| a as f64 - b as f64;
        let (x, y, z) = (d(self.i, other.i), d(self.j, other.j), d(self.k, other.k));
        x * x + y * y + z * z
    }
}

impl From<[usize; 3]> for VoxelIndex {
    fn from(v: [usize; 3]) -> Self {
        Self::new(v[0], v[1], v[2])
    }
}

/// Grid geometry without the payload.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridGeometry {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl GridGeometry {
    /// Unit spacing at the origin.
    pub fn voxel_space(dims: [usize; 3]) -> Self {
        Self { dims, spacing: [1.0; 3], origin: [0.0; 3] }
    }

    /// Physical position (mm) of a voxel center.
    pub fn voxel_to_mm(&self, v: VoxelIndex) -> [f64; 3] {
        let a = v.as_array();
        core::array::from_fn(|d| self.origin[d] + self.spacing[d] * a[d] as f64)
    }
}

/// A 3D scalar field with voxel spacing and origin.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeGrid {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    data: Vec<f32>,
}

impl VolumeGrid {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3], data: Vec<f32>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::invalid(format!("dims must be positive, got {dims:?}")));
        }
        if spacing.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(Error::invalid(format!("spacing must be finite and positive, got {spacing:?}")));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::invalid(format!("origin must be finite, got {origin:?}")));
        }
        let n = dims[0] * dims[1] * dims[2];
        if data.len() != n {
            return Err(Error::invalid(format!(
                "data length {} does not match dims {dims:?} ({n} voxels)",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite value at flat index {pos}")));
        }
        Ok(Self { dims, spacing, origin, data })
    }

    /// A grid filled with `value`.
    pub fn filled(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3], value: f32) -> Result<Self> {
        let n = dims.iter().product();
        Self::new(dims, spacing, origin, vec![value; n])
    }

    /// A zero grid sharing geometry with `self`.
    pub fn zeros_like(&self) -> Self {
        Self { dims: self.dims, spacing: self.spacing, origin: self.origin, data: vec![0.0; self.len()] }
    }

    /// Same geometry, new payload. The payload must have the same length and be finite.
    pub fn with_data(&self, data: Vec<f32>) -> Result<Self> {
        Self::new(self.dims, self.spacing, self.origin, data)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn geometry(&self) -> GridGeometry {
        GridGeometry { dims: self.dims, spacing: self.spacing, origin: self.origin }
    }

    /// A zero grid with the given geometry.
    pub fn zeros(geom: GridGeometry) -> Result<Self> {
        Self::filled(geom.dims, geom.spacing, geom.origin, 0.0)
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn flat_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    /// Inverse of [`flat_index`](Self::flat_index).
    pub fn voxel_of(&self, flat: usize) -> VoxelIndex {
        let [nx, ny, _] = self.dims;
        VoxelIndex::new(flat % nx, (flat / nx) % ny, flat / (nx * ny))
    }

    #[inline]
    pub fn get(&self, v: VoxelIndex) -> f32 {
        self.data[self.flat_index(v.i, v.j, v.k)]
    }

    /// Writes a value; non-finite values are rejected.
    pub fn set(&mut self, v: VoxelIndex, value: f32) -> Result<()> {
        if !v.inside(self.dims) {
            return Err(Error::invalid(format!("voxel {v:?} outside dims {:?}", self.dims)));
        }
        if !value.is_finite() {
            return Err(Error::invalid("non-finite voxel value"));
        }
        let idx = self.flat_index(v.i, v.j, v.k);
        self.data[idx] = value;
        Ok(())
    }

    /// Physical position (mm) of a voxel center.
    pub fn voxel_to_mm(&self, v: VoxelIndex) -> [f64; 3] {
        self.geometry().voxel_to_mm(v)
    }

    pub fn min_value(&self) -> f32 {
        self.data.iter().copied().fold(f32::INFINITY, f32::min)
    }

    pub fn max_value(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    /// Trilinear interpolation at a continuous voxel-space position.
    ///
    /// Returns `None` when the point lies outside `[0, n-1]` on any axis.
    pub fn sample_trilinear(&self, x: f64, y: f64, z: f64) -> Option<f64> {
        const EPS: f64 = 1e-9;
        let p = [x, y, z];
        let mut base = [0usize; 3];
        let mut frac = [0f64; 3];
        for d in 0..3 {
            let hi = (self.dims[d] - 1) as f64;
            if !(p[d] >= -EPS && p[d] <= hi + EPS) {
                return None;
            }
            let c = p[d].clamp(0.0, hi);
            let f = libm::floor(c);
            let mut b = f as usize;
            let mut t = c - f;
            if b + 1 >= self.dims[d] {
                // on the last sample plane
                b = self.dims[d] - 1;
                t = 0.0;
            }
            base[d] = b;
            frac[d] = t;
        }
        let at = |i: usize, j: usize, k: usize| -> f64 {
            let i = i.min(self.dims[0] - 1);
            let j = j.min(self.dims[1] - 1);
            let k = k.min(self.dims[2] - 1);
            self.data[self.flat_index(i, j, k)] as f64
        };
        let lerp = |a: f64, b: f64, t: f64| if t == 0.0 { a } else { a + (b - a) * t };
        let [i, j, k] = base;
        let [tx, ty, tz] = frac;
        let c00 = lerp(at(i, j, k), at(i + 1, j, k), tx);
        let c10 = lerp(at(i, j + 1, k), at(i + 1, j + 1, k), tx);
        let c01 = lerp(at(i, j, k + 1), at(i + 1, j, k + 1), tx);
        let c11 = lerp(at(i, j + 1, k + 1), at(i + 1, j + 1, k + 1), tx);
        let c0 = lerp(c00, c10, ty);
        let c1 = lerp(c01, c11, ty);
        Some(lerp(c0, c1, tz))
    }

    /// Resamples onto an isotropic grid of `target_spacing` mm.
    ///
    /// The origin is kept; output voxel `i` sits at source index
    /// `i * target_spacing / spacing`. Output samples beyond the source extent
    /// take `fill`, or the volume minimum when `fill` is `None`.
    pub fn resample_isotropic(&self, target_spacing: f64, fill: Option<f32>) -> Result<Self> {
        if !target_spacing.is_finite() || target_spacing <= 0.0 {
            return Err(Error::invalid(format!("target spacing must be finite and positive, got {target_spacing}")));
        }
        let fill = fill.unwrap_or_else(|| self.min_value());
        if !fill.is_finite() {
            return Err(Error::invalid("fill value must be finite"));
        }
        let out_dims: [usize; 3] = core::array::from_fn(|d| {
            let n = libm::round(self.dims[d] as f64 * self.spacing[d] / target_spacing);
            (n as usize).max(1)
        });
        let ratio: [f64; 3] = core::array::from_fn(|d| target_spacing / self.spacing[d]);
        let mut data = Vec::with_capacity(out_dims.iter().product());
        for k in 0..out_dims[2] {
            let z = k as f64 * ratio[2];
            for j in 0..out_dims[1] {
                let y = j as f64 * ratio[1];
                for i in 0..out_dims[0] {
                    let x = i as f64 * ratio[0];
                    let v = self.sample_trilinear(x, y, z).map(|v| v as f32).unwrap_or(fill);
                    data.push(v);
                }
            }
        }
        Self::new(out_dims, [target_spacing; 3], self.origin, data)
    }

    /// Crops or pads each axis symmetrically to `target_dims`.
    ///
    /// Odd excess or deficit puts the smaller half on the leading side.
    pub fn crop_or_pad_symmetric(&self, target_dims: [usize; 3], fill: f32) -> Result<Self> {
        if target_dims.contains(&0) {
            return Err(Error::invalid(format!("target dims must be positive, got {target_dims:?}")));
        }
        if !fill.is_finite() {
            return Err(Error::invalid("fill value must be finite"));
        }
        // source index = output index + shift
        let shift: [isize; 3] = core::array::from_fn(|d| {
            let n = self.dims[d] as isize;
            let t = target_dims[d] as isize;
            if n >= t {
                (n - t) / 2
            } else {
                -((t - n) / 2)
            }
        });
        self.window(target_dims, shift, fill)
    }

    /// Extracts a window whose voxel `0` maps to source voxel `shift`;
    /// source positions outside the grid take `fill`.
    pub fn window(&self, out_dims: [usize; 3], shift: [isize; 3], fill: f32) -> Result<Self> {
        let mut data = vec![fill; out_dims.iter().product()];
        let src_range = |d: usize| -> (usize, usize) {
            // output indices o with 0 <= o + shift < n
            let lo = (-shift[d]).max(0) as usize;
            let hi = (self.dims[d] as isize - shift[d]).clamp(0, out_dims[d] as isize) as usize;
            (lo, hi.max(lo))
        };
        let (x0, x1) = src_range(0);
        let (y0, y1) = src_range(1);
        let (z0, z1) = src_range(2);
        for k in z0..z1 {
            let sk = (k as isize + shift[2]) as usize;
            for j in y0..y1 {
                let sj = (j as isize + shift[1]) as usize;
                let dst = x0 + out_dims[0] * (j + out_dims[1] * k);
                let src = self.flat_index((x0 as isize + shift[0]) as usize, sj, sk);
                data[dst..dst + (x1 - x0)].copy_from_slice(&self.data[src..src + (x1 - x0)]);
            }
        }
        let origin = core::array::from_fn(|d| self.origin[d] + shift[d] as f64 * self.spacing[d]);
        Self::new(out_dims, self.spacing, origin, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize, spacing: f64) -> VolumeGrid {
        let mut data = Vec::new();
        for _k in 0..n {
            for _j in 0..n {
                for i in 0..n {
                    data.push(i as f32);
                }
            }
        }
        VolumeGrid::new([n; 3], [spacing; 3], [0.0; 3], data).unwrap()
    }

    fn affine(dims: [usize; 3], c: [f32; 4]) -> VolumeGrid {
        let mut data = Vec::new();
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    data.push(c[0] * i as f32 + c[1] * j as f32 + c[2] * k as f32 + c[3]);
                }
            }
        }
        VolumeGrid::new(dims, [1.0; 3], [0.0; 3], data).unwrap()
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(VolumeGrid::new([2, 2, 2], [1.0; 3], [0.0; 3], vec![0.0; 7]).is_err());
        assert!(VolumeGrid::new([2, 2, 2], [1.0, 0.0, 1.0], [0.0; 3], vec![0.0; 8]).is_err());
        assert!(VolumeGrid::new([2, 2, 2], [1.0; 3], [0.0; 3], vec![f32::NAN; 8]).is_err());
        assert!(VolumeGrid::new([0, 2, 2], [1.0; 3], [0.0; 3], vec![]).is_err());
    }

    #[test]
    fn upsample_doubles_dims() {
        let v = VolumeGrid::filled([48; 3], [4.5; 3], [0.0; 3], 1.0).unwrap();
        let r = v.resample_isotropic(2.25, None).unwrap();
        assert_eq!(r.dims(), [96; 3]);
        assert_eq!(r.spacing(), [2.25; 3]);
    }

    #[test]
    fn resample_identity() {
        let v = affine([96, 96, 96], [0.5, -0.25, 0.125, 3.0]);
        let v = VolumeGrid::new(v.dims(), [2.25; 3], [1.0, 2.0, 3.0], v.into_data()).unwrap();
        let r = v.resample_isotropic(2.25, None).unwrap();
        assert_eq!(r.dims(), v.dims());
        let max = r.data().iter().zip(v.data()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        assert!(max <= 1e-6, "{max}");
    }

    #[test]
    fn ramp_half_voxel() {
        let r = ramp(4, 2.0).resample_isotropic(1.0, None).unwrap();
        assert_eq!(r.dims(), [8; 3]);
        assert_eq!(r.get(VoxelIndex::new(1, 0, 0)), 0.5);
        assert_eq!(r.get(VoxelIndex::new(6, 0, 0)), 3.0);
        // x = 3.5 lies past the last source sample
        assert_eq!(r.get(VoxelIndex::new(7, 0, 0)), 0.0);
    }

    #[test]
    fn fill_value_is_configurable() {
        let r = ramp(4, 2.0).resample_isotropic(1.0, Some(-5.0)).unwrap();
        assert_eq!(r.get(VoxelIndex::new(7, 3, 3)), -5.0);
    }

    #[test]
    fn resample_rejects_bad_spacing() {
        let v = ramp(4, 1.0);
        assert!(v.resample_isotropic(f64::NAN, None).is_err());
        assert!(v.resample_isotropic(0.0, None).is_err());
        assert!(v.resample_isotropic(f64::INFINITY, None).is_err());
    }

    #[test]
    fn trilinear_reproduces_affine_fields() {
        let v = affine([5, 6, 7], [1.5, -2.0, 0.75, 4.0]);
        for &(x, y, z) in &[(0.3, 1.7, 2.2), (3.99, 4.5, 5.01), (0.0, 0.0, 0.0), (4.0, 5.0, 6.0), (2.5, 0.1, 3.3)] {
            let got = v.sample_trilinear(x, y, z).unwrap();
            let want = 1.5 * x - 2.0 * y + 0.75 * z + 4.0;
            assert!((got - want).abs() <= 1e-5, "({x},{y},{z}) {got} vs {want}");
        }
        assert!(v.sample_trilinear(-0.1, 0.0, 0.0).is_none());
        assert!(v.sample_trilinear(0.0, 5.2, 0.0).is_none());
    }

    #[test]
    fn crop_even_excess() {
        let v = ramp(100, 1.0);
        let c = v.crop_or_pad_symmetric([96; 3], 0.0).unwrap();
        assert_eq!(c.dims(), [96; 3]);
        assert_eq!(c.get(VoxelIndex::new(0, 0, 0)), 2.0);
        assert_eq!(c.get(VoxelIndex::new(95, 0, 0)), 97.0);
        assert_eq!(c.origin(), [2.0; 3]);
    }

    #[test]
    fn pad_even_deficit() {
        let v = VolumeGrid::filled([90; 3], [2.0; 3], [0.0; 3], 1.0).unwrap();
        let c = v.crop_or_pad_symmetric([96; 3], -1.0).unwrap();
        for i in 0..96 {
            let want = if (3..93).contains(&i) { 1.0 } else { -1.0 };
            assert_eq!(c.get(VoxelIndex::new(i, 50, 50)), want, "i={i}");
        }
        assert_eq!(c.origin(), [-6.0; 3]);
    }

    #[test]
    fn odd_excess_trims_trailing() {
        let v = ramp(97, 1.0);
        let c = v.crop_or_pad_symmetric([96; 3], 0.0).unwrap();
        assert_eq!(c.get(VoxelIndex::new(0, 0, 0)), 0.0);
        assert_eq!(c.get(VoxelIndex::new(95, 0, 0)), 95.0);
        assert_eq!(c.origin(), [0.0; 3]);
    }

    #[test]
    fn crop_or_pad_is_idempotent() {
        let v = affine([7, 10, 13], [1.0, 2.0, 3.0, 0.0]);
        let once = v.crop_or_pad_symmetric([9, 8, 10], 0.5).unwrap();
        let twice = once.crop_or_pad_symmetric([9, 8, 10], 0.5).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn resample_then_crop_keeps_constant_center() {
        let v = VolumeGrid::filled([20, 24, 16], [1.7, 1.3, 3.1], [0.0; 3], 0.3).unwrap();
        let r = v.resample_isotropic(2.25, None).unwrap();
        let c = r.crop_or_pad_symmetric(v.dims(), 0.0).unwrap();
        assert_eq!(c.get(VoxelIndex::new(10, 12, 8)), 0.3);
    }

    #[test]
    fn voxel_roundtrip() {
        let v = ramp(5, 1.0);
        for flat in [0, 7, 31, 124] {
            let idx = v.voxel_of(flat);
            assert_eq!(v.flat_index(idx.i, idx.j, idx.k), flat);
        }
    }
}
