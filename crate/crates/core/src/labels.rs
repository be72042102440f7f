//! Target heatmaps and class-balanced loss weights.
//!
//! Each side gets its own map: a unit-peak Gaussian at that side's landmark
//! (all zeros when the side is absent). With suppression enabled, the
//! opposite landmark is stamped into the same map as a negated Gaussian so
//! the network is penalized for answering there.

use alloc::format;
use alloc::vec::Vec;

use crate::annotation::{LandmarkAnnotation, Side};
use crate::error::{Error, Result};
use crate::volume::{GridGeometry, VolumeGrid, VoxelIndex};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelConfig {
    /// Gaussian standard deviation in voxels.
    pub sigma: f64,
    /// Gaussian magnitudes below this are written as exact zeros.
    pub floor_threshold: f64,
    pub suppression_enabled: bool,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self { sigma: 3.0, floor_threshold: 0.05, suppression_enabled: true }
    }
}

impl LabelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::invalid(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.floor_threshold > 0.0 && self.floor_threshold < 1.0) {
            return Err(Error::invalid(format!("floor_threshold must lie in (0, 1), got {}", self.floor_threshold)));
        }
        Ok(())
    }

    /// Squared radius of the non-zero support: `2 sigma^2 ln(1/floor)`.
    pub fn support_radius2(&self) -> f64 {
        2.0 * self.sigma * self.sigma * libm::log(1.0 / self.floor_threshold)
    }
}

/// Class-balanced weights for one target map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightPair {
    pub w_none: f64,
    pub w_zero: f64,
    pub n_none: usize,
    pub n_zero: usize,
}

impl WeightPair {
    /// Weight of a voxel with the given target value.
    #[inline]
    pub fn weight_for(&self, target: f32) -> f64 {
        if target != 0.0 {
            self.w_none
        } else {
            self.w_zero
        }
    }
}

/// Per-side targets for one volume.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetPair {
    pub left_map: VolumeGrid,
    pub right_map: VolumeGrid,
    pub weights_left: WeightPair,
    pub weights_right: WeightPair,
}

impl TargetPair {
    pub fn map(&self, side: Side) -> &VolumeGrid {
        match side {
            Side::Left => &self.left_map,
            Side::Right => &self.right_map,
        }
    }

    pub fn weights(&self, side: Side) -> &WeightPair {
        match side {
            Side::Left => &self.weights_left,
            Side::Right => &self.weights_right,
        }
    }
}

/// Adds `sign * g(v)` into `acc`, where `g` is the floored Gaussian at `center`.
fn stamp_gaussian(acc: &mut [f64], dims: [usize; 3], center: VoxelIndex, cfg: &LabelConfig, sign: f64) {
    let r2 = cfg.support_radius2();
    let reach = libm::ceil(libm::sqrt(r2)) as usize;
    let inv = 1.0 / (2.0 * cfg.sigma * cfg.sigma);
    let c = center.as_array();
    let lo = |d: usize| c[d].saturating_sub(reach);
    let hi = |d: usize| (c[d] + reach + 1).min(dims[d]);
    for k in lo(2)..hi(2) {
        for j in lo(1)..hi(1) {
            for i in lo(0)..hi(0) {
                let d2 = VoxelIndex::new(i, j, k).dist2(center);
                let g = libm::exp(-d2 * inv);
                if g >= cfg.floor_threshold {
                    acc[i + dims[0] * (j + dims[1] * k)] += sign * g;
                }
            }
        }
    }
}

fn check_center(dims: [usize; 3], center: VoxelIndex) -> Result<()> {
    if center.inside(dims) {
        Ok(())
    } else {
        Err(Error::invalid(format!("landmark {center:?} outside dims {dims:?}")))
    }
}

fn finish(acc: Vec<f64>, geom: GridGeometry) -> Result<VolumeGrid> {
    let data = acc.into_iter().map(|v| v.clamp(-1.0, 1.0) as f32).collect();
    VolumeGrid::new(geom.dims, geom.spacing, geom.origin, data)
}

/// A single signed Gaussian map in voxel space.
///
/// `sign` is `+1` for a target peak and `-1` for a suppression trough.
pub fn make_gaussian_map(dims: [usize; 3], center: VoxelIndex, cfg: &LabelConfig, sign: f64) -> Result<VolumeGrid> {
    cfg.validate()?;
    check_center(dims, center)?;
    if sign != 1.0 && sign != -1.0 {
        return Err(Error::invalid(format!("sign must be +1 or -1, got {sign}")));
    }
    let mut acc = alloc::vec![0.0f64; dims.iter().product()];
    stamp_gaussian(&mut acc, dims, center, cfg, sign);
    finish(acc, GridGeometry::voxel_space(dims))
}

/// Builds both side maps and their weights for one annotated volume.
pub fn make_targets(annotation: &LandmarkAnnotation, geom: GridGeometry, cfg: &LabelConfig) -> Result<TargetPair> {
    cfg.validate()?;
    let dims = geom.dims;
    for side in Side::BOTH {
        if let Some(c) = annotation.landmark(side) {
            check_center(dims, c)?;
        }
    }
    if let (Some(l), Some(r)) = (annotation.left, annotation.right) {
        if l == r {
            return Err(Error::InvalidAnnotation(format!(
                "left and right landmarks coincide at {l:?} in {}",
                annotation.volume_id
            )));
        }
    }
    let n = dims.iter().product();
    let build = |side: Side| -> Result<VolumeGrid> {
        let mut acc = alloc::vec![0.0f64; n];
        if let Some(c) = annotation.landmark(side) {
            stamp_gaussian(&mut acc, dims, c, cfg, 1.0);
        }
        if cfg.suppression_enabled {
            if let Some(c) = annotation.landmark(side.opposite()) {
                stamp_gaussian(&mut acc, dims, c, cfg, -1.0);
            }
        }
        finish(acc, geom)
    };
    let left_map = build(Side::Left)?;
    let right_map = build(Side::Right)?;
    let weights_left = compute_weights(&left_map);
    let weights_right = compute_weights(&right_map);
    Ok(TargetPair { left_map, right_map, weights_left, weights_right })
}

/// Class-balanced weights: each class gets the other class's share of voxels.
///
/// When one class is empty the surviving class is weighted 1 so the loss
/// never vanishes; in that case both fields read 1.
pub fn compute_weights(map: &VolumeGrid) -> WeightPair {
    let n_none = map.data().iter().filter(|&&v| v != 0.0).count();
    let n_zero = map.len() - n_none;
    let total = (n_none + n_zero) as f64;
    let (w_none, w_zero) =
        if n_none == 0 || n_zero == 0 { (1.0, 1.0) } else { (n_zero as f64 / total, n_none as f64 / total) };
    WeightPair { w_none, w_zero, n_none, n_zero }
}
