//! Peak-threshold presence decisions on the two response maps.

use alloc::format;

use crate::annotation::{Category, Side};
use crate::error::{Error, Result};
use crate::volume::{VolumeGrid, VoxelIndex};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorConfig {
    /// A side is present iff its map maximum is strictly greater than this.
    pub p_thres: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self { p_thres: 0.5 }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.p_thres.is_finite() {
            return Err(Error::invalid(format!("p_thres must be finite, got {}", self.p_thres)));
        }
        Ok(())
    }
}

/// Decision for one side. When `rejected_by_shape` is set, `present` is false
/// and the peak fields keep the pre-rejection maximum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SideDetection {
    pub present: bool,
    pub peak_voxel: VoxelIndex,
    pub peak_value: f64,
    pub rejected_by_shape: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionResult {
    pub left: SideDetection,
    pub right: SideDetection,
}

impl DetectionResult {
    pub fn side(&self, side: Side) -> &SideDetection {
        match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }

    pub fn side_mut(&mut self, side: Side) -> &mut SideDetection {
        match side {
            Side::Left => &mut self.left,
            Side::Right => &mut self.right,
        }
    }

    pub fn category(&self) -> Category {
        categorize(self)
    }
}

/// Global maximum and its first position in scan order.
pub fn peak(map: &VolumeGrid) -> (VoxelIndex, f64) {
    let mut best = 0;
    let data = map.data();
    for (i, &v) in data.iter().enumerate() {
        if v > data[best] {
            best = i;
        }
    }
    (map.voxel_of(best), data[best] as f64)
}

fn decide(map: &VolumeGrid, cfg: &DetectorConfig) -> SideDetection {
    let (peak_voxel, peak_value) = peak(map);
    SideDetection { present: peak_value > cfg.p_thres, peak_voxel, peak_value, rejected_by_shape: false }
}

pub fn detect(left_map: &VolumeGrid, right_map: &VolumeGrid, cfg: &DetectorConfig) -> Result<DetectionResult> {
    cfg.validate()?;
    if left_map.dims() != right_map.dims() {
        return Err(Error::invalid(format!(
            "response maps differ in dims: {:?} vs {:?}",
            left_map.dims(),
            right_map.dims()
        )));
    }
    Ok(DetectionResult { left: decide(left_map, cfg), right: decide(right_map, cfg) })
}

pub fn categorize(result: &DetectionResult) -> Category {
    Category::from_presence(result.left.present, result.right.present)
}
