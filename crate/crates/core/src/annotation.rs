//! Ground-truth landmark annotations.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::volume::VoxelIndex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Left, Side::Right];

    pub fn opposite(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }
}

/// Volume content: both landmarks, left only, right only, or neither.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    B,
    L,
    R,
    N,
}

impl Category {
    pub const ALL: [Category; 4] = [Category::B, Category::L, Category::R, Category::N];

    pub fn from_presence(left: bool, right: bool) -> Self {
        match (left, right) {
            (true, true) => Category::B,
            (true, false) => Category::L,
            (false, true) => Category::R,
            (false, false) => Category::N,
        }
    }

    /// Row/column position in a confusion matrix.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn has(self, side: Side) -> bool {
        match side {
            Side::Left => matches!(self, Category::B | Category::L),
            Side::Right => matches!(self, Category::B | Category::R),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Category::B => "B",
            Category::L => "L",
            Category::R => "R",
            Category::N => "N",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "B" => Category::B,
            "L" => Category::L,
            "R" => Category::R,
            "N" => Category::N,
            _ => return None,
        })
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Acquisition-quality stratum of a volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum NoiseProfile {
    #[default]
    Clean,
    LowDose,
}

impl NoiseProfile {
    pub const ALL: [NoiseProfile; 2] = [NoiseProfile::Clean, NoiseProfile::LowDose];

    pub fn as_str(self) -> &'static str {
        match self {
            NoiseProfile::Clean => "clean",
            NoiseProfile::LowDose => "lowdose",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "clean" => Some(NoiseProfile::Clean),
            "lowdose" => Some(NoiseProfile::LowDose),
            _ => None,
        }
    }
}

impl fmt::Display for NoiseProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-volume ground truth: landmark voxels for the sides that are present,
/// plus the centers of any distractor structures.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LandmarkAnnotation {
    pub volume_id: String,
    pub left: Option<VoxelIndex>,
    pub right: Option<VoxelIndex>,
    pub distractors: Vec<VoxelIndex>,
}

impl LandmarkAnnotation {
    pub fn landmark(&self, side: Side) -> Option<VoxelIndex> {
        match side {
            Side::Left => self.left,
            Side::Right => self.right,
        }
    }

    pub fn set_landmark(&mut self, side: Side, v: Option<VoxelIndex>) {
        match side {
            Side::Left => self.left = v,
            Side::Right => self.right = v,
        }
    }

    pub fn category(&self) -> Category {
        Category::from_presence(self.left.is_some(), self.right.is_some())
    }
}
