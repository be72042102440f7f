//! Volumetric paired-landmark detection by heatmap regression.
//!
//! The crate is `no_std` (it needs `alloc`) and holds every numerical piece of
//! the pipeline:
//!
//! - [`volume`]: the [`VolumeGrid`] carrier, trilinear resampling and
//!   symmetric crop/pad.
//! - [`labels`]: Gaussian target maps with contralateral suppression and
//!   class-balanced loss weights.
//! - [`unet`]: a 3D encoder/decoder network with hand-written
//!   backpropagation.
//! - [`train`]: weighted squared-error loss and SGD with momentum.
//! - [`detect`]: peak-threshold presence decisions.
//! - [`shape`]: the pair-shape point distribution model and Mahalanobis
//!   rejection.
//! - [`phantom`]: deterministic synthetic head volumes.
//! - [`eval`]: confusion matrices, localization error and the paired t-test.
//!
//! File formats, JSON documents and the command line live in the `voxmark`
//! crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod annotation;
pub mod detect;
pub mod error;
pub mod eval;
pub mod labels;
pub mod linalg;
pub mod phantom;
pub mod rng;
pub mod scalar;
pub mod shape;
pub mod train;
pub mod unet;
pub mod volume;

pub use annotation::{Category, LandmarkAnnotation, NoiseProfile, Side};
pub use error::{Error, Result};
pub use scalar::Real;
pub use volume::{GridGeometry, VolumeGrid, VoxelIndex};
