//! Files, configuration and the command-line pipeline around `voxmark-core`.
//!
//! - [`vvr`]: `VVR1` volume files
//! - [`checkpoint`]: `UNC1` network checkpoints with an optional optimizer trailer
//! - [`records`]: JSON annotations, manifests, shape models and reports
//! - [`config`]: flat `key = value` run configuration
//! - [`pipeline`]: the steps behind each command
//! - [`cli`]: argument parsing and dispatch

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod records;
pub mod vvr;

pub use error::{Error, Result};
