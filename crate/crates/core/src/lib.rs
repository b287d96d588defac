//! Evidential fusion of multimodal segmentations.
//!
//! Per-modality features are mapped to Dempster-Shafer mass functions by a
//! prototype layer, corrected by contextual discounting with learned
//! per-class reliability coefficients, and combined at the contour level
//! into a fused class distribution per voxel.

pub mod dataset;
pub mod dst;
pub mod enn;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod features;
pub mod fusion;
pub mod io;
pub mod metrics;
pub mod oracle;
pub mod param;
pub mod selftest;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
