//! B-line detection in fan-shaped ultrasound video, with Cartesian and polar
//! frame representations.
//!
//! The crate is organised bottom-up:
//!
//! - [`geometry`]: frustum geometry, point mappings, bilinear scan conversion
//!   and area downsampling.
//! - [`synthgen`]: deterministic phantom clips with B-lines, A-lines and
//!   speckle, plus exact ground-truth labels.
//! - [`nn`]: CNN encoder, bidirectional LSTM, temporal attention and
//!   classifier with hand-written gradients and Adam.
//! - [`metrics`]: precision/recall, F1, temporal IoU and the paired t-test.
//! - [`harness`]: dataset container format, stratified cross-validation,
//!   preprocessing, the resolution sweep and report emission.

pub mod error;
mod fs;
pub mod geometry;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod synthgen;

pub use error::{Error, Result};
pub use geometry::{CartesianFrame, FrustumGeometry, Grid, PolarFrame};
pub use harness::{ExperimentConfig, ExperimentReport, InputDims};
pub use metrics::{ConfusionCounts, PairedTestResult};
pub use nn::{ArchConfig, ModelParams, Precision, TrainConfig};
pub use synthgen::{ClipLabels, PhantomConfig, Representation, VideoClip};
