//! Experiment protocol: dataset container, stratified cross-validation,
//! preprocessing into each representation, the resolution sweep and report
//! files.

pub mod cv;
pub mod dataset;
pub mod experiment;
pub mod preprocess;
pub mod report;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::train::ThresholdRule;
use crate::nn::{Precision, TrainConfig};
use crate::synthgen::{PhantomConfig, Representation};

pub use cv::kfold_split;
pub use dataset::{load_dataset, save_dataset, Dataset, Manifest};
pub use experiment::{
    evaluate_clips, run_experiment, run_sweep, run_sweep_on, summarize, Arm, ArmReport, ClipPrediction, Comparison, ExperimentReport,
    FoldReport, Progress, Summary, SweepConfig,
};
pub use preprocess::{flip_augment, preprocess};
pub use report::{emit_report, ReportFormat};

/// Model input size. Polar inputs read `h` as angle samples and `w` as depth
/// samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InputDims {
    pub h: usize,
    pub w: usize,
}

impl InputDims {
    pub const fn new(h: usize, w: usize) -> Self {
        Self { h, w }
    }

    pub fn pixels(self) -> usize {
        self.h * self.w
    }

    /// Sizes studied in the resolution sweep.
    pub const SWEEP: [InputDims; 5] = [
        InputDims::new(64, 64),
        InputDims::new(32, 32),
        InputDims::new(16, 16),
        InputDims::new(64, 32),
        InputDims::new(64, 16),
    ];

    pub fn is_square(self) -> bool {
        self.h == self.w
    }
}

impl fmt::Display for InputDims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.h, self.w)
    }
}

impl FromStr for InputDims {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (h, w) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| Error::domain(format!("dims {s:?} must look like HxW")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| Error::domain(format!("bad dimension {v:?} in {s:?}")))
        };
        Ok(Self::new(parse(h)?, parse(w)?))
    }
}

/// Where the clips of an experiment come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    Generate {
        phantom: PhantomConfig,
        n_clips: usize,
        seed: u64,
    },
    Path(PathBuf),
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Generate {
            phantom: PhantomConfig::default(),
            n_clips: 200,
            seed: 2024,
        }
    }
}

impl DatasetSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DatasetSource::Generate { phantom, n_clips, seed } => Dataset::generate(phantom, *n_clips, *seed),
            DatasetSource::Path(p) => load_dataset(p),
        }
    }
}

/// One arm of the protocol: a representation at an input size, evaluated by
/// k-fold cross-validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub representation: Representation,
    pub input_dims: InputDims,
    pub folds: usize,
    pub dataset: DatasetSource,
    pub train: TrainConfig,
    /// Conv block widths; the architecture is otherwise fixed.
    pub channels: Vec<usize>,
    /// Activation precision of the conv blocks.
    pub precision: Precision,
    pub localization: ThresholdRule,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            representation: Representation::Polar,
            input_dims: InputDims::new(64, 64),
            folds: 5,
            dataset: DatasetSource::default(),
            train: TrainConfig {
                learning_rate: 1e-3,
                ..TrainConfig::default()
            },
            channels: crate::nn::ArchConfig::default().channels,
            precision: Precision::F32,
            localization: ThresholdRule::AboveUniform,
            seed: 7,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        validate_arm(self.representation, self.input_dims)?;
        if self.folds < 2 {
            return Err(Error::domain("folds must be at least 2"));
        }
        self.train.validate()
    }

    /// Short identifier such as `polar_64x16`.
    pub fn label(&self) -> String {
        arm_label(self.representation, self.input_dims)
    }
}

pub fn arm_label(rep: Representation, dims: InputDims) -> String {
    format!("{rep}_{dims}")
}

/// Non-square inputs only exist for the polar representation.
pub fn validate_arm(rep: Representation, dims: InputDims) -> Result<()> {
    if dims.h == 0 || dims.w == 0 {
        return Err(Error::domain("input dims must be positive"));
    }
    if rep == Representation::Cartesian && !dims.is_square() {
        return Err(Error::domain(format!("{dims} is a polar-only input size")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims_parse() {
        assert_eq!("64x16".parse::<InputDims>().unwrap(), InputDims::new(64, 16));
        assert!("64".parse::<InputDims>().is_err());
        assert!("0x4".parse::<InputDims>().is_err());
        assert_eq!(InputDims::new(64, 16).to_string(), "64x16");
    }

    #[test]
    fn polar_only_dims() {
        assert!(validate_arm(Representation::Cartesian, InputDims::new(64, 32)).is_err());
        assert!(validate_arm(Representation::Polar, InputDims::new(64, 32)).is_ok());
        let cfg = ExperimentConfig {
            folds: 1,
            ..ExperimentConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
