//! Clip classifier: per-frame CNN, bidirectional LSTM, temporal attention and
//! a dense sigmoid output, with analytic gradients and Adam.

pub mod checkpoint;
pub mod layers;
pub mod model;
pub mod params;
pub mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use model::{
    bce_with_logit, classify, forward, forward_batch, loss_and_gradients, predict, predict_many, recalibrate_batch_norm,
    update_running_stats, ForwardTrace, Mode, Prediction,
};
pub use params::{adam_step, AdamState, ModelParams, Role, Tensor};
pub use train::{temporal_localize, train, EpochLog, TrainOutcome};

/// Pooling along an axis stops once its extent reaches this value.
pub const MIN_POOLED_EXTENT: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    pub input_h: usize,
    pub input_w: usize,
    /// Output channels of each conv block.
    pub channels: Vec<usize>,
    /// LSTM hidden units per direction.
    pub hidden: usize,
    pub bn_epsilon: f64,
    pub bn_momentum: f64,
    /// Activation precision of the convolutional blocks.
    pub precision: Precision,
}

/// Floating-point type of CNN activations. Parameters, the recurrent part
/// and all statistics stay in `f64`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F64,
    F32,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            input_h: 64,
            input_w: 64,
            channels: vec![8, 16, 32, 32],
            hidden: 16,
            bn_epsilon: 1e-5,
            bn_momentum: 0.1,
            precision: Precision::F64,
        }
    }
}

/// Shape of one conv block: input extent, channels and which axes are pooled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockDims {
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub pool_h: bool,
    pub pool_w: bool,
}

impl BlockDims {
    pub fn out_h(&self) -> usize {
        if self.pool_h {
            self.h / 2
        } else {
            self.h
        }
    }

    pub fn out_w(&self) -> usize {
        if self.pool_w {
            self.w / 2
        } else {
            self.w
        }
    }
}

impl ArchConfig {
    pub fn for_input(h: usize, w: usize) -> Self {
        Self {
            input_h: h,
            input_w: w,
            ..Self::default()
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.channels.last().copied().unwrap_or(0)
    }

    pub fn blocks(&self) -> Vec<BlockDims> {
        let (mut h, mut w, mut c_in) = (self.input_h, self.input_w, 1);
        self.channels
            .iter()
            .map(|&c_out| {
                let b = BlockDims {
                    c_in,
                    c_out,
                    h,
                    w,
                    pool_h: h >= 2 * MIN_POOLED_EXTENT,
                    pool_w: w >= 2 * MIN_POOLED_EXTENT,
                };
                h = b.out_h();
                w = b.out_w();
                c_in = c_out;
                b
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_h == 0 || self.input_w == 0 {
            return Err(Error::domain("input size must be positive"));
        }
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::domain("channels must be non-empty and positive"));
        }
        if self.hidden == 0 {
            return Err(Error::domain("hidden size must be positive"));
        }
        if !(self.bn_epsilon > 0.0) || !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) {
            return Err(Error::domain("batch-norm epsilon or momentum out of range"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub dropout_rate: f64,
    pub l2_coefficient: f64,
    pub epochs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
    pub class_balancing: bool,
    pub flip_augmentation: bool,
    /// Re-estimate the batch-norm running statistics with the final weights
    /// after the last epoch.
    pub recalibrate_batch_norm: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-6,
            batch_size: 25,
            dropout_rate: 0.2,
            l2_coefficient: 1e-5,
            epochs: 60,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 0,
            class_balancing: true,
            flip_augmentation: true,
            recalibrate_batch_norm: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..1.0).contains(&v);
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::domain("learning rate must be positive"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::domain("batch size and epochs must be at least 1"));
        }
        if !unit(self.dropout_rate) || !unit(self.adam_beta1) || !unit(self.adam_beta2) {
            return Err(Error::domain("dropout and Adam betas must lie in [0, 1)"));
        }
        if !(self.l2_coefficient >= 0.0) || !(self.adam_epsilon > 0.0) {
            return Err(Error::domain("l2 must be non-negative and epsilon positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_sweep_size_reaches_feature_dim() {
        for (h, w) in [(64, 64), (32, 32), (16, 16), (64, 32), (64, 16)] {
            let a = ArchConfig::for_input(h, w);
            let last = *a.blocks().last().unwrap();
            assert!(last.out_h() >= MIN_POOLED_EXTENT && last.out_w() >= MIN_POOLED_EXTENT);
            assert!(last.out_h() <= 4 && last.out_w() <= 4, "{h}x{w}");
            assert_eq!(a.feature_dim(), 32);
        }
        let b = ArchConfig::for_input(64, 16).blocks();
        assert_eq!((b[2].pool_h, b[2].pool_w), (true, false));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            dropout_rate: 1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(ArchConfig {
            hidden: 0,
            ..ArchConfig::default()
        }
        .validate()
        .is_err());
    }
}
