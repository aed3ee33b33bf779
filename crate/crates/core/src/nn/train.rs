use std::collections::BTreeSet;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::{classify, loss_and_gradients, recalibrate_batch_norm, update_running_stats};
use super::params::{adam_step, AdamState, ModelParams};
use super::{ArchConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::metrics::ConfusionCounts;
use crate::rng::{self, Stream};
use crate::synthgen::VideoClip;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean regularised batch loss.
    pub loss: f64,
    /// F1 (percent) of the train-mode outputs seen during the epoch.
    pub f1: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: Vec<EpochLog>,
}

/// Draws item indices with replacement, each class carrying equal total
/// weight when balancing is on.
#[derive(Debug, Clone)]
pub struct BalancedSampler {
    dist: WeightedIndex<f64>,
}

impl BalancedSampler {
    pub fn new(labels: &[bool], balance: bool) -> Result<Self> {
        let pos = labels.iter().filter(|&&l| l).count();
        let neg = labels.len() - pos;
        if pos == 0 || neg == 0 {
            return Err(Error::domain("training split must contain both classes"));
        }
        let weights: Vec<f64> = labels
            .iter()
            .map(|&l| match (balance, l) {
                (false, _) => 1.0,
                (true, true) => 1.0 / pos as f64,
                (true, false) => 1.0 / neg as f64,
            })
            .collect();
        let dist = WeightedIndex::new(&weights).map_err(|e| Error::domain(e.to_string()))?;
        Ok(Self { dist })
    }

    pub fn draw(&self, rng: &mut Stream) -> usize {
        self.dist.sample(rng)
    }
}

/// Mini-batch Adam on `clips` with binary labels. Flipped copies join the
/// sampling pool when flip augmentation is on. Deterministic given
/// `config.seed`.
pub fn train(clips: &[VideoClip], labels: &[bool], arch: &ArchConfig, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with(clips, labels, arch, config, |_| {})
}

/// [`train`] with a callback invoked after every epoch.
pub fn train_with(
    clips: &[VideoClip],
    labels: &[bool],
    arch: &ArchConfig,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    config.validate()?;
    arch.validate()?;
    if clips.len() != labels.len() {
        return Err(Error::domain("clips and labels differ in length"));
    }
    let flipped: Vec<VideoClip> = if config.flip_augmentation {
        clips.iter().map(VideoClip::flipped).collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let pool: Vec<(&VideoClip, bool)> = clips
        .iter()
        .chain(&flipped)
        .zip(labels.iter().chain(if flipped.is_empty() { &[][..] } else { labels }))
        .map(|(c, &l)| (c, l))
        .collect();
    let pool_labels: Vec<bool> = pool.iter().map(|p| p.1).collect();
    let sampler = BalancedSampler::new(&pool_labels, config.class_balancing)?;

    let mut params = ModelParams::init(arch, &mut rng::substream(config.seed, "init"))?;
    let mut adam = AdamState::new(&params);
    let mut sample_rng = rng::substream(config.seed, "sampler");
    let mut dropout_rng = rng::substream(config.seed, "dropout");
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let order: Vec<usize> = if config.class_balancing {
            (0..pool.len()).map(|_| sampler.draw(&mut sample_rng)).collect()
        } else {
            let mut o: Vec<usize> = (0..pool.len()).collect();
            o.shuffle(&mut sample_rng);
            o
        };
        let mut loss_sum = 0.0;
        let mut n_batches = 0;
        let mut counts = ConfusionCounts::default();
        for idx in order.chunks(config.batch_size) {
            let batch: Vec<(&VideoClip, bool)> = idx.iter().map(|&i| pool[i]).collect();
            let out = loss_and_gradients(&params, &batch, config, &mut dropout_rng)?;
            adam_step(&mut params, &out.grads, &mut adam, config)?;
            update_running_stats(&mut params, &out.batch_stats);
            if !params.all_finite() {
                return Err(Error::Training(format!("non-finite parameters in epoch {epoch}")));
            }
            loss_sum += out.loss;
            n_batches += 1;
            for (p, (_, l)) in out.probs.iter().zip(&batch) {
                counts.record(classify(*p), *l);
            }
        }
        let entry = EpochLog {
            epoch,
            loss: loss_sum / n_batches as f64,
            f1: counts.f1(),
        };
        on_epoch(&entry);
        log.push(entry);
    }
    if config.recalibrate_batch_norm {
        let mut cal_rng = rng::substream(config.seed, "recalibrate");
        let order: Vec<usize> = (0..pool.len()).map(|_| sampler.draw(&mut cal_rng)).collect();
        let batches: Vec<Vec<&VideoClip>> =
            order.chunks(config.batch_size).map(|idx| idx.iter().map(|&i| pool[i].0).collect()).collect();
        recalibrate_batch_norm(&mut params, &batches)?;
    }
    Ok(TrainOutcome { params, log })
}

/// Frame selection rule applied to attention weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "rule", content = "value")]
pub enum ThresholdRule {
    /// `a_t > 1/T`.
    #[default]
    AboveUniform,
    /// `a_t > value`.
    Absolute(f64),
}

/// Frames whose attention weight passes `rule`; may be empty.
pub fn temporal_localize(a: &[f64], rule: ThresholdRule) -> BTreeSet<usize> {
    let thr = match rule {
        ThresholdRule::AboveUniform => 1.0 / a.len().max(1) as f64,
        ThresholdRule::Absolute(v) => v,
    };
    a.iter()
        .enumerate()
        .filter_map(|(t, &v)| (v > thr).then_some(t))
        .collect()
}
