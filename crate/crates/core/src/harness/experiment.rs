use std::collections::BTreeSet;
use std::hash::Hasher;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use super::cv::kfold_split;
use super::dataset::{Dataset, GENERATOR_VERSION};
use super::preprocess::preprocess_all;
use super::{arm_label, validate_arm, DatasetSource, ExperimentConfig, InputDims};
use crate::error::{Error, Result};
use crate::metrics::{
    expected_random_iou, f1_score, paired_t_test, precision_recall, temporal_iou, ConfusionCounts, PairedTestResult,
};
use crate::nn::train::{temporal_localize, train_with, EpochLog, ThresholdRule};
use crate::nn::{predict_many, ArchConfig, ModelParams, Precision, TrainConfig};
use crate::rng::{child_seed, RNG_ID};
use crate::synthgen::{Representation, VideoClip};

/// Clips per eval-mode forward batch.
const EVAL_BATCH: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arm {
    pub representation: Representation,
    pub dims: InputDims,
}

impl Arm {
    pub const fn new(representation: Representation, h: usize, w: usize) -> Self {
        Self {
            representation,
            dims: InputDims::new(h, w),
        }
    }

    pub fn label(&self) -> String {
        arm_label(self.representation, self.dims)
    }
}

/// Every arm is trained and tested on the same folds of the same dataset,
/// with the same per-fold training seed, so per-fold scores pair up across
/// arms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub dataset: DatasetSource,
    pub folds: usize,
    pub train: TrainConfig,
    pub channels: Vec<usize>,
    pub precision: Precision,
    pub localization: ThresholdRule,
    pub seed: u64,
    pub arms: Vec<Arm>,
    /// Pairs of arm labels compared by a paired t-test on per-fold F1.
    pub comparisons: Vec<(String, String)>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        use Representation::{Cartesian, Polar};
        let base = ExperimentConfig::default();
        let pair = |a: &str, b: &str| (a.to_string(), b.to_string());
        Self {
            dataset: base.dataset,
            folds: base.folds,
            train: base.train,
            channels: base.channels,
            precision: base.precision,
            localization: base.localization,
            seed: base.seed,
            arms: vec![
                Arm::new(Cartesian, 64, 64),
                Arm::new(Cartesian, 32, 32),
                Arm::new(Cartesian, 16, 16),
                Arm::new(Polar, 64, 64),
                Arm::new(Polar, 32, 32),
                Arm::new(Polar, 16, 16),
                Arm::new(Polar, 64, 32),
                Arm::new(Polar, 64, 16),
            ],
            comparisons: vec![
                pair("polar_64x64", "cartesian_64x64"),
                pair("polar_32x32", "cartesian_32x32"),
                pair("polar_16x16", "cartesian_16x16"),
                pair("polar_64x16", "cartesian_32x32"),
                pair("polar_64x32", "polar_64x64"),
                pair("polar_64x16", "polar_64x64"),
            ],
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::domain("folds must be at least 2"));
        }
        if self.arms.is_empty() {
            return Err(Error::domain("sweep has no arms"));
        }
        self.train.validate()?;
        let labels: Vec<String> = self.arms.iter().map(Arm::label).collect();
        for (i, arm) in self.arms.iter().enumerate() {
            validate_arm(arm.representation, arm.dims)?;
            if labels[..i].contains(&labels[i]) {
                return Err(Error::domain(format!("arm {} listed twice", labels[i])));
            }
        }
        for (a, b) in &self.comparisons {
            for l in [a, b] {
                if !labels.contains(l) {
                    return Err(Error::domain(format!("comparison names unknown arm {l}")));
                }
            }
        }
        Ok(())
    }
}

impl From<&ExperimentConfig> for SweepConfig {
    fn from(c: &ExperimentConfig) -> Self {
        Self {
            dataset: c.dataset.clone(),
            folds: c.folds,
            train: c.train.clone(),
            channels: c.channels.clone(),
            precision: c.precision,
            localization: c.localization,
            seed: c.seed,
            arms: vec![Arm {
                representation: c.representation,
                dims: c.input_dims,
            }],
            comparisons: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipPrediction {
    pub clip: usize,
    pub label: bool,
    pub prob: f64,
    pub predicted: bool,
    pub attention: Vec<f64>,
    pub localized: Vec<usize>,
    pub truth: Vec<usize>,
}

/// Metrics derived from a set of per-clip predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub counts: ConfusionCounts,
    pub precision: f64,
    pub recall: f64,
    /// Percent.
    pub f1: f64,
    pub accuracy: f64,
    /// Mean temporal IoU over ground-truth B-line clips.
    pub iou: Option<f64>,
    /// Expected IoU of a uniformly random frame set of the same size.
    pub random_iou: Option<f64>,
    /// Mean attention weight on B-line frames of B-line clips.
    pub attention_bline: Option<f64>,
    /// Mean attention weight on the other frames of B-line clips.
    pub attention_non_bline: Option<f64>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn summarize<'a>(preds: impl IntoIterator<Item = &'a ClipPrediction>) -> Summary {
    let mut counts = ConfusionCounts::default();
    let (mut ious, mut rand_ious, mut att_b, mut att_n) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for p in preds {
        counts.record(p.predicted, p.label);
        if !p.label {
            continue;
        }
        let loc: BTreeSet<usize> = p.localized.iter().copied().collect();
        let gt: BTreeSet<usize> = p.truth.iter().copied().collect();
        ious.push(temporal_iou(&loc, &gt));
        rand_ious.push(expected_random_iou(p.attention.len(), loc.len(), gt.len()));
        for (t, &a) in p.attention.iter().enumerate() {
            if gt.contains(&t) {
                att_b.push(a);
            } else {
                att_n.push(a);
            }
        }
    }
    let pr = precision_recall(&counts);
    Summary {
        counts,
        precision: pr.precision,
        recall: pr.recall,
        f1: f1_score(pr.precision, pr.recall),
        accuracy: if counts.total() == 0 {
            0.0
        } else {
            (counts.tp + counts.tn) as f64 / counts.total() as f64
        },
        iou: mean(&ious),
        random_iou: mean(&rand_ious),
        attention_bline: mean(&att_b),
        attention_non_bline: mean(&att_n),
    }
}

/// Predicts the clips at `indices` (into the preprocessed `clips`) and pairs
/// each prediction with the ground truth stored in `dataset`.
pub fn evaluate_clips(
    params: &ModelParams,
    clips: &[VideoClip],
    dataset: &Dataset,
    indices: &[usize],
    rule: ThresholdRule,
) -> Result<Vec<ClipPrediction>> {
    let selected: Vec<&VideoClip> = indices.iter().map(|&i| &clips[i]).collect();
    let preds = predict_many(params, &selected, EVAL_BATCH)?;
    Ok(indices
        .iter()
        .zip(preds)
        .map(|(&i, p)| ClipPrediction {
            clip: i,
            label: dataset.labels[i].is_bline(),
            prob: p.prob,
            predicted: p.is_bline,
            localized: temporal_localize(&p.attention, rule).into_iter().collect(),
            attention: p.attention,
            truth: dataset.labels[i].bline_frames(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train_seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub summary: Summary,
    pub training_log: Vec<EpochLog>,
    pub predictions: Vec<ClipPrediction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    pub label: String,
    pub representation: Representation,
    pub dims: InputDims,
    /// FNV-1a 64 of the arm's canonical JSON settings.
    pub fingerprint: String,
    pub folds: Vec<FoldReport>,
    /// Mean of the per-fold F1 values.
    pub mean_f1: f64,
    pub sd_f1: f64,
    /// F1 over the confusion counts of all folds.
    pub pooled: Summary,
}

impl ArmReport {
    pub fn fold_f1(&self) -> Vec<f64> {
        self.folds.iter().map(|f| f.summary.f1).collect()
    }

    pub fn mean_iou(&self) -> Option<f64> {
        self.pooled.iou
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: String,
    pub b: String,
    pub f1_a: Vec<f64>,
    pub f1_b: Vec<f64>,
    pub test: Option<PairedTestResult>,
    /// Why `test` is absent.
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub generator_version: String,
    pub rng: String,
    pub dataset_fingerprint: String,
    pub dataset_seed: Option<u64>,
    pub n_clips: usize,
    pub seed: u64,
    pub folds: usize,
    pub train: TrainConfig,
    pub channels: Vec<usize>,
    pub precision: Precision,
    pub localization: ThresholdRule,
    pub arms: Vec<ArmReport>,
    pub comparisons: Vec<Comparison>,
}

impl ExperimentReport {
    pub fn arm(&self, label: &str) -> Option<&ArmReport> {
        self.arms.iter().find(|a| a.label == label)
    }

    /// Largest absolute difference between a stored headline number and its
    /// recomputation from the stored per-clip predictions.
    pub fn recomputation_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        let diff = |a: Option<f64>, b: Option<f64>| match (a, b) {
            (Some(x), Some(y)) => (x - y).abs(),
            (None, None) => 0.0,
            _ => f64::INFINITY,
        };
        let cmp = |s: &Summary, r: &Summary| {
            let mut w = [
                (s.precision - r.precision).abs(),
                (s.recall - r.recall).abs(),
                (s.f1 - r.f1).abs(),
                (s.accuracy - r.accuracy).abs(),
                diff(s.iou, r.iou),
                diff(s.random_iou, r.random_iou),
                diff(s.attention_bline, r.attention_bline),
                diff(s.attention_non_bline, r.attention_non_bline),
            ]
            .into_iter()
            .fold(0.0, f64::max);
            if s.counts != r.counts {
                w = f64::INFINITY;
            }
            w
        };
        for arm in &self.arms {
            for f in &arm.folds {
                worst = worst.max(cmp(&f.summary, &summarize(&f.predictions)));
            }
            let all = arm.folds.iter().flat_map(|f| &f.predictions);
            worst = worst.max(cmp(&arm.pooled, &summarize(all)));
            let f1 = arm.fold_f1();
            worst = worst.max((arm.mean_f1 - mean(&f1).unwrap_or(0.0)).abs());
        }
        worst
    }
}

fn fingerprint(value: &impl Serialize) -> Result<String> {
    let mut h = FnvHasher::default();
    h.write(&serde_json::to_vec(value)?);
    Ok(format!("{:016x}", h.finish()))
}

fn sample_sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Progress messages emitted while a sweep runs.
#[derive(Debug, Clone, PartialEq)]
pub enum Progress<'a> {
    Arm { label: &'a str },
    Epoch { label: &'a str, fold: usize, log: &'a EpochLog },
    Fold { label: &'a str, fold: usize, summary: &'a Summary },
}

/// Cross-validates a single arm.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    run_sweep(&SweepConfig::from(config))
}

pub fn run_sweep(config: &SweepConfig) -> Result<ExperimentReport> {
    let dataset = config.dataset.load()?;
    run_sweep_on(config, &dataset, |_| {})
}

/// Runs every arm of `config` on an already loaded dataset.
pub fn run_sweep_on(
    config: &SweepConfig,
    dataset: &Dataset,
    mut progress: impl FnMut(Progress<'_>),
) -> Result<ExperimentReport> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::domain("dataset is empty"));
    }
    let labels = dataset.class_labels();
    let folds = kfold_split(&labels, config.folds, config.seed)?;
    let mut arms = Vec::with_capacity(config.arms.len());
    for arm in &config.arms {
        let label = arm.label();
        progress(Progress::Arm { label: &label });
        let clips = preprocess_all(&dataset.clips, arm.representation, arm.dims)?;
        let arch = ArchConfig {
            channels: config.channels.clone(),
            precision: config.precision,
            ..ArchConfig::for_input(arm.dims.h, arm.dims.w)
        };
        let mut fold_reports = Vec::with_capacity(folds.len());
        for (k, fold) in folds.iter().enumerate() {
            let train_cfg = TrainConfig {
                seed: child_seed(config.seed, k as u64),
                ..config.train.clone()
            };
            let train_clips: Vec<VideoClip> = fold.train.iter().map(|&i| clips[i].clone()).collect();
            let train_labels: Vec<bool> = fold.train.iter().map(|&i| labels[i]).collect();
            let outcome = train_with(&train_clips, &train_labels, &arch, &train_cfg, |log| {
                progress(Progress::Epoch {
                    label: &label,
                    fold: k,
                    log,
                })
            })
            .map_err(|e| Error::Training(format!("{label} fold {k}: {e}")))?;
            drop(train_clips);
            let predictions = evaluate_clips(&outcome.params, &clips, dataset, &fold.test, config.localization)?;
            let summary = summarize(&predictions);
            progress(Progress::Fold {
                label: &label,
                fold: k,
                summary: &summary,
            });
            fold_reports.push(FoldReport {
                fold: k,
                train_seed: train_cfg.seed,
                n_train: fold.train.len(),
                n_test: fold.test.len(),
                summary,
                training_log: outcome.log,
                predictions,
            });
        }
        let f1: Vec<f64> = fold_reports.iter().map(|f| f.summary.f1).collect();
        let pooled = summarize(fold_reports.iter().flat_map(|f| &f.predictions));
        arms.push(ArmReport {
            fingerprint: fingerprint(&(arm, &arch, &config.train, config.seed, config.folds))?,
            label,
            representation: arm.representation,
            dims: arm.dims,
            mean_f1: mean(&f1).unwrap_or(0.0),
            sd_f1: sample_sd(&f1),
            pooled,
            folds: fold_reports,
        });
    }
    let comparisons = config
        .comparisons
        .iter()
        .map(|(a, b)| {
            let find = |l: &str| arms.iter().find(|r| r.label == l).expect("validated arm label");
            let (f1_a, f1_b) = (find(a).fold_f1(), find(b).fold_f1());
            let (test, note) = match paired_t_test(&f1_a, &f1_b) {
                Ok(t) => (Some(t), None),
                Err(e) => (None, Some(e.to_string())),
            };
            Comparison {
                a: a.clone(),
                b: b.clone(),
                f1_a,
                f1_b,
                test,
                note,
            }
        })
        .collect();
    Ok(ExperimentReport {
        generator_version: GENERATOR_VERSION.to_string(),
        rng: RNG_ID.to_string(),
        dataset_fingerprint: dataset.fingerprint(),
        dataset_seed: dataset.seed,
        n_clips: dataset.len(),
        seed: config.seed,
        folds: config.folds,
        train: config.train.clone(),
        channels: config.channels.clone(),
        precision: config.precision,
        localization: config.localization,
        arms,
        comparisons,
    })
}
