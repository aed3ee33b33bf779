use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ArchConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::rng::Stream;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], v: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// How a tensor takes part in optimisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// Trained and L2-regularised.
    Weight,
    /// Trained, not regularised (biases, batch-norm shift).
    Bias,
    /// Batch-norm running statistics; updated by momentum, not by gradients.
    Running,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlockParams {
    /// `[c_out, c_in, 3, 3]`
    pub weight: Tensor,
    pub bias: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    /// `[4H, D]`, gate blocks ordered input, forget, cell, output.
    pub w_ih: Tensor,
    /// `[4H, H]`
    pub w_hh: Tensor,
    /// `[4H]`
    pub bias: Tensor,
}

/// All model state. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: ArchConfig,
    pub conv: Vec<ConvBlockParams>,
    pub feat_gamma: Tensor,
    pub feat_beta: Tensor,
    pub feat_running_mean: Tensor,
    pub feat_running_var: Tensor,
    pub lstm_fwd: LstmParams,
    pub lstm_bwd: LstmParams,
    /// Attention weight vector, length `2H`.
    pub attention_w: Tensor,
    pub fc_w: Tensor,
    pub fc_b: Tensor,
}

macro_rules! tensor_list {
    ($self:ident, $iter:ident, $($amp:tt)+) => {{
        let mut out = Vec::new();
        for (k, b) in $self.conv.$iter().enumerate() {
            out.push((format!("conv{k}.weight"), Role::Weight, $($amp)+ b.weight));
            out.push((format!("conv{k}.bias"), Role::Bias, $($amp)+ b.bias));
            out.push((format!("conv{k}.bn_gamma"), Role::Weight, $($amp)+ b.gamma));
            out.push((format!("conv{k}.bn_beta"), Role::Bias, $($amp)+ b.beta));
            out.push((format!("conv{k}.bn_running_mean"), Role::Running, $($amp)+ b.running_mean));
            out.push((format!("conv{k}.bn_running_var"), Role::Running, $($amp)+ b.running_var));
        }
        out.push(("feat_bn.gamma".to_string(), Role::Weight, $($amp)+ $self.feat_gamma));
        out.push(("feat_bn.beta".to_string(), Role::Bias, $($amp)+ $self.feat_beta));
        out.push(("feat_bn.running_mean".to_string(), Role::Running, $($amp)+ $self.feat_running_mean));
        out.push(("feat_bn.running_var".to_string(), Role::Running, $($amp)+ $self.feat_running_var));
        for (dir, l) in [("lstm_fwd", $($amp)+ $self.lstm_fwd), ("lstm_bwd", $($amp)+ $self.lstm_bwd)] {
            out.push((format!("{dir}.w_ih"), Role::Weight, $($amp)+ l.w_ih));
            out.push((format!("{dir}.w_hh"), Role::Weight, $($amp)+ l.w_hh));
            out.push((format!("{dir}.bias"), Role::Bias, $($amp)+ l.bias));
        }
        out.push(("attention.w_a".to_string(), Role::Weight, $($amp)+ $self.attention_w));
        out.push(("fc.weight".to_string(), Role::Weight, $($amp)+ $self.fc_w));
        out.push(("fc.bias".to_string(), Role::Bias, $($amp)+ $self.fc_b));
        out
    }};
}

impl ModelParams {
    /// Zero tensors with the shapes implied by `arch`.
    pub fn zeros(arch: &ArchConfig) -> Self {
        let mut conv = Vec::with_capacity(arch.channels.len());
        let mut c_in = 1;
        for &c in &arch.channels {
            conv.push(ConvBlockParams {
                weight: Tensor::zeros(&[c, c_in, 3, 3]),
                bias: Tensor::zeros(&[c]),
                gamma: Tensor::zeros(&[c]),
                beta: Tensor::zeros(&[c]),
                running_mean: Tensor::zeros(&[c]),
                running_var: Tensor::zeros(&[c]),
            });
            c_in = c;
        }
        let d = arch.feature_dim();
        let h = arch.hidden;
        let lstm = || LstmParams {
            w_ih: Tensor::zeros(&[4 * h, d]),
            w_hh: Tensor::zeros(&[4 * h, h]),
            bias: Tensor::zeros(&[4 * h]),
        };
        Self {
            arch: arch.clone(),
            conv,
            feat_gamma: Tensor::zeros(&[d]),
            feat_beta: Tensor::zeros(&[d]),
            feat_running_mean: Tensor::zeros(&[d]),
            feat_running_var: Tensor::zeros(&[d]),
            lstm_fwd: lstm(),
            lstm_bwd: lstm(),
            attention_w: Tensor::zeros(&[2 * h]),
            fc_w: Tensor::zeros(&[2 * h]),
            fc_b: Tensor::zeros(&[1]),
        }
    }

    /// He-normal convolutions, unit batch-norm scale, uniform +/- 1/sqrt(fan)
    /// recurrent and dense weights, forget-gate bias 1.
    pub fn init(arch: &ArchConfig, rng: &mut Stream) -> Result<Self> {
        arch.validate()?;
        let mut p = Self::zeros(arch);
        for b in &mut p.conv {
            let fan_in = (b.weight.shape[1] * 9) as f64;
            let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("finite std");
            b.weight.data.iter_mut().for_each(|w| *w = normal.sample(rng));
            b.gamma.data.fill(1.0);
            b.running_var.data.fill(1.0);
        }
        p.feat_gamma.data.fill(1.0);
        p.feat_running_var.data.fill(1.0);
        let h = arch.hidden;
        let bound = 1.0 / (h as f64).sqrt();
        for l in [&mut p.lstm_fwd, &mut p.lstm_bwd] {
            for w in l.w_ih.data.iter_mut().chain(l.w_hh.data.iter_mut()) {
                *w = rng.random_range(-bound..bound);
            }
            l.bias.data[h..2 * h].fill(1.0);
        }
        let bound = 1.0 / ((2 * h) as f64).sqrt();
        for w in p.attention_w.data.iter_mut().chain(p.fc_w.data.iter_mut()) {
            *w = rng.random_range(-bound..bound);
        }
        Ok(p)
    }

    /// Every tensor in checkpoint order.
    pub fn tensors(&self) -> Vec<(String, Role, &Tensor)> {
        tensor_list!(self, iter, &)
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, Role, &mut Tensor)> {
        tensor_list!(self, iter_mut, &mut)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.arch)
    }

    /// Sum of squares over L2-regularised tensors.
    pub fn weight_norm_sq(&self) -> f64 {
        self.tensors()
            .into_iter()
            .filter(|(_, role, _)| *role == Role::Weight)
            .map(|(_, _, t)| t.sum_sq())
            .sum()
    }

    pub fn n_trainable(&self) -> usize {
        self.tensors()
            .into_iter()
            .filter(|(_, role, _)| *role != Role::Running)
            .map(|(_, _, t)| t.len())
            .sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .into_iter()
            .all(|(_, _, t)| t.data.iter().all(|v| v.is_finite()))
    }

    /// `self += scale * other` over trainable tensors.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        let src = other.tensors();
        for ((_, role, dst), (_, _, s)) in self.tensors_mut().into_iter().zip(src) {
            if role != Role::Running {
                dst.data.iter_mut().zip(&s.data).for_each(|(d, v)| *d += scale * v);
            }
        }
    }
}

/// First and second moments per trainable tensor, in `tensors()` order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let shapes: Vec<usize> = params
            .tensors()
            .into_iter()
            .filter(|(_, role, _)| *role != Role::Running)
            .map(|(_, _, t)| t.len())
            .collect();
        Self {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update of every trainable tensor.
pub fn adam_step(params: &mut ModelParams, grads: &ModelParams, state: &mut AdamState, config: &TrainConfig) -> Result<()> {
    if params.arch != grads.arch {
        return Err(Error::domain("gradient shapes do not match parameters"));
    }
    state.step += 1;
    let (b1, b2) = (config.adam_beta1, config.adam_beta2);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    let lr = config.learning_rate;
    let eps = config.adam_epsilon;
    let grads = grads.tensors();
    let mut slot = 0;
    for ((_, role, p), (_, _, g)) in params.tensors_mut().into_iter().zip(grads) {
        if role == Role::Running {
            continue;
        }
        let m = &mut state.m[slot];
        let v = &mut state.v[slot];
        for i in 0..p.data.len() {
            let gi = g.data[i];
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p.data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        slot += 1;
    }
    Ok(())
}
