//! Batched forward and backward passes of the full network:
//!
//! ```text
//! frame -> [conv3x3 -> BN -> ReLU -> maxpool] x 4 -> global average pool
//!       -> BN over (batch x time) -> dropout -> BiLSTM -> dropout
//!       -> attention softmax -> (1/T) sum_t a_t h_t -> dense -> sigmoid
//! ```
//!
//! Batch norm couples all frames of all clips in a batch, so the CNN runs
//! layer by layer over the stacked frames.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::layers::{self, ConvShape, LstmCache, Scalar};
use super::params::{LstmParams, ModelParams, Role, Tensor};
use super::{ArchConfig, Precision, TrainConfig};
use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::synthgen::VideoClip;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Per-clip values of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// `T x D` global-average-pooled CNN features.
    pub frame_features: Vec<f64>,
    /// `T x 2H` BiLSTM outputs, forward half first.
    pub h: Vec<f64>,
    pub e: Vec<f64>,
    pub a: Vec<f64>,
    pub context: Vec<f64>,
    pub logit: f64,
    pub prob: f64,
}

struct BlockCache<T> {
    input: Vec<T>,
    /// conv output before batch norm
    z: Vec<T>,
    bn: Vec<layers::BnPlane>,
    pool_idx: Vec<u8>,
}

struct ClipCache {
    offset: usize,
    t_len: usize,
    fwd: LstmCache,
    bwd: LstmCache,
    /// dropout scale per `h` entry (0 or 1/(1-p)), empty when inactive
    h_mask: Vec<f64>,
    /// `h` after dropout, the input to attention
    h_used: Vec<f64>,
}

enum CnnCache {
    F64(Vec<BlockCache<f64>>),
    F32(Vec<BlockCache<f32>>),
}

struct Cache {
    blocks: CnnCache,
    feat_xhat: Vec<f64>,
    feat_inv_std: Vec<f64>,
    feat_mask: Vec<f64>,
    lstm_in: Vec<f64>,
    clips: Vec<ClipCache>,
}

/// Result of a batched forward pass.
pub struct BatchForward {
    pub traces: Vec<ForwardTrace>,
    /// Train mode only: `(mean, biased variance, count)` for every batch-norm
    /// layer, conv blocks first, then the feature layer.
    pub batch_stats: BatchStats,
    cache: Option<Cache>,
}

fn check_clip(arch: &ArchConfig, clip: &VideoClip) -> Result<()> {
    if clip.height != arch.input_h || clip.width != arch.input_w {
        return Err(Error::domain(format!(
            "clip is {}x{}, model expects {}x{}",
            clip.height, clip.width, arch.input_h, arch.input_w
        )));
    }
    if clip.n_frames() == 0 {
        return Err(Error::domain("clip has no frames"));
    }
    Ok(())
}

fn dropout_mask(len: usize, rate: f64, rng: &mut Stream) -> Vec<f64> {
    let keep = 1.0 - rate;
    (0..len)
        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect()
}

type BatchStats = Vec<(Vec<f64>, Vec<f64>, usize)>;

/// Conv blocks and global average pooling over all `n` frames of the batch.
fn cnn_forward<T: Scalar>(
    params: &ModelParams,
    clips: &[&VideoClip],
    n: usize,
    train: bool,
    keep_cache: bool,
) -> (Vec<f64>, BatchStats, Vec<BlockCache<T>>) {
    let arch = &params.arch;
    let mut x: Vec<T> = Vec::with_capacity(n * arch.input_h * arch.input_w);
    for c in clips {
        for f in &c.frames {
            x.extend(f.iter().map(|&v| T::of(f64::from(v))));
        }
    }
    let mut blocks = Vec::new();
    let mut batch_stats = Vec::new();
    for (b, dims) in params.conv.iter().zip(arch.blocks()) {
        let shape = ConvShape {
            n,
            c_in: dims.c_in,
            c_out: dims.c_out,
            h: dims.h,
            w: dims.w,
        };
        let s = dims.h * dims.w;
        let z = layers::conv_forward(&x, shape, &b.weight.data, &b.bias.data);
        let (mean, var) = if train {
            let st = layers::channel_stats(&z, n, dims.c_out, s);
            batch_stats.push((st.0.clone(), st.1.clone(), n * s));
            st
        } else {
            (b.running_mean.data.clone(), b.running_var.data.clone())
        };
        let bn: Vec<layers::BnPlane> = (0..dims.c_out)
            .map(|ci| layers::BnPlane {
                mean: mean[ci],
                inv_std: 1.0 / (var[ci] + arch.bn_epsilon).sqrt(),
                gamma: b.gamma.data[ci],
                beta: b.beta.data[ci],
            })
            .collect();
        let (pooled, pool_idx) =
            layers::bn_relu_pool_forward(&z, dims.c_out, dims.h, dims.w, &bn, dims.pool_h, dims.pool_w);
        let input = std::mem::replace(&mut x, pooled);
        if keep_cache {
            blocks.push(BlockCache {
                input,
                z,
                bn,
                pool_idx,
            });
        }
    }
    let last = arch.blocks().last().copied().expect("at least one block");
    let area = last.out_h() * last.out_w();
    let feats = x
        .chunks(area)
        .map(|p| p.iter().map(|v| v.get()).sum::<f64>() / area as f64)
        .collect();
    (feats, batch_stats, blocks)
}

/// Backward through global average pooling and the conv blocks.
fn cnn_backward<T: Scalar>(params: &ModelParams, blocks: &[BlockCache<T>], dfeat: &[f64], n: usize, grads: &mut ModelParams) {
    let dims_all = params.arch.blocks();
    let last = *dims_all.last().expect("at least one block");
    let area = last.out_h() * last.out_w();
    let mut dp: Vec<T> = dfeat
        .iter()
        .flat_map(|&g| std::iter::repeat(T::of(g / area as f64)).take(area))
        .collect();
    for (k, dims) in dims_all.iter().enumerate().rev() {
        let bc = &blocks[k];
        let (dy, dg, dbeta) =
            layers::bn_relu_pool_backward(&dp, &bc.pool_idx, &bc.z, dims.c_out, dims.h, dims.w, &bc.bn, dims.pool_h, dims.pool_w);
        let shape = ConvShape {
            n,
            c_in: dims.c_in,
            c_out: dims.c_out,
            h: dims.h,
            w: dims.w,
        };
        let (dw, dbias, dx) = layers::conv_backward(&bc.input, &dy, shape, &params.conv[k].weight.data, k > 0);
        let gb = &mut grads.conv[k];
        gb.weight.data = dw;
        gb.bias.data = dbias;
        gb.gamma.data = dg;
        gb.beta.data = dbeta;
        if let Some(dx) = dx {
            dp = dx;
        }
    }
}

/// Forward pass over a batch. Dropout is drawn from `rng` in train mode only
/// and only when `dropout > 0`.
pub fn forward_batch(
    params: &ModelParams,
    clips: &[&VideoClip],
    mode: Mode,
    dropout: f64,
    rng: &mut Stream,
    keep_cache: bool,
) -> Result<BatchForward> {
    let arch = &params.arch;
    if clips.is_empty() {
        return Err(Error::domain("empty batch"));
    }
    for c in clips {
        check_clip(arch, c)?;
    }
    let train = mode == Mode::Train;
    let eps = arch.bn_epsilon;
    let n: usize = clips.iter().map(|c| c.n_frames()).sum();

    let (feats, mut batch_stats, blocks) = match arch.precision {
        Precision::F64 => {
            let (f, st, b) = cnn_forward::<f64>(params, clips, n, train, keep_cache);
            (f, st, CnnCache::F64(b))
        }
        Precision::F32 => {
            let (f, st, b) = cnn_forward::<f32>(params, clips, n, train, keep_cache);
            (f, st, CnnCache::F32(b))
        }
    };
    let d = arch.feature_dim();

    let mut lstm_in = feats.clone();
    let (mean, var) = if train {
        let st = layers::channel_stats(&lstm_in, n, d, 1);
        batch_stats.push((st.0.clone(), st.1.clone(), n));
        st
    } else {
        (params.feat_running_mean.data.clone(), params.feat_running_var.data.clone())
    };
    let feat_inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let feat_xhat = layers::bn_apply(
        &mut lstm_in,
        d,
        1,
        &mean,
        &feat_inv_std,
        &params.feat_gamma.data,
        &params.feat_beta.data,
    );
    let use_dropout = train && dropout > 0.0;
    let feat_mask = if use_dropout {
        let m = dropout_mask(lstm_in.len(), dropout, rng);
        lstm_in.iter_mut().zip(&m).for_each(|(v, k)| *v *= k);
        m
    } else {
        Vec::new()
    };

    let hd = arch.hidden;
    let h2 = 2 * hd;
    let offsets: Vec<(usize, usize)> = clips
        .iter()
        .scan(0, |off, c| {
            let o = *off;
            *off += c.n_frames();
            Some((o, c.n_frames()))
        })
        .collect();
    let h_masks: Vec<Vec<f64>> = offsets
        .iter()
        .map(|&(_, t)| {
            if use_dropout {
                dropout_mask(t * h2, dropout, rng)
            } else {
                Vec::new()
            }
        })
        .collect();

    let per_clip: Vec<(ForwardTrace, ClipCache)> = offsets
        .par_iter()
        .zip(h_masks.into_par_iter())
        .map(|(&(off, t_len), h_mask)| {
            let xin = &lstm_in[off * d..(off + t_len) * d];
            let fwd = layers::lstm_forward(&params.lstm_fwd, xin, t_len, false);
            let bwd = layers::lstm_forward(&params.lstm_bwd, xin, t_len, true);
            let mut h = vec![0.0; t_len * h2];
            for t in 0..t_len {
                h[t * h2..t * h2 + hd].copy_from_slice(&fwd.h[t * hd..(t + 1) * hd]);
                h[t * h2 + hd..(t + 1) * h2].copy_from_slice(&bwd.h[t * hd..(t + 1) * hd]);
            }
            let mut h_used = h.clone();
            if !h_mask.is_empty() {
                h_used.iter_mut().zip(&h_mask).for_each(|(v, k)| *v *= k);
            }
            let (e, a) = layers::attention(&h_used, t_len, &params.attention_w.data);
            let mut context = vec![0.0; h2];
            for t in 0..t_len {
                for j in 0..h2 {
                    context[j] += a[t] * h_used[t * h2 + j];
                }
            }
            context.iter_mut().for_each(|v| *v /= t_len as f64);
            let logit = params.fc_b.data[0]
                + context.iter().zip(&params.fc_w.data).map(|(a, b)| a * b).sum::<f64>();
            let trace = ForwardTrace {
                frame_features: feats[off * d..(off + t_len) * d].to_vec(),
                h,
                e,
                a,
                context,
                logit,
                prob: sigmoid(logit),
            };
            let cc = ClipCache {
                offset: off,
                t_len,
                fwd,
                bwd,
                h_mask,
                h_used,
            };
            (trace, cc)
        })
        .collect();
    let (traces, clip_caches): (Vec<_>, Vec<_>) = per_clip.into_iter().unzip();

    let cache = keep_cache.then(|| Cache {
        blocks,
        feat_xhat,
        feat_inv_std,
        feat_mask,
        lstm_in,
        clips: clip_caches,
    });
    Ok(BatchForward {
        traces,
        batch_stats,
        cache,
    })
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of a logit, computed without overflow.
pub fn bce_with_logit(logit: f64, label: bool) -> f64 {
    let y = if label { 1.0 } else { 0.0 };
    logit.max(0.0) - logit * y + (-logit.abs()).exp().ln_1p()
}

/// Backward pass given `dlogits[b] = dL/dlogit_b`. Requires a train-mode
/// forward with cache.
pub fn backward_batch(params: &ModelParams, fwd: &BatchForward, dlogits: &[f64]) -> Result<ModelParams> {
    let cache = fwd
        .cache
        .as_ref()
        .ok_or_else(|| Error::domain("backward pass needs a cached forward pass"))?;
    let arch = &params.arch;
    let mut grads = params.zeros_like();
    let hd = arch.hidden;
    let h2 = 2 * hd;
    let d = arch.feature_dim();
    let n: usize = cache.clips.iter().map(|c| c.t_len).sum();

    // classifier, attention and recurrence, clip by clip
    let per_clip: Vec<(Vec<f64>, Vec<f64>, f64, Vec<f64>, LstmParams, LstmParams)> = cache
        .clips
        .par_iter()
        .zip(&fwd.traces)
        .zip(dlogits)
        .map(|((cc, tr), &dl)| {
            let t_len = cc.t_len;
            let tf = t_len as f64;
            let dfc_w: Vec<f64> = tr.context.iter().map(|c| dl * c).collect();
            let dcontext: Vec<f64> = params.fc_w.data.iter().map(|w| dl * w).collect();
            let mut dh = vec![0.0; t_len * h2];
            let mut da = vec![0.0; t_len];
            for t in 0..t_len {
                let row = &cc.h_used[t * h2..(t + 1) * h2];
                da[t] = row.iter().zip(&dcontext).map(|(a, b)| a * b).sum::<f64>() / tf;
                for j in 0..h2 {
                    dh[t * h2 + j] = tr.a[t] * dcontext[j] / tf;
                }
            }
            let dot: f64 = tr.a.iter().zip(&da).map(|(a, b)| a * b).sum();
            let mut dw_a = vec![0.0; h2];
            for t in 0..t_len {
                let de = tr.a[t] * (da[t] - dot);
                let row = &cc.h_used[t * h2..(t + 1) * h2];
                for j in 0..h2 {
                    dw_a[j] += de * row[j];
                    dh[t * h2 + j] += de * params.attention_w.data[j];
                }
            }
            if !cc.h_mask.is_empty() {
                dh.iter_mut().zip(&cc.h_mask).for_each(|(g, k)| *g *= k);
            }
            let mut dh_f = vec![0.0; t_len * hd];
            let mut dh_b = vec![0.0; t_len * hd];
            for t in 0..t_len {
                dh_f[t * hd..(t + 1) * hd].copy_from_slice(&dh[t * h2..t * h2 + hd]);
                dh_b[t * hd..(t + 1) * hd].copy_from_slice(&dh[t * h2 + hd..(t + 1) * h2]);
            }
            let xin = &cache.lstm_in[cc.offset * d..(cc.offset + t_len) * d];
            let mut gf = zero_lstm(&params.lstm_fwd);
            let mut gb = zero_lstm(&params.lstm_bwd);
            let mut dx = vec![0.0; t_len * d];
            layers::lstm_backward(&params.lstm_fwd, xin, &cc.fwd, &dh_f, t_len, false, &mut gf, &mut dx);
            layers::lstm_backward(&params.lstm_bwd, xin, &cc.bwd, &dh_b, t_len, true, &mut gb, &mut dx);
            (dfc_w, dw_a, dl, dx, gf, gb)
        })
        .collect();

    let mut dfeat = vec![0.0; n * d];
    for (cc, (dfc_w, dw_a, dl, dx, gf, gb)) in cache.clips.iter().zip(per_clip) {
        add(&mut grads.fc_w.data, &dfc_w);
        grads.fc_b.data[0] += dl;
        add(&mut grads.attention_w.data, &dw_a);
        add(&mut grads.lstm_fwd.w_ih.data, &gf.w_ih.data);
        add(&mut grads.lstm_fwd.w_hh.data, &gf.w_hh.data);
        add(&mut grads.lstm_fwd.bias.data, &gf.bias.data);
        add(&mut grads.lstm_bwd.w_ih.data, &gb.w_ih.data);
        add(&mut grads.lstm_bwd.w_hh.data, &gb.w_hh.data);
        add(&mut grads.lstm_bwd.bias.data, &gb.bias.data);
        dfeat[cc.offset * d..(cc.offset + cc.t_len) * d].copy_from_slice(&dx);
    }

    // feature dropout and batch norm
    if !cache.feat_mask.is_empty() {
        dfeat.iter_mut().zip(&cache.feat_mask).for_each(|(g, k)| *g *= k);
    }
    let (dg, db) = layers::bn_backward(&mut dfeat, &cache.feat_xhat, n, d, 1, &params.feat_gamma.data, &cache.feat_inv_std);
    grads.feat_gamma.data = dg;
    grads.feat_beta.data = db;

    match &cache.blocks {
        CnnCache::F64(b) => cnn_backward(params, b, &dfeat, n, &mut grads),
        CnnCache::F32(b) => cnn_backward(params, b, &dfeat, n, &mut grads),
    }
    Ok(grads)
}

fn zero_lstm(p: &LstmParams) -> LstmParams {
    LstmParams {
        w_ih: Tensor::zeros(&p.w_ih.shape),
        w_hh: Tensor::zeros(&p.w_hh.shape),
        bias: Tensor::zeros(&p.bias.shape),
    }
}

fn add(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
}

/// Output of [`loss_and_gradients`].
pub struct LossAndGrads {
    pub loss: f64,
    pub grads: ModelParams,
    pub probs: Vec<f64>,
    pub batch_stats: Vec<(Vec<f64>, Vec<f64>, usize)>,
}

/// Mean binary cross-entropy over the batch plus `l2 * ||weights||^2`, and
/// its exact gradient. Runs the network in train mode.
pub fn loss_and_gradients(
    params: &ModelParams,
    batch: &[(&VideoClip, bool)],
    config: &TrainConfig,
    rng: &mut Stream,
) -> Result<LossAndGrads> {
    if batch.is_empty() {
        return Err(Error::domain("empty batch"));
    }
    let clips: Vec<&VideoClip> = batch.iter().map(|(c, _)| *c).collect();
    let fwd = forward_batch(params, &clips, Mode::Train, config.dropout_rate, rng, true)?;
    let bsz = batch.len() as f64;
    let mut loss = 0.0;
    let mut dlogits = Vec::with_capacity(batch.len());
    for (tr, &(_, label)) in fwd.traces.iter().zip(batch) {
        loss += bce_with_logit(tr.logit, label) / bsz;
        dlogits.push((tr.prob - if label { 1.0 } else { 0.0 }) / bsz);
    }
    loss += config.l2_coefficient * params.weight_norm_sq();
    if !loss.is_finite() {
        return Err(Error::Training(format!("non-finite loss {loss}")));
    }
    let mut grads = backward_batch(params, &fwd, &dlogits)?;
    let l2 = config.l2_coefficient;
    if l2 != 0.0 {
        let src = params.tensors();
        for ((_, role, g), (_, _, p)) in grads.tensors_mut().into_iter().zip(src) {
            if role == Role::Weight {
                g.data.iter_mut().zip(&p.data).for_each(|(g, w)| *g += 2.0 * l2 * w);
            }
        }
    }
    Ok(LossAndGrads {
        loss,
        grads,
        probs: fwd.traces.iter().map(|t| t.prob).collect(),
        batch_stats: fwd.batch_stats,
    })
}

/// Folds train-mode batch statistics into the running estimates:
/// `running = (1 - m) * running + m * batch`, with unbiased batch variance.
pub fn update_running_stats(params: &mut ModelParams, stats: &[(Vec<f64>, Vec<f64>, usize)]) {
    let m = params.arch.bn_momentum;
    let mut targets: Vec<(&mut Vec<f64>, &mut Vec<f64>)> = params
        .conv
        .iter_mut()
        .map(|b| (&mut b.running_mean.data, &mut b.running_var.data))
        .collect();
    targets.push((&mut params.feat_running_mean.data, &mut params.feat_running_var.data));
    for ((rm, rv), (mean, var, count)) in targets.into_iter().zip(stats) {
        let unbias = if *count > 1 {
            *count as f64 / (*count - 1) as f64
        } else {
            1.0
        };
        for i in 0..rm.len() {
            rm[i] = (1.0 - m) * rm[i] + m * mean[i];
            rv[i] = (1.0 - m) * rv[i] + m * var[i] * unbias;
        }
    }
}

/// Replaces the running statistics by the count-weighted average of the
/// train-mode statistics of `batches`, computed with the current weights.
pub fn recalibrate_batch_norm(params: &mut ModelParams, batches: &[Vec<&VideoClip>]) -> Result<()> {
    let mut sums: Option<BatchStats> = None;
    let mut total = 0usize;
    let mut rng = crate::rng::stream(0);
    for batch in batches.iter().filter(|b| !b.is_empty()) {
        let fwd = forward_batch(params, batch, Mode::Train, 0.0, &mut rng, false)?;
        let n = batch.len();
        total += n;
        let acc = sums.get_or_insert_with(|| {
            fwd.batch_stats.iter().map(|(m, v, c)| (vec![0.0; m.len()], vec![0.0; v.len()], *c)).collect()
        });
        for ((am, av, _), (m, v, c)) in acc.iter_mut().zip(&fwd.batch_stats) {
            let unbias = if *c > 1 { *c as f64 / (*c - 1) as f64 } else { 1.0 };
            am.iter_mut().zip(m).for_each(|(a, x)| *a += n as f64 * x);
            av.iter_mut().zip(v).for_each(|(a, x)| *a += n as f64 * x * unbias);
        }
    }
    let Some(sums) = sums else {
        return Err(Error::domain("no clips to recalibrate batch norm"));
    };
    let mut targets: Vec<(&mut Vec<f64>, &mut Vec<f64>)> = params
        .conv
        .iter_mut()
        .map(|b| (&mut b.running_mean.data, &mut b.running_var.data))
        .collect();
    targets.push((&mut params.feat_running_mean.data, &mut params.feat_running_var.data));
    for ((rm, rv), (m, v, _)) in targets.into_iter().zip(sums) {
        rm.iter_mut().zip(m).for_each(|(r, x)| *r = x / total as f64);
        rv.iter_mut().zip(v).for_each(|(r, x)| *r = x / total as f64);
    }
    Ok(())
}

/// Single-clip forward pass.
pub fn forward(params: &ModelParams, clip: &VideoClip, mode: Mode, dropout: f64, rng: &mut Stream) -> Result<ForwardTrace> {
    let mut out = forward_batch(params, &[clip], mode, dropout, rng, false)?;
    Ok(out.traces.remove(0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub prob: f64,
    /// `prob >= 0.5`; an exact tie counts as a B-line.
    pub is_bline: bool,
    pub attention: Vec<f64>,
}

pub fn classify(prob: f64) -> bool {
    prob >= 0.5
}

/// Eval-mode prediction with attention weights.
pub fn predict(params: &ModelParams, clip: &VideoClip) -> Result<Prediction> {
    // eval mode draws nothing from the stream
    let mut rng = crate::rng::stream(0);
    let tr = forward(params, clip, Mode::Eval, 0.0, &mut rng)?;
    Ok(Prediction {
        prob: tr.prob,
        is_bline: classify(tr.prob),
        attention: tr.a,
    })
}

/// Eval-mode predictions for many clips, batched to bound memory.
pub fn predict_many(params: &ModelParams, clips: &[&VideoClip], batch: usize) -> Result<Vec<Prediction>> {
    let mut rng = crate::rng::stream(0);
    let mut out = Vec::with_capacity(clips.len());
    for chunk in clips.chunks(batch.max(1)) {
        let fwd = forward_batch(params, chunk, Mode::Eval, 0.0, &mut rng, false)?;
        out.extend(fwd.traces.into_iter().map(|tr| Prediction {
            prob: tr.prob,
            is_bline: classify(tr.prob),
            attention: tr.a,
        }));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::FrustumGeometry;
    use crate::rng;
    use crate::synthgen::Representation;

    fn tiny_arch() -> ArchConfig {
        ArchConfig {
            input_h: 8,
            input_w: 8,
            channels: vec![2, 3],
            hidden: 3,
            ..ArchConfig::default()
        }
    }

    fn random_clip(h: usize, w: usize, t: usize, seed: u64) -> VideoClip {
        let mut r = rng::stream(seed);
        let frames = (0..t).map(|_| (0..h * w).map(|_| r.random::<f32>()).collect()).collect();
        VideoClip::new(Representation::Cartesian, FrustumGeometry::default_for(h, w), h, w, frames).unwrap()
    }

    fn loss_at(p: &ModelParams, batch: &[(&VideoClip, bool)], cfg: &TrainConfig) -> f64 {
        loss_and_gradients(p, batch, cfg, &mut rng::stream(99)).unwrap().loss
    }

    #[test]
    fn gradients_match_finite_differences() {
        let arch = tiny_arch();
        let mut params = ModelParams::init(&arch, &mut rng::stream(1)).unwrap();
        // perturb the batch-norm affine terms away from their trivial init
        for (_, _, t) in params.tensors_mut() {
            if t.shape.len() == 1 {
                let mut r = rng::stream(t.len() as u64);
                t.data.iter_mut().for_each(|v| *v += 0.3 * (r.random::<f64>() - 0.5));
            }
        }
        let clips = [random_clip(8, 8, 4, 10), random_clip(8, 8, 3, 11)];
        let batch = [(&clips[0], true), (&clips[1], false)];
        let cfg = TrainConfig {
            dropout_rate: 0.2,
            l2_coefficient: 1e-2,
            ..TrainConfig::default()
        };
        let analytic = loss_and_gradients(&params, &batch, &cfg, &mut rng::stream(99)).unwrap().grads;
        let step = 1e-5;
        let n_tensors = params.tensors().len();
        for ti in 0..n_tensors {
            let (name, role, len) = {
                let v = params.tensors();
                (v[ti].0.clone(), v[ti].1, v[ti].2.len())
            };
            if role == Role::Running {
                continue;
            }
            let mut numeric = vec![0.0; len];
            for k in 0..len {
                let orig = params.tensors()[ti].2.data[k];
                params.tensors_mut()[ti].2.data[k] = orig + step;
                let up = loss_at(&params, &batch, &cfg);
                params.tensors_mut()[ti].2.data[k] = orig - step;
                let down = loss_at(&params, &batch, &cfg);
                params.tensors_mut()[ti].2.data[k] = orig;
                numeric[k] = (up - down) / (2.0 * step);
            }
            let a = &analytic.tensors()[ti].2.data;
            let diff: f64 = a.iter().zip(&numeric).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nn: f64 = numeric.iter().map(|x| x * x).sum::<f64>().sqrt();
            let rel = diff / na.max(nn).max(1e-6);
            assert!(rel < 1e-4, "{name}: relative error {rel:e}");
        }
    }

    #[test]
    fn duplicated_batch_gives_same_loss_and_grads() {
        let arch = tiny_arch();
        let params = ModelParams::init(&arch, &mut rng::stream(2)).unwrap();
        let clips = [random_clip(8, 8, 3, 20), random_clip(8, 8, 3, 21)];
        let cfg = TrainConfig {
            dropout_rate: 0.0,
            ..TrainConfig::default()
        };
        let single = [(&clips[0], true), (&clips[1], false)];
        let double = [(&clips[0], true), (&clips[1], false), (&clips[0], true), (&clips[1], false)];
        let a = loss_and_gradients(&params, &single, &cfg, &mut rng::stream(0)).unwrap();
        let b = loss_and_gradients(&params, &double, &cfg, &mut rng::stream(0)).unwrap();
        assert!((a.loss - b.loss).abs() < 1e-12);
        for ((n, _, x), (_, _, y)) in a.grads.tensors().into_iter().zip(b.grads.tensors()) {
            for (u, v) in x.data.iter().zip(&y.data) {
                assert!((u - v).abs() < 1e-10 * (1.0 + u.abs()), "{n}");
            }
        }
    }

    #[test]
    fn trace_invariants_and_eval_determinism() {
        let arch = tiny_arch();
        let params = ModelParams::init(&arch, &mut rng::stream(3)).unwrap();
        let clip = random_clip(8, 8, 5, 30);
        let a = forward(&params, &clip, Mode::Eval, 0.2, &mut rng::stream(1)).unwrap();
        let b = forward(&params, &clip, Mode::Eval, 0.2, &mut rng::stream(2)).unwrap();
        assert_eq!(a, b, "eval mode ignores dropout");
        assert!((a.a.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(a.a.iter().all(|&v| v > 0.0));
        for j in 0..2 * arch.hidden {
            let c: f64 = (0..5).map(|t| a.a[t] * a.h[t * 2 * arch.hidden + j]).sum::<f64>() / 5.0;
            assert!((c - a.context[j]).abs() < 1e-12);
        }
        assert_eq!(predict(&params, &clip).unwrap().attention, a.a);
    }

    #[test]
    fn wrong_input_size_is_domain_error() {
        let params = ModelParams::init(&tiny_arch(), &mut rng::stream(0)).unwrap();
        let clip = random_clip(16, 16, 2, 0);
        assert!(matches!(predict(&params, &clip), Err(Error::Domain(_))));
    }

    #[test]
    fn tie_and_saturation() {
        assert!(classify(0.5));
        assert!(!classify(0.5 - 1e-12));
        assert!(bce_with_logit(800.0, true) < 1e-300);
        assert!((bce_with_logit(0.0, false) - std::f64::consts::LN_2).abs() < 1e-15);
    }
}
