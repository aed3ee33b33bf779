use bline_core::geometry::FrustumGeometry;
use bline_core::harness::{preprocess, InputDims};
use bline_core::nn::layers::{attention, softmax};
use bline_core::nn::train::{temporal_localize, ThresholdRule};
use bline_core::nn::{
    checkpoint, forward, loss_and_gradients, predict, train, ArchConfig, Mode, ModelParams, Precision, Role, TrainConfig,
};
use bline_core::rng;
use bline_core::synthgen::{generate_clip, PhantomConfig, Representation, VideoClip};
use proptest::prelude::*;
use rand::Rng;

fn tiny_arch(h: usize, w: usize) -> ArchConfig {
    ArchConfig {
        channels: vec![2, 3],
        hidden: 3,
        ..ArchConfig::for_input(h, w)
    }
}

fn noise_clip(h: usize, w: usize, t: usize, seed: u64) -> VideoClip {
    let mut r = rng::stream(seed);
    let frames = (0..t).map(|_| (0..h * w).map(|_| r.random::<f32>()).collect()).collect();
    VideoClip::new(Representation::Polar, FrustumGeometry::default_for(h, w), h, w, frames).unwrap()
}

proptest! {
    #[test]
    fn attention_is_a_distribution(t in 1usize..12, seed in any::<u64>()) {
        let mut r = rng::stream(seed);
        let h: Vec<f64> = (0..t * 4).map(|_| r.random::<f64>() * 6.0 - 3.0).collect();
        let w: Vec<f64> = (0..4).map(|_| r.random::<f64>() * 2.0 - 1.0).collect();
        let (_, a) = attention(&h, t, &w);
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        prop_assert!(a.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn softmax_shift_is_bit_exact(e in prop::collection::vec(-(1i32 << 22)..(1i32 << 22), 1..10), c in -100i32..100) {
        // dyadic scores so that e + c is exact
        let e: Vec<f64> = e.iter().map(|&k| f64::from(k) / f64::from(1 << 20)).collect();
        let shifted: Vec<f64> = e.iter().map(|v| v + f64::from(c)).collect();
        prop_assert_eq!(softmax(&e), softmax(&shifted));
    }

    #[test]
    fn attention_permutes_with_rows(t in 2usize..8, seed in any::<u64>()) {
        let mut r = rng::stream(seed);
        let h: Vec<f64> = (0..t * 3).map(|_| r.random::<f64>() - 0.5).collect();
        let w: Vec<f64> = (0..3).map(|_| r.random::<f64>() - 0.5).collect();
        let perm: Vec<usize> = (0..t).rev().collect();
        let hp: Vec<f64> = perm.iter().flat_map(|&i| h[i * 3..(i + 1) * 3].to_vec()).collect();
        let (e, a) = attention(&h, t, &w);
        let (ep, ap) = attention(&hp, t, &w);
        for (k, &i) in perm.iter().enumerate() {
            prop_assert_eq!(ep[k], e[i]);
            prop_assert!((ap[k] - a[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn localization_permutes_with_weights(raw in prop::collection::vec(0.01..1.0f64, 2..10)) {
        let s: f64 = raw.iter().sum();
        let a: Vec<f64> = raw.iter().map(|v| v / s).collect();
        let perm: Vec<usize> = (0..a.len()).rev().collect();
        let ap: Vec<f64> = perm.iter().map(|&i| a[i]).collect();
        let sel = temporal_localize(&a, ThresholdRule::AboveUniform);
        let selp = temporal_localize(&ap, ThresholdRule::AboveUniform);
        let mapped: std::collections::BTreeSet<usize> = selp.iter().map(|&k| perm[k]).collect();
        prop_assert_eq!(sel, mapped);
    }

    #[test]
    fn l2_grows_with_any_weight_magnitude(k in 0usize..50, scale in 1.0..3.0f64) {
        let p = ModelParams::init(&tiny_arch(8, 8), &mut rng::stream(1)).unwrap();
        let before = p.weight_norm_sq();
        let mut q = p.clone();
        let weights: Vec<_> = q.tensors_mut().into_iter().filter(|(_, role, _)| *role == Role::Weight).collect();
        let total: usize = weights.iter().map(|(_, _, t)| t.data.len()).sum();
        let mut idx = k % total;
        for (_, _, t) in weights {
            if idx < t.data.len() {
                t.data[idx] *= scale;
                break;
            }
            idx -= t.data.len();
        }
        prop_assert!(q.weight_norm_sq() >= before);
    }
}

#[test]
fn uniform_rows_give_uniform_attention() {
    let h = [0.3, -0.2, 0.3, -0.2, 0.3, -0.2];
    let (_, a) = attention(&h, 3, &[1.5, 0.7]);
    assert!(a.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
}

#[test]
fn eval_mode_ignores_dropout() {
    let p = ModelParams::init(&tiny_arch(8, 8), &mut rng::stream(2)).unwrap();
    let clip = noise_clip(8, 8, 5, 3);
    let a = forward(&p, &clip, Mode::Eval, 0.0, &mut rng::stream(4)).unwrap();
    let b = forward(&p, &clip, Mode::Eval, 0.5, &mut rng::stream(5)).unwrap();
    assert_eq!(a, b);
    assert_eq!(predict(&p, &clip).unwrap().attention, a.a);
}

#[test]
fn single_precision_tracks_double() {
    let arch = tiny_arch(16, 16);
    let p64 = ModelParams::init(&arch, &mut rng::stream(6)).unwrap();
    let mut p32 = p64.clone();
    p32.arch.precision = Precision::F32;
    let clips: Vec<VideoClip> = (0..3).map(|i| noise_clip(16, 16, 4, 10 + i)).collect();
    let batch: Vec<(&VideoClip, bool)> = clips.iter().zip([true, false, true]).collect();
    let cfg = TrainConfig {
        dropout_rate: 0.0,
        ..TrainConfig::default()
    };
    let a = loss_and_gradients(&p64, &batch, &cfg, &mut rng::stream(7)).unwrap();
    let b = loss_and_gradients(&p32, &batch, &cfg, &mut rng::stream(7)).unwrap();
    assert!((a.loss - b.loss).abs() < 1e-5, "{} vs {}", a.loss, b.loss);
    for ((name, _, ga), (_, _, gb)) in a.grads.tensors().into_iter().zip(b.grads.tensors()) {
        // conv biases sit in front of batch norm, so their gradient is rounding noise
        let scale = ga.data.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let err = ga.data.iter().zip(&gb.data).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-3 * scale + 1e-8, "{name}: {err} vs {scale}");
    }
}

/// Conv kernels symmetric under a flip of the angle axis make the whole
/// network invariant to mirroring a polar clip.
#[test]
fn angle_symmetric_weights_ignore_the_flip() {
    let arch = ArchConfig::for_input(16, 16);
    let mut p = ModelParams::init(&arch, &mut rng::stream(8)).unwrap();
    for b in &mut p.conv {
        let w = &mut b.weight.data;
        for k in w.chunks_mut(9) {
            for kx in 0..3 {
                let m = (k[kx] + k[6 + kx]) / 2.0;
                k[kx] = m;
                k[6 + kx] = m;
            }
        }
    }
    let cfg = PhantomConfig {
        frames_per_clip: 6,
        ..PhantomConfig::default()
    };
    for seed in 0..4 {
        let (native, _) = generate_clip(&cfg, seed).unwrap();
        let clip = preprocess(&native, Representation::Polar, InputDims::new(16, 16)).unwrap();
        let flipped = clip.flipped().unwrap();
        assert_ne!(clip, flipped);
        let (a, b) = (predict(&p, &clip).unwrap(), predict(&p, &flipped).unwrap());
        assert!((a.prob - b.prob).abs() < 1e-5, "{} vs {}", a.prob, b.prob);
        assert_eq!(a.is_bline, b.is_bline);
    }
}

#[test]
fn training_is_deterministic_and_checkpoints_round_trip() {
    let arch = tiny_arch(8, 8);
    let clips: Vec<VideoClip> = (0..6).map(|i| noise_clip(8, 8, 4, 20 + i)).collect();
    let labels = [true, false, true, false, true, false];
    let cfg = TrainConfig {
        learning_rate: 1e-2,
        batch_size: 4,
        epochs: 2,
        seed: 11,
        ..TrainConfig::default()
    };
    let a = train(&clips, &labels, &arch, &cfg).unwrap();
    let b = train(&clips, &labels, &arch, &cfg).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.log, b.log);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    checkpoint::save(&path, &a.params, &cfg, 2, Default::default()).unwrap();
    let (header, loaded) = checkpoint::load(&path).unwrap();
    assert_eq!(header.epoch, 2);
    assert_eq!(loaded, a.params);
    assert_eq!(predict(&loaded, &clips[0]).unwrap(), predict(&a.params, &clips[0]).unwrap());
}
