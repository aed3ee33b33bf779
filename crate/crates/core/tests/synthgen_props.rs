use bline_core::geometry::FrustumGeometry;
use bline_core::harness::flip_augment;
use bline_core::rng::child_seed;
use bline_core::synthgen::{generate_clip, generate_dataset, ClipLabels, PhantomConfig, VideoClip};
use proptest::prelude::*;

fn small(speckle: f64) -> PhantomConfig {
    PhantomConfig {
        frames_per_clip: 8,
        native_h: 64,
        native_w: 64,
        geometry: FrustumGeometry::default_for(64, 64),
        pleural_depth: 15.0,
        speckle_variance: speckle,
        ..PhantomConfig::default()
    }
}

/// Mean intensity beyond the pleural depth inside and outside the angular
/// intervals.
fn inside_outside(clip: &VideoClip, t: usize, ivs: &[(f64, f64)], cfg: &PhantomConfig) -> (f64, f64) {
    let g = &clip.geometry;
    let (mut si, mut ni, mut so, mut no) = (0.0, 0, 0.0, 0);
    for y in 0..clip.height {
        for x in 0..clip.width {
            let (dx, dy) = (x as f64 - g.apex_x, y as f64 - g.apex_y);
            let (r, a) = ((dx * dx + dy * dy).sqrt(), dx.atan2(dy));
            if !g.contains_polar(r, a) || r <= cfg.pleural_depth + 2.0 {
                continue;
            }
            let v = f64::from(clip.frames[t][y * clip.width + x]);
            if ivs.iter().any(|&(lo, hi)| a >= lo && a <= hi) {
                si += v;
                ni += 1;
            } else {
                so += v;
                no += 1;
            }
        }
    }
    (si / ni.max(1) as f64, so / no.max(1) as f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn labels_are_consistent(seed in any::<u64>()) {
        let cfg = small(0.05);
        let (clip, labels) = generate_clip(&cfg, seed).unwrap();
        labels.validate(&clip.geometry).unwrap();
        prop_assert_eq!(labels.frame_mask.len(), clip.n_frames());
        prop_assert!(clip.frames.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
        if labels.is_bline() {
            prop_assert!(labels.bline_frames().len() >= cfg.visible_run());
        } else {
            prop_assert!(labels.bline_intervals.iter().all(Vec::is_empty));
        }
    }

    #[test]
    fn labelled_frames_are_brighter_inside_the_interval(seed in any::<u64>()) {
        let cfg = PhantomConfig { gain_jitter: 0.0, ..small(0.0) };
        let (clip, labels) = generate_clip(&cfg, seed).unwrap();
        let all: Vec<(f64, f64)> = labels.bline_intervals.iter().flatten().copied().collect();
        for t in 0..clip.n_frames() {
            if labels.frame_mask[t] {
                let (inside, outside) = inside_outside(&clip, t, &labels.bline_intervals[t], &cfg);
                prop_assert!(inside - outside >= cfg.bline_intensity / 4.0, "frame {}: {} vs {}", t, inside, outside);
            } else if labels.is_bline() {
                // the B-line's angular support is not brighter while it is off
                let (inside, outside) = inside_outside(&clip, t, &all, &cfg);
                prop_assert!(inside - outside < cfg.bline_intensity / 4.0, "frame {}: {} vs {}", t, inside, outside);
            }
        }
    }

    #[test]
    fn flip_is_an_involution(seed in any::<u64>()) {
        let (clip, labels) = generate_clip(&small(0.05), seed).unwrap();
        let (c1, l1) = flip_augment(&clip, &labels).unwrap();
        let (c2, l2) = flip_augment(&c1, &l1).unwrap();
        prop_assert_eq!(&c2, &clip);
        prop_assert_eq!(&l2, &labels);
        for (a, b) in labels.bline_intervals.iter().flatten().zip(l1.bline_intervals.iter().flatten()) {
            prop_assert_eq!((a.0 + a.1) / 2.0, -(b.0 + b.1) / 2.0);
        }
    }
}

#[test]
fn dataset_clip_i_uses_child_seed_i() {
    let cfg = small(0.05);
    let ds = generate_dataset(&cfg, 3, 99).unwrap();
    for (i, item) in ds.iter().enumerate() {
        assert_eq!(item, &generate_clip(&cfg, child_seed(99, i as u64)).unwrap());
    }
}

#[test]
fn class_proportion_converges() {
    let cfg = PhantomConfig {
        frames_per_clip: 4,
        native_h: 32,
        native_w: 32,
        geometry: FrustumGeometry::default_for(32, 32),
        pleural_depth: 8.0,
        bline_probability: 0.3,
        ..PhantomConfig::default()
    };
    let ds = generate_dataset(&cfg, 600, 5).unwrap();
    let frac = ds.iter().filter(|(_, l)| l.is_bline()).count() as f64 / 600.0;
    assert!((frac - 0.3).abs() < 0.06, "{frac}");
}

#[test]
fn flipped_interval_is_centred_at_minus_alpha() {
    let labels = ClipLabels {
        video_class: bline_core::synthgen::VideoClass::Bline,
        frame_mask: vec![true],
        bline_intervals: vec![vec![(0.1, 0.2)]],
    };
    let f = labels.flipped();
    let (lo, hi) = f.bline_intervals[0][0];
    assert!(((lo + hi) / 2.0 + 0.15).abs() < 1e-15);
}
