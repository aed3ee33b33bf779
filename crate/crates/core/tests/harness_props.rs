use bline_core::geometry::FrustumGeometry;
use bline_core::harness::report::{from_json, render, to_csv, to_json, to_svg};
use bline_core::harness::{
    kfold_split, load_dataset, preprocess, run_sweep, save_dataset, Arm, Dataset, DatasetSource, InputDims,
    ReportFormat, SweepConfig,
};
use bline_core::nn::TrainConfig;
use bline_core::synthgen::{generate_clip, PhantomConfig, Representation};
use bline_core::Error;
use proptest::prelude::*;

fn small_phantom() -> PhantomConfig {
    PhantomConfig {
        frames_per_clip: 3,
        native_h: 32,
        native_w: 32,
        geometry: FrustumGeometry::default_for(32, 32),
        pleural_depth: 8.0,
        ..PhantomConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kfold_partitions_and_stratifies(labels in prop::collection::vec(any::<bool>(), 10..80), k in 2usize..6, seed in any::<u64>()) {
        let pos = labels.iter().filter(|&&l| l).count();
        prop_assume!(pos >= k && labels.len() - pos >= k);
        let folds = kfold_split(&labels, k, seed).unwrap();
        prop_assert_eq!(folds.len(), k);
        let mut seen = vec![0; labels.len()];
        for f in &folds {
            for &i in &f.test {
                seen[i] += 1;
            }
            prop_assert_eq!(f.train.len() + f.test.len(), labels.len());
            prop_assert!(f.train.iter().all(|i| f.test.binary_search(i).is_err()));
            let p = f.test.iter().filter(|&&i| labels[i]).count();
            prop_assert!(p.abs_diff(pos / k) <= 1, "{} positives, expected about {}", p, pos / k);
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        let sizes: Vec<usize> = folds.iter().map(|f| f.test.len()).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        prop_assert_eq!(folds, kfold_split(&labels, k, seed).unwrap());
    }
}

#[test]
fn two_hundred_clips_split_sixty_forty() {
    let labels: Vec<bool> = (0..200).map(|i| i % 10 < 3).collect();
    for f in kfold_split(&labels, 5, 2024).unwrap() {
        assert_eq!(f.test.len(), 40);
        let p = f.test.iter().filter(|&&i| labels[i]).count();
        assert!(p.abs_diff(12) <= 1);
    }
}

#[test]
fn polar_flip_matches_cartesian_flip() {
    let cfg = PhantomConfig {
        frames_per_clip: 2,
        ..PhantomConfig::default()
    };
    for seed in 0..3 {
        let (clip, _) = generate_clip(&cfg, seed).unwrap();
        for dims in [InputDims::new(64, 64), InputDims::new(64, 16), InputDims::new(16, 16)] {
            let a = preprocess(&clip.flipped().unwrap(), Representation::Polar, dims).unwrap();
            let b = preprocess(&clip, Representation::Polar, dims).unwrap().flipped().unwrap();
            let err = a.frames.iter().flatten().zip(b.frames.iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0f32, f32::max);
            assert!(err < 1e-5, "{dims}: {err}");
        }
    }
}

#[test]
fn dataset_files_round_trip_and_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("clips.lusv");
    let ds = Dataset::generate(&small_phantom(), 4, 31).unwrap();
    let manifest = save_dataset(&ds, &path).unwrap();
    let loaded = load_dataset(&path).unwrap();
    assert_eq!(loaded, ds);
    assert_eq!(loaded.fingerprint(), ds.fingerprint());
    assert_eq!(manifest.checksum, ds.fingerprint());

    let bytes = std::fs::read(&path).unwrap();
    for cut in [0, 3, 5, 17, bytes.len() / 2, bytes.len() - 1] {
        std::fs::write(&path, &bytes[..cut]).unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::Format { .. })), "cut at {cut}");
    }
    let mut corrupt = bytes.clone();
    let last = corrupt.len() - 3;
    corrupt[last] ^= 0x01;
    std::fs::write(&path, &corrupt).unwrap();
    assert!(matches!(load_dataset(&path), Err(Error::Format { field, .. }) if field == "checksum"));

    // clips from another seed under the original manifest
    let other = Dataset::generate(&small_phantom(), 4, 32).unwrap();
    let other_path = dir.path().join("other.lusv");
    save_dataset(&other, &other_path).unwrap();
    std::fs::copy(&other_path, &path).unwrap();
    assert!(matches!(load_dataset(&path), Err(Error::Format { field, .. }) if field == "checksum"));
}

fn tiny_sweep() -> SweepConfig {
    SweepConfig {
        dataset: DatasetSource::Generate {
            phantom: small_phantom(),
            n_clips: 12,
            seed: 5,
        },
        folds: 2,
        train: TrainConfig {
            learning_rate: 1e-3,
            batch_size: 4,
            epochs: 1,
            ..TrainConfig::default()
        },
        channels: vec![2, 2],
        arms: vec![Arm::new(Representation::Polar, 16, 16), Arm::new(Representation::Cartesian, 16, 16), Arm::new(Representation::Polar, 16, 8)],
        comparisons: vec![("polar_16x16".into(), "cartesian_16x16".into())],
        ..SweepConfig::default()
    }
}

#[test]
fn reports_are_consistent_and_stable() {
    let report = run_sweep(&tiny_sweep()).unwrap();
    assert!(report.recomputation_error() < 1e-12);

    let csv = to_csv(&report);
    let metrics = csv.lines().skip(1).filter(|l| l.starts_with("polar_16x16,0,")).count();
    assert_eq!(csv.lines().count() - 1, 3 * 2 * metrics);
    assert!(csv.lines().skip(1).all(|l| l.split(',').count() == 4));

    let json = to_json(&report).unwrap();
    let back = from_json(&json).unwrap();
    assert_eq!(back, report);
    assert_eq!(to_json(&back).unwrap(), json);
    assert_eq!(render(&back, ReportFormat::Csv).unwrap(), csv);

    let svg = to_svg(&report);
    let groups: Vec<usize> = ["polar_16x16", "cartesian_16x16", "polar_16x8"]
        .iter()
        .map(|l| svg.find(&format!(r#"data-config="{l}""#)).unwrap())
        .collect();
    assert!(groups.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(svg.matches("<circle").count(), 6);

    assert_eq!(to_csv(&run_sweep(&tiny_sweep()).unwrap()), csv);
}

#[test]
fn sweep_rejects_bad_configs() {
    let mut c = tiny_sweep();
    c.arms.push(Arm::new(Representation::Cartesian, 16, 8));
    assert!(run_sweep(&c).is_err());
    let mut c = tiny_sweep();
    c.comparisons.push(("polar_16x16".into(), "nope".into()));
    assert!(run_sweep(&c).is_err());
    let mut c = tiny_sweep();
    c.folds = 1;
    assert!(run_sweep(&c).is_err());
}
