mod common;

use gelatto_core::data::{
    augment, coverage_windows, format_text, from_binary, generate_scene, parse_text, read_record, rotate_z,
    sample_fixed, to_binary, toy_dataset, write_record, AugmentOptions, CloudRecord, SceneSpec, VoteAccumulator,
    FLOOR, SPHERE, WALL,
};
use gelatto_core::geometry::{dist2, PointCloud};
use gelatto_core::metrics::ConfusionMatrix;
use gelatto_core::Error;
use proptest::prelude::*;

use common::*;

fn record(n: usize, seed: u64, colors: bool, labels: bool, scalars: bool) -> CloudRecord {
    let mut cloud = random_cloud(n, seed);
    if !colors {
        cloud.colors = None;
    }
    if !labels {
        cloud.labels = None;
    }
    let scalars = scalars.then(|| (0..n).map(|i| (i as f64 * 0.731).sin()).collect());
    CloudRecord { cloud, scalars }
}

/// Rounds to nine significant digits, the precision of the text format.
fn round9(v: f64) -> f64 {
    format!("{v:.8e}").parse().unwrap()
}

#[test]
fn text_and_binary_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    for (i, flags) in [(true, true, false), (false, true, true), (false, false, false), (true, false, true)]
        .into_iter()
        .enumerate()
    {
        let rec = record(40, i as u64, flags.0, flags.1, flags.2);
        let text = parse_text(format_text(&rec).as_bytes()).unwrap();
        let mut want = rec.clone();
        want.cloud.positions.iter_mut().flatten().for_each(|v| *v = round9(*v));
        if let Some(c) = want.cloud.colors.as_mut() {
            c.iter_mut().flatten().for_each(|v| *v = round9(*v));
        }
        if let Some(s) = want.scalars.as_mut() {
            s.iter_mut().for_each(|v| *v = round9(*v));
        }
        assert_eq!(text, want);
        // formatting already rounded values is a fixed point
        assert_eq!(format_text(&text), format_text(&rec));

        assert_eq!(from_binary(&to_binary(&rec)).unwrap(), rec);
        for name in ["c.txt", "c.bin"] {
            let path = dir.path().join(format!("{i}{name}"));
            write_record(&path, &rec).unwrap();
            let back = read_record(&path, Some(3)).unwrap();
            assert_eq!(back, if name.ends_with("bin") { rec.clone() } else { want.clone() });
        }
    }
}

#[test]
fn out_of_range_label_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.txt");
    std::fs::write(&path, "pts 2 cols xyzl\n0 0 0 1\n1 1 1 5\n").unwrap();
    assert!(matches!(read_record(&path, Some(3)), Err(Error::Validation(_))));
    assert!(read_record(&path, Some(6)).is_ok());
    std::fs::write(&path, "pts 2 cols xyzl\n0 0 0 1\n1 1 x 5\n").unwrap();
    assert!(matches!(read_record(&path, None), Err(Error::Parse { line: 3, .. })));
}

/// Labels a toy-room point from geometry alone.
fn rule_label(p: &[f64; 3], center: &[f64; 3], r: f64, sigma: f64) -> usize {
    if p[2] < 0.05 {
        FLOOR
    } else if dist2(p, center).sqrt() < r + 3.0 * sigma {
        SPHERE
    } else {
        WALL
    }
}

#[test]
fn toy_rooms_are_separable_by_rule() {
    let (mut right, mut total) = (0usize, 0usize);
    for seed in 0..20 {
        let spec = SceneSpec::toy_room(seed, 3000);
        let (center, r) = spec.sphere().unwrap();
        let cloud = generate_scene(&spec).unwrap();
        for (p, &l) in cloud.positions.iter().zip(cloud.labels.as_ref().unwrap()) {
            right += (rule_label(p, &center, r, spec.noise) == l) as usize;
            total += 1;
        }
    }
    let frac = right as f64 / total as f64;
    assert!(frac >= 0.99, "rule accuracy {frac}");
}

#[test]
fn toy_classes_are_balanced() {
    for cloud in toy_dataset(4, 2048, 9).unwrap() {
        let labels = cloud.labels.unwrap();
        for c in [FLOOR, WALL, SPHERE] {
            let n = labels.iter().filter(|&&l| l == c).count();
            assert!((n as f64 / 2048.0 - 1.0 / 3.0).abs() < 0.01);
        }
    }
}

#[test]
fn sample_fixed_inclusion_frequency() {
    // 1000 draws give a binomial σ of 0.0095, too wide for a ±0.02 band on all 100 points
    let mut hits = [0usize; 100];
    for seed in 0..10_000 {
        let idx = sample_fixed(100, 10, seed).unwrap();
        let mut u = idx.clone();
        u.sort_unstable();
        u.dedup();
        assert_eq!(u.len(), 10);
        idx.iter().for_each(|&i| hits[i] += 1);
    }
    for h in hits {
        assert!((h as f64 / 10_000.0 - 0.10).abs() <= 0.02, "{h}");
    }
}

fn check_windows(len: usize, n: usize, seed: u64) {
    let w = coverage_windows(len, n, seed).unwrap();
    assert_eq!(w.len(), len.div_ceil(n));
    let mut seen = vec![0usize; len];
    for (i, win) in w.iter().enumerate() {
        assert_eq!(win.len(), n);
        for &j in win {
            seen[j] += 1;
        }
        if i + 1 < w.len() {
            let mut u = win.clone();
            u.sort_unstable();
            u.dedup();
            assert_eq!(u.len(), n);
        }
    }
    assert!(seen.iter().all(|&s| s >= 1), "len {len} n {n}");
    if len >= n {
        // apart from the top-up, each point appears exactly once
        assert_eq!(seen.iter().sum::<usize>() - len, w.len() * n - len);
    }
}

#[test]
fn coverage_windows_exhaustive_small() {
    for len in 1..=64 {
        for n in 1..=64 {
            check_windows(len, n, (len * 100 + n) as u64);
        }
    }
}

proptest! {
    #[test]
    fn coverage_windows_random(len in 65usize..5000, n in 1usize..700, seed in any::<u64>()) {
        check_windows(len, n, seed);
    }

    #[test]
    fn scaling_scales_distances(seed in any::<u64>()) {
        let cloud = random_cloud(30, seed % 1000);
        let opts = AugmentOptions { scale: Some((0.9, 1.1)), flip: true, rotate: true, ..AugmentOptions::none() };
        let out = augment(&cloud, seed, &opts);
        prop_assert_eq!(&out.labels, &cloud.labels);
        let ratio = dist2(&out.positions[0], &out.positions[1]).sqrt() / dist2(&cloud.positions[0], &cloud.positions[1]).sqrt();
        prop_assert!((0.9..=1.1).contains(&ratio));
        for i in 0..30 {
            for j in 0..i {
                let a = dist2(&cloud.positions[i], &cloud.positions[j]).sqrt();
                let b = dist2(&out.positions[i], &out.positions[j]).sqrt();
                prop_assert!((b - ratio * a).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rigid_motions_keep_distances(seed in any::<u64>()) {
        let cloud = random_cloud(20, seed % 1000);
        let opts = AugmentOptions { flip: true, rotate: true, ..AugmentOptions::none() };
        let out = augment(&cloud, seed, &opts);
        for i in 0..20 {
            for j in 0..i {
                let a = dist2(&cloud.positions[i], &cloud.positions[j]);
                prop_assert!((a - dist2(&out.positions[i], &out.positions[j])).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn full_augmentation_keeps_shapes() {
    let cloud = random_cloud(50, 3);
    let out = augment(&cloud, 4, &AugmentOptions::default());
    assert_eq!(out.len(), 50);
    assert_eq!(out.labels, cloud.labels);
    assert!(out.colors.unwrap().iter().flatten().all(|v| (0.0..=1.0).contains(v)));
    let mut c = PointCloud::new(vec![[1.0, 0.0, 0.3]]);
    rotate_z(&mut c, std::f64::consts::FRAC_PI_2);
    assert!((c.positions[0][0]).abs() < 1e-12 && (c.positions[0][1] - 1.0).abs() < 1e-12);
}

#[test]
fn votes_over_many_windows() {
    let windows = coverage_windows(10_000, 6144, 7).unwrap();
    assert_eq!(windows.len(), 2);
    let mut acc = VoteAccumulator::new(10_000, 2);
    for w in &windows {
        let probs: Vec<Vec<f64>> = w.iter().map(|&i| if i % 3 == 0 { vec![0.2, 0.8] } else { vec![0.7, 0.3] }).collect();
        acc.update(w, &probs).unwrap();
    }
    let labels = acc.finalize().unwrap();
    assert!(labels.iter().enumerate().all(|(i, &l)| l == (i % 3 == 0) as usize));
    let mut partial = VoteAccumulator::new(10_000, 2);
    partial.update(&windows[0], &vec![vec![0.5, 0.5]; 6144]).unwrap();
    assert!(matches!(partial.finalize(), Err(Error::Coverage { .. })));
}

fn random_matrix(c: usize, seed: u64) -> Vec<Vec<u64>> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    // sparse rows and columns exercise the exclusion rules
    (0..c).map(|_| (0..c).map(|_| if rng.gen_bool(0.3) { 0 } else { rng.gen_range(0..50) }).collect()).collect()
}

proptest! {
    #[test]
    fn class_permutation_leaves_scores(c in 2usize..7, seed in any::<u64>(), pseed in any::<u64>()) {
        let m = random_matrix(c, seed);
        prop_assume!(m.iter().flatten().sum::<u64>() > 0);
        let perm = {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut p: Vec<usize> = (0..c).collect();
            p.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(pseed));
            p
        };
        let moved: Vec<Vec<u64>> = (0..c).map(|i| (0..c).map(|j| m[perm[i]][perm[j]]).collect()).collect();
        let a = ConfusionMatrix::from_counts(&m).unwrap().compute().unwrap();
        let b = ConfusionMatrix::from_counts(&moved).unwrap().compute().unwrap();
        prop_assert!((a.overall_accuracy - b.overall_accuracy).abs() < 1e-12);
        prop_assert!((a.mean_accuracy - b.mean_accuracy).abs() < 1e-12);
        prop_assert!((a.mean_iou - b.mean_iou).abs() < 1e-12);
        for i in 0..c {
            prop_assert_eq!(b.iou[i], a.iou[perm[i]]);
        }
    }

    #[test]
    fn miou_never_exceeds_macc(c in 2usize..8, seed in any::<u64>()) {
        let m = random_matrix(c, seed);
        prop_assume!(m.iter().flatten().sum::<u64>() > 0);
        let s = ConfusionMatrix::from_counts(&m).unwrap().compute().unwrap();
        for v in [s.overall_accuracy, s.mean_accuracy, s.mean_iou] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!(s.mean_iou <= s.mean_accuracy + 1e-12);
    }
}
