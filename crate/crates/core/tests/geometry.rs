mod common;

use gelatto_core::geometry::{
    dist2, farthest_point_sample, group_around, interpolation_weights, normalize_block, partition_blocks,
    radius_neighbors, NeighborMode, Point, PointCloud,
};
use proptest::prelude::*;

use common::*;

fn points(max: usize) -> impl Strategy<Value = Vec<Point>> {
    // a coarse lattice makes exact distance ties common
    prop::collection::vec(prop::array::uniform3(-8i32..8), 1..max)
        .prop_map(|v| v.into_iter().map(|p| p.map(|c| c as f64 * 0.125)).collect())
}

fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
    perm
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fps_matches_oracle(pts in points(80), frac in 0.0f64..1.0) {
        let m = 1 + ((pts.len() - 1) as f64 * frac) as usize;
        prop_assert_eq!(farthest_point_sample(&pts, m).unwrap(), fps_oracle(&pts, m));
    }

    #[test]
    fn fps_is_permutation_invariant(pts in points(80), seed in any::<u64>()) {
        let m = pts.len().div_ceil(2);
        let perm = shuffled(pts.len(), seed);
        let moved: Vec<Point> = perm.iter().map(|&i| pts[i]).collect();
        let a: Vec<Point> = farthest_point_sample(&pts, m).unwrap().iter().map(|&i| pts[i]).collect();
        let b: Vec<Point> = farthest_point_sample(&moved, m).unwrap().iter().map(|&i| moved[i]).collect();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn fps_picks_are_spread(pts in points(60)) {
        // every unpicked point is no farther from the picks than the last pick was
        let m = pts.len().div_ceil(3);
        let picked = farthest_point_sample(&pts, m).unwrap();
        let last = *picked.last().unwrap();
        let d_last = picked[..m - 1].iter().map(|&p| dist2(&pts[last], &pts[p])).fold(f64::INFINITY, f64::min);
        for i in 0..pts.len() {
            let d = picked[..m - 1].iter().map(|&p| dist2(&pts[i], &pts[p])).fold(f64::INFINITY, f64::min);
            prop_assert!(m == 1 || d <= d_last);
        }
    }

    #[test]
    fn deterministic_grouping_matches_oracle(pts in points(120), r in 0.1f64..0.6, k in 1usize..12) {
        let centroids: Vec<usize> = (0..pts.len()).step_by(3).collect();
        let idx = group_around(&pts, &centroids, r, k, NeighborMode::Deterministic).unwrap();
        for (m, &c) in centroids.iter().enumerate() {
            let ball = ball_oracle(&pts, &pts[c], r);
            let want: Vec<usize> = ball.iter().copied().cycle().take(k).collect();
            prop_assert_eq!(idx.row(m), want.as_slice());
        }
    }

    #[test]
    fn seeded_grouping_draws_from_the_ball(pts in points(120), r in 0.1f64..0.6, k in 1usize..12, seed in any::<u64>()) {
        let centroids: Vec<usize> = (0..pts.len()).step_by(2).collect();
        let idx = group_around(&pts, &centroids, r, k, NeighborMode::Seeded(seed)).unwrap();
        for (m, &c) in centroids.iter().enumerate() {
            let ball = ball_oracle(&pts, &pts[c], r);
            let row = idx.row(m);
            prop_assert!(row.iter().all(|j| ball.contains(j)));
            let mut distinct = row.to_vec();
            distinct.sort_unstable();
            distinct.dedup();
            prop_assert_eq!(distinct.len(), ball.len().min(k));
        }
    }

    #[test]
    fn interpolation_matches_oracle(src in points(40), tgt in points(20)) {
        let w = interpolation_weights(&tgt, &src).unwrap();
        let fan = src.len().min(3);
        prop_assert_eq!(w.fan, fan);
        for (t, q) in tgt.iter().enumerate() {
            let near = ball_oracle(&src, q, f64::INFINITY);
            let inv: Vec<f64> = near[..fan].iter().map(|&j| 1.0 / (dist2(&src[j], q).sqrt() + 1e-8)).collect();
            let z: f64 = inv.iter().sum();
            prop_assert_eq!(&w.index[t * fan..(t + 1) * fan], &near[..fan]);
            for (a, b) in w.weights[t * fan..(t + 1) * fan].iter().zip(&inv) {
                prop_assert!((a - b / z).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn blocks_partition_the_cloud(pts in points(200), size in 0.2f64..2.0) {
        let cloud = PointCloud::new(pts.clone());
        let blocks = partition_blocks(&cloud, size).unwrap();
        let mut all: Vec<usize> = blocks.iter().flatten().copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..pts.len()).collect::<Vec<_>>());
        for b in &blocks {
            let sub: Vec<Point> = b.iter().map(|&i| pts[i]).collect();
            let (local, offset) = normalize_block(&sub).unwrap();
            for (p, q) in local.iter().zip(&sub) {
                prop_assert!(p[0].abs() <= size / 2.0 + 1e-12 && p[1].abs() <= size / 2.0 + 1e-12);
                prop_assert!(p[2] >= 0.0);
                let back = offset.restore(p);
                prop_assert!(back.iter().zip(q).all(|(a, b)| (a - b).abs() < 1e-12));
            }
        }
    }
}

#[test]
fn empty_ball_is_reported() {
    let pts = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
    let res = radius_neighbors(&[[5.0, 0.0, 0.0]], &pts, 0.5, 2, NeighborMode::Deterministic);
    assert!(res.is_err());
}
