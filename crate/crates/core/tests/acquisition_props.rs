use std::collections::BTreeSet;

use hyperada::acquisition::{
    entropy, halo_score, halo_scores, halo_vcd_score, select_pixels, select_voxels, top_k_unlabeled, vcd,
    BudgetPolicy, ScoreMap, VoxelGrid,
};
use hyperada::geometry::{BallPoint, Curvature};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Runs every round of `policy` on `n` cells and returns the selections.
fn run_pixel_rounds(policy: &BudgetPolicy, scores: Vec<f64>) -> (Vec<Vec<usize>>, ScoreMap) {
    let mut map = ScoreMap::new(scores).unwrap();
    let rounds = (0..policy.rounds())
        .map(|r| select_pixels(&mut map, policy, r).unwrap())
        .collect();
    (rounds, map)
}

#[test]
fn rgb_budget_is_exact_and_never_reselects() {
    let policy = BudgetPolicy::default_for(hyperada::Modality::Rgb);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n in [97usize, 1000, 12345] {
        let scores: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let (rounds, map) = run_pixel_rounds(&policy, scores);
        let all: Vec<usize> = rounds.concat();
        let unique: BTreeSet<usize> = all.iter().copied().collect();
        let expected = (0.05 * n as f64).ceil() as usize;
        assert_eq!(all.len(), expected, "n = {n}");
        assert_eq!(unique.len(), all.len(), "reselection at n = {n}");
        assert_eq!(map.labeled_count(), expected);
    }
}

#[test]
fn lidar_budget_is_one_voxel_per_scan_per_round() {
    let policy = BudgetPolicy::default_for(hyperada::Modality::Lidar);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _scan in 0..10 {
        let pts: Vec<[f64; 3]> = (0..400)
            .map(|_| [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(0.0..2.0)])
            .collect();
        let mut grid = VoxelGrid::build(&pts, 1.0).unwrap();
        let scores: Vec<f64> = (0..grid.len()).map(|_| rng.random::<f64>()).collect();
        let mut picked = Vec::new();
        for round in 0..5 {
            let ids = select_voxels(&mut grid, &scores, &policy, round).unwrap();
            assert_eq!(ids.len(), 1);
            picked.extend(ids);
        }
        let unique: BTreeSet<usize> = picked.iter().copied().collect();
        assert_eq!(unique.len(), 5);
        assert_eq!(grid.labeled.iter().filter(|&&l| l).count(), 5);
        assert!(select_voxels(&mut grid, &scores, &policy, 5).is_err());
    }
}

#[test]
fn top_k_picks_the_highest_unlabeled_scores() {
    let scores = [0.1, 0.9, 0.5, 0.9, 0.7];
    let labeled = [false, false, false, true, false];
    assert_eq!(top_k_unlabeled(&scores, &labeled, 2).unwrap(), vec![1, 4]);
}

proptest! {
    #[test]
    fn pixel_budget_matches_ceiling(
        n in 1usize..5000,
        fraction in 0.001f64..1.0,
        rounds in 1usize..8,
        seed in any::<u64>(),
    ) {
        let policy = BudgetPolicy::Rgb { fraction, rounds };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let mut map = ScoreMap::new(scores).unwrap();
        let mut seen = BTreeSet::new();
        let mut total = 0;
        for r in 0..rounds {
            let k = policy.quota(n, r).unwrap();
            if k == 0 {
                continue;
            }
            let ids = select_pixels(&mut map, &policy, r).unwrap();
            prop_assert_eq!(ids.len(), k);
            for i in ids {
                prop_assert!(seen.insert(i), "pixel {} selected twice", i);
            }
            total += k;
        }
        let oracle = (fraction * n as f64 - 1e-9).ceil().max(0.0) as usize;
        prop_assert_eq!(total, oracle.min(n));
    }

    #[test]
    fn selection_prefers_higher_scores(
        scores in prop::collection::vec(0.0f64..1.0, 2..200),
        k in 1usize..10,
    ) {
        let labeled = vec![false; scores.len()];
        let chosen = top_k_unlabeled(&scores, &labeled, k).unwrap();
        let worst_chosen = chosen.iter().map(|&i| scores[i]).fold(f64::INFINITY, f64::min);
        for (i, &s) in scores.iter().enumerate() {
            if !chosen.contains(&i) {
                prop_assert!(s <= worst_chosen);
            }
        }
    }

    #[test]
    fn vcd_matches_histogram_entropy(
        labels in prop::collection::vec(0u32..4, 1..60),
    ) {
        let pts: Vec<[f64; 3]> = (0..labels.len()).map(|i| [0.01 * i as f64 / labels.len() as f64, 0.0, 0.0]).collect();
        let grid = VoxelGrid::build(&pts, 1.0).unwrap();
        prop_assert_eq!(grid.len(), 1);
        let got = vcd(&grid, &labels).unwrap()[0];
        let n = labels.len() as f64;
        let mut oracle = 0.0;
        for c in 0..4u32 {
            let p = labels.iter().filter(|&&l| l == c).count() as f64 / n;
            if p > 0.0 {
                oracle -= p * p.ln();
            }
        }
        prop_assert!((got - oracle).abs() <= 1e-12);
    }
}

#[test]
fn closed_form_scores() {
    let oracle = -(0.75f64 * 0.75f64.ln() + 0.25 * 0.25f64.ln());
    let grid = VoxelGrid::build(&[[0.1, 0.1, 0.1], [0.2, 0.1, 0.1], [0.3, 0.1, 0.1], [0.4, 0.1, 0.1]], 1.0).unwrap();
    let got = vcd(&grid, &[1, 1, 1, 2]).unwrap()[0];
    assert!(((got - oracle) / oracle).abs() <= 1e-9);

    let h = entropy(&[0.5, 0.5, 0.0, 0.0]).unwrap();
    assert!(((h - 2f64.ln()) / 2f64.ln()).abs() <= 1e-9);

    let x = BallPoint::new(vec![0.5, 0.0], Curvature::default()).unwrap();
    let s = halo_score(&x, &[0.25; 4]).unwrap();
    let oracle = 2.0 * 0.5f64.atanh() * 4f64.ln();
    assert!(((s - oracle) / oracle).abs() <= 1e-9);
}

#[test]
fn halo_vcd_is_min_max_normalized_per_scan() {
    let k = Curvature::default();
    let pts = [[0.5, 0.5, 0.5], [0.6, 0.5, 0.5], [1.5, 0.5, 0.5], [1.6, 0.5, 0.5], [2.5, 0.5, 0.5]];
    let grid = VoxelGrid::build(&pts, 1.0).unwrap();
    let emb: Vec<BallPoint> = [0.1, 0.2, 0.5, 0.3, 0.7]
        .iter()
        .map(|&r| BallPoint::new(vec![r, 0.0], k).unwrap())
        .collect();
    let probs = vec![
        vec![0.9, 0.1],
        vec![0.2, 0.8],
        vec![0.6, 0.4],
        vec![0.7, 0.3],
        vec![0.5, 0.5],
    ];
    let got = halo_vcd_score(&grid, &emb, &probs).unwrap();

    let point = halo_scores(&emb, &probs).unwrap();
    let halo = [(point[0] + point[1]) / 2.0, (point[2] + point[3]) / 2.0, point[4]];
    let conf = [2f64.ln(), 0.0, 0.0];
    let norm = |xs: [f64; 3]| {
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        xs.map(|x| (x - lo) / (hi - lo))
    };
    let (nh, nc) = (norm(halo), norm(conf));
    for v in 0..3 {
        assert!((got[v] - (nh[v] + nc[v])).abs() <= 1e-12, "voxel {v}");
    }
    assert!(nh.contains(&1.0) && nh.contains(&0.0));
}
