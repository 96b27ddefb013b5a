use std::collections::{BTreeMap, BTreeSet};

use hyperada::augmentation::{
    augment_map, blend, build_pool, hfa_loss, hyperbolic_mixup, interpolate, reintegrate, AugmentationPool,
    AugmentedClass, EmbeddingMap, HfaLossConfig, InterpolationSchedule, MapShape, MixupConfig, PoolEntry, PoolKind,
};
use hyperada::autodiff::{gradient, Tape, Var};
use hyperada::distributions::ClassDistribution;
use hyperada::geometry::{BallPoint, Curvature, MlrHyperplane, PoincareBall};
use hyperada::scalar::Real;
use hyperada::{Modality, UNLABELED};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn k() -> Curvature {
    Curvature::default()
}

fn point(rng: &mut impl Rng, dim: usize, max_norm: f64) -> BallPoint {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-max_norm..max_norm)).collect();
        if v.iter().map(|x| x * x).sum::<f64>().sqrt() < max_norm {
            return BallPoint::new(v, k()).unwrap();
        }
    }
}

/// Random labeled map with a few unlabeled cells, plus a distribution for
/// every class.
fn random_case(
    seed: u64,
    cells: usize,
    classes: u32,
    dim: usize,
) -> (EmbeddingMap, BTreeMap<u32, ClassDistribution>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let embs: Vec<BallPoint> = (0..cells).map(|_| point(&mut rng, dim, 0.8)).collect();
    let labels: Vec<u32> = (0..cells)
        .map(|_| if rng.random_bool(0.15) { UNLABELED } else { rng.random_range(0..classes) })
        .collect();
    let map = EmbeddingMap::new(MapShape::Points { count: cells }, embs, labels, classes).unwrap();
    let dists = (0..classes)
        .map(|c| {
            let mean = point(&mut rng, dim, 0.6);
            let lv: Vec<f64> = (0..dim).map(|_| rng.random_range(-4.0..0.5)).collect();
            (c, ClassDistribution::new(c, mean, lv).unwrap())
        })
        .collect();
    (map, dists)
}

fn classifier(rng: &mut impl Rng, classes: u32, dim: usize) -> Vec<MlrHyperplane<f64>> {
    (0..classes)
        .map(|_| {
            let p = point(rng, dim, 0.3).into_coords();
            let a: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            MlrHyperplane::new(p, a)
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn augmentation_never_moves_a_label(
        seed in any::<u64>(), cells in 1usize..60, classes in 2u32..5, t in 0.0f64..1.0, rgb in any::<bool>(),
    ) {
        let (map, dists) = random_case(seed, cells, classes, 3);
        let modality = if rgb { Modality::Rgb } else { Modality::Lidar };
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let (out, pool) = augment_map(
            &map, &dists, modality, &InterpolationSchedule::default(), &MixupConfig::for_modality(modality), t, &mut rng,
        ).unwrap();
        prop_assert_eq!(out.labels(), map.labels());
        prop_assert_eq!(out.shape(), map.shape());
        for (i, &l) in map.labels().iter().enumerate() {
            if l == UNLABELED {
                prop_assert_eq!(&out.embeddings()[i], &map.embeddings()[i]);
            }
            let x = out.embeddings()[i].coords();
            prop_assert!(x.iter().map(|v| v * v).sum::<f64>() < 1.0);
        }
        let present = map.present_classes();
        prop_assert_eq!(pool.classes.keys().copied().collect::<BTreeSet<_>>(), present);
    }

    #[test]
    fn interpolation_distance_is_monotone(seed in any::<u64>(), dim in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = point(&mut rng, dim, 0.9);
        let b = point(&mut rng, dim, 0.9);
        let ball = PoincareBall::<f64>::new(k());
        let mut prev = -1.0;
        for w in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let m = blend(&a, &b, w).unwrap();
            let d = ball.distance(a.coords(), m.coords());
            prop_assert!(d >= prev - 1e-12, "distance fell from {} to {} at w={}", prev, d, w);
            prev = d;
        }
    }

    #[test]
    fn loss_terms_have_their_signs(seed in any::<u64>(), cells in 2usize..40, classes in 2u32..5) {
        let (map, dists) = random_case(seed, cells, classes, 3);
        prop_assume!(!map.present_classes().is_empty());
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
        let clf = classifier(&mut rng, classes, 3);
        let (aug, pool) = augment_map(
            &map, &dists, Modality::Rgb, &InterpolationSchedule::default(), &MixupConfig::default(), 0.5, &mut rng,
        ).unwrap();
        let cfg = HfaLossConfig { lambda_div: 0.3, lambda_proto_reg: 0.2, lambda_mean_var: 0.7, ..HfaLossConfig::default() };
        let l = hfa_loss(&map, &aug, &dists, &pool, &clf, &cfg).unwrap();
        for v in [l.orig_cls, l.aug_cls, l.proto_reg, l.mean_var] {
            prop_assert!(v.is_finite() && v >= 0.0, "{:?}", l);
        }
        prop_assert!(l.div.is_finite() && l.div <= 0.0);
        let sum = l.orig_cls + l.aug_cls + cfg.lambda_div * l.div + cfg.lambda_proto_reg * l.proto_reg
            + cfg.lambda_mean_var * l.mean_var;
        prop_assert!((l.total - sum).abs() <= 1e-12);
    }

    #[test]
    fn reintegration_is_deterministic(seed in any::<u64>(), cells in 1usize..40) {
        let (map, dists) = random_case(seed, cells, 3, 2);
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            augment_map(&map, &dists, Modality::Rgb, &InterpolationSchedule::default(), &MixupConfig::default(), 0.3, &mut rng)
                .unwrap()
                .0
        };
        prop_assert_eq!(run(), run());
    }
}

#[test]
fn interpolation_endpoints_and_midpoint_oracle() {
    let real: BTreeMap<u32, Vec<BallPoint>> = [(0, vec![BallPoint::new(vec![0.3, 0.0], k()).unwrap()])].into();
    let mut pool = AugmentationPool::default();
    pool.classes.insert(
        0,
        vec![PoolEntry {
            point: BallPoint::new(vec![0.6, 0.0], k()).unwrap(),
            kind: PoolKind::Sampled,
        }],
    );
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for (w, expect) in [
        (0.0, 0.3),
        (1.0, 0.6),
        (0.5, ((0.3f64.atanh() + 0.6f64.atanh()) / 2.0).tanh()),
    ] {
        let s = InterpolationSchedule::new(w, w).unwrap();
        let out = interpolate(&real, &pool, &s, 0.7, &mut rng).unwrap();
        let x = out[&0][0].coords();
        assert!((x[0] - expect).abs() <= 1e-12 * expect, "w={w}: {x:?}");
        assert_eq!(x[1], 0.0);
    }
}

#[test]
fn schedule_is_monotone_with_fixed_ends() {
    let s = InterpolationSchedule::default();
    assert_eq!((s.weight(0.0), s.weight(1.0)), (s.w0, s.w1));
    let ws: Vec<f64> = (0..=20).map(|i| s.weight(i as f64 / 20.0)).collect();
    assert!(ws.windows(2).all(|p| p[1] >= p[0]));
    assert!(InterpolationSchedule::new(0.6, 0.2).is_err());
}

#[test]
fn pool_sizes_per_modality() {
    let (_, dists) = random_case(3, 10, 3, 2);
    let present: BTreeSet<u32> = [0, 1, 2].into();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let rgb = build_pool(&dists, &present, Modality::Rgb, &mut rng).unwrap();
    assert_eq!(rgb.sizes(), [(0, 5), (1, 5), (2, 5)].into());
    let lidar = build_pool(&dists, &present, Modality::Lidar, &mut rng).unwrap();
    assert_eq!(lidar.sizes(), [(0, 2), (1, 2), (2, 2)].into());
    let partial = build_pool(&dists, &[1].into(), Modality::Rgb, &mut rng).unwrap();
    assert_eq!(partial.sizes(), [(1, 5)].into());
    assert!(build_pool(&dists, &[7].into(), Modality::Rgb, &mut rng).is_err());
}

#[test]
fn symmetric_mixup_pair_meets_at_the_origin() {
    let a = BallPoint::new(vec![0.2, 0.0], k()).unwrap();
    let b = BallPoint::new(vec![-0.2, 0.0], k()).unwrap();
    let m = blend(&a, &b, 0.5).unwrap();
    assert!(m.coords().iter().all(|v| f64::abs(*v) < 1e-15));

    let single: BTreeMap<u32, Vec<BallPoint>> = [(4, vec![a.clone()])].into();
    let out = hyperbolic_mixup(&single, &MixupConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(out.skipped, vec![4]);
    assert!(out.mixed.is_empty());
}

#[test]
fn empty_pools_leave_features_alone() {
    let (map, _) = random_case(9, 12, 3, 2);
    let empty: BTreeMap<u32, AugmentedClass> = BTreeMap::new();
    let (out, chosen) = reintegrate(&map, &empty, &mut ChaCha8Rng::seed_from_u64(0));
    assert_eq!(out, map);
    assert!(chosen.is_empty());
}

fn lift_map(map: &EmbeddingMap) -> EmbeddingMap<Var> {
    let embs = map
        .embeddings()
        .iter()
        .map(|e| BallPoint::new(e.coords().iter().map(|&v| Var::lit(v)).collect(), k()).unwrap())
        .collect();
    EmbeddingMap::new(map.shape(), embs, map.labels().to_vec(), map.num_classes()).unwrap()
}

fn classification_terms(
    map: &EmbeddingMap,
    aug: &EmbeddingMap,
    dists: &BTreeMap<u32, ClassDistribution>,
    pool: &AugmentationPool,
    theta: &[Var],
) -> Var {
    let dim = 4;
    let clf: Vec<MlrHyperplane<Var>> = theta
        .chunks(2 * dim)
        .map(|c| MlrHyperplane::new(c[..dim].to_vec(), c[dim..].to_vec()))
        .collect();
    let lift_d: BTreeMap<u32, ClassDistribution<Var>> = dists.iter().map(|(&c, d)| (c, d.lift())).collect();
    let lift_pool = AugmentationPool {
        classes: pool
            .classes
            .iter()
            .map(|(&c, es)| {
                let es = es
                    .iter()
                    .map(|e| PoolEntry {
                        point: BallPoint::new(e.point.coords().iter().map(|&v| Var::lit(v)).collect(), k()).unwrap(),
                        kind: e.kind,
                    })
                    .collect();
                (c, es)
            })
            .collect(),
    };
    let cfg = HfaLossConfig::default();
    let l = hfa_loss(&lift_map(map), &lift_map(aug), &lift_d, &lift_pool, &clf, &cfg).unwrap();
    l.orig_cls + l.aug_cls
}

#[test]
fn classifier_gradient_matches_central_differences() {
    let (map, dists) = random_case(17, 24, 3, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (aug, pool) = augment_map(
        &map,
        &dists,
        Modality::Rgb,
        &InterpolationSchedule::default(),
        &MixupConfig::default(),
        0.4,
        &mut rng,
    )
    .unwrap();
    let theta0: Vec<f64> = classifier(&mut rng, 3, 4)
        .into_iter()
        .flat_map(|h| h.offset.into_iter().chain(h.normal))
        .collect();
    Tape::reset();
    let params = Var::params(&theta0);
    let g = gradient(classification_terms(&map, &aug, &dists, &pool, &params)).wrt_all(&params);
    let eval = |th: &[f64]| {
        Tape::reset();
        let p: Vec<Var> = th.iter().map(|&v| Var::lit(v)).collect();
        classification_terms(&map, &aug, &dists, &pool, &p).val()
    };
    let h = 1e-6;
    for i in 0..theta0.len() {
        let mut up = theta0.clone();
        let mut dn = theta0.clone();
        up[i] += h;
        dn[i] -= h;
        let fd = (eval(&up) - eval(&dn)) / (2.0 * h);
        let scale = fd.abs().max(g[i].abs()).max(1e-3);
        assert!((fd - g[i]).abs() / scale <= 1e-4, "param {i}: fd {fd} vs {}", g[i]);
    }
    Tape::reset();
}
