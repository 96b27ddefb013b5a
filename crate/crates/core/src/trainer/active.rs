use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::eval::{evaluate_miou, MiouResult};
use super::model::{cloud_features, forward, image_features, Model, LIDAR_FEATURES, RGB_FEATURES};
use super::step::{train_step_lidar, train_step_rgb, DomainView, LossReport, Progress, StepBatch, TrainState};
use super::{Components, TrainerError, TrainingConfig};
use crate::acquisition::{
    score_pixels, score_voxels, select_pixels, select_voxels, BudgetPolicy, RoundLog, ScoreMap, Strategy,
    VoxelGrid,
};
use crate::data_io::{
    generate_lidar_world, generate_rgb_world, FormatError, LidarWorldConfig, RgbWorldConfig, LIDAR_CLASSES,
    RGB_CLASSES,
};
use crate::distributions::FlowNetwork;
use crate::geometry::Curvature;
use crate::mixing::{argmax, LabeledCloud, LabeledImage};
use crate::{Modality, UNLABELED};

/// Labeled source images, target images for acquisition and held-out
/// target images for evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbData {
    pub source: Vec<LabeledImage>,
    pub target: Vec<LabeledImage>,
    pub test: Vec<LabeledImage>,
}

impl RgbData {
    /// Disjoint scene sets: `world.scenes` source, `world.scenes` target and
    /// `test_scenes` test scenes.
    pub fn synthetic(world: &RgbWorldConfig, test_scenes: usize) -> Result<Self, FormatError> {
        let n = world.scenes;
        let cfg = RgbWorldConfig {
            scenes: 2 * n + test_scenes,
            ..world.clone()
        };
        let (mut source, mut target) = generate_rgb_world(&cfg)?;
        source.truncate(n);
        let test = target.split_off(2 * n);
        target.drain(..n);
        Ok(RgbData { source, target, test })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LidarData {
    pub source: Vec<LabeledCloud>,
    pub target: Vec<LabeledCloud>,
    pub test: Vec<LabeledCloud>,
}

impl LidarData {
    pub fn synthetic(world: &LidarWorldConfig, test_scans: usize) -> Result<Self, FormatError> {
        let n = world.scans;
        let cfg = LidarWorldConfig {
            scans: 2 * n + test_scans,
            ..world.clone()
        };
        let (mut source, mut target) = generate_lidar_world(&cfg)?;
        source.truncate(n);
        let test = target.split_off(2 * n);
        target.drain(..n);
        Ok(LidarData { source, target, test })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Datasets {
    Rgb(RgbData),
    Lidar(LidarData),
}

impl Datasets {
    pub fn modality(&self) -> Modality {
        match self {
            Datasets::Rgb(_) => Modality::Rgb,
            Datasets::Lidar(_) => Modality::Lidar,
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            Datasets::Rgb(_) => RGB_CLASSES.len(),
            Datasets::Lidar(_) => LIDAR_CLASSES.len(),
        }
    }

    fn validate(&self) -> Result<(), TrainerError> {
        let (s, t, e) = match self {
            Datasets::Rgb(d) => (d.source.len(), d.target.len(), d.test.len()),
            Datasets::Lidar(d) => (d.source.len(), d.target.len(), d.test.len()),
        };
        if s == 0 || t == 0 || e == 0 {
            return Err(TrainerError::InvalidConfig(format!(
                "need source, target and test items, got {s} / {t} / {e}"
            )));
        }
        Ok(())
    }
}

/// Test-set evaluation after one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    /// Cumulative revealed pixels (images) or voxels (clouds).
    pub revealed_items: usize,
    pub revealed_cells: usize,
    pub miou: f64,
}

#[derive(Debug, Clone)]
pub struct LoopOutput {
    pub state: TrainState,
    pub source_only: MiouResult,
    pub round_logs: Vec<RoundLog>,
    pub losses: Vec<LossReport>,
    pub rounds: Vec<RoundMetrics>,
    pub result: MiouResult,
}

struct Prepared {
    source_features: Vec<Vec<Vec<f64>>>,
    target_features: Vec<Vec<Vec<f64>>>,
    test_features: Vec<Vec<Vec<f64>>>,
    test_truth: Vec<u32>,
}

fn prepare(data: &Datasets, cfg: &TrainingConfig) -> Result<Prepared, TrainerError> {
    match data {
        Datasets::Rgb(d) => {
            let f = |v: &[LabeledImage]| v.iter().map(image_features).collect::<Vec<_>>();
            Ok(Prepared {
                source_features: f(&d.source),
                target_features: f(&d.target),
                test_features: f(&d.test),
                test_truth: d.test.iter().flat_map(|i| i.labels.iter().copied()).collect(),
            })
        }
        Datasets::Lidar(d) => {
            let f = |v: &[LabeledCloud]| {
                v.iter()
                    .map(|c| cloud_features(c, cfg.voxel_size))
                    .collect::<Result<Vec<_>, _>>()
            };
            Ok(Prepared {
                source_features: f(&d.source)?,
                target_features: f(&d.target)?,
                test_features: f(&d.test)?,
                test_truth: d.test.iter().flat_map(|c| c.labels.iter().copied()).collect(),
            })
        }
    }
}

fn evaluate(model: &Model, features: &[Vec<Vec<f64>>], truth: &[u32]) -> Result<MiouResult, TrainerError> {
    let mut pred = Vec::with_capacity(truth.len());
    for f in features {
        let (_, probs) = forward(model, f)?;
        pred.extend(probs.iter().map(|p| argmax(p)));
    }
    evaluate_miou(&pred, truth, model.num_classes(), None)
}

/// Source-only training from a seeded initialisation. Uses cross-entropy
/// and no RAFT components, so runs that differ only in components share it.
pub fn pretrain(cfg: &TrainingConfig, data: &Datasets) -> Result<TrainState, TrainerError> {
    cfg.validate()?;
    data.validate()?;
    if data.modality() != cfg.modality {
        return Err(TrainerError::ModalityMismatch(format!(
            "{} datasets with a {} configuration",
            data.modality(),
            cfg.modality
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let input = match cfg.modality {
        Modality::Rgb => RGB_FEATURES,
        Modality::Lidar => LIDAR_FEATURES,
    };
    let model = Model::init(input, cfg.hidden, cfg.dim, data.num_classes(), Curvature::default(), &mut rng);
    let flow = FlowNetwork::init(cfg.dim, cfg.flow_hidden, &mut rng);
    let mut state = TrainState::new(model, flow, rng);
    let plain = TrainingConfig {
        components: Components::al_only(),
        ..cfg.clone()
    };
    let prep = prepare(data, cfg)?;
    let labels: Vec<&[u32]> = match data {
        Datasets::Rgb(d) => d.source.iter().map(|i| i.labels.as_slice()).collect(),
        Datasets::Lidar(d) => d.source.iter().map(|c| c.labels.as_slice()).collect(),
    };
    for step in 0..cfg.pretrain_steps {
        let s = rand::Rng::random_range(&mut state.rng, 0..labels.len());
        let batch = StepBatch {
            source: state.sample_cells(&prep.source_features[s], labels[s], cfg.batch_size),
            ..StepBatch::default()
        };
        state.apply(&batch, &plain, step, cfg.learning_rate)?;
    }
    state.velocity.iter_mut().for_each(|v| *v = 0.0);
    state.teacher = state.model.clone();
    Ok(state)
}

enum Selection {
    Pixels(Vec<Vec<bool>>),
    Voxels(Vec<VoxelGrid>),
}

/// Acquisition rounds and training from a pretrained state.
pub fn adapt(
    cfg: &TrainingConfig,
    data: &Datasets,
    policy: &BudgetPolicy,
    strategy: Strategy,
    pretrained: TrainState,
) -> Result<LoopOutput, TrainerError> {
    cfg.validate()?;
    data.validate()?;
    policy.validate()?;
    let m = cfg.modality;
    if data.modality() != m || policy.modality() != m {
        return Err(TrainerError::ModalityMismatch(format!(
            "configuration is {m}, datasets {}, budget policy {}",
            data.modality(),
            policy.modality()
        )));
    }
    if !strategy.supports(m) {
        return Err(TrainerError::ModalityMismatch(format!(
            "strategy {strategy:?} does not apply to {m}"
        )));
    }
    let prep = prepare(data, cfg)?;
    let mut state = pretrained;
    let source_only = evaluate(&state.teacher, &prep.test_features, &prep.test_truth)?;
    let rounds = policy.rounds();
    let total = rounds * cfg.steps_per_round;

    let (mut revealed_images, mut revealed_clouds) = (Vec::new(), Vec::new());
    let mut selection = match data {
        Datasets::Rgb(d) => {
            revealed_images = d
                .target
                .iter()
                .map(|i| LabeledImage {
                    labels: vec![UNLABELED; i.pixels()],
                    ..i.clone()
                })
                .collect();
            Selection::Pixels(d.target.iter().map(|i| vec![false; i.pixels()]).collect())
        }
        Datasets::Lidar(d) => {
            revealed_clouds = d
                .target
                .iter()
                .map(|c| LabeledCloud {
                    labels: vec![UNLABELED; c.len()],
                    ..c.clone()
                })
                .collect();
            Selection::Voxels(
                d.target
                    .iter()
                    .map(|c| VoxelGrid::build(&c.xyz(), cfg.voxel_size))
                    .collect::<Result<Vec<_>, _>>()?,
            )
        }
    };

    let mut round_logs = Vec::new();
    let mut losses = Vec::with_capacity(total);
    let mut metrics = Vec::with_capacity(rounds);
    let mut step = 0usize;
    for round in 0..rounds {
        match (&mut selection, data) {
            (Selection::Pixels(labeled), Datasets::Rgb(d)) => {
                for (k, img) in d.target.iter().enumerate() {
                    let (embs, probs) = forward(&state.teacher, &prep.target_features[k])?;
                    let scores = score_pixels(strategy, &embs, &probs, &mut state.rng)?;
                    let mut map = ScoreMap::with_labeled(scores, std::mem::take(&mut labeled[k]))?;
                    let ids = select_pixels(&mut map, policy, round)?;
                    for &i in &ids {
                        revealed_images[k].labels[i] = img.labels[i];
                    }
                    round_logs.push(RoundLog {
                        round,
                        item: k,
                        scores: ids.iter().map(|&i| map.scores[i]).collect(),
                        ids,
                    });
                    labeled[k] = map.labeled;
                }
            }
            (Selection::Voxels(grids), Datasets::Lidar(d)) => {
                for (k, cloud) in d.target.iter().enumerate() {
                    let (embs, probs) = forward(&state.teacher, &prep.target_features[k])?;
                    let scores = score_voxels(strategy, &grids[k], &embs, &probs, &mut state.rng)?;
                    let ids = select_voxels(&mut grids[k], &scores, policy, round)?;
                    for &v in &ids {
                        for &i in &grids[k].members[v] {
                            revealed_clouds[k].labels[i] = cloud.labels[i];
                        }
                    }
                    round_logs.push(RoundLog {
                        round,
                        item: k,
                        scores: ids.iter().map(|&v| scores[v]).collect(),
                        ids,
                    });
                }
            }
            _ => unreachable!("selection state follows the dataset modality"),
        }
        for _ in 0..cfg.steps_per_round {
            let progress = Progress { step, total };
            let report = match data {
                Datasets::Rgb(d) => train_step_rgb(
                    &mut state,
                    &DomainView {
                        items: &d.source,
                        features: &prep.source_features,
                    },
                    &DomainView {
                        items: &revealed_images,
                        features: &prep.target_features,
                    },
                    cfg,
                    progress,
                )?,
                Datasets::Lidar(d) => train_step_lidar(
                    &mut state,
                    &DomainView {
                        items: &d.source,
                        features: &prep.source_features,
                    },
                    &DomainView {
                        items: &revealed_clouds,
                        features: &prep.target_features,
                    },
                    cfg,
                    progress,
                )?,
            };
            losses.push(report);
            step += 1;
        }
        let eval = evaluate(&state.teacher, &prep.test_features, &prep.test_truth)?;
        let (revealed_items, revealed_cells) = match &selection {
            Selection::Pixels(l) => {
                let n = l.iter().flatten().filter(|&&b| b).count();
                (n, n)
            }
            Selection::Voxels(g) => (
                g.iter().flat_map(|g| &g.labeled).filter(|&&b| b).count(),
                revealed_clouds
                    .iter()
                    .flat_map(|c| &c.labels)
                    .filter(|&&l| l != UNLABELED)
                    .count(),
            ),
        };
        metrics.push(RoundMetrics {
            round,
            revealed_items,
            revealed_cells,
            miou: eval.miou,
        });
    }
    let result = evaluate(&state.teacher, &prep.test_features, &prep.test_truth)?;
    Ok(LoopOutput {
        state,
        source_only,
        round_logs,
        losses,
        rounds: metrics,
        result,
    })
}

/// Pretraining followed by the acquisition and adaptation rounds.
pub fn active_da_loop(
    cfg: &TrainingConfig,
    data: &Datasets,
    policy: &BudgetPolicy,
    strategy: Strategy,
) -> Result<LoopOutput, TrainerError> {
    let state = pretrain(cfg, data)?;
    adapt(cfg, data, policy, strategy, state)
}
