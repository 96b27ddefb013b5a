use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{cloud_features, pixel_features, Model};
use super::{Alternation, TrainerError, TrainingConfig};
use crate::acquisition::halo_scores;
use crate::augmentation::{
    augment_map, focal_loss_from_logits, hfa_loss, samples_per_class, EmbeddingMap, HfaLoss, MapShape,
};
use crate::autodiff::{gradient, Tape, Var};
use crate::distributions::{
    estimate_all, meta_update, moment_estimate, AugmentedFocal, ClassDistribution, EmbeddingSplit,
    FlowNetwork,
};
use crate::mixing::{
    dacs_mix, polarmix_instance_paste, polarmix_sector_swap, pseudo_label, rarest_third, sample_rotations,
    sample_sector_start, DacsDirection, LabeledCloud, LabeledImage, DEFAULT_SECTOR,
};
use crate::scalar::Real;
use crate::{Modality, UNLABELED};

/// Labeled input rows.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Cells {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<u32>,
}

impl Cells {
    pub fn push(&mut self, features: Vec<f64>, label: u32) {
        self.features.push(features);
        self.labels.push(label);
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Detached class distributions and the seed of the augmentation draw.
#[derive(Debug, Clone, PartialEq)]
pub struct HfaInputs {
    pub distributions: BTreeMap<u32, ClassDistribution<f64>>,
    pub seed: u64,
    pub t_frac: f64,
}

/// Everything one optimizer step differentiates through. Empty cell sets
/// contribute a zero term.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepBatch {
    pub source: Cells,
    pub target: Cells,
    pub mix: Cells,
    /// HFA over the union of the source and target cells.
    pub hfa: Option<HfaInputs>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts<T> {
    pub l_src: T,
    pub l_tgt: T,
    pub l_hfa: HfaLoss<T>,
    pub l_mix: T,
    pub total: T,
}

/// Loss terms of one step as plain numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub step: usize,
    pub hfa_applied: bool,
    pub mix_applied: bool,
    pub target_only: bool,
    pub l_src: f64,
    pub l_tgt: f64,
    pub l_hfa: HfaLoss<f64>,
    pub l_mix: f64,
    pub lambda_hfa: f64,
    pub total: f64,
}

impl LossReport {
    /// `l_src + l_tgt + λ_hfa·l_hfa + l_mix`.
    pub fn recomputed_total(&self) -> f64 {
        self.l_src + self.l_tgt + self.lambda_hfa * self.l_hfa.total + self.l_mix
    }
}

/// Position of a step within the adaptation phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Progress {
    pub step: usize,
    pub total: usize,
}

impl Progress {
    /// Learning rate decayed linearly to `final_lr_fraction` of its start.
    pub fn learning_rate(&self, cfg: &TrainingConfig) -> f64 {
        cfg.learning_rate * (1.0 - (1.0 - cfg.final_lr_fraction) * self.frac())
    }

    pub fn frac(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.step as f64 / self.total as f64
        }
    }
}

fn classify<T: Real>(
    model: &Model,
    params: &[T],
    planes: &[crate::geometry::MlrHyperplane<T>],
    cells: &Cells,
    gamma: f64,
) -> Result<(T, Vec<crate::geometry::BallPoint<T>>), TrainerError> {
    let embs: Vec<_> = cells.features.iter().map(|x| model.embed(params, x)).collect();
    if cells.labels.iter().all(|&l| l == UNLABELED) {
        return Ok((T::zero(), embs));
    }
    let logits = embs
        .iter()
        .map(|e| model.logits(e, planes))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((focal_loss_from_logits(&logits, &cells.labels, gamma)?, embs))
}

/// The composite loss of one step as a function of the model parameters.
pub fn step_loss<T: Real>(
    model: &Model,
    params: &[T],
    batch: &StepBatch,
    cfg: &TrainingConfig,
) -> Result<LossParts<T>, TrainerError> {
    let planes = model.hyperplanes(params);
    let gamma = cfg.gamma();
    let (l_src, src_embs) = classify(model, params, &planes, &batch.source, gamma)?;
    let (l_tgt, tgt_embs) = classify(model, params, &planes, &batch.target, gamma)?;
    let (l_mix, _) = classify(model, params, &planes, &batch.mix, gamma)?;
    let mut l_hfa = HfaLoss::zero();
    if let Some(h) = &batch.hfa {
        let mut embs = src_embs;
        embs.extend(tgt_embs);
        let labels: Vec<u32> = batch.source.labels.iter().chain(&batch.target.labels).copied().collect();
        if labels.iter().any(|&l| l != UNLABELED) {
            let map = EmbeddingMap::new(
                MapShape::Points { count: labels.len() },
                embs,
                labels,
                model.num_classes() as u32,
            )?;
            let dists: BTreeMap<u32, ClassDistribution<T>> =
                h.distributions.iter().map(|(&c, d)| (c, d.lift())).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(h.seed);
            let (aug, pool) = augment_map(
                &map,
                &dists,
                cfg.modality,
                &cfg.schedule,
                &cfg.mixup_config(),
                h.t_frac,
                &mut rng,
            )?;
            l_hfa = hfa_loss(&map, &aug, &dists, &pool, &planes, &cfg.hfa_config())?;
        }
    }
    let total = l_src + l_tgt + T::lit(cfg.lambda_hfa) * l_hfa.total + l_mix;
    Ok(LossParts {
        l_src,
        l_tgt,
        l_hfa,
        l_mix,
        total,
    })
}

/// Model, optimizer and flow-network state of a run.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: Model,
    /// Exponential moving average of `model`, used for scoring,
    /// pseudo-labels and evaluation.
    pub teacher: Model,
    pub velocity: Vec<f64>,
    pub flow: FlowNetwork,
    pub rng: ChaCha8Rng,
    pub meta_updates: usize,
    pub meta_failures: usize,
}

impl TrainState {
    pub fn new(model: Model, flow: FlowNetwork, rng: ChaCha8Rng) -> Self {
        TrainState {
            velocity: vec![0.0; model.params.len()],
            teacher: model.clone(),
            model,
            flow,
            rng,
            meta_updates: 0,
            meta_failures: 0,
        }
    }

    /// One momentum-SGD step on `batch`.
    pub fn apply(
        &mut self,
        batch: &StepBatch,
        cfg: &TrainingConfig,
        step: usize,
        lr: f64,
    ) -> Result<(LossParts<f64>, Vec<f64>), TrainerError> {
        Tape::reset();
        let vars = Var::params(&self.model.params);
        let parts = step_loss(&self.model, &vars, batch, cfg)?;
        let mut grad = gradient(parts.total).wrt_all(&vars);
        let values = LossParts {
            l_src: parts.l_src.val(),
            l_tgt: parts.l_tgt.val(),
            l_hfa: parts.l_hfa.values(),
            l_mix: parts.l_mix.val(),
            total: parts.total.val(),
        };
        Tape::reset();
        if !values.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(TrainerError::NonFinite(step));
        }
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm > cfg.grad_clip {
            let s = cfg.grad_clip / norm;
            grad.iter_mut().for_each(|g| *g *= s);
        }
        for ((p, v), g) in self.model.params.iter_mut().zip(&mut self.velocity).zip(&grad) {
            *v = cfg.momentum * *v + g;
            *p -= lr * *v;
        }
        let d = cfg.ema_decay;
        for (t, p) in self.teacher.params.iter_mut().zip(&self.model.params) {
            *t = d * *t + (1.0 - d) * p;
        }
        Ok((values, grad))
    }

    /// Fits class distributions to the detached embeddings of `cells`,
    /// after a meta update of the flow network when one is due.
    fn hfa_inputs(
        &mut self,
        cells: &[&Cells],
        cfg: &TrainingConfig,
        step: usize,
        t_frac: f64,
    ) -> Result<HfaInputs, TrainerError> {
        let mut split = EmbeddingSplit::default();
        for c in cells {
            for (x, &l) in c.features.iter().zip(&c.labels) {
                if l != UNLABELED {
                    split.push(l, self.model.embed(&self.model.params, x).into_coords());
                }
            }
        }
        let curvature = self.model.curvature;
        if cfg.meta_every > 0 && step.is_multiple_of(cfg.meta_every) {
            let (mut train, mut val) = (EmbeddingSplit::default(), EmbeddingSplit::default());
            for (&c, embs) in &split.classes {
                for (i, e) in embs.iter().enumerate() {
                    if i % 2 == 0 { &mut train } else { &mut val }.push(c, e.clone());
                }
            }
            let objective = AugmentedFocal {
                classifier: self.model.hyperplanes(&self.model.params),
                samples_per_class: samples_per_class(cfg.modality),
                gamma: cfg.gamma(),
                weight: 1.0,
            };
            match meta_update(&self.flow, &train, &val, curvature, &cfg.solver, &objective, &cfg.meta, &mut self.rng) {
                Ok(out) => {
                    self.flow = out.network;
                    self.meta_updates += 1;
                }
                Err(_) => self.meta_failures += 1,
            }
        }
        let (mut distributions, failed) = estimate_all(&self.flow, &split, curvature, &cfg.solver);
        for (c, _) in failed {
            distributions.insert(c, moment_estimate(c, &split.classes[&c], curvature)?);
        }
        Ok(HfaInputs {
            distributions,
            seed: self.rng.random(),
            t_frac,
        })
    }

    pub(super) fn sample_cells(&mut self, features: &[Vec<f64>], labels: &[u32], n: usize) -> Cells {
        let mut cells = Cells::default();
        let labeled: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != UNLABELED).collect();
        if labeled.is_empty() {
            return cells;
        }
        for _ in 0..n {
            let i = labeled[self.rng.random_range(0..labeled.len())];
            cells.push(features[i].clone(), labels[i]);
        }
        cells
    }

    fn sample_revealed(&mut self, features: &[Vec<Vec<f64>>], labels: &[&[u32]], n: usize) -> Cells {
        let pool: Vec<(usize, usize)> = labels
            .iter()
            .enumerate()
            .flat_map(|(k, l)| l.iter().enumerate().filter(|(_, &v)| v != UNLABELED).map(move |(i, _)| (k, i)))
            .collect();
        let mut cells = Cells::default();
        if pool.is_empty() {
            return cells;
        }
        for _ in 0..n {
            let (k, i) = pool[self.rng.random_range(0..pool.len())];
            cells.push(features[k][i].clone(), labels[k][i]);
        }
        cells
    }

    /// Pseudo-labels of confident cells, overridden by revealed labels.
    fn pseudo_targets(
        &self,
        features: &[Vec<f64>],
        revealed: &[u32],
        cfg: &TrainingConfig,
    ) -> Result<(Vec<u32>, Vec<bool>), TrainerError> {
        let (embs, probs) = super::model::forward(&self.teacher, features)?;
        let scores = halo_scores(&embs, &probs)?;
        let (mut labels, mask) = pseudo_label(&probs, &scores, cfg.tau_percentile)?;
        let mut mask = mask.mask;
        for (i, &r) in revealed.iter().enumerate() {
            if r != UNLABELED {
                labels[i] = r;
                mask[i] = true;
            }
        }
        Ok((labels, mask))
    }

    fn report(&self, parts: LossParts<f64>, cfg: &TrainingConfig, step: usize, flags: (bool, bool, bool)) -> LossReport {
        LossReport {
            step,
            hfa_applied: flags.0,
            mix_applied: flags.1,
            target_only: flags.2,
            l_src: parts.l_src,
            l_tgt: parts.l_tgt,
            l_hfa: parts.l_hfa,
            l_mix: parts.l_mix,
            lambda_hfa: cfg.lambda_hfa,
            total: parts.total,
        }
    }
}

/// Source images and target images whose labels are the revealed
/// annotations, with precomputed per-cell features.
pub struct DomainView<'a, S> {
    pub items: &'a [S],
    pub features: &'a [Vec<Vec<f64>>],
}

fn check_modality(cfg: &TrainingConfig, m: Modality) -> Result<(), TrainerError> {
    if cfg.modality != m {
        return Err(TrainerError::ModalityMismatch(format!(
            "{m} step called with a {} configuration",
            cfg.modality
        )));
    }
    Ok(())
}

/// One RGB iteration: source and revealed-target classification, HFA and
/// DACS on every step.
pub fn train_step_rgb(
    state: &mut TrainState,
    source: &DomainView<'_, LabeledImage>,
    target: &DomainView<'_, LabeledImage>,
    cfg: &TrainingConfig,
    progress: Progress,
) -> Result<LossReport, TrainerError> {
    check_modality(cfg, Modality::Rgb)?;
    let s = state.rng.random_range(0..source.items.len());
    let src_img = &source.items[s];
    let mut batch = StepBatch {
        source: state.sample_cells(&source.features[s], &src_img.labels, cfg.batch_size),
        ..StepBatch::default()
    };
    let revealed: Vec<&[u32]> = target.items.iter().map(|t| t.labels.as_slice()).collect();
    batch.target = state.sample_revealed(target.features, &revealed, cfg.batch_size);
    if cfg.components.hfa {
        batch.hfa = Some(state.hfa_inputs(&[&batch.source, &batch.target], cfg, progress.step, progress.frac())?);
    }
    if cfg.components.mixing {
        let t = state.rng.random_range(0..target.items.len());
        let tgt = &target.items[t];
        let (pseudo, mask) = state.pseudo_targets(&target.features[t], &tgt.labels, cfg)?;
        let mask = crate::mixing::ConfidenceMask { mask, threshold: None };
        let mixed = dacs_mix(src_img, tgt, &pseudo, &mask, DacsDirection::TargetOntoSource, &mut state.rng)?.image;
        for _ in 0..cfg.batch_size {
            let i = state.rng.random_range(0..mixed.pixels());
            if mixed.labels[i] != UNLABELED {
                batch.mix.push(pixel_features(&mixed, i), mixed.labels[i]);
            }
        }
    }
    let (parts, _) = state.apply(&batch, cfg, progress.step, progress.learning_rate(cfg))?;
    Ok(state.report(parts, cfg, progress.step, (batch.hfa.is_some(), !batch.mix.is_empty(), false)))
}

/// Whether LiDAR step `step` is an HFA step (else a PolarMix step).
pub fn lidar_hfa_step(alternation: Alternation, step: usize) -> bool {
    step.is_multiple_of(2) == (alternation == Alternation::HfaFirst)
}

/// One LiDAR iteration: HFA and PolarMix alternate until the target-only
/// phase, after which only the revealed target labels are fitted.
pub fn train_step_lidar(
    state: &mut TrainState,
    source: &DomainView<'_, LabeledCloud>,
    target: &DomainView<'_, LabeledCloud>,
    cfg: &TrainingConfig,
    progress: Progress,
) -> Result<LossReport, TrainerError> {
    check_modality(cfg, Modality::Lidar)?;
    let revealed: Vec<&[u32]> = target.items.iter().map(|t| t.labels.as_slice()).collect();
    let target_only = progress.frac() >= cfg.target_only_phase_start;
    let mut batch = StepBatch::default();
    if target_only {
        batch.target = state.sample_revealed(target.features, &revealed, cfg.batch_size);
        let (parts, _) = state.apply(&batch, cfg, progress.step, progress.learning_rate(cfg))?;
        return Ok(state.report(parts, cfg, progress.step, (false, false, true)));
    }
    let s = state.rng.random_range(0..source.items.len());
    let src = &source.items[s];
    batch.source = state.sample_cells(&source.features[s], &src.labels, cfg.batch_size);
    batch.target = state.sample_revealed(target.features, &revealed, cfg.batch_size);
    if lidar_hfa_step(cfg.alternation, progress.step) {
        if cfg.components.hfa {
            batch.hfa = Some(state.hfa_inputs(&[&batch.source, &batch.target], cfg, progress.step, progress.frac())?);
        }
    } else if cfg.components.mixing {
        let t = state.rng.random_range(0..target.items.len());
        let tgt = &target.items[t];
        let (labels, mask) = state.pseudo_targets(&target.features[t], &tgt.labels, cfg)?;
        let labels = labels
            .into_iter()
            .zip(mask)
            .map(|(l, m)| if m { l } else { UNLABELED })
            .collect();
        let a = LabeledCloud {
            labels,
            ..tgt.clone()
        };
        let theta0 = sample_sector_start(&mut state.rng);
        let swapped = polarmix_sector_swap(&a, src, theta0, DEFAULT_SECTOR)?;
        let rotations = sample_rotations(&mut state.rng);
        let mixed = polarmix_instance_paste(&swapped.cloud, src, &rarest_third(&src.labels), &rotations, None)?.cloud;
        let feats = cloud_features(&mixed, cfg.voxel_size)?;
        batch.mix = state.sample_cells(&feats, &mixed.labels, cfg.batch_size);
    }
    let (parts, _) = state.apply(&batch, cfg, progress.step, progress.learning_rate(cfg))?;
    Ok(state.report(parts, cfg, progress.step, (batch.hfa.is_some(), !batch.mix.is_empty(), false)))
}
