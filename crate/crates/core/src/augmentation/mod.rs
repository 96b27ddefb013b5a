//! Per-cell hyperbolic feature augmentation: synthetic sampling from class
//! distributions, scheduled geodesic interpolation, hyperbolic mixup and
//! reintegration into a feature map.

mod loss;

pub use loss::{focal_loss, focal_loss_from_logits, hfa_loss, HfaLoss, HfaLossConfig};

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::{ClassDistribution, DistributionError};
use crate::geometry::{BallPoint, Curvature, GeometryError};
use crate::scalar::Real;
use crate::{Modality, UNLABELED};

#[derive(Debug, Error)]
pub enum AugmentationError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
    #[error("no distribution for present class {0}")]
    MissingDistribution(u32),
    #[error("no real embeddings for class {0}")]
    NoRealEmbeddings(u32),
    #[error("map has {cells} cells but {labels} labels")]
    ShapeMismatch { cells: usize, labels: usize },
    #[error("label {label} at cell {cell} is outside 0..{classes}")]
    LabelOutOfRange { cell: usize, label: u32, classes: u32 },
    #[error("maps disagree in shape or labels")]
    MapMismatch,
    #[error("probability row {row} sums to {sum}")]
    Unnormalized { row: usize, sum: f64 },
    #[error("no labeled cells")]
    NoLabeledCells,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapShape {
    Grid { height: usize, width: usize },
    Points { count: usize },
}

impl MapShape {
    pub fn cells(&self) -> usize {
        match *self {
            MapShape::Grid { height, width } => height * width,
            MapShape::Points { count } => count,
        }
    }
}

/// Per-cell ball embeddings with class labels ([`UNLABELED`] for none).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMap<T = f64> {
    shape: MapShape,
    embeddings: Vec<BallPoint<T>>,
    labels: Vec<u32>,
    num_classes: u32,
}

impl<T: Real> EmbeddingMap<T> {
    pub fn new(
        shape: MapShape,
        embeddings: Vec<BallPoint<T>>,
        labels: Vec<u32>,
        num_classes: u32,
    ) -> Result<Self, AugmentationError> {
        if embeddings.len() != shape.cells() || labels.len() != shape.cells() {
            return Err(AugmentationError::ShapeMismatch {
                cells: embeddings.len(),
                labels: labels.len(),
            });
        }
        for (cell, &label) in labels.iter().enumerate() {
            if label != UNLABELED && label >= num_classes {
                return Err(AugmentationError::LabelOutOfRange {
                    cell,
                    label,
                    classes: num_classes,
                });
            }
        }
        Ok(EmbeddingMap {
            shape,
            embeddings,
            labels,
            num_classes,
        })
    }

    pub fn shape(&self) -> MapShape {
        self.shape
    }

    pub fn embeddings(&self) -> &[BallPoint<T>] {
        &self.embeddings
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn num_classes(&self) -> u32 {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Labeled classes present in the map.
    pub fn present_classes(&self) -> BTreeSet<u32> {
        self.labels.iter().copied().filter(|&l| l != UNLABELED).collect()
    }

    /// Labeled embeddings grouped by class, in cell order.
    pub fn class_embeddings(&self) -> BTreeMap<u32, Vec<BallPoint<T>>> {
        let mut out: BTreeMap<u32, Vec<BallPoint<T>>> = BTreeMap::new();
        for (e, &l) in self.embeddings.iter().zip(&self.labels) {
            if l != UNLABELED {
                out.entry(l).or_default().push(e.clone());
            }
        }
        out
    }

    fn same_layout(&self, other: &Self) -> bool {
        self.shape == other.shape && self.labels == other.labels
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    Sampled,
    Mixed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolEntry<T = f64> {
    pub point: BallPoint<T>,
    pub kind: PoolKind,
}

/// Synthetic embeddings per class.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationPool<T = f64> {
    pub classes: BTreeMap<u32, Vec<PoolEntry<T>>>,
}

impl<T> Default for AugmentationPool<T> {
    fn default() -> Self {
        AugmentationPool {
            classes: BTreeMap::new(),
        }
    }
}

impl<T: Real> AugmentationPool<T> {
    pub fn sampled(&self, class_id: u32) -> Vec<&BallPoint<T>> {
        self.entries_of(class_id, PoolKind::Sampled)
    }

    pub fn mixed(&self, class_id: u32) -> Vec<&BallPoint<T>> {
        self.entries_of(class_id, PoolKind::Mixed)
    }

    fn entries_of(&self, class_id: u32, kind: PoolKind) -> Vec<&BallPoint<T>> {
        self.classes
            .get(&class_id)
            .map(|v| v.iter().filter(|e| e.kind == kind).map(|e| &e.point).collect())
            .unwrap_or_default()
    }

    pub fn sizes(&self) -> BTreeMap<u32, usize> {
        self.classes.iter().map(|(&c, v)| (c, v.len())).collect()
    }

    /// Appends mixup outputs to the pool.
    pub fn add_mixed(&mut self, mixed: &BTreeMap<u32, Vec<BallPoint<T>>>) {
        for (&c, pts) in mixed {
            let entry = self.classes.entry(c).or_default();
            entry.extend(pts.iter().map(|p| PoolEntry {
                point: p.clone(),
                kind: PoolKind::Mixed,
            }));
        }
    }
}

/// Number of synthetic samples drawn per class.
pub fn samples_per_class(modality: Modality) -> usize {
    match modality {
        Modality::Rgb => 5,
        Modality::Lidar => 2,
    }
}

/// Samples the modality's quota of synthetic embeddings for every class in
/// `present`. The noise is reparameterised, so gradients reach the
/// distribution parameters when `T` is a tape scalar.
pub fn build_pool<T: Real, R: Rng + ?Sized>(
    distributions: &BTreeMap<u32, ClassDistribution<T>>,
    present: &BTreeSet<u32>,
    modality: Modality,
    rng: &mut R,
) -> Result<AugmentationPool<T>, AugmentationError> {
    let k = samples_per_class(modality);
    let mut pool = AugmentationPool::default();
    for &c in present {
        let dist = distributions
            .get(&c)
            .ok_or(AugmentationError::MissingDistribution(c))?;
        let entries = (0..k)
            .map(|_| {
                let noise: Vec<f64> = (0..dist.dim()).map(|_| StandardNormal.sample(rng)).collect();
                PoolEntry {
                    point: BallPoint::from_guarded(dist.sample_from_noise(&noise), dist.curvature()),
                    kind: PoolKind::Sampled,
                }
            })
            .collect();
        pool.classes.insert(c, entries);
    }
    Ok(pool)
}

/// Synthetic weight as a function of training progress, linear from `w0`
/// at `t = 0` to `w1` at `t = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterpolationSchedule {
    pub w0: f64,
    pub w1: f64,
}

impl Default for InterpolationSchedule {
    fn default() -> Self {
        InterpolationSchedule { w0: 0.1, w1: 0.5 }
    }
}

impl InterpolationSchedule {
    pub fn new(w0: f64, w1: f64) -> Result<Self, AugmentationError> {
        let s = InterpolationSchedule { w0, w1 };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), AugmentationError> {
        let unit = |w: f64| (0.0..=1.0).contains(&w);
        if !unit(self.w0) || !unit(self.w1) || self.w1 < self.w0 {
            return Err(AugmentationError::InvalidConfig(format!(
                "schedule needs 0 ≤ w0 ≤ w1 ≤ 1, got ({}, {})",
                self.w0, self.w1
            )));
        }
        Ok(())
    }

    pub fn weight(&self, t_frac: f64) -> f64 {
        let t = t_frac.clamp(0.0, 1.0);
        self.w0 + (self.w1 - self.w0) * t
    }
}

/// Weighted two-point gyromidpoint `m(a, b; 1 − w, w)`; the endpoints are
/// returned exactly at `w ∈ {0, 1}`.
pub fn blend<T: Real>(a: &BallPoint<T>, b: &BallPoint<T>, w: T) -> Result<BallPoint<T>, GeometryError> {
    if w.value() <= 0.0 {
        return Ok(a.clone());
    }
    if w.value() >= 1.0 {
        return Ok(b.clone());
    }
    crate::geometry::gyromidpoint(&[a.clone(), b.clone()], &[T::one() - w, w])
}

/// Replaces each real embedding by its blend with a randomly assigned
/// sampled pool member, at weight `schedule.weight(t_frac)`.
pub fn interpolate<T: Real, R: Rng + ?Sized>(
    real: &BTreeMap<u32, Vec<BallPoint<T>>>,
    pool: &AugmentationPool<T>,
    schedule: &InterpolationSchedule,
    t_frac: f64,
    rng: &mut R,
) -> Result<BTreeMap<u32, Vec<BallPoint<T>>>, AugmentationError> {
    let w = T::lit(schedule.weight(t_frac));
    let mut out = BTreeMap::new();
    for (&c, synth) in &pool.classes {
        let synth: Vec<&BallPoint<T>> = synth
            .iter()
            .filter(|e| e.kind == PoolKind::Sampled)
            .map(|e| &e.point)
            .collect();
        if synth.is_empty() {
            continue;
        }
        let reals = match real.get(&c) {
            Some(r) if !r.is_empty() => r,
            _ => return Err(AugmentationError::NoRealEmbeddings(c)),
        };
        let blended = reals
            .iter()
            .map(|h| blend(h, synth[rng.random_range(0..synth.len())], w))
            .collect::<Result<Vec<_>, _>>()?;
        out.insert(c, blended);
    }
    Ok(out)
}

/// Keeps a random `fraction` of each class's embeddings (at least one).
pub fn subsample<T: Clone, R: Rng + ?Sized>(
    real: &BTreeMap<u32, Vec<T>>,
    fraction: f64,
    rng: &mut R,
) -> BTreeMap<u32, Vec<T>> {
    real.iter()
        .map(|(&c, v)| {
            let keep = ((v.len() as f64 * fraction.clamp(0.0, 1.0)).ceil() as usize).clamp(1, v.len().max(1));
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.shuffle(rng);
            idx.truncate(keep);
            idx.sort_unstable();
            (c, idx.into_iter().map(|i| v[i].clone()).collect())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixupConfig {
    pub enabled: bool,
    pub beta_alpha: f64,
}

impl MixupConfig {
    pub fn for_modality(modality: Modality) -> Self {
        MixupConfig {
            enabled: modality == Modality::Rgb,
            beta_alpha: 0.4,
        }
    }
}

impl Default for MixupConfig {
    fn default() -> Self {
        Self::for_modality(Modality::Rgb)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixupOutput<T = f64> {
    pub mixed: BTreeMap<u32, Vec<BallPoint<T>>>,
    /// Classes with fewer than two embeddings.
    pub skipped: Vec<u32>,
    pub lambdas: BTreeMap<u32, Vec<f64>>,
}

/// Mixes each embedding with a uniformly shuffled partner of the same class
/// at weight `λ ~ Beta(α, α)` on the embedding itself.
pub fn hyperbolic_mixup<T: Real, R: Rng + ?Sized>(
    real: &BTreeMap<u32, Vec<BallPoint<T>>>,
    cfg: &MixupConfig,
    rng: &mut R,
) -> Result<MixupOutput<T>, AugmentationError> {
    let mut out = MixupOutput {
        mixed: BTreeMap::new(),
        skipped: Vec::new(),
        lambdas: BTreeMap::new(),
    };
    if !cfg.enabled {
        return Ok(out);
    }
    let beta = Beta::new(cfg.beta_alpha, cfg.beta_alpha)
        .map_err(|e| AugmentationError::InvalidConfig(format!("beta_alpha: {e}")))?;
    for (&c, h) in real {
        if h.len() < 2 {
            out.skipped.push(c);
            continue;
        }
        let mut partner: Vec<usize> = (0..h.len()).collect();
        partner.shuffle(rng);
        let mut mixed = Vec::with_capacity(h.len());
        let mut lambdas = Vec::with_capacity(h.len());
        for (i, &j) in partner.iter().enumerate() {
            let lam: f64 = beta.sample(rng);
            mixed.push(blend(&h[i], &h[j], T::lit(1.0 - lam))?);
            lambdas.push(lam);
        }
        out.mixed.insert(c, mixed);
        out.lambdas.insert(c, lambdas);
    }
    Ok(out)
}

/// Interpolated and mixed embeddings for one class, aligned with the class's
/// labeled cells in cell order.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedClass<T = f64> {
    pub sampled: Vec<BallPoint<T>>,
    pub mixed: Vec<BallPoint<T>>,
}

impl<T> Default for AugmentedClass<T> {
    fn default() -> Self {
        AugmentedClass {
            sampled: Vec::new(),
            mixed: Vec::new(),
        }
    }
}

/// Writes augmented embeddings back into the cells of their class. A fair
/// coin per class picks the sampled or mixed set; a missing set falls back to
/// the other. Unlabeled cells, labels and layout are untouched.
pub fn reintegrate<T: Real, R: Rng + ?Sized>(
    features: &EmbeddingMap<T>,
    augmented: &BTreeMap<u32, AugmentedClass<T>>,
    rng: &mut R,
) -> (EmbeddingMap<T>, BTreeMap<u32, PoolKind>) {
    let mut out = features.clone();
    let mut chosen = BTreeMap::new();
    for (&c, aug) in augmented {
        let coin: bool = rng.random();
        let (kind, src) = match (aug.sampled.is_empty(), aug.mixed.is_empty()) {
            (true, true) => continue,
            (false, true) => (PoolKind::Sampled, &aug.sampled),
            (true, false) => (PoolKind::Mixed, &aug.mixed),
            (false, false) if coin => (PoolKind::Mixed, &aug.mixed),
            (false, false) => (PoolKind::Sampled, &aug.sampled),
        };
        let cells = out.labels.iter().enumerate().filter(|(_, &l)| l == c).map(|(i, _)| i);
        for (k, i) in cells.enumerate() {
            out.embeddings[i] = src[k % src.len()].clone();
        }
        chosen.insert(c, kind);
    }
    (out, chosen)
}

/// Whole augmentation step for one map: pool sampling, interpolation,
/// optional mixup and reintegration.
#[allow(clippy::too_many_arguments)]
pub fn augment_map<T: Real, R: Rng + ?Sized>(
    features: &EmbeddingMap<T>,
    distributions: &BTreeMap<u32, ClassDistribution<T>>,
    modality: Modality,
    schedule: &InterpolationSchedule,
    mixup: &MixupConfig,
    t_frac: f64,
    rng: &mut R,
) -> Result<(EmbeddingMap<T>, AugmentationPool<T>), AugmentationError> {
    let real = features.class_embeddings();
    let present: BTreeSet<u32> = real.keys().copied().collect();
    let mut pool = build_pool(distributions, &present, modality, rng)?;
    let sampled = interpolate(&real, &pool, schedule, t_frac, rng)?;
    let mixed = hyperbolic_mixup(&real, mixup, rng)?;
    pool.add_mixed(&mixed.mixed);
    let mut per_class: BTreeMap<u32, AugmentedClass<T>> = BTreeMap::new();
    for (c, s) in sampled {
        per_class.entry(c).or_default().sampled = s;
    }
    for (c, m) in mixed.mixed {
        per_class.entry(c).or_default().mixed = m;
    }
    let (map, _) = reintegrate(features, &per_class, rng);
    Ok((map, pool))
}

/// Curvature of a map's embeddings, or the default for an empty map.
pub fn map_curvature<T: Real>(map: &EmbeddingMap<T>) -> Curvature {
    map.embeddings.first().map(|e| e.curvature()).unwrap_or_default()
}
