//! Acquisition scores and labeling-budget mechanics.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BallPoint, GeometryError};
use crate::scalar::{ceil_tolerant, Real};
use crate::Modality;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AcquisitionError {
    #[error("probability vector {index} sums to {sum}")]
    Unnormalized { index: usize, sum: f64 },
    #[error("non-finite score at {0}")]
    NonFiniteScore(usize),
    #[error("round {round} is past the last of {rounds} rounds")]
    BudgetExhausted { round: usize, rounds: usize },
    #[error("every cell is already labeled")]
    AllLabeled,
    #[error("{expected} items expected, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("voxel size must be positive and finite, got {0}")]
    InvalidVoxelSize(f64),
    #[error("invalid budget policy: {0}")]
    InvalidPolicy(String),
    #[error("strategy {strategy:?} does not apply to {modality}")]
    StrategyModality { strategy: Strategy, modality: Modality },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

fn check_normalized(index: usize, probs: &[f64]) -> Result<(), AcquisitionError> {
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-6 || probs.iter().any(|p| !(*p >= 0.0)) {
        return Err(AcquisitionError::Unnormalized { index, sum });
    }
    Ok(())
}

fn entropy_unchecked(probs: &[f64]) -> f64 {
    -probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}

/// Shannon entropy `−Σ p ln p` with `0 ln 0 = 0`.
pub fn entropy(probs: &[f64]) -> Result<f64, AcquisitionError> {
    check_normalized(0, probs)?;
    Ok(entropy_unchecked(probs).max(0.0))
}

/// Hyperbolic radius of the embedding times the prediction entropy.
pub fn halo_score<T: Real>(embedding: &BallPoint<T>, probs: &[f64]) -> Result<f64, AcquisitionError> {
    Ok(embedding.hyperbolic_radius().value() * entropy(probs)?)
}

/// Per-cell scores with labeled flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMap {
    pub scores: Vec<f64>,
    pub labeled: Vec<bool>,
}

impl ScoreMap {
    pub fn new(scores: Vec<f64>) -> Result<Self, AcquisitionError> {
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(AcquisitionError::NonFiniteScore(i));
        }
        let labeled = vec![false; scores.len()];
        Ok(ScoreMap { scores, labeled })
    }

    pub fn with_labeled(scores: Vec<f64>, labeled: Vec<bool>) -> Result<Self, AcquisitionError> {
        if labeled.len() != scores.len() {
            return Err(AcquisitionError::LengthMismatch {
                expected: scores.len(),
                found: labeled.len(),
            });
        }
        let mut map = Self::new(scores)?;
        map.labeled = labeled;
        Ok(map)
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn labeled_count(&self) -> usize {
        self.labeled.iter().filter(|&&l| l).count()
    }
}

/// HALO scores for every cell.
pub fn halo_scores<T: Real>(
    embeddings: &[BallPoint<T>],
    probs: &[Vec<f64>],
) -> Result<Vec<f64>, AcquisitionError> {
    if embeddings.len() != probs.len() {
        return Err(AcquisitionError::LengthMismatch {
            expected: embeddings.len(),
            found: probs.len(),
        });
    }
    embeddings
        .iter()
        .zip(probs)
        .enumerate()
        .map(|(i, (e, p))| {
            check_normalized(i, p)?;
            Ok(e.hyperbolic_radius().value() * entropy_unchecked(p).max(0.0))
        })
        .collect()
}

/// Integer voxel coordinates `⌊p / size⌋`.
pub type VoxelKey = [i64; 3];

/// Points bucketed into cubic voxels; voxel ids follow ascending key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelGrid {
    pub voxel_size: f64,
    pub keys: Vec<VoxelKey>,
    pub members: Vec<Vec<usize>>,
    pub labeled: Vec<bool>,
    point_voxel: Vec<usize>,
}

impl VoxelGrid {
    pub fn build(points: &[[f64; 3]], voxel_size: f64) -> Result<Self, AcquisitionError> {
        if !(voxel_size > 0.0 && voxel_size.is_finite()) {
            return Err(AcquisitionError::InvalidVoxelSize(voxel_size));
        }
        let mut buckets: BTreeMap<VoxelKey, Vec<usize>> = BTreeMap::new();
        for (i, p) in points.iter().enumerate() {
            let key = p.map(|v| (v / voxel_size).floor() as i64);
            buckets.entry(key).or_default().push(i);
        }
        let mut point_voxel = vec![0; points.len()];
        let mut keys = Vec::with_capacity(buckets.len());
        let mut members = Vec::with_capacity(buckets.len());
        for (v, (k, m)) in buckets.into_iter().enumerate() {
            for &i in &m {
                point_voxel[i] = v;
            }
            keys.push(k);
            members.push(m);
        }
        let labeled = vec![false; keys.len()];
        Ok(VoxelGrid {
            voxel_size,
            keys,
            members,
            labeled,
            point_voxel,
        })
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn point_count(&self) -> usize {
        self.point_voxel.len()
    }

    pub fn voxel_of(&self, point: usize) -> usize {
        self.point_voxel[point]
    }

    /// Points in labeled voxels.
    pub fn labeled_points(&self) -> Vec<usize> {
        self.members
            .iter()
            .zip(&self.labeled)
            .filter(|(_, &l)| l)
            .flat_map(|(m, _)| m.iter().copied())
            .collect()
    }
}

/// Voxel confusion degree: entropy of each voxel's predicted-class histogram.
pub fn vcd(grid: &VoxelGrid, predicted: &[u32]) -> Result<Vec<f64>, AcquisitionError> {
    if predicted.len() != grid.point_count() {
        return Err(AcquisitionError::LengthMismatch {
            expected: grid.point_count(),
            found: predicted.len(),
        });
    }
    Ok(grid
        .members
        .iter()
        .map(|m| {
            let mut hist: BTreeMap<u32, usize> = BTreeMap::new();
            for &i in m {
                *hist.entry(predicted[i]).or_default() += 1;
            }
            let n = m.len() as f64;
            let p: Vec<f64> = hist.values().map(|&c| c as f64 / n).collect();
            entropy_unchecked(&p).max(0.0)
        })
        .collect())
}

/// Rescales to `[0, 1]` over the slice; a constant slice maps to zeros.
pub fn min_max_normalize(xs: &[f64]) -> Vec<f64> {
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; xs.len()];
    }
    xs.iter().map(|x| (x - lo) / (hi - lo)).collect()
}

fn argmax(p: &[f64]) -> u32 {
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    best as u32
}

/// Per-voxel mean HALO score over member points.
pub fn voxel_halo<T: Real>(
    grid: &VoxelGrid,
    embeddings: &[BallPoint<T>],
    probs: &[Vec<f64>],
) -> Result<Vec<f64>, AcquisitionError> {
    if embeddings.len() != grid.point_count() {
        return Err(AcquisitionError::LengthMismatch {
            expected: grid.point_count(),
            found: embeddings.len(),
        });
    }
    let point = halo_scores(embeddings, probs)?;
    Ok(grid
        .members
        .iter()
        .map(|m| m.iter().map(|&i| point[i]).sum::<f64>() / m.len() as f64)
        .collect())
}

/// Normalised VCD plus normalised mean HALO score, both min-max scaled over
/// the scan. Predicted labels are the per-point argmax of `probs`.
pub fn halo_vcd_score<T: Real>(
    grid: &VoxelGrid,
    embeddings: &[BallPoint<T>],
    probs: &[Vec<f64>],
) -> Result<Vec<f64>, AcquisitionError> {
    let halo = voxel_halo(grid, embeddings, probs)?;
    let predicted: Vec<u32> = probs.iter().map(|p| argmax(p)).collect();
    let conf = vcd(grid, &predicted)?;
    Ok(min_max_normalize(&conf)
        .into_iter()
        .zip(min_max_normalize(&halo))
        .map(|(a, b)| a + b)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Halo,
    Vcd,
    HaloVcd,
    Random,
}

impl Strategy {
    pub fn supports(self, modality: Modality) -> bool {
        match self {
            Strategy::Halo | Strategy::Random => true,
            Strategy::Vcd | Strategy::HaloVcd => modality == Modality::Lidar,
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "halo" => Ok(Strategy::Halo),
            "vcd" => Ok(Strategy::Vcd),
            "halo_vcd" | "halo-vcd" => Ok(Strategy::HaloVcd),
            "random" => Ok(Strategy::Random),
            other => Err(format!("unknown strategy `{other}`")),
        }
    }
}

/// Pixel scores for an image under `strategy`.
pub fn score_pixels<T: Real, R: Rng + ?Sized>(
    strategy: Strategy,
    embeddings: &[BallPoint<T>],
    probs: &[Vec<f64>],
    rng: &mut R,
) -> Result<Vec<f64>, AcquisitionError> {
    match strategy {
        Strategy::Halo => halo_scores(embeddings, probs),
        Strategy::Random => Ok((0..embeddings.len()).map(|_| rng.random::<f64>()).collect()),
        s => Err(AcquisitionError::StrategyModality {
            strategy: s,
            modality: Modality::Rgb,
        }),
    }
}

/// Voxel scores for a scan under `strategy`; HALO averages point scores.
pub fn score_voxels<T: Real, R: Rng + ?Sized>(
    strategy: Strategy,
    grid: &VoxelGrid,
    embeddings: &[BallPoint<T>],
    probs: &[Vec<f64>],
    rng: &mut R,
) -> Result<Vec<f64>, AcquisitionError> {
    match strategy {
        Strategy::Halo => voxel_halo(grid, embeddings, probs),
        Strategy::Vcd => {
            let predicted: Vec<u32> = probs.iter().map(|p| argmax(p)).collect();
            vcd(grid, &predicted)
        }
        Strategy::HaloVcd => halo_vcd_score(grid, embeddings, probs),
        Strategy::Random => Ok((0..grid.len()).map(|_| rng.random::<f64>()).collect()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "modality", rename_all = "lowercase", deny_unknown_fields)]
pub enum BudgetPolicy {
    Rgb { fraction: f64, rounds: usize },
    Lidar { voxels_per_scan: usize, rounds: usize },
}

impl BudgetPolicy {
    pub fn default_for(modality: Modality) -> Self {
        match modality {
            Modality::Rgb => BudgetPolicy::Rgb {
                fraction: 0.05,
                rounds: 5,
            },
            Modality::Lidar => BudgetPolicy::Lidar {
                voxels_per_scan: 1,
                rounds: 5,
            },
        }
    }

    pub fn modality(&self) -> Modality {
        match self {
            BudgetPolicy::Rgb { .. } => Modality::Rgb,
            BudgetPolicy::Lidar { .. } => Modality::Lidar,
        }
    }

    pub fn rounds(&self) -> usize {
        match *self {
            BudgetPolicy::Rgb { rounds, .. } | BudgetPolicy::Lidar { rounds, .. } => rounds,
        }
    }

    pub fn validate(&self) -> Result<(), AcquisitionError> {
        match *self {
            BudgetPolicy::Rgb { fraction, rounds } => {
                if !(fraction > 0.0 && fraction <= 1.0) {
                    return Err(AcquisitionError::InvalidPolicy(format!(
                        "fraction {fraction} outside (0, 1]"
                    )));
                }
                if rounds == 0 {
                    return Err(AcquisitionError::InvalidPolicy("rounds must be ≥ 1".into()));
                }
            }
            BudgetPolicy::Lidar {
                voxels_per_scan,
                rounds,
            } => {
                if voxels_per_scan == 0 || rounds == 0 {
                    return Err(AcquisitionError::InvalidPolicy(
                        "voxels per scan and rounds must be ≥ 1".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Cumulative RGB selections after `rounds_done` rounds over `n` cells.
    pub fn cumulative_pixels(fraction: f64, rounds: usize, n: usize, rounds_done: usize) -> usize {
        let total = ceil_tolerant(fraction * n as f64) as usize;
        if rounds_done >= rounds {
            return total;
        }
        let per_round = ceil_tolerant(fraction / rounds as f64 * n as f64) as usize;
        (per_round * rounds_done).min(total)
    }

    /// Items to select in `round` for a map of `n` cells (RGB) or per scan
    /// (LiDAR).
    pub fn quota(&self, n: usize, round: usize) -> Result<usize, AcquisitionError> {
        self.validate()?;
        let rounds = self.rounds();
        if round >= rounds {
            return Err(AcquisitionError::BudgetExhausted { round, rounds });
        }
        Ok(match *self {
            BudgetPolicy::Rgb { fraction, rounds } => {
                Self::cumulative_pixels(fraction, rounds, n, round + 1)
                    - Self::cumulative_pixels(fraction, rounds, n, round)
            }
            BudgetPolicy::Lidar { voxels_per_scan, .. } => voxels_per_scan,
        })
    }
}

/// Top-`k` unlabeled indices by descending score, ties by ascending index.
pub fn top_k_unlabeled(scores: &[f64], labeled: &[bool], k: usize) -> Result<Vec<usize>, AcquisitionError> {
    if labeled.len() != scores.len() {
        return Err(AcquisitionError::LengthMismatch {
            expected: scores.len(),
            found: labeled.len(),
        });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(AcquisitionError::NonFiniteScore(i));
    }
    let mut idx: Vec<usize> = (0..scores.len()).filter(|&i| !labeled[i]).collect();
    if idx.is_empty() {
        return Err(AcquisitionError::AllLabeled);
    }
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx.sort_unstable();
    Ok(idx)
}

/// RGB selection for one round; marks the chosen cells labeled.
pub fn select_pixels(map: &mut ScoreMap, policy: &BudgetPolicy, round: usize) -> Result<Vec<usize>, AcquisitionError> {
    if policy.modality() != Modality::Rgb {
        return Err(AcquisitionError::InvalidPolicy("pixel selection needs an rgb policy".into()));
    }
    let k = policy.quota(map.len(), round)?;
    let chosen = top_k_unlabeled(&map.scores, &map.labeled, k)?;
    for &i in &chosen {
        map.labeled[i] = true;
    }
    Ok(chosen)
}

/// LiDAR selection for one scan and round; marks the chosen voxels labeled.
pub fn select_voxels(
    grid: &mut VoxelGrid,
    scores: &[f64],
    policy: &BudgetPolicy,
    round: usize,
) -> Result<Vec<usize>, AcquisitionError> {
    if policy.modality() != Modality::Lidar {
        return Err(AcquisitionError::InvalidPolicy("voxel selection needs a lidar policy".into()));
    }
    let k = policy.quota(grid.len(), round)?;
    let chosen = top_k_unlabeled(scores, &grid.labeled, k)?;
    for &i in &chosen {
        grid.labeled[i] = true;
    }
    Ok(chosen)
}

/// One round's selection for one image or scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    pub item: usize,
    pub ids: Vec<usize>,
    pub scores: Vec<f64>,
}
