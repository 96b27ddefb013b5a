//! Input-space domain mixing: confidence-gated cut-paste for images and
//! sector swap / instance paste for point clouds.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::{PI, TAU};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::UNLABELED;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MixingError {
    #[error("image is empty")]
    EmptyImage,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("percentile {0} outside [0, 100]")]
    InvalidPercentile(f64),
    #[error("sector width {0} outside (0, 2π)")]
    InvalidSector(f64),
    #[error("rotation list is empty")]
    NoRotations,
    #[error("masked pixel {0} has no pseudo-label")]
    UnlabeledMaskedPixel(usize),
    #[error("non-finite value at {0}")]
    NonFinite(usize),
}

/// Dense image: `channels` is row-major `H × W × C`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledImage {
    pub height: usize,
    pub width: usize,
    pub num_channels: usize,
    pub channels: Vec<f32>,
    pub labels: Vec<u32>,
}

impl LabeledImage {
    pub fn new(
        height: usize,
        width: usize,
        num_channels: usize,
        channels: Vec<f32>,
        labels: Vec<u32>,
    ) -> Result<Self, MixingError> {
        let n = height * width;
        if channels.len() != n * num_channels || labels.len() != n {
            return Err(MixingError::ShapeMismatch(format!(
                "{height}×{width}×{num_channels} image with {} channel values and {} labels",
                channels.len(),
                labels.len()
            )));
        }
        Ok(LabeledImage {
            height,
            width,
            num_channels,
            channels,
            labels,
        })
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn pixel(&self, i: usize) -> &[f32] {
        &self.channels[i * self.num_channels..(i + 1) * self.num_channels]
    }

    fn same_shape(&self, other: &LabeledImage) -> Result<(), MixingError> {
        if (self.height, self.width, self.num_channels) != (other.height, other.width, other.num_channels) {
            return Err(MixingError::ShapeMismatch(format!(
                "{}×{}×{} vs {}×{}×{}",
                self.height, self.width, self.num_channels, other.height, other.width, other.num_channels
            )));
        }
        Ok(())
    }
}

/// Point cloud of `(x, y, z, intensity)` records with per-point labels.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LabeledCloud {
    pub points: Vec<[f64; 4]>,
    pub labels: Vec<u32>,
    pub instances: Option<Vec<u32>>,
}

impl LabeledCloud {
    pub fn new(points: Vec<[f64; 4]>, labels: Vec<u32>, instances: Option<Vec<u32>>) -> Result<Self, MixingError> {
        if labels.len() != points.len() || instances.as_ref().is_some_and(|i| i.len() != points.len()) {
            return Err(MixingError::ShapeMismatch(format!(
                "{} points, {} labels",
                points.len(),
                labels.len()
            )));
        }
        if let Some(i) = points.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(MixingError::NonFinite(i));
        }
        Ok(LabeledCloud {
            points,
            labels,
            instances,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn xyz(&self) -> Vec<[f64; 3]> {
        self.points.iter().map(|p| [p[0], p[1], p[2]]).collect()
    }
}

/// Azimuth in `[0, 2π)`; the z axis itself maps to 0.
pub fn azimuth(x: f64, y: f64) -> f64 {
    if x == 0.0 && y == 0.0 {
        return 0.0;
    }
    let a = y.atan2(x).rem_euclid(TAU);
    if a >= TAU {
        0.0
    } else {
        a
    }
}

/// Whether azimuth `phi` lies in `[theta0, theta0 + sigma)` modulo `2π`.
pub fn in_sector(phi: f64, theta0: f64, sigma: f64) -> bool {
    (phi - theta0).rem_euclid(TAU) < sigma
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceMask {
    pub mask: Vec<bool>,
    pub threshold: Option<f64>,
}

/// Nearest-rank percentile threshold; `None` for `p = 0`.
pub fn percentile_threshold(scores: &[f64], p: f64) -> Result<Option<f64>, MixingError> {
    if !(0.0..=100.0).contains(&p) {
        return Err(MixingError::InvalidPercentile(p));
    }
    if scores.is_empty() {
        return Err(MixingError::EmptyImage);
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(MixingError::NonFinite(i));
    }
    let rank = crate::scalar::ceil_tolerant(p / 100.0 * scores.len() as f64) as usize;
    if rank == 0 {
        return Ok(None);
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(Some(sorted[rank.min(sorted.len()) - 1]))
}

/// Argmax labels where the uncertainty score is at or below the
/// `tau_percentile` cut, the unlabeled sentinel elsewhere.
pub fn pseudo_label(
    probs: &[Vec<f64>],
    scores: &[f64],
    tau_percentile: f64,
) -> Result<(Vec<u32>, ConfidenceMask), MixingError> {
    if probs.is_empty() {
        return Err(MixingError::EmptyImage);
    }
    if probs.len() != scores.len() {
        return Err(MixingError::ShapeMismatch(format!(
            "{} probability rows, {} scores",
            probs.len(),
            scores.len()
        )));
    }
    let threshold = percentile_threshold(scores, tau_percentile)?;
    let mask: Vec<bool> = scores.iter().map(|&s| threshold.is_some_and(|t| s <= t)).collect();
    let labels = probs
        .iter()
        .zip(&mask)
        .map(|(p, &m)| if m { argmax(p) } else { UNLABELED })
        .collect();
    Ok((labels, ConfidenceMask { mask, threshold }))
}

pub fn argmax(p: &[f64]) -> u32 {
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    best as u32
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DacsDirection {
    /// Confident target regions pasted onto the source image.
    #[default]
    TargetOntoSource,
    /// Pixels of half the source classes pasted onto the target image.
    SourceOntoTarget,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DacsOutput {
    pub image: LabeledImage,
    /// True where the pixel came from the pasted image.
    pub paste_mask: Vec<bool>,
}

/// Cut-paste mixing of a source image with a pseudo-labeled target image.
pub fn dacs_mix<R: Rng + ?Sized>(
    source: &LabeledImage,
    target: &LabeledImage,
    pseudo: &[u32],
    mask: &ConfidenceMask,
    direction: DacsDirection,
    rng: &mut R,
) -> Result<DacsOutput, MixingError> {
    source.same_shape(target)?;
    let n = source.pixels();
    if pseudo.len() != n || mask.mask.len() != n {
        return Err(MixingError::ShapeMismatch(format!(
            "{n} pixels, {} pseudo-labels, {} mask entries",
            pseudo.len(),
            mask.mask.len()
        )));
    }
    match direction {
        DacsDirection::TargetOntoSource => {
            if let Some(i) = (0..n).find(|&i| mask.mask[i] && pseudo[i] == UNLABELED) {
                return Err(MixingError::UnlabeledMaskedPixel(i));
            }
            Ok(paste(source, target, pseudo, &mask.mask))
        }
        DacsDirection::SourceOntoTarget => {
            let mut classes: Vec<u32> = source
                .labels
                .iter()
                .copied()
                .filter(|&l| l != UNLABELED)
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            classes.shuffle(rng);
            let chosen: BTreeSet<u32> = classes.iter().take(classes.len().div_ceil(2)).copied().collect();
            let paste_mask: Vec<bool> = source.labels.iter().map(|l| chosen.contains(l)).collect();
            Ok(paste(target, source, &source.labels, &paste_mask).with_base_labels(pseudo))
        }
    }
}

impl DacsOutput {
    fn with_base_labels(mut self, base: &[u32]) -> Self {
        for (i, m) in self.paste_mask.iter().enumerate() {
            if !m {
                self.image.labels[i] = base[i];
            }
        }
        self
    }
}

fn paste(base: &LabeledImage, top: &LabeledImage, top_labels: &[u32], mask: &[bool]) -> DacsOutput {
    let mut image = base.clone();
    let c = base.num_channels;
    for (i, &m) in mask.iter().enumerate() {
        if m {
            image.channels[i * c..(i + 1) * c].copy_from_slice(top.pixel(i));
            image.labels[i] = top_labels[i];
        }
    }
    DacsOutput {
        image,
        paste_mask: mask.to_vec(),
    }
}

/// Which input cloud and index an output point came from (0 = `a`, 1 = `b`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointSource {
    pub cloud: u8,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixedCloud {
    pub cloud: LabeledCloud,
    pub provenance: Vec<PointSource>,
}

/// Default sector width.
pub const DEFAULT_SECTOR: f64 = PI;

/// Uniform sector start in `[0, 2π)`.
pub fn sample_sector_start<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random_range(0.0..TAU)
}

/// Points of `a` outside the sector `[theta0, theta0 + sigma)` together with
/// points of `b` inside it.
pub fn polarmix_sector_swap(
    a: &LabeledCloud,
    b: &LabeledCloud,
    theta0: f64,
    sigma: f64,
) -> Result<MixedCloud, MixingError> {
    if !(sigma > 0.0 && sigma < TAU) {
        return Err(MixingError::InvalidSector(sigma));
    }
    let keep_instances = a.instances.is_some() && b.instances.is_some();
    let mut out = MixedCloud {
        cloud: LabeledCloud {
            instances: keep_instances.then(Vec::new),
            ..LabeledCloud::default()
        },
        provenance: Vec::new(),
    };
    for (tag, cloud, inside) in [(0u8, a, false), (1u8, b, true)] {
        for (i, p) in cloud.points.iter().enumerate() {
            if in_sector(azimuth(p[0], p[1]), theta0, sigma) == inside {
                push_point(&mut out, cloud, i, *p, tag);
            }
        }
    }
    Ok(out)
}

fn push_point(out: &mut MixedCloud, from: &LabeledCloud, i: usize, p: [f64; 4], tag: u8) {
    out.cloud.points.push(p);
    out.cloud.labels.push(from.labels[i]);
    if let (Some(dst), Some(src)) = (out.cloud.instances.as_mut(), from.instances.as_ref()) {
        dst.push(src[i]);
    }
    out.provenance.push(PointSource { cloud: tag, index: i });
}

/// Rotation of a point about the z axis.
pub fn rotate_z(p: [f64; 4], angle: f64) -> [f64; 4] {
    let (s, c) = angle.sin_cos();
    [p[0] * c - p[1] * s, p[0] * s + p[1] * c, p[2], p[3]]
}

/// Two copy angles drawn as in common instance-paste practice: one in
/// `[0, 2π/3)`, one in `[2π/3, 4π/3)`.
pub fn sample_rotations<R: Rng + ?Sized>(rng: &mut R) -> Vec<f64> {
    let third = TAU / 3.0;
    vec![rng.random::<f64>() * third, (rng.random::<f64>() + 1.0) * third]
}

/// Appends rotated copies of `b`'s points of `classes` to `a`. With `gate`,
/// only points whose gate entry is true are pasted.
pub fn polarmix_instance_paste(
    a: &LabeledCloud,
    b: &LabeledCloud,
    classes: &BTreeSet<u32>,
    rotations: &[f64],
    gate: Option<&[bool]>,
) -> Result<MixedCloud, MixingError> {
    if rotations.is_empty() {
        return Err(MixingError::NoRotations);
    }
    if let Some(g) = gate {
        if g.len() != b.len() {
            return Err(MixingError::ShapeMismatch(format!("{} gate entries for {} points", g.len(), b.len())));
        }
    }
    let keep_instances = a.instances.is_some() && b.instances.is_some();
    let mut out = MixedCloud {
        cloud: LabeledCloud {
            instances: keep_instances.then(Vec::new),
            ..LabeledCloud::default()
        },
        provenance: Vec::new(),
    };
    for (i, p) in a.points.iter().enumerate() {
        push_point(&mut out, a, i, *p, 0);
    }
    let picked: Vec<usize> = (0..b.len())
        .filter(|&i| classes.contains(&b.labels[i]) && gate.is_none_or(|g| g[i]))
        .collect();
    for &angle in rotations {
        for &i in &picked {
            push_point(&mut out, b, i, rotate_z(b.points[i], angle), 1);
        }
    }
    Ok(out)
}

/// The rarest third (rounded up) of the classes present in `labels`, ties
/// broken by class id.
pub fn rarest_third(labels: &[u32]) -> BTreeSet<u32> {
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for &l in labels {
        if l != UNLABELED {
            *counts.entry(l).or_default() += 1;
        }
    }
    let mut by_count: Vec<(usize, u32)> = counts.into_iter().map(|(c, n)| (n, c)).collect();
    by_count.sort_unstable();
    let k = by_count.len().div_ceil(3);
    by_count.into_iter().take(k).map(|(_, c)| c).collect()
}
