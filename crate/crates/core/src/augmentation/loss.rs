use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{AugmentationError, AugmentationPool, EmbeddingMap};
use crate::distributions::{ClassDistribution, SIGMA2_MAX};
use crate::geometry::{mlr_logits, MlrHyperplane, PoincareBall};
use crate::scalar::{focal_term, log_softmax, Real};
use crate::UNLABELED;

/// Mean over labeled rows of `−(1 − p_t)^γ ln p_t`.
pub fn focal_loss<T: Real>(probs: &[Vec<T>], targets: &[u32], gamma: f64) -> Result<T, AugmentationError> {
    if probs.len() != targets.len() {
        return Err(AugmentationError::ShapeMismatch {
            cells: probs.len(),
            labels: targets.len(),
        });
    }
    let mut sum = T::zero();
    let mut n = 0usize;
    for (row, (p, &t)) in probs.iter().zip(targets).enumerate() {
        let s: f64 = p.iter().map(|v| v.value()).sum();
        if (s - 1.0).abs() > 1e-6 || p.iter().any(|v| !(v.value() >= 0.0)) {
            return Err(AugmentationError::Unnormalized { row, sum: s });
        }
        if t == UNLABELED {
            continue;
        }
        let pt = *p.get(t as usize).ok_or(AugmentationError::LabelOutOfRange {
            cell: row,
            label: t,
            classes: p.len() as u32,
        })?;
        sum = sum + focal_term(pt.ln(), gamma);
        n += 1;
    }
    if n == 0 {
        return Err(AugmentationError::NoLabeledCells);
    }
    Ok(sum / T::lit(n as f64))
}

/// [`focal_loss`] evaluated from logits through a log-softmax.
pub fn focal_loss_from_logits<T: Real>(
    logits: &[Vec<T>],
    targets: &[u32],
    gamma: f64,
) -> Result<T, AugmentationError> {
    if logits.len() != targets.len() {
        return Err(AugmentationError::ShapeMismatch {
            cells: logits.len(),
            labels: targets.len(),
        });
    }
    let mut sum = T::zero();
    let mut n = 0usize;
    for (row, (l, &t)) in logits.iter().zip(targets).enumerate() {
        if t == UNLABELED {
            continue;
        }
        if t as usize >= l.len() {
            return Err(AugmentationError::LabelOutOfRange {
                cell: row,
                label: t,
                classes: l.len() as u32,
            });
        }
        sum = sum + focal_term(log_softmax(l)[t as usize], gamma);
        n += 1;
    }
    if n == 0 {
        return Err(AugmentationError::NoLabeledCells);
    }
    Ok(sum / T::lit(n as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HfaLossConfig {
    pub lambda_div: f64,
    pub lambda_proto_reg: f64,
    pub lambda_mean_var: f64,
    pub focal_gamma: f64,
    /// Weight of the whole HFA loss inside the training objective.
    pub lambda_hfa: f64,
    /// Hyperbolic radius beyond which class means are penalised.
    pub radius_max: f64,
}

impl Default for HfaLossConfig {
    fn default() -> Self {
        HfaLossConfig {
            lambda_div: 0.01,
            lambda_proto_reg: 0.01,
            lambda_mean_var: 0.01,
            focal_gamma: 2.0,
            lambda_hfa: 0.1,
            radius_max: 4.0,
        }
    }
}

/// The decomposed HFA loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HfaLoss<T = f64> {
    pub orig_cls: T,
    pub aug_cls: T,
    /// Negative mean pairwise distance among synthetic samples, so `≤ 0`.
    pub div: T,
    pub proto_reg: T,
    pub mean_var: T,
    pub total: T,
}

impl<T: Real> HfaLoss<T> {
    pub fn zero() -> Self {
        HfaLoss {
            orig_cls: T::zero(),
            aug_cls: T::zero(),
            div: T::zero(),
            proto_reg: T::zero(),
            mean_var: T::zero(),
            total: T::zero(),
        }
    }

    pub fn values(&self) -> HfaLoss<f64> {
        HfaLoss {
            orig_cls: self.orig_cls.value(),
            aug_cls: self.aug_cls.value(),
            div: self.div.value(),
            proto_reg: self.proto_reg.value(),
            mean_var: self.mean_var.value(),
            total: self.total.value(),
        }
    }
}

fn map_logits<T: Real>(
    ball: &PoincareBall<T>,
    map: &EmbeddingMap<T>,
    classifier: &[MlrHyperplane<T>],
) -> Result<(Vec<Vec<T>>, Vec<u32>), AugmentationError> {
    let mut logits = Vec::new();
    let mut targets = Vec::new();
    for (e, &l) in map.embeddings().iter().zip(map.labels()) {
        if l == UNLABELED {
            continue;
        }
        logits.push(mlr_logits(ball, e.coords(), classifier)?);
        targets.push(l);
    }
    Ok((logits, targets))
}

/// HFA objective: focal classification of original and augmented
/// embeddings plus diversity, prototype and mean/variance regularisers.
pub fn hfa_loss<T: Real>(
    original: &EmbeddingMap<T>,
    augmented: &EmbeddingMap<T>,
    distributions: &BTreeMap<u32, ClassDistribution<T>>,
    pool: &AugmentationPool<T>,
    classifier: &[MlrHyperplane<T>],
    cfg: &HfaLossConfig,
) -> Result<HfaLoss<T>, AugmentationError> {
    if !original.same_layout(augmented) {
        return Err(AugmentationError::MapMismatch);
    }
    let ball = PoincareBall::<T>::new(super::map_curvature(original));
    let (lo, to) = map_logits(&ball, original, classifier)?;
    let orig_cls = focal_loss_from_logits(&lo, &to, cfg.focal_gamma)?;
    let (la, ta) = map_logits(&ball, augmented, classifier)?;
    let aug_cls = focal_loss_from_logits(&la, &ta, cfg.focal_gamma)?;

    let mut div = T::zero();
    let mut div_classes = 0usize;
    for c in pool.classes.keys() {
        let s = pool.sampled(*c);
        if s.len() < 2 {
            continue;
        }
        let mut sum = T::zero();
        let mut pairs = 0usize;
        for i in 0..s.len() {
            for j in i + 1..s.len() {
                sum = sum + ball.distance(s[i].coords(), s[j].coords());
                pairs += 1;
            }
        }
        div = div - sum / T::lit(pairs as f64);
        div_classes += 1;
    }
    if div_classes > 0 {
        div = div / T::lit(div_classes as f64);
    }

    let real = original.class_embeddings();
    let mut proto_reg = T::zero();
    let mut mean_var = T::zero();
    for (c, pts) in &real {
        let dist = distributions
            .get(c)
            .ok_or(AugmentationError::MissingDistribution(*c))?;
        let refs: Vec<&[T]> = pts.iter().map(|p| p.coords()).collect();
        let proto = ball.gyromidpoint(&refs, &vec![T::one(); refs.len()])?;
        proto_reg = proto_reg + ball.distance(dist.mean.coords(), &proto);
        let excess = (ball.hyperbolic_radius(dist.mean.coords()) - T::lit(cfg.radius_max)).max(T::zero());
        let mut term = excess * excess;
        for lv in &dist.log_diag_cov {
            term = term + (lv.exp() - T::lit(SIGMA2_MAX)).max(T::zero());
        }
        mean_var = mean_var + term;
    }
    let n = T::lit(real.len().max(1) as f64);
    proto_reg = proto_reg / n;
    mean_var = mean_var / n;

    let total = orig_cls
        + aug_cls
        + T::lit(cfg.lambda_div) * div
        + T::lit(cfg.lambda_proto_reg) * proto_reg
        + T::lit(cfg.lambda_mean_var) * mean_var;
    Ok(HfaLoss {
        orig_cls,
        aug_cls,
        div,
        proto_reg,
        mean_var,
        total,
    })
}
