use serde::{Deserialize, Serialize};

use super::TrainerError;
use crate::UNLABELED;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiouResult {
    /// `None` for classes outside the subset or absent from both
    /// prediction and ground truth.
    pub per_class: Vec<Option<f64>>,
    pub miou: f64,
    /// `confusion[truth][prediction]`.
    pub confusion: Vec<Vec<u64>>,
}

/// Per-class IoU `TP / (TP + FP + FN)` and its mean over the evaluated
/// classes. Cells with an unlabeled ground truth are ignored; `subset`
/// restricts which classes enter the mean.
pub fn evaluate_miou(
    predictions: &[u32],
    truth: &[u32],
    num_classes: usize,
    subset: Option<&[u32]>,
) -> Result<MiouResult, TrainerError> {
    if predictions.len() != truth.len() {
        return Err(TrainerError::ShapeMismatch(format!(
            "{} predictions for {} ground-truth cells",
            predictions.len(),
            truth.len()
        )));
    }
    let mut confusion = vec![vec![0u64; num_classes]; num_classes];
    let mut counted = 0usize;
    for (i, (&p, &t)) in predictions.iter().zip(truth).enumerate() {
        if t == UNLABELED {
            continue;
        }
        if t as usize >= num_classes || p as usize >= num_classes {
            return Err(TrainerError::ShapeMismatch(format!(
                "cell {i}: class {} outside 0..{num_classes}",
                t.max(p)
            )));
        }
        confusion[t as usize][p as usize] += 1;
        counted += 1;
    }
    if counted == 0 {
        return Err(TrainerError::EmptyGroundTruth);
    }
    let mut per_class = vec![None; num_classes];
    let mut sum = 0.0;
    let mut n = 0usize;
    for (c, slot) in per_class.iter_mut().enumerate() {
        if subset.is_some_and(|s| !s.contains(&(c as u32))) {
            continue;
        }
        let tp = confusion[c][c];
        let fn_: u64 = confusion[c].iter().sum::<u64>() - tp;
        let fp: u64 = (0..num_classes).map(|t| confusion[t][c]).sum::<u64>() - tp;
        let denom = tp + fp + fn_;
        if denom == 0 {
            continue;
        }
        let iou = tp as f64 / denom as f64;
        *slot = Some(iou);
        sum += iou;
        n += 1;
    }
    Ok(MiouResult {
        per_class,
        miou: if n > 0 { sum / n as f64 } else { 0.0 },
        confusion,
    })
}
