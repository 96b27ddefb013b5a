//! Desk-scale training: a tiny ball-valued encoder with a hyperbolic MLR
//! head, the composite RGB and LiDAR losses, the active adaptation loop and
//! mIoU evaluation.

mod active;
mod checkpoint;
mod eval;
mod model;
mod step;

pub use active::{
    active_da_loop, adapt, pretrain, Datasets, LidarData, LoopOutput, RgbData, RoundMetrics,
};
pub use checkpoint::{
    config_hash, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use eval::{evaluate_miou, MiouResult};
pub use model::{
    cloud_features, forward, image_features, pixel_features, MlrHead, Model, TinyEncoder, LIDAR_FEATURES,
    RGB_FEATURES,
};
pub use step::{
    lidar_hfa_step, step_loss, train_step_lidar, train_step_rgb, Cells, DomainView, HfaInputs, LossParts,
    LossReport, Progress, StepBatch, TrainState,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acquisition::AcquisitionError;
use crate::augmentation::{AugmentationError, HfaLossConfig, InterpolationSchedule, MixupConfig};
use crate::distributions::{DistributionError, MetaConfig, OdeSolverConfig};
use crate::geometry::GeometryError;
use crate::mixing::MixingError;
use crate::Modality;

#[derive(Debug, Error)]
pub enum TrainerError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Augmentation(#[from] AugmentationError),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
    #[error(transparent)]
    Acquisition(#[from] AcquisitionError),
    #[error(transparent)]
    Mixing(#[from] MixingError),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("ground truth has no labeled cells")]
    EmptyGroundTruth,
    #[error("{0}")]
    ModalityMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("loss became non-finite at step {0}")]
    NonFinite(usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Which RAFT components are switched on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Components {
    pub hfa: bool,
    pub mixup: bool,
    /// Focal instead of cross-entropy classification losses.
    pub focal: bool,
    /// DACS for images, PolarMix for clouds.
    pub mixing: bool,
}

impl Components {
    pub fn full(modality: Modality) -> Self {
        Components {
            hfa: true,
            mixup: MixupConfig::for_modality(modality).enabled,
            focal: true,
            mixing: true,
        }
    }

    pub fn al_only() -> Self {
        Components {
            hfa: false,
            mixup: false,
            focal: false,
            mixing: false,
        }
    }
}

/// Order of the LiDAR alternation before the target-only phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Alternation {
    /// Even steps HFA, odd steps PolarMix.
    #[default]
    HfaFirst,
    MixFirst,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub modality: Modality,
    pub seed: u64,
    pub lambda_hfa: f64,
    pub pretrain_steps: usize,
    pub steps_per_round: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Decay of the teacher's moving average; 0 copies the student.
    pub ema_decay: f64,
    /// Learning rate at the end of adaptation relative to its start.
    pub final_lr_fraction: f64,
    /// Global gradient-norm clip per step.
    pub grad_clip: f64,
    pub target_only_phase_start: f64,
    pub alternation: Alternation,
    pub hidden: usize,
    pub dim: usize,
    pub components: Components,
    pub focal_gamma: f64,
    pub hfa: HfaLossConfig,
    pub schedule: InterpolationSchedule,
    pub mixup_alpha: f64,
    /// Percentile of HALO certainty below which target cells are pseudo-labeled.
    pub tau_percentile: f64,
    pub voxel_size: f64,
    pub solver: OdeSolverConfig,
    pub flow_hidden: usize,
    pub meta: MetaConfig,
    /// Steps between flow-network meta updates; 0 disables them.
    pub meta_every: usize,
}

impl TrainingConfig {
    pub fn for_modality(modality: Modality) -> Self {
        TrainingConfig {
            modality,
            seed: 0,
            lambda_hfa: 0.1,
            pretrain_steps: 500,
            steps_per_round: 60,
            batch_size: 64,
            learning_rate: 0.02,
            momentum: 0.9,
            ema_decay: 0.9,
            final_lr_fraction: 0.1,
            grad_clip: 5.0,
            target_only_phase_start: 0.8,
            alternation: Alternation::HfaFirst,
            hidden: 16,
            dim: 8,
            components: Components::full(modality),
            focal_gamma: 2.0,
            hfa: HfaLossConfig::default(),
            schedule: InterpolationSchedule::default(),
            mixup_alpha: 0.4,
            tau_percentile: 60.0,
            voxel_size: 0.25,
            solver: match modality {
                Modality::Rgb => OdeSolverConfig::adaptive_rk4(),
                Modality::Lidar => OdeSolverConfig::fixed_euler(),
            },
            flow_hidden: 16,
            meta: MetaConfig::default(),
            meta_every: 20,
        }
    }

    pub fn validate(&self) -> Result<(), TrainerError> {
        let bad = |m: String| Err(TrainerError::InvalidConfig(m));
        if self.batch_size == 0 || self.hidden == 0 || self.dim < 2 {
            return bad("batch_size and hidden must be ≥ 1 and dim ≥ 2".into());
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) || !(self.grad_clip > 0.0) {
            return bad(format!(
                "learning_rate {} must be > 0, momentum {} in [0, 1), grad_clip {} > 0",
                self.learning_rate, self.momentum, self.grad_clip
            ));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return bad(format!("ema_decay {} outside [0, 1)", self.ema_decay));
        }
        if !(0.0..=1.0).contains(&self.final_lr_fraction) {
            return bad(format!("final_lr_fraction {} outside [0, 1]", self.final_lr_fraction));
        }
        if !(0.0..=1.0).contains(&self.target_only_phase_start) {
            return bad(format!("target_only_phase_start {} outside [0, 1]", self.target_only_phase_start));
        }
        if !(self.lambda_hfa >= 0.0) || !(self.focal_gamma >= 0.0) || !(self.mixup_alpha > 0.0) {
            return bad("lambda_hfa and focal_gamma must be ≥ 0, mixup_alpha > 0".into());
        }
        if !(0.0..=100.0).contains(&self.tau_percentile) {
            return bad(format!("tau_percentile {} outside [0, 100]", self.tau_percentile));
        }
        if !(self.voxel_size > 0.0) {
            return bad(format!("voxel_size {} must be > 0", self.voxel_size));
        }
        self.schedule.validate()?;
        self.solver.validate()?;
        Ok(())
    }

    /// Focal exponent of the classification terms.
    pub fn gamma(&self) -> f64 {
        if self.components.focal {
            self.focal_gamma
        } else {
            0.0
        }
    }

    pub fn hfa_config(&self) -> HfaLossConfig {
        HfaLossConfig {
            focal_gamma: self.gamma(),
            lambda_hfa: self.lambda_hfa,
            ..self.hfa
        }
    }

    pub fn mixup_config(&self) -> MixupConfig {
        MixupConfig {
            enabled: self.components.mixup,
            beta_alpha: self.mixup_alpha,
        }
    }
}
