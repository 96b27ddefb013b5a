//! Models for commands that score or embed without a full run.

use std::path::Path;

use anyhow::Result;
use hyperada::data_io::{LIDAR_CLASSES, RGB_CLASSES};
use hyperada::geometry::Curvature;
use hyperada::trainer::{load_checkpoint, pretrain, Datasets, Model, LIDAR_FEATURES, RGB_FEATURES};
use hyperada::Modality;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;

/// Untrained model seeded from the run seed.
pub fn fresh_model(cfg: &RunConfig) -> Model {
    let (input, classes) = match cfg.modality {
        Modality::Rgb => (RGB_FEATURES, RGB_CLASSES.len()),
        Modality::Lidar => (LIDAR_FEATURES, LIDAR_CLASSES.len()),
    };
    let t = &cfg.training;
    Model::init(input, t.hidden, t.dim, classes, Curvature::default(), &mut ChaCha8Rng::seed_from_u64(cfg.seed))
}

/// The checkpoint at `path`, or a model pretrained on `data`.
pub fn checkpoint_or_pretrained(cfg: &RunConfig, path: Option<&Path>, data: &Datasets) -> Result<Model> {
    Ok(match path {
        Some(p) => load_checkpoint(p, None)?,
        None => pretrain(&cfg.training, data)?.teacher,
    })
}
