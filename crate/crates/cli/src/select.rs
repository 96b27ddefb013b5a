//! Acquisition without training: score a fixed model's predictions and run
//! every round of a budget policy.

use std::path::{Path, PathBuf};

use anyhow::Result;
use hyperada::acquisition::{score_pixels, score_voxels, select_pixels, select_voxels, BudgetPolicy, RoundLog, ScoreMap, Strategy, VoxelGrid};
use hyperada::trainer::{cloud_features, forward, image_features, Model};
use hyperada::Modality;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dataset::{read_image, read_scan, stems};
use crate::models::fresh_model;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub modality: Modality,
    pub strategy: Strategy,
    pub seed: u64,
    pub policy: BudgetPolicy,
    pub items: Vec<PathBuf>,
    /// Pixels or points per item.
    pub cells: Vec<usize>,
    pub rounds: Vec<RoundLog>,
    /// Selected pixels or voxels per item after the last round.
    pub cumulative: Vec<usize>,
}

pub fn select(cfg: &RunConfig, input: &Path, checkpoint: Option<&Path>) -> Result<Selection> {
    let model: Model = match checkpoint {
        Some(p) => hyperada::trainer::load_checkpoint(p, None)?,
        None => fresh_model(cfg),
    };
    let policy = cfg.policy();
    let paths = stems(input, cfg.modality)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rounds = Vec::new();
    let mut cells = Vec::new();
    let mut cumulative = Vec::new();
    match cfg.modality {
        Modality::Rgb => {
            let mut maps = Vec::new();
            let mut outputs = Vec::new();
            for p in &paths {
                let img = read_image(p)?;
                cells.push(img.pixels());
                outputs.push(forward(&model, &image_features(&img))?);
                maps.push(ScoreMap::new(vec![0.0; img.pixels()])?);
            }
            for round in 0..policy.rounds() {
                for (k, ((embs, probs), map)) in outputs.iter().zip(&mut maps).enumerate() {
                    map.scores = score_pixels(cfg.strategy, embs, probs, &mut rng)?;
                    let ids = select_pixels(map, &policy, round)?;
                    rounds.push(RoundLog {
                        round,
                        item: k,
                        scores: ids.iter().map(|&i| map.scores[i]).collect(),
                        ids,
                    });
                }
            }
            cumulative.extend(maps.iter().map(ScoreMap::labeled_count));
        }
        Modality::Lidar => {
            let mut grids = Vec::new();
            let mut outputs = Vec::new();
            for p in &paths {
                let cloud = read_scan(p)?;
                cells.push(cloud.len());
                outputs.push(forward(&model, &cloud_features(&cloud, cfg.training.voxel_size)?)?);
                grids.push(VoxelGrid::build(&cloud.xyz(), cfg.training.voxel_size)?);
            }
            for round in 0..policy.rounds() {
                for (k, ((embs, probs), grid)) in outputs.iter().zip(&mut grids).enumerate() {
                    let scores = score_voxels(cfg.strategy, grid, embs, probs, &mut rng)?;
                    let ids = select_voxels(grid, &scores, &policy, round)?;
                    rounds.push(RoundLog {
                        round,
                        item: k,
                        scores: ids.iter().map(|&v| scores[v]).collect(),
                        ids,
                    });
                }
            }
            cumulative.extend(grids.iter().map(|g| g.labeled.iter().filter(|&&l| l).count()));
        }
    }
    Ok(Selection {
        modality: cfg.modality,
        strategy: cfg.strategy,
        seed: cfg.seed,
        policy,
        items: paths,
        cells,
        rounds,
        cumulative,
    })
}
