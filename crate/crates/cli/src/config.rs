//! Run configuration: built-in defaults for the modality, merged with an
//! optional TOML file, the `HYPERADA_SEED` variable and command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use hyperada::acquisition::{BudgetPolicy, Strategy};
use hyperada::data_io::{LidarWorldConfig, RgbWorldConfig};
use hyperada::trainer::TrainingConfig;
use hyperada::Modality;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::usage;

pub const SEED_ENV: &str = "HYPERADA_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub modality: Modality,
    pub strategy: Strategy,
    /// Seeds training and the synthetic world.
    pub seed: u64,
    /// Dataset directory written by `generate`; the synthetic world is
    /// generated in memory when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
    pub budget: Budget,
    pub world: World,
    pub training: TrainingConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Budget {
    pub rounds: usize,
    /// Cumulative pixel fraction for images.
    pub fraction: f64,
    /// Voxels per scan per round for clouds.
    pub voxels_per_scan: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct World {
    /// Held-out target images or scans used for evaluation.
    pub test_items: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rgb: Option<RgbWorldConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lidar: Option<LidarWorldConfig>,
}

/// Values given on the command line, applied last.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub modality: Option<Modality>,
    pub strategy: Option<Strategy>,
    pub seed: Option<u64>,
    pub data_dir: Option<PathBuf>,
}

/// Default image world: two scenes per domain keep the labeled target
/// pool small enough that adaptation matters.
pub fn default_rgb_world() -> RgbWorldConfig {
    RgbWorldConfig {
        scenes: 2,
        ..RgbWorldConfig::default()
    }
}

pub fn default_lidar_world() -> LidarWorldConfig {
    LidarWorldConfig::default()
}

impl RunConfig {
    pub fn defaults(modality: Modality) -> Self {
        let (strategy, world) = match modality {
            Modality::Rgb => (
                Strategy::Halo,
                World {
                    test_items: 8,
                    rgb: Some(default_rgb_world()),
                    lidar: None,
                },
            ),
            Modality::Lidar => (
                Strategy::HaloVcd,
                World {
                    test_items: 4,
                    rgb: None,
                    lidar: Some(default_lidar_world()),
                },
            ),
        };
        let policy = BudgetPolicy::default_for(modality);
        RunConfig {
            modality,
            strategy,
            seed: 0,
            data_dir: None,
            budget: Budget {
                rounds: policy.rounds(),
                fraction: 0.05,
                voxels_per_scan: 1,
            },
            world,
            training: TrainingConfig::for_modality(modality),
        }
    }

    /// Resolves defaults, `file`, the seed variable and `overrides`.
    pub fn resolve(file: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let table = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                text.parse::<toml::Table>()
                    .map_err(|e| usage(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        let modality = match (overrides.modality, table.get("modality")) {
            (Some(m), _) => m,
            (None, Some(v)) => v
                .as_str()
                .ok_or_else(|| usage("modality must be a string"))?
                .parse()
                .map_err(usage)?,
            (None, None) => Modality::Rgb,
        };
        let mut merged = toml::Value::try_from(Self::defaults(modality)).context("serializing defaults")?;
        merge(&mut merged, toml::Value::Table(table));
        let mut cfg: RunConfig = merged
            .try_into()
            .map_err(|e: toml::de::Error| usage(format!("config: {}", e.message())))?;
        cfg.modality = modality;
        if let Ok(v) = std::env::var(SEED_ENV) {
            cfg.seed = v
                .trim()
                .parse()
                .map_err(|_| usage(format!("{SEED_ENV}={v} is not an unsigned integer")))?;
        }
        if let Some(s) = overrides.strategy {
            cfg.strategy = s;
        }
        if let Some(s) = overrides.seed {
            cfg.seed = s;
        }
        if let Some(d) = &overrides.data_dir {
            cfg.data_dir = Some(d.clone());
        }
        cfg.sync();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Propagates the modality and seed into the nested sections.
    fn sync(&mut self) {
        self.training.modality = self.modality;
        self.training.seed = self.seed;
        match self.modality {
            Modality::Rgb => {
                self.world.lidar = None;
                self.world.rgb.get_or_insert_with(default_rgb_world).seed = self.seed;
            }
            Modality::Lidar => {
                self.world.rgb = None;
                self.world.lidar.get_or_insert_with(default_lidar_world).seed = self.seed;
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.strategy.supports(self.modality) {
            return Err(usage(format!(
                "strategy {} does not apply to {} data",
                strategy_name(self.strategy),
                self.modality
            )));
        }
        if self.seed > i64::MAX as u64 {
            return Err(usage(format!("seed {} exceeds {}", self.seed, i64::MAX)));
        }
        self.training.validate().map_err(|e| usage(e.to_string()))?;
        self.policy().validate().map_err(|e| usage(e.to_string()))?;
        Ok(())
    }

    pub fn policy(&self) -> BudgetPolicy {
        match self.modality {
            Modality::Rgb => BudgetPolicy::Rgb {
                fraction: self.budget.fraction,
                rounds: self.budget.rounds,
            },
            Modality::Lidar => BudgetPolicy::Lidar {
                voxels_per_scan: self.budget.voxels_per_scan,
                rounds: self.budget.rounds,
            },
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).context("serializing config")
    }

    /// Hex SHA-256 of the resolved TOML text.
    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(self.to_toml()?.as_bytes()))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn strategy_name(s: Strategy) -> &'static str {
    match s {
        Strategy::Halo => "halo",
        Strategy::Vcd => "vcd",
        Strategy::HaloVcd => "halo_vcd",
        Strategy::Random => "random",
    }
}

/// Recursive table merge; `over` wins on every leaf.
fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
