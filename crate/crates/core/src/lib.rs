//! Hyperbolic feature augmentation, acquisition scoring and domain mixing for
//! active domain adaptation on dense prediction tasks.
//!
//! Numerical kernels are generic over [`scalar::Real`], which covers `f32`,
//! `f64` and the reverse-mode tape scalar [`autodiff::Var`].

pub mod acquisition;
pub mod augmentation;
pub mod autodiff;
pub mod data_io;
pub mod distributions;
pub mod geometry;
pub mod mixing;
pub mod scalar;
pub mod selftest;
pub mod trainer;

use serde::{Deserialize, Serialize};

/// Label of a cell or point that carries no class.
pub const UNLABELED: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Rgb,
    Lidar,
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Modality::Rgb => "rgb",
            Modality::Lidar => "lidar",
        })
    }
}

impl std::str::FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rgb" => Ok(Modality::Rgb),
            "lidar" => Ok(Modality::Lidar),
            other => Err(format!("unknown modality `{other}` (expected rgb or lidar)")),
        }
    }
}

pub type BallPoint = geometry::BallPoint<f64>;
pub type BallPointF32 = geometry::BallPoint<f32>;
pub type ClassDistribution = distributions::ClassDistribution<f64>;
pub type EmbeddingMap = augmentation::EmbeddingMap<f64>;
pub type MlrHyperplane = geometry::MlrHyperplane<f64>;
pub type PoincareBall = geometry::PoincareBall<f64>;
