//! Summaries of finished run directories.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use crate::config::strategy_name;
use crate::simulate::{render_ablation, AblationTable, Metrics};

pub enum RunSummary {
    Single(PathBuf, Metrics),
    Ablation(PathBuf, AblationTable),
}

pub fn load(dir: &Path) -> Result<RunSummary> {
    if !dir.is_dir() {
        bail!("run directory {} does not exist", dir.display());
    }
    let ablation = dir.join("ablation.json");
    if ablation.is_file() {
        return Ok(RunSummary::Ablation(dir.to_path_buf(), read_json(&ablation)?));
    }
    let metrics = dir.join("metrics.json");
    if metrics.is_file() {
        return Ok(RunSummary::Single(dir.to_path_buf(), read_json(&metrics)?));
    }
    bail!("{} holds neither metrics.json nor ablation.json", dir.display())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Text table over every run directory.
pub fn render(runs: &[RunSummary]) -> String {
    let mut singles = Vec::new();
    let mut out = String::new();
    for r in runs {
        match r {
            RunSummary::Single(dir, m) => singles.push((dir, m)),
            RunSummary::Ablation(dir, t) => {
                out += &format!("{}\n{}\n", dir.display(), render_ablation(t));
            }
        }
    }
    if !singles.is_empty() {
        out += &format!(
            "{:<32} {:<6} {:<9} {:>6} {:>10} {:>8}  per-class IoU\n",
            "run", "data", "strategy", "seed", "src-only", "final"
        );
        for (dir, m) in singles {
            let per_class: Vec<String> = m
                .result
                .per_class
                .iter()
                .map(|v| v.map_or("-".into(), |x| format!("{:.1}", 100.0 * x)))
                .collect();
            out += &format!(
                "{:<32} {:<6} {:<9} {:>6} {:>10.2} {:>8.2}  {}\n",
                dir.display(),
                m.modality.to_string(),
                strategy_name(m.strategy),
                m.seed,
                100.0 * m.source_only_miou,
                100.0 * m.final_miou,
                per_class.join(" ")
            );
        }
    }
    out
}
