//! End-to-end runs and the component ablation grid.

use std::path::Path;

use anyhow::{Context, Result};
use hyperada::acquisition::{RoundLog, Strategy};
use hyperada::trainer::{adapt, pretrain, save_checkpoint, Components, Datasets, LoopOutput, LossReport, MiouResult, RoundMetrics, TrainState};
use hyperada::Modality;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{strategy_name, RunConfig};
use crate::dataset::datasets;
use crate::svg::{line_chart, Series};

/// Contents of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub name: String,
    pub modality: Modality,
    pub strategy: Strategy,
    pub seed: u64,
    pub config_sha256: String,
    pub components: Components,
    pub source_only_miou: f64,
    pub final_miou: f64,
    pub result: MiouResult,
    pub rounds: Vec<RoundMetrics>,
}

/// One row of the ablation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub components: Components,
    pub source_only_miou: f64,
    pub final_miou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub modality: Modality,
    pub strategy: Strategy,
    pub seed: u64,
    pub config_sha256: String,
    pub rows: Vec<AblationRow>,
}

/// The four-step component ladder: active learning only, then HFA with
/// mixup, then focal losses, then domain mixing.
pub fn ablation_grid(modality: Modality) -> Vec<(&'static str, Components)> {
    let full = Components::full(modality);
    let a = Components {
        hfa: true,
        mixup: full.mixup,
        ..Components::al_only()
    };
    let b = Components { focal: true, ..a };
    vec![("al_only", Components::al_only()), ("partial_a", a), ("partial_b", b), ("full", full)]
}

/// Runs the adaptation phase of `cfg` with `components` and `strategy` from a
/// shared pretrained state.
pub fn run_row(
    cfg: &RunConfig,
    data: &Datasets,
    components: Components,
    strategy: Strategy,
    pretrained: TrainState,
) -> Result<LoopOutput> {
    let mut training = cfg.training.clone();
    training.components = components;
    Ok(adapt(&training, data, &cfg.policy(), strategy, pretrained)?)
}

pub fn simulate(cfg: &RunConfig, out: &Path, ablate: bool) -> Result<String> {
    let data = datasets(cfg)?;
    let hash = cfg.hash()?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_config(cfg, out)?;
    let pre = pretrain(&cfg.training, &data)?;
    if !ablate {
        let output = run_row(cfg, &data, cfg.training.components, cfg.strategy, pre)?;
        let m = write_run(out, "run", cfg, &hash, cfg.training.components, &output)?;
        return Ok(format!(
            "{} {} seed {}: source-only {:.2} -> final {:.2} mIoU\n",
            cfg.modality,
            strategy_name(cfg.strategy),
            cfg.seed,
            100.0 * m.source_only_miou,
            100.0 * m.final_miou
        ));
    }
    let grid = ablation_grid(cfg.modality);
    let outputs: Vec<LoopOutput> = grid
        .par_iter()
        .map(|(_, comp)| run_row(cfg, &data, *comp, cfg.strategy, pre.clone()))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut curves = Vec::new();
    for ((name, comp), output) in grid.iter().zip(&outputs) {
        let dir = out.join(name);
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let m = write_run(&dir, name, cfg, &hash, *comp, output)?;
        curves.push(curve(name, &m));
        rows.push(AblationRow {
            name: name.to_string(),
            components: *comp,
            source_only_miou: m.source_only_miou,
            final_miou: m.final_miou,
        });
    }
    let table = AblationTable {
        modality: cfg.modality,
        strategy: cfg.strategy,
        seed: cfg.seed,
        config_sha256: hash,
        rows,
    };
    write_json(&out.join("ablation.json"), &table)?;
    write_text(
        &out.join("ablation.svg"),
        &line_chart("Ablation", "round", "test mIoU (%)", &curves),
    )?;
    Ok(render_ablation(&table))
}

pub fn render_ablation(t: &AblationTable) -> String {
    let mut s = format!(
        "{} {} seed {}\n{:<10} {:>5} {:>5} {:>5} {:>6} {:>10} {:>8}\n",
        t.modality,
        strategy_name(t.strategy),
        t.seed,
        "row",
        "hfa",
        "mixup",
        "focal",
        "mixing",
        "src-only",
        "final"
    );
    let flag = |b: bool| if b { "x" } else { "-" };
    for r in &t.rows {
        let c = r.components;
        s += &format!(
            "{:<10} {:>5} {:>5} {:>5} {:>6} {:>10.2} {:>8.2}\n",
            r.name,
            flag(c.hfa),
            flag(c.mixup),
            flag(c.focal),
            flag(c.mixing),
            100.0 * r.source_only_miou,
            100.0 * r.final_miou
        );
    }
    s
}

fn curve(name: &str, m: &Metrics) -> Series {
    let mut points = vec![(0.0, 100.0 * m.source_only_miou)];
    points.extend(m.rounds.iter().map(|r| ((r.round + 1) as f64, 100.0 * r.miou)));
    Series {
        name: name.to_string(),
        points,
    }
}

pub fn write_config(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let text = cfg.to_toml()?;
    write_text(&dir.join("config.toml"), &text)?;
    write_text(&dir.join("config.sha256"), &format!("{}\n", crate::config::sha256_hex(text.as_bytes())))
}

/// Writes metrics, round logs, the loss trace, plots and the teacher
/// checkpoint of one run.
fn write_run(dir: &Path, name: &str, cfg: &RunConfig, hash: &str, components: Components, out: &LoopOutput) -> Result<Metrics> {
    let m = Metrics {
        name: name.to_string(),
        modality: cfg.modality,
        strategy: cfg.strategy,
        seed: cfg.seed,
        config_sha256: hash.to_string(),
        components,
        source_only_miou: out.source_only.miou,
        final_miou: out.result.miou,
        result: out.result.clone(),
        rounds: out.rounds.clone(),
    };
    write_json(&dir.join("metrics.json"), &m)?;
    write_json::<Vec<RoundLog>>(&dir.join("round_logs.json"), &out.round_logs)?;
    write_json::<Vec<LossReport>>(&dir.join("losses.json"), &out.losses)?;
    write_text(
        &dir.join("learning_curve.svg"),
        &line_chart("Learning curve", "round", "test mIoU (%)", &[curve(name, &m)]),
    )?;
    let loss = Series {
        name: "total".into(),
        points: out.losses.iter().map(|l| (l.step as f64, l.total)).collect(),
    };
    write_text(&dir.join("loss_curve.svg"), &line_chart("Training loss", "step", "loss", &[loss]))?;
    let mut training = cfg.training.clone();
    training.components = components;
    save_checkpoint(&dir.join("model.ckpt"), &out.state.teacher, &training)?;
    Ok(m)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).context("serializing JSON")?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
