//! Single transforms with provenance sidecars.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use hyperada::augmentation::{build_pool, PoolKind};
use hyperada::data_io::{mask_tensor, write_tensor};
use hyperada::distributions::{estimate_all, moment_estimate, EmbeddingSplit};
use hyperada::mixing::{
    dacs_mix, polarmix_instance_paste, polarmix_sector_swap, pseudo_label, sample_rotations, sample_sector_start,
    DacsDirection, LabeledCloud, LabeledImage, PointSource,
};
use hyperada::trainer::{cloud_features, forward, image_features, Datasets, LidarData, RgbData};
use hyperada::{acquisition::halo_scores, distributions::FlowNetwork, Modality, UNLABELED};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dataset::{read_image, read_scan, stems, write_image, write_scan};
use crate::error::usage;
use crate::models::checkpoint_or_pretrained;
use crate::simulate::write_json;

pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".provenance.json");
    PathBuf::from(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolarMixProvenance {
    /// Input stems; `cloud` 0 is `inputs[0]`.
    pub inputs: [PathBuf; 2],
    pub theta0: f64,
    pub sigma: f64,
    pub paste_classes: Vec<u32>,
    pub rotations: Vec<f64>,
    pub points: Vec<PointSource>,
}

pub struct PolarMixArgs<'a> {
    pub a: &'a Path,
    pub b: &'a Path,
    pub out: &'a Path,
    pub theta0: Option<f64>,
    pub sigma: f64,
    pub paste_classes: Vec<u32>,
    pub seed: u64,
}

/// Sector swap of `b` into `a`, then optional rotated instance pasting of
/// `b`'s points of `paste_classes`.
pub fn polarmix(args: &PolarMixArgs<'_>) -> Result<PolarMixProvenance> {
    if !(args.sigma > 0.0 && args.sigma < TAU) {
        return Err(usage(format!("sigma {} must lie in (0, 2π)", args.sigma)));
    }
    let a = read_scan(args.a)?;
    let b = read_scan(args.b)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let theta0 = match args.theta0 {
        Some(t) if t.is_finite() => t,
        Some(t) => return Err(usage(format!("theta0 {t} is not finite"))),
        None => sample_sector_start(&mut rng),
    };
    let swapped = polarmix_sector_swap(&a, &b, theta0, args.sigma)?;
    let (cloud, points, rotations) = if args.paste_classes.is_empty() {
        (swapped.cloud, swapped.provenance, Vec::new())
    } else {
        let rotations = sample_rotations(&mut rng);
        let classes: BTreeSet<u32> = args.paste_classes.iter().copied().collect();
        let pasted = polarmix_instance_paste(&swapped.cloud, &b, &classes, &rotations, None)?;
        let points = pasted
            .provenance
            .iter()
            .map(|p| if p.cloud == 0 { swapped.provenance[p.index] } else { *p })
            .collect();
        (pasted.cloud, points, rotations)
    };
    write_scan(&cloud, args.out)?;
    let prov = PolarMixProvenance {
        inputs: [args.a.to_path_buf(), args.b.to_path_buf()],
        theta0,
        sigma: args.sigma,
        paste_classes: args.paste_classes.clone(),
        rotations,
        points,
    };
    write_json(&sidecar_path(args.out), &prov)?;
    Ok(prov)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DacsProvenance {
    pub source: PathBuf,
    pub target: PathBuf,
    pub direction: DacsDirection,
    pub tau_percentile: f64,
    pub threshold: Option<f64>,
    /// Per pixel, the input it was copied from.
    pub pixels: Vec<DacsOrigin>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DacsOrigin {
    Source,
    Target,
}

pub struct DacsArgs<'a> {
    pub source: &'a Path,
    pub target: &'a Path,
    pub out: &'a Path,
    pub tau: f64,
    pub direction: DacsDirection,
    pub checkpoint: Option<&'a Path>,
}

/// Pseudo-labels the target with a model, then cut-paste mixes the pair.
pub fn dacs(cfg: &RunConfig, args: &DacsArgs<'_>) -> Result<DacsProvenance> {
    if !(0.0..=100.0).contains(&args.tau) {
        return Err(usage(format!("tau percentile {} outside [0, 100]", args.tau)));
    }
    let src = read_image(args.source)?;
    let tgt = read_image(args.target)?;
    let data = single_rgb(&src, &tgt);
    let model = checkpoint_or_pretrained(cfg, args.checkpoint, &data)?;
    let (embs, probs) = forward(&model, &image_features(&tgt))?;
    let scores = halo_scores(&embs, &probs)?;
    let (pseudo, mask) = pseudo_label(&probs, &scores, args.tau)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let out = dacs_mix(&src, &tgt, &pseudo, &mask, args.direction, &mut rng)?;
    write_image(&out.image, args.out)?;
    let mut mask_path = args.out.as_os_str().to_owned();
    mask_path.push(".mask.hyt");
    write_tensor(
        &mask_tensor(&out.paste_mask, out.image.height, out.image.width)?,
        Path::new(&mask_path),
    )?;
    let (top, base) = match args.direction {
        DacsDirection::TargetOntoSource => (DacsOrigin::Target, DacsOrigin::Source),
        DacsDirection::SourceOntoTarget => (DacsOrigin::Source, DacsOrigin::Target),
    };
    let prov = DacsProvenance {
        source: args.source.to_path_buf(),
        target: args.target.to_path_buf(),
        direction: args.direction,
        tau_percentile: args.tau,
        threshold: mask.threshold,
        pixels: out.paste_mask.iter().map(|&m| if m { top } else { base }).collect(),
    };
    write_json(&sidecar_path(args.out), &prov)?;
    Ok(prov)
}

fn single_rgb(src: &LabeledImage, tgt: &LabeledImage) -> Datasets {
    Datasets::Rgb(RgbData {
        source: vec![src.clone()],
        target: vec![tgt.clone()],
        test: vec![tgt.clone()],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HfaPreview {
    pub modality: Modality,
    pub samples_per_class: usize,
    pub items: Vec<PathBuf>,
    pub classes: BTreeMap<u32, ClassPreview>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPreview {
    /// Labeled cells whose embeddings fitted the distribution.
    pub support: usize,
    pub mean: Vec<f64>,
    pub log_diag_cov: Vec<f64>,
    pub samples: Vec<Vec<f64>>,
}

/// Fits per-class distributions to the embeddings of the labeled cells in
/// `input` and draws the modality's synthetic sample quota from each.
pub fn hfa_preview(cfg: &RunConfig, input: &Path, out: &Path, checkpoint: Option<&Path>) -> Result<HfaPreview> {
    let paths = stems(input, cfg.modality)?;
    let (data, features, labels) = match cfg.modality {
        Modality::Rgb => {
            let items: Vec<LabeledImage> = paths.iter().map(|p| read_image(p)).collect::<Result<_>>()?;
            let f = items.iter().map(image_features).collect::<Vec<_>>();
            let l = items.iter().map(|i| i.labels.clone()).collect::<Vec<_>>();
            let d = Datasets::Rgb(RgbData {
                source: items.clone(),
                target: items.clone(),
                test: items,
            });
            (d, f, l)
        }
        Modality::Lidar => {
            let items: Vec<LabeledCloud> = paths.iter().map(|p| read_scan(p)).collect::<Result<_>>()?;
            let f = items
                .iter()
                .map(|c| cloud_features(c, cfg.training.voxel_size))
                .collect::<Result<Vec<_>, _>>()?;
            let l = items.iter().map(|c| c.labels.clone()).collect::<Vec<_>>();
            let d = Datasets::Lidar(LidarData {
                source: items.clone(),
                target: items.clone(),
                test: items,
            });
            (d, f, l)
        }
    };
    let model = checkpoint_or_pretrained(cfg, checkpoint, &data)?;
    let mut split = EmbeddingSplit::default();
    for (f, l) in features.iter().zip(&labels) {
        let (embs, _) = forward(&model, f)?;
        for (e, &c) in embs.into_iter().zip(l) {
            if c != UNLABELED {
                split.push(c, e.into_coords());
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let flow = FlowNetwork::init(cfg.training.dim, cfg.training.flow_hidden, &mut rng);
    let (mut dists, failed) = estimate_all(&flow, &split, model.curvature, &cfg.training.solver);
    for (c, _) in failed {
        dists.insert(c, moment_estimate(c, &split.classes[&c], model.curvature)?);
    }
    let present: BTreeSet<u32> = split.classes.keys().copied().collect();
    let pool = build_pool(&dists, &present, cfg.modality, &mut rng)?;
    let classes = present
        .iter()
        .map(|&c| {
            let d = &dists[&c];
            let samples = pool.classes[&c]
                .iter()
                .filter(|e| e.kind == PoolKind::Sampled)
                .map(|e| e.point.coords().to_vec())
                .collect();
            let preview = ClassPreview {
                support: split.classes[&c].len(),
                mean: d.mean.coords().to_vec(),
                log_diag_cov: d.log_diag_cov.clone(),
                samples,
            };
            (c, preview)
        })
        .collect();
    let preview = HfaPreview {
        modality: cfg.modality,
        samples_per_class: hyperada::augmentation::samples_per_class(cfg.modality),
        items: paths,
        classes,
    };
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    write_json(out, &preview)?;
    Ok(preview)
}


