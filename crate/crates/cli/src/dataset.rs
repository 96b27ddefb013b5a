//! Dataset directories: `source/`, `target/` and `test/` splits holding
//! `NNNN.img.hyt` + `NNNN.lbl.hyt` image pairs or `NNNN.bin` + `NNNN.label`
//! scan pairs.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hyperada::data_io::{image_from_tensors, image_to_tensors, read_cloud, read_tensor, write_cloud, write_tensor, CloudFilePair};
use hyperada::mixing::{LabeledCloud, LabeledImage};
use hyperada::trainer::{Datasets, LidarData, RgbData};
use hyperada::Modality;

use crate::config::RunConfig;

pub const SPLITS: [&str; 3] = ["source", "target", "test"];

pub fn image_paths(stem: &Path) -> (PathBuf, PathBuf) {
    (with_suffix(stem, ".img.hyt"), with_suffix(stem, ".lbl.hyt"))
}

pub fn cloud_pair(stem: &Path) -> CloudFilePair {
    CloudFilePair::new(with_suffix(stem, ".bin"), with_suffix(stem, ".label"))
}

fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn read_image(stem: &Path) -> Result<LabeledImage> {
    let (c, l) = image_paths(stem);
    let channels = read_tensor(&c)?;
    let labels = read_tensor(&l)?;
    image_from_tensors(&channels, &labels).with_context(|| format!("image {}", stem.display()))
}

pub fn write_image(img: &LabeledImage, stem: &Path) -> Result<()> {
    let (c, l) = image_paths(stem);
    let (ct, lt) = image_to_tensors(img);
    write_tensor(&ct, &c)?;
    write_tensor(&lt, &l)?;
    Ok(())
}

pub fn read_scan(stem: &Path) -> Result<LabeledCloud> {
    Ok(read_cloud(&cloud_pair(stem))?)
}

pub fn write_scan(cloud: &LabeledCloud, stem: &Path) -> Result<()> {
    Ok(write_cloud(cloud, &cloud_pair(stem))?)
}

/// Sorted item stems of one split directory.
pub fn stems(dir: &Path, modality: Modality) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        bail!("dataset directory {} does not exist", dir.display());
    }
    let suffix = match modality {
        Modality::Rgb => ".img.hyt",
        Modality::Lidar => ".bin",
    };
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let name = entry?.file_name();
        if let Some(stem) = name.to_str().and_then(|n| n.strip_suffix(suffix)) {
            out.push(dir.join(stem));
        }
    }
    out.sort();
    if out.is_empty() {
        bail!("no {modality} items (*{suffix}) in {}", dir.display());
    }
    Ok(out)
}

pub fn load_images(dir: &Path) -> Result<Vec<LabeledImage>> {
    stems(dir, Modality::Rgb)?.iter().map(|s| read_image(s)).collect()
}

pub fn load_scans(dir: &Path) -> Result<Vec<LabeledCloud>> {
    stems(dir, Modality::Lidar)?.iter().map(|s| read_scan(s)).collect()
}

pub fn load_dataset(root: &Path, modality: Modality) -> Result<Datasets> {
    if !root.is_dir() {
        bail!("dataset directory {} does not exist", root.display());
    }
    let [s, t, e] = SPLITS.map(|split| root.join(split));
    Ok(match modality {
        Modality::Rgb => Datasets::Rgb(RgbData {
            source: load_images(&s)?,
            target: load_images(&t)?,
            test: load_images(&e)?,
        }),
        Modality::Lidar => Datasets::Lidar(LidarData {
            source: load_scans(&s)?,
            target: load_scans(&t)?,
            test: load_scans(&e)?,
        }),
    })
}

pub fn save_dataset(root: &Path, data: &Datasets) -> Result<()> {
    for split in SPLITS {
        let dir = root.join(split);
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    match data {
        Datasets::Rgb(d) => {
            for (split, items) in SPLITS.iter().zip([&d.source, &d.target, &d.test]) {
                for (i, img) in items.iter().enumerate() {
                    write_image(img, &root.join(split).join(format!("{i:04}")))?;
                }
            }
        }
        Datasets::Lidar(d) => {
            for (split, items) in SPLITS.iter().zip([&d.source, &d.target, &d.test]) {
                for (i, c) in items.iter().enumerate() {
                    write_scan(c, &root.join(split).join(format!("{i:04}")))?;
                }
            }
        }
    }
    Ok(())
}

/// The configured dataset directory, or the synthetic world.
pub fn datasets(cfg: &RunConfig) -> Result<Datasets> {
    if let Some(dir) = &cfg.data_dir {
        return load_dataset(dir, cfg.modality);
    }
    synthetic(cfg)
}

pub fn synthetic(cfg: &RunConfig) -> Result<Datasets> {
    Ok(match cfg.modality {
        Modality::Rgb => {
            let world = cfg.world.rgb.clone().context("missing [world.rgb] section")?;
            Datasets::Rgb(RgbData::synthetic(&world, cfg.world.test_items)?)
        }
        Modality::Lidar => {
            let world = cfg.world.lidar.clone().context("missing [world.lidar] section")?;
            Datasets::Lidar(LidarData::synthetic(&world, cfg.world.test_items)?)
        }
    })
}
