use std::path::Path;

use sha2::{Digest, Sha256};

use super::model::Model;
use super::{TrainerError, TrainingConfig};
use crate::geometry::Curvature;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"HYCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_BYTES: usize = 4 + 4 + 32 + 16 + 8 + 8 + 8;

/// SHA-256 of the configuration's JSON form.
pub fn config_hash(cfg: &TrainingConfig) -> [u8; 32] {
    let json = serde_json::to_vec(cfg).expect("config serializes");
    Sha256::digest(&json).into()
}

/// Little-endian layout: magic, version, config hash, four `u32` shape
/// fields (input, hidden, dim, classes), `f64` curvature and tangent clip,
/// `u64` parameter count and the `f64` parameters.
pub fn encode_checkpoint(model: &Model, cfg: &TrainingConfig) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_BYTES + 8 * model.params.len());
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&config_hash(cfg));
    for v in [model.encoder.input_dim, model.encoder.hidden, model.encoder.dim, model.head.classes] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&model.curvature.kappa().to_le_bytes());
    out.extend_from_slice(&model.encoder.tangent_clip.to_le_bytes());
    out.extend_from_slice(&(model.params.len() as u64).to_le_bytes());
    for p in &model.params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

/// Decodes a checkpoint; with `cfg`, its hash must match the embedded one.
pub fn decode_checkpoint(bytes: &[u8], cfg: Option<&TrainingConfig>) -> Result<Model, TrainerError> {
    let err = |m: String| TrainerError::Checkpoint(m);
    let mut pos = 0usize;
    let mut take = |n: usize, what: &str| -> Result<&[u8], TrainerError> {
        let s = bytes
            .get(pos..pos + n)
            .ok_or_else(|| err(format!("truncated {what} at byte offset {pos}")))?;
        pos += n;
        Ok(s)
    };
    if take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(err("bad magic".into()));
    }
    let version = u32::from_le_bytes(take(4, "version")?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(err(format!("unsupported version {version}")));
    }
    let hash: [u8; 32] = take(32, "config hash")?.try_into().unwrap();
    if let Some(c) = cfg {
        if hash != config_hash(c) {
            return Err(err("configuration hash does not match".into()));
        }
    }
    let mut dims = [0usize; 4];
    for d in &mut dims {
        *d = u32::from_le_bytes(take(4, "shape")?.try_into().unwrap()) as usize;
    }
    let kappa = f64::from_le_bytes(take(8, "curvature")?.try_into().unwrap());
    let curvature = Curvature::new(kappa)?;
    let clip = f64::from_le_bytes(take(8, "tangent clip")?.try_into().unwrap());
    if !(clip > 0.0 && clip.is_finite()) {
        return Err(err(format!("tangent clip {clip} is not a positive finite number")));
    }
    let n = u64::from_le_bytes(take(8, "parameter count")?.try_into().unwrap());
    let [input, hidden, dim, classes] = dims.map(|d| d as u128);
    let needed = hidden * input + hidden + dim * hidden + dim + 2 * classes * dim;
    if n as u128 != needed {
        return Err(err(format!("{n} parameters, shape needs {needed}")));
    }
    let block = (bytes.len() - HEADER_BYTES) as u64;
    if n.saturating_mul(8) != block {
        return Err(err(format!(
            "parameter block at byte offset {HEADER_BYTES} holds {block} bytes, expected {}",
            n.saturating_mul(8)
        )));
    }
    let mut model = Model::zeros(dims[0], dims[1], dims[2], dims[3], curvature);
    model.encoder.tangent_clip = clip;
    for p in &mut model.params {
        *p = f64::from_le_bytes(take(8, "parameters")?.try_into().unwrap());
    }
    if pos != bytes.len() {
        return Err(err(format!("{} trailing bytes", bytes.len() - pos)));
    }
    Ok(model)
}

pub fn save_checkpoint(path: &Path, model: &Model, cfg: &TrainingConfig) -> Result<(), TrainerError> {
    std::fs::write(path, encode_checkpoint(model, cfg))
        .map_err(|e| TrainerError::Checkpoint(format!("{}: {e}", path.display())))
}

pub fn load_checkpoint(path: &Path, cfg: Option<&TrainingConfig>) -> Result<Model, TrainerError> {
    let bytes = std::fs::read(path).map_err(|e| TrainerError::Checkpoint(format!("{}: {e}", path.display())))?;
    decode_checkpoint(&bytes, cfg)
}
