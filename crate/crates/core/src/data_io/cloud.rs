use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::{read_bytes, write_bytes, FormatError};
use crate::mixing::LabeledCloud;

const POINT_BYTES: usize = 16;
const LABEL_BYTES: usize = 4;

/// Scan stored as `x y z intensity` little-endian `f32` records plus one
/// little-endian `u32` label word per point (class in the low 16 bits,
/// instance in the high 16 bits).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CloudFilePair {
    pub points: PathBuf,
    pub labels: PathBuf,
}

impl CloudFilePair {
    pub fn new(points: impl Into<PathBuf>, labels: impl Into<PathBuf>) -> Self {
        CloudFilePair {
            points: points.into(),
            labels: labels.into(),
        }
    }
}

pub fn encode_points(cloud: &LabeledCloud) -> Result<Vec<u8>, FormatError> {
    let mut out = Vec::with_capacity(cloud.len() * POINT_BYTES);
    for (i, p) in cloud.points.iter().enumerate() {
        for &v in p {
            let f = v as f32;
            if !f.is_finite() {
                return Err(FormatError::Encode(format!("point {i} is not representable as f32")));
            }
            out.extend_from_slice(&f.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn encode_labels(cloud: &LabeledCloud) -> Result<Vec<u8>, FormatError> {
    let mut out = Vec::with_capacity(cloud.len() * LABEL_BYTES);
    for i in 0..cloud.len() {
        let class = cloud.labels[i];
        let inst = cloud.instances.as_ref().map_or(0, |v| v[i]);
        if class > 0xFFFF || inst > 0xFFFF {
            return Err(FormatError::Encode(format!(
                "point {i}: class {class} or instance {inst} exceeds 16 bits"
            )));
        }
        out.extend_from_slice(&((inst << 16) | class).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_cloud(points: &[u8], labels: &[u8]) -> Result<LabeledCloud, FormatError> {
    if !points.len().is_multiple_of(POINT_BYTES) {
        return Err(FormatError::Truncated {
            what: "points file",
            offset: (points.len() - points.len() % POINT_BYTES) as u64,
            detail: format!("{} bytes is not a multiple of {POINT_BYTES}", points.len()),
        });
    }
    if !labels.len().is_multiple_of(LABEL_BYTES) {
        return Err(FormatError::Truncated {
            what: "labels file",
            offset: (labels.len() - labels.len() % LABEL_BYTES) as u64,
            detail: format!("{} bytes is not a multiple of {LABEL_BYTES}", labels.len()),
        });
    }
    let n = points.len() / POINT_BYTES;
    let m = labels.len() / LABEL_BYTES;
    if n != m {
        return Err(FormatError::CountMismatch {
            points: n as u64,
            labels: m as u64,
            offset: (n.min(m) * LABEL_BYTES) as u64,
        });
    }
    let mut pts = Vec::with_capacity(n);
    for (i, rec) in points.chunks_exact(POINT_BYTES).enumerate() {
        let mut p = [0.0f64; 4];
        for (k, b) in rec.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
            if !v.is_finite() {
                return Err(FormatError::Value {
                    offset: (i * POINT_BYTES + 4 * k) as u64,
                    detail: format!("non-finite coordinate {v}"),
                });
            }
            p[k] = v as f64;
        }
        pts.push(p);
    }
    let mut cls = Vec::with_capacity(n);
    let mut inst = Vec::with_capacity(n);
    for w in labels.chunks_exact(LABEL_BYTES) {
        let word = u32::from_le_bytes([w[0], w[1], w[2], w[3]]);
        cls.push(word & 0xFFFF);
        inst.push(word >> 16);
    }
    Ok(LabeledCloud {
        points: pts,
        labels: cls,
        instances: Some(inst),
    })
}

pub fn read_cloud(pair: &CloudFilePair) -> Result<LabeledCloud, FormatError> {
    let points = read_bytes(&pair.points)?;
    let labels = read_bytes(&pair.labels)?;
    decode_cloud(&points, &labels).map_err(|e| e.in_file(&pair.points))
}

pub fn write_cloud(cloud: &LabeledCloud, pair: &CloudFilePair) -> Result<(), FormatError> {
    let points = encode_points(cloud)?;
    let labels = encode_labels(cloud)?;
    write_bytes(&pair.points, &points)?;
    write_bytes(&pair.labels, &labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_files_give_empty_cloud() {
        let c = decode_cloud(&[], &[]).unwrap();
        assert!(c.is_empty());
    }

    #[test]
    fn hand_assembled_bytes() {
        let mut pts = Vec::new();
        for v in [1.0f32, 2.0, 3.0, 0.5] {
            pts.extend_from_slice(&v.to_le_bytes());
        }
        let word: u32 = 3 * 65536 + 9;
        let labels = word.to_le_bytes().to_vec();
        let c = decode_cloud(&pts, &labels).unwrap();
        assert_eq!(c.points, vec![[1.0, 2.0, 3.0, 0.5]]);
        assert_eq!(c.labels, vec![9]);
        assert_eq!(c.instances, Some(vec![3]));
        assert_eq!(encode_points(&c).unwrap(), pts);
        assert_eq!(encode_labels(&c).unwrap(), labels);
    }

    #[test]
    fn truncation_names_offset() {
        let e = decode_cloud(&[0u8; 17], &[0u8; 4]).unwrap_err();
        assert!(e.to_string().contains("byte offset 16"), "{e}");
        let e = decode_cloud(&[0u8; 32], &[0u8; 4]).unwrap_err();
        assert!(matches!(e, FormatError::CountMismatch { points: 2, labels: 1, .. }));
    }

    #[test]
    fn nan_rejected_with_offset() {
        let mut pts = vec![0u8; 16];
        pts[8..12].copy_from_slice(&f32::NAN.to_le_bytes());
        let e = decode_cloud(&pts, &[0u8; 4]).unwrap_err();
        assert!(e.to_string().contains("byte offset 8"), "{e}");
    }

    #[test]
    fn oversized_labels_not_encodable() {
        let c = LabeledCloud::new(vec![[0.0; 4]], vec![70_000], None).unwrap();
        assert!(encode_labels(&c).is_err());
    }
}
