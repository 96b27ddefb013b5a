use std::path::Path;

use super::{read_bytes, write_bytes, FormatError};
use crate::mixing::LabeledImage;

pub const MAGIC: [u8; 4] = *b"HYTN";
/// Magic, dtype tag and rank; the shape follows as `rank` `u64` words.
pub const HEADER_FIXED: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32 = 0,
    F64 = 1,
    U8 = 2,
    U32 = 3,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 | DType::U32 => 4,
            DType::F64 => 8,
            DType::U8 => 1,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => DType::F32,
            1 => DType::F64,
            2 => DType::U8,
            3 => DType::U32,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
    U32(Vec<u32>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
            TensorData::U8(_) => DType::U8,
            TensorData::U32(_) => DType::U32,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::U8(v) => v.len(),
            TensorData::U32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Row-major little-endian tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: TensorData) -> Result<Self, FormatError> {
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or(FormatError::Encode("shape product overflows".into()))?;
        if n != data.len() {
            return Err(FormatError::Encode(format!(
                "shape {shape:?} needs {n} elements, data has {}",
                data.len()
            )));
        }
        if shape.len() > u8::MAX as usize {
            return Err(FormatError::Encode("rank above 255".into()));
        }
        Ok(Tensor { shape, data })
    }
}

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let dt = t.data.dtype();
    let mut out = Vec::with_capacity(HEADER_FIXED + 8 * t.shape.len() + t.data.len() * dt.size());
    out.extend_from_slice(&MAGIC);
    out.push(dt as u8);
    out.push(t.shape.len() as u8);
    for &d in &t.shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match &t.data {
        TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        TensorData::U8(v) => out.extend_from_slice(v),
        TensorData::U32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    out
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor, FormatError> {
    if bytes.len() < HEADER_FIXED {
        return Err(FormatError::Truncated {
            what: "tensor header",
            offset: bytes.len() as u64,
            detail: format!("{} of {HEADER_FIXED} fixed header bytes", bytes.len()),
        });
    }
    if bytes[..4] != MAGIC {
        return Err(FormatError::BadMagic {
            found: bytes[..4].to_vec(),
        });
    }
    let dt = DType::from_tag(bytes[4]).ok_or(FormatError::BadDtype { tag: bytes[4] })?;
    let rank = bytes[5] as usize;
    let header = HEADER_FIXED + 8 * rank;
    if bytes.len() < header {
        return Err(FormatError::Truncated {
            what: "tensor shape",
            offset: bytes.len() as u64,
            detail: format!("rank {rank} needs {header} header bytes"),
        });
    }
    let mut shape = Vec::with_capacity(rank);
    let mut count: u64 = 1;
    for k in 0..rank {
        let at = HEADER_FIXED + 8 * k;
        let d = u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
        count = count
            .checked_mul(d)
            .ok_or(FormatError::ShapeOverflow { offset: at as u64 })?;
        shape.push(usize::try_from(d).map_err(|_| FormatError::ShapeOverflow { offset: at as u64 })?);
    }
    let payload = &bytes[header..];
    let expected = count
        .checked_mul(dt.size() as u64)
        .ok_or(FormatError::ShapeOverflow { offset: header as u64 })?;
    if payload.len() as u64 != expected {
        return Err(FormatError::PayloadLength {
            offset: header as u64,
            expected,
            found: payload.len() as u64,
        });
    }
    let data = match dt {
        DType::F32 => TensorData::F32(
            payload
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect(),
        ),
        DType::F64 => TensorData::F64(
            payload
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect(),
        ),
        DType::U8 => TensorData::U8(payload.to_vec()),
        DType::U32 => TensorData::U32(
            payload
                .chunks_exact(4)
                .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect(),
        ),
    };
    Ok(Tensor { shape, data })
}

pub fn read_tensor(path: &Path) -> Result<Tensor, FormatError> {
    decode_tensor(&read_bytes(path)?).map_err(|e| e.in_file(path))
}

pub fn write_tensor(t: &Tensor, path: &Path) -> Result<(), FormatError> {
    write_bytes(path, &encode_tensor(t))
}

/// Channels as an `H × W × C` `f32` tensor and labels as an `H × W` `u32`
/// tensor.
pub fn image_to_tensors(img: &LabeledImage) -> (Tensor, Tensor) {
    (
        Tensor {
            shape: vec![img.height, img.width, img.num_channels],
            data: TensorData::F32(img.channels.clone()),
        },
        Tensor {
            shape: vec![img.height, img.width],
            data: TensorData::U32(img.labels.clone()),
        },
    )
}

pub fn image_from_tensors(channels: &Tensor, labels: &Tensor) -> Result<LabeledImage, FormatError> {
    let (TensorData::F32(c), TensorData::U32(l)) = (&channels.data, &labels.data) else {
        return Err(FormatError::Value {
            offset: 4,
            detail: "image needs f32 channels and u32 labels".into(),
        });
    };
    if channels.shape.len() != 3 || labels.shape.len() != 2 || channels.shape[..2] != labels.shape[..] {
        return Err(FormatError::Value {
            offset: 5,
            detail: format!("incompatible shapes {:?} and {:?}", channels.shape, labels.shape),
        });
    }
    LabeledImage::new(
        channels.shape[0],
        channels.shape[1],
        channels.shape[2],
        c.clone(),
        l.clone(),
    )
    .map_err(|e| FormatError::Value {
        offset: 0,
        detail: e.to_string(),
    })
}

/// Boolean mask as a single-channel `u8` image (`255` for true).
pub fn mask_tensor(mask: &[bool], height: usize, width: usize) -> Result<Tensor, FormatError> {
    Tensor::new(
        vec![height, width, 1],
        TensorData::U8(mask.iter().map(|&m| if m { 255 } else { 0 }).collect()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeros_file_size() {
        let t = Tensor::new(vec![2, 3], TensorData::F32(vec![0.0; 6])).unwrap();
        let b = encode_tensor(&t);
        assert_eq!(b.len(), HEADER_FIXED + 2 * 8 + 24);
        assert_eq!(decode_tensor(&b).unwrap(), t);
    }

    #[test]
    fn header_errors() {
        let t = Tensor::new(vec![4], TensorData::U32(vec![1, 2, 3, 4])).unwrap();
        let mut b = encode_tensor(&t);
        assert!(matches!(decode_tensor(&b[..3]), Err(FormatError::Truncated { .. })));
        assert!(matches!(decode_tensor(&b[..b.len() - 1]), Err(FormatError::PayloadLength { .. })));
        b[4] = 9;
        assert!(matches!(decode_tensor(&b), Err(FormatError::BadDtype { tag: 9 })));
        b[0] = b'X';
        assert!(matches!(decode_tensor(&b), Err(FormatError::BadMagic { .. })));
    }

    #[test]
    fn huge_shape_is_rejected_not_allocated() {
        let mut b = MAGIC.to_vec();
        b.extend_from_slice(&[1, 2]);
        b.extend_from_slice(&u64::MAX.to_le_bytes());
        b.extend_from_slice(&u64::MAX.to_le_bytes());
        assert!(matches!(decode_tensor(&b), Err(FormatError::ShapeOverflow { .. })));
    }

    #[test]
    fn image_round_trip() {
        let img = LabeledImage::new(2, 1, 3, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6], vec![1, 2]).unwrap();
        let (c, l) = image_to_tensors(&img);
        let back = image_from_tensors(&decode_tensor(&encode_tensor(&c)).unwrap(), &l).unwrap();
        assert_eq!(back, img);
    }
}
