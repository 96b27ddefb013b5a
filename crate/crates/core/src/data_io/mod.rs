//! File formats and deterministic synthetic datasets.

mod classmap;
mod cloud;
mod synth_lidar;
mod synth_rgb;
mod tensor;

pub use classmap::ClassMap;
pub use cloud::{decode_cloud, encode_labels, encode_points, read_cloud, write_cloud, CloudFilePair};
pub use synth_lidar::{
    generate_lidar_world, render_scan, LidarClass, LidarScene, LidarShift, LidarWorldConfig,
    LIDAR_CLASSES,
};
pub use synth_rgb::{generate_rgb_world, render_scene, RgbClass, RgbScene, RgbShift, RgbWorldConfig, RGB_CLASSES};
pub use tensor::{
    decode_tensor, encode_tensor, image_from_tensors, image_to_tensors, mask_tensor, read_tensor,
    write_tensor, DType, Tensor, TensorData, HEADER_FIXED, MAGIC,
};

use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {inner}", path.display())]
    InFile {
        path: PathBuf,
        #[source]
        inner: Box<FormatError>,
    },
    #[error("{what} truncated at byte offset {offset}: {detail}")]
    Truncated {
        what: &'static str,
        offset: u64,
        detail: String,
    },
    #[error("{points} points but {labels} labels (labels file byte offset {offset})")]
    CountMismatch { points: u64, labels: u64, offset: u64 },
    #[error("bad magic {found:02x?} at byte offset 0")]
    BadMagic { found: Vec<u8> },
    #[error("unknown dtype tag {tag} at byte offset 4")]
    BadDtype { tag: u8 },
    #[error("payload length mismatch at byte offset {offset}: expected {expected} bytes, found {found}")]
    PayloadLength { offset: u64, expected: u64, found: u64 },
    #[error("shape overflows at byte offset {offset}")]
    ShapeOverflow { offset: u64 },
    #[error("invalid value at byte offset {offset}: {detail}")]
    Value { offset: u64, detail: String },
    #[error("cannot encode: {0}")]
    Encode(String),
    #[error("class map: {0}")]
    ClassMap(String),
    #[error("invalid world configuration: {0}")]
    Config(String),
}

impl FormatError {
    pub(crate) fn in_file(self, path: &Path) -> Self {
        FormatError::InFile {
            path: path.to_path_buf(),
            inner: Box::new(self),
        }
    }
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>, FormatError> {
    std::fs::read(path).map_err(|source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    std::fs::write(path, bytes).map_err(|source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Independent random stream for `(seed, scene, stream)`.
pub(crate) fn stream_seed(seed: u64, scene: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(scene.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(stream.wrapping_mul(0x94D0_49BB_1331_11EB));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
