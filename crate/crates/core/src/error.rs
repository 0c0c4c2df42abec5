use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },

    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },

    #[error("axis {axis} out of range for rank {rank}")]
    InvalidAxis { axis: usize, rank: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("layer {index} ({name}): {reason}")]
    InvalidLayer { index: usize, name: String, reason: String },

    #[error("layer {layer} is not a spatial layer")]
    NotSpatial { layer: usize },

    #[error("layer index {layer} out of range ({count} layers)")]
    LayerOutOfRange { layer: usize, count: usize },

    #[error("no layer named `{0}`")]
    UnknownLayerName(String),

    #[error("channel {channel} out of range ({count} channels at layer {layer})")]
    ChannelOutOfRange { layer: usize, channel: usize, count: usize },

    #[error("class {class} out of range ({count} classes)")]
    ClassOutOfRange { class: usize, count: usize },

    #[error("method `{method}` is not applicable: {reason}")]
    IncompatibleMethod { method: String, reason: String },

    #[error("unknown method `{0}`")]
    UnknownMethod(String),

    #[error("model manifest: {0}")]
    Manifest(String),

    #[error("bad magic: expected format \"camx-model\", found {0:?}")]
    BadMagic(String),

    #[error("unsupported model format version {found} (supported: {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("unknown layer kind `{kind}` at layer {index}")]
    UnknownLayerKind { index: usize, kind: String },

    #[error("truncated blob: layer {index} ({name}) needs bytes {start}..{end} but blob has {len}")]
    TruncatedBlob {
        index: usize,
        name: String,
        start: usize,
        end: usize,
        len: usize,
    },

    #[error("blob layout: {0}")]
    BlobLayout(String),

    #[error("unsupported image format: {0}")]
    UnsupportedImage(String),

    #[error("image is {found:?} but the network expects {expected:?} (pass resize to allow bilinear resizing)")]
    ImageDimensions {
        found: (usize, usize),
        expected: (usize, usize),
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(left: &[usize], right: &[usize]) -> Self {
        Error::ShapeMismatch {
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
