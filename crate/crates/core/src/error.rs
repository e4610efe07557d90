use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {dim}: expected {expected}, found {found}")]
    ShapeMismatch {
        dim: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("data length {found} does not match shape {shape:?} (expected {expected})")]
    DataLength {
        shape: [usize; 4],
        expected: usize,
        found: usize,
    },

    #[error("groups {groups} must divide both input channels {in_c} and output channels {out_c}")]
    Groups {
        groups: usize,
        in_c: usize,
        out_c: usize,
    },

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing weight tensor `{0}`")]
    MissingWeight(String),

    #[error("weight `{name}` has shape {found:?}, expected {expected:?}")]
    WeightShape {
        name: String,
        expected: [usize; 4],
        found: [usize; 4],
    },

    #[error("bad magic: expected \"RFMW\", found {0:?}")]
    BadMagic([u8; 4]),

    #[error("truncated weights file: {0}")]
    Truncated(String),

    #[error("duplicate tensor name `{0}`")]
    DuplicateName(String),

    #[error("malformed manifest: {0}")]
    MalformedManifest(String),

    #[error("length mismatch for `{name}`: shape needs {expected} bytes, blob has {found}")]
    LengthMismatch {
        name: String,
        expected: usize,
        found: usize,
    },

    #[error("unsupported image format: {0}")]
    ImageFormat(String),

    #[error("image {id}: unknown class {class:?}")]
    UnknownClass { id: String, class: String },

    #[error("image {id}: invalid box {bbox:?}: {reason}")]
    InvalidBox {
        id: String,
        bbox: [f64; 4],
        reason: &'static str,
    },

    #[error("image {id}: missing or invalid field `{field}`")]
    MissingField { id: String, field: String },

    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
