use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: {detail}")]
    Shape { context: String, detail: String },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("layer index {index} out of range (model has {len} layers)")]
    LayerIndex { index: usize, len: usize },

    #[error("layer {0} does not produce a spatial (4-D) activation")]
    NonSpatial(usize),

    #[error("duplicate attachment at layer {0}")]
    DuplicateAttachment(usize),

    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("tape does not match model: {0}")]
    TapeMismatch(String),

    #[error("bad magic: expected \"ANMD\"")]
    BadMagic,

    #[error("unsupported container version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("truncated payload: {0}")]
    Truncated(String),

    #[error("missing payload: {0}")]
    MissingPayload(String),

    #[error("malformed manifest: {0}")]
    Manifest(String),

    #[error("dataset format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Shape {
            context: context.into(),
            detail: detail.into(),
        }
    }
}
