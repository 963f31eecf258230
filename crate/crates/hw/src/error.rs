use thiserror::Error;

#[derive(Debug, Error)]
pub enum HwError {
    #[error("shape mismatch in {context}: {detail}")]
    Shape { context: String, detail: String },
    #[error("invalid hardware configuration: {0}")]
    Config(String),
    #[error("accumulator overflow: {value} does not fit in {bits} bits")]
    Overflow { value: i64, bits: u32 },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("shape table line {line}: {detail}")]
    Table { line: usize, detail: String },
    #[error(transparent)]
    Model(#[from] anoise::Error),
}

pub type Result<T, E = HwError> = std::result::Result<T, E>;

pub(crate) fn shape(context: impl Into<String>, detail: impl Into<String>) -> HwError {
    HwError::Shape {
        context: context.into(),
        detail: detail.into(),
    }
}
