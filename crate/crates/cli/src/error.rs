use thiserror::Error;

/// Exit status 2 for configuration problems, 1 for everything else.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<anoise::Error> for CliError {
    fn from(e: anoise::Error) -> Self {
        match e {
            anoise::Error::Config(msg) => CliError::Config(msg),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<anoise_hw::HwError> for CliError {
    fn from(e: anoise_hw::HwError) -> Self {
        match e {
            anoise_hw::HwError::Config(msg) => CliError::Config(msg),
            anoise_hw::HwError::Table { .. } => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
