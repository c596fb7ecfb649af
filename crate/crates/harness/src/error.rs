use thiserror::Error;

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error("cannot parse configuration: {0}")]
    Parse(String),
    #[error(transparent)]
    Core(#[from] ubgrad::Error),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
    #[error("cannot build worker pool: {0}")]
    Pool(String),
}

impl HarnessError {
    pub fn config(path: &str, message: impl Into<String>) -> Self {
        HarnessError::Config { path: path.to_string(), message: message.into() }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::Config { .. } | HarnessError::Parse(_) => "config",
            HarnessError::Core(_) => "numerics",
            HarnessError::Io { .. } | HarnessError::Csv(_) => "io",
            HarnessError::Pool(_) => "runtime",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            "config" => 2,
            "io" => 3,
            _ => 1,
        }
    }
}
