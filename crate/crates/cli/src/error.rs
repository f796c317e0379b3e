use serde::Serialize;
use thiserror::Error;

use connectome_core::dataio::DataError;
use connectome_core::evaluation::EvalError;
use connectome_core::models::ModelError;
use connectome_core::saliency::SaliencyError;
use connectome_core::synthgen::SynthError;

/// Command failure, classified by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments or config; exit 1.
    #[error("{0}")]
    Validation(String),
    /// Data or runtime failure; exit 2.
    #[error("{0}")]
    Runtime(String),
    /// Training and test sets share subjects; exit 2.
    #[error("{0}")]
    SubjectOverlap(String),
    /// A verification suite failed; exit 3.
    #[error("{0}")]
    Verification(String),
}

#[derive(Serialize)]
struct ErrorJson<'a> {
    kind: &'a str,
    message: String,
    exit_code: i32,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) | CliError::SubjectOverlap(_) => 2,
            CliError::Verification(_) => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Validation(_) => "validation",
            CliError::Runtime(_) => "runtime",
            CliError::SubjectOverlap(_) => "subject_overlap",
            CliError::Verification(_) => "verification",
        }
    }

    /// Single-line JSON for stderr.
    pub fn to_json(&self) -> String {
        let e = ErrorJson { kind: self.kind(), message: self.to_string(), exit_code: self.exit_code() };
        serde_json::json!({ "error": e }).to_string()
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(m) => CliError::Validation(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Model(m) => m.into(),
            e @ EvalError::SubjectOverlap(_) => CliError::SubjectOverlap(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<SaliencyError> for CliError {
    fn from(e: SaliencyError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::InvalidSpec(m) => CliError::Validation(m),
            e @ SynthError::TooManyRois { .. } => CliError::Validation(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}
