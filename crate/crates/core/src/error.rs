use thiserror::Error;

use crate::analysis::AnalysisError;
use crate::ingest::IngestError;
use crate::mixture::MixtureError;
use crate::sequence::SequenceError;
use crate::sgns::EmbedError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Usage => 1,
            ErrorClass::Data => 2,
            ErrorClass::Numerical => 3,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Mixture(#[from] MixtureError),
    #[error(transparent)]
    Sequence(#[from] SequenceError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed {what}: {message}")]
    Format { what: String, message: String },
    #[error("stage {stage:?} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn format(what: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            what: what.into(),
            message: message.into(),
        }
    }

    /// Attribute the error to a pipeline stage.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            Error::Stage { .. } => self,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    /// Name of the failing stage, if known.
    pub fn stage(&self) -> Option<&'static str> {
        match self {
            Error::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Stage { source, .. } => source.class(),
            Error::Config(_) => ErrorClass::Usage,
            Error::Ingest(IngestError::UnknownFormat(_)) => ErrorClass::Usage,
            Error::Ingest(IngestError::InvalidMinActions(_)) => ErrorClass::Usage,
            Error::Embed(EmbedError::NonFinite { .. }) => ErrorClass::Numerical,
            Error::Embed(EmbedError::InvalidConfig(_)) => ErrorClass::Usage,
            Error::Mixture(MixtureError::NumericalFailure(_)) => ErrorClass::Numerical,
            Error::Mixture(MixtureError::InvalidArgument(_)) => ErrorClass::Usage,
            Error::Analysis(AnalysisError::InvalidArgument(_)) => ErrorClass::Usage,
            _ => ErrorClass::Data,
        }
    }
}
