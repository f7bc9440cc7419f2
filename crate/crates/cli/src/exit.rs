use spice_core::backend::BackendError;
use spice_core::metrics::MetricsError;
use spice_core::orchestrator::PipelineError;

pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_BACKEND: i32 = 4;

/// An error paired with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub error: anyhow::Error,
}

pub type CliResult<T = ()> = Result<T, CliError>;

impl CliError {
    pub fn new(code: i32, error: impl Into<anyhow::Error>) -> Self {
        Self {
            code,
            error: error.into(),
        }
    }

    pub fn usage(error: impl Into<anyhow::Error>) -> Self {
        Self::new(EXIT_USAGE, error)
    }

    pub fn io(error: impl Into<anyhow::Error>) -> Self {
        Self::new(EXIT_IO, error)
    }

    pub fn backend(error: impl Into<anyhow::Error>) -> Self {
        Self::new(EXIT_BACKEND, error)
    }

    pub fn internal(error: impl Into<anyhow::Error>) -> Self {
        Self::new(EXIT_INTERNAL, error)
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        let code = match &e {
            PipelineError::Backend { .. } | PipelineError::Cancelled => EXIT_BACKEND,
            PipelineError::ImageOps(_) => EXIT_INTERNAL,
            _ => EXIT_USAGE,
        };
        Self::new(code, e)
    }
}

impl From<BackendError> for CliError {
    fn from(e: BackendError) -> Self {
        match e {
            BackendError::Configuration(_) => Self::usage(e),
            _ => Self::backend(e),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        let code = match &e {
            MetricsError::EmptyMask
            | MetricsError::NoCases(_)
            | MetricsError::Io { .. }
            | MetricsError::Codec(_)
            | MetricsError::Csv(_) => EXIT_IO,
            MetricsError::Backend(_) => EXIT_BACKEND,
            MetricsError::DimensionMismatch { .. }
            | MetricsError::ZeroDenominator(_)
            | MetricsError::MalformedCase(_) => EXIT_USAGE,
            MetricsError::EmbeddingDims(..) | MetricsError::UndefinedDirection(_) => EXIT_BACKEND,
        };
        Self::new(code, e)
    }
}
