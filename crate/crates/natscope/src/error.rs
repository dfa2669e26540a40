use std::io;
use std::path::PathBuf;

use natscope_core::baselines::BaselineError;
use natscope_core::detect::DetectError;
use natscope_core::eval::EvalError;
use natscope_core::flowdata::FlowError;
use natscope_core::iforest::ArtifactError;
use natscope_core::netflow::NetflowError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("missing mandatory column {0}")]
    MissingColumn(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{}: {source}", path.display())]
    Artifact {
        path: PathBuf,
        #[source]
        source: ArtifactError,
    },
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Netflow(#[from] NetflowError),
    #[error("{0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> Self {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    /// 1 for usage and configuration problems, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            _ => 2,
        }
    }

    /// Stable kebab-case token for scripts.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io-error",
            Error::MissingColumn(_) => "missing-column",
            Error::Csv(_) => "csv-error",
            Error::Json(_) => "json-error",
            Error::Artifact { source, .. } => match source {
                ArtifactError::Corrupt(_) => "corrupt-artifact",
                ArtifactError::UnsupportedVersion(_) => "unsupported-version",
                ArtifactError::DimensionMismatch { .. } => "dimension-mismatch",
            },
            Error::Flow(e) => flow_code(e),
            Error::Detect(e) => match e {
                DetectError::Flow(e) => flow_code(e),
                DetectError::Preprocess(_) => "preprocess-error",
                DetectError::Forest(_) => "forest-error",
                DetectError::InsufficientData(_) => "insufficient-data",
                DetectError::InvalidPercentile(_) => "invalid-percentile",
                DetectError::EmptyValidation => "empty-validation",
                DetectError::ForeignValidationFlow(_) => "foreign-validation-flow",
                DetectError::UnknownSelector(_) => "unknown-selector",
                DetectError::Uncalibrated(_) => "uncalibrated",
            },
            Error::Eval(_) | Error::Baseline(_) => "insufficient-data",
            Error::Netflow(e) => match e {
                NetflowError::UnsupportedVersion(_) => "unsupported-version",
                NetflowError::Truncated(_) => "truncated",
                NetflowError::InvalidTemplate(_) => "invalid-template",
            },
            Error::Config(_) => "config-error",
        }
    }
}

fn flow_code(e: &FlowError) -> &'static str {
    match e {
        FlowError::InvalidModelId(_) => "invalid-model-id",
        FlowError::InvalidMac(_) => "invalid-mac",
        FlowError::DuplicateMac(_) | FlowError::DuplicateIp(_) => "invalid-inventory",
        FlowError::NegativeDuration { .. } => "negative-duration",
        FlowError::InvalidRatios(..) => "invalid-ratios",
        FlowError::MissingSourceMac(_) => "missing-source-mac",
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
