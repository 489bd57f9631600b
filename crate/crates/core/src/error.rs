use std::fmt;

/// Error type shared by every module of the engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid calibration: {0}")]
    InvalidCalibration(String),
    #[error("point ({x}, {y}) maps to infinity")]
    PointAtInfinity { x: f64, y: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid raster: {0}")]
    InvalidRaster(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("training failed: {0}")]
    TrainingFailure(String),
    #[error("malformed {what}: {msg}")]
    Format { what: &'static str, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
}

/// Pipeline stage tag attached to errors raised inside a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    ShareForward,
    FuseNarrow,
    ShareBackward,
    FuseWide,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::ShareForward => "share-forward",
            Stage::FuseNarrow => "fuse-narrow",
            Stage::ShareBackward => "share-backward",
            Stage::FuseWide => "fuse-wide",
        })
    }
}

/// Coarse classification used to pick process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

impl Error {
    pub(crate) fn format(what: &'static str, msg: impl Into<String>) -> Self {
        Error::Format { what, msg: msg.into() }
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn at_stage(self, stage: Stage) -> Self {
        Error::Stage { stage, source: Box::new(self) }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidCalibration(_) | Error::Config(_) => ErrorClass::Config,
            Error::Dimension(_) | Error::InvalidRaster(_) | Error::Format { .. } | Error::Io(_) => {
                ErrorClass::Data
            }
            Error::PointAtInfinity { .. } | Error::UndefinedMetric(_) | Error::TrainingFailure(_) => {
                ErrorClass::Numeric
            }
            Error::Stage { source, .. } => source.class(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
