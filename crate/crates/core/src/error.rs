use std::path::PathBuf;

use thiserror::Error;

use crate::geometry::RigidTransform;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{path}: {source}")]
    IoPath {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid NIfTI file: {0}")]
    Format(String),

    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDtype(i16),

    #[error("truncated data section: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("invalid volume: {0}")]
    InvalidVolume(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("transform is not rigid: {0}")]
    NotRigid(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("unexpected label value {value} at voxel {index:?}")]
    Label { value: i64, index: [usize; 3] },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("registration failed: {reason}")]
    RegistrationFailed {
        reason: String,
        initial: RigidTransform,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {reason}")]
    StageFailure {
        stage: String,
        reason: String,
        exit_code: Option<i32>,
        wall_time_s: Option<f64>,
    },

    #[error("external tool timed out after {timeout_s} s (`{command}`)")]
    Timeout { command: String, timeout_s: f64 },

    #[error("external tool did not produce declared output {0}")]
    ToolContract(PathBuf),

    #[error("transform file error: {0}")]
    TransformFile(String),

    #[error("report error: {0}")]
    Report(String),
}

impl Error {
    pub(crate) fn io_at(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::IoPath { path, source }
    }

    /// Failures of a pipeline stage or an external tool, as opposed to bad
    /// input or usage.
    pub fn is_stage_failure(&self) -> bool {
        matches!(
            self,
            Error::StageFailure { .. }
                | Error::Timeout { .. }
                | Error::ToolContract(_)
                | Error::RegistrationFailed { .. }
        )
    }
}
