use std::path::PathBuf;

use tgfuse_autodiff::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum FuseError {
    /// Caller-supplied data violates a precondition.
    #[error("input error: {0}")]
    Input(String),
    #[error("format error in {context} at byte {offset}: {detail}")]
    Format {
        context: String,
        offset: u64,
        detail: String,
    },
    #[error("numerical error in {stage}: {detail}")]
    Numerical { stage: String, detail: String },
    #[error(transparent)]
    Tensor(TensorError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

pub type Result<T, E = FuseError> = std::result::Result<T, E>;

impl FuseError {
    pub fn input(msg: impl Into<String>) -> Self {
        FuseError::Input(msg.into())
    }

    pub fn format(context: impl Into<String>, offset: u64, detail: impl Into<String>) -> Self {
        FuseError::Format {
            context: context.into(),
            offset,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FuseError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for NaN/Inf failures, which the command line reports with its
    /// own exit status.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            FuseError::Numerical { .. } | FuseError::Tensor(TensorError::NonFinite { .. })
        )
    }

    /// Tags a non-finite tensor failure with the pipeline stage it came from.
    pub fn at_stage(self, stage: &str) -> Self {
        match self {
            FuseError::Tensor(TensorError::NonFinite { op }) => FuseError::Numerical {
                stage: stage.to_string(),
                detail: format!("non-finite output of {op}"),
            },
            other => other,
        }
    }
}

impl From<TensorError> for FuseError {
    fn from(e: TensorError) -> Self {
        FuseError::Tensor(e)
    }
}
