use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::bayes_opt::BoError;
use crate::data_io::DataError;
use crate::evaluation::EvalError;
use crate::gp::GpError;
use crate::kernels::KernelError;
use crate::model_file::ModelFileError;
use crate::transforms::TransformError;

/// Top-level error for pipeline and CLI operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("column '{column}': {source}")]
    Transform { column: String, source: TransformError },
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Bo(#[from] BoError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    ModelFile(#[from] ModelFileError),
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error("invalid argument: {0}")]
    Usage(String),
    #[error("cannot access {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

pub type Result<T> = std::result::Result<T, Error>;

pub const EXIT_OK: i32 = 0;
pub const EXIT_NUMERICAL: i32 = 1;
pub const EXIT_IO: i32 = 2;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// 1 for numerical or model failures, 2 for I/O, parse and schema
    /// failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Data(_) | Error::ModelFile(_) | Error::Schema(_) | Error::Usage(_) | Error::Io { .. } => EXIT_IO,
            Error::Transform { .. } | Error::Kernel(_) | Error::Gp(_) | Error::Bo(_) | Error::Eval(_) => EXIT_NUMERICAL,
        }
    }
}
