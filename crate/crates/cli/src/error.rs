//! Error type with the exit-code partition: config = 2, io = 3, numeric = 4.

use hitmat_core::dataset::DatasetError;
use hitmat_core::eval::EvalError;
use hitmat_core::loss::LossError;
use hitmat_core::model::{ConfigError, ModelError};
use hitmat_core::search::SearchError;
use hitmat_core::seq::{EncodeError, MutationError, SeqError};
use hitmat_core::train::TrainError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad configuration, flags, or inputs that violate preconditions.
    #[error("config error: {0}")]
    Config(String),
    /// Filesystem problems and unparsable data files.
    #[error("io error: {0}")]
    Io(String),
    /// Numerical failure (divergence, non-finite values).
    #[error("numeric error: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn io(msg: impl Into<String>) -> Self {
        CliError::Io(msg.into())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::NonFinite => CliError::Numeric(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<SearchError> for CliError {
    fn from(e: SearchError) -> Self {
        match e {
            SearchError::Model(ModelError::NonFinite) => CliError::Numeric(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

macro_rules! config_class {
    ($($ty:ty),*) => {
        $(impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::Config(e.to_string())
            }
        })*
    };
}

config_class!(DatasetError, EvalError, LossError, ConfigError, EncodeError, SeqError, MutationError);
