use std::path::{Path, PathBuf};

use seget_core::data::DataError;
use seget_core::model::{CheckpointError, ModelError};
use seget_core::train::TrainError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("runtime error: {0}")]
    Runtime(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Runtime(_) => 3,
            CliError::Io { .. } => 4,
        }
    }

    pub fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
        move |source| CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::InvalidConfig(_) => CliError::Config(e.to_string()),
            ModelError::Indivisible { .. } | ModelError::InputChannels { .. } => CliError::Data(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

pub fn checkpoint_error(path: &Path, e: CheckpointError) -> CliError {
    match e {
        CheckpointError::Io(source) => CliError::Io {
            path: path.to_path_buf(),
            source,
        },
        CheckpointError::Model(m) => m.into(),
        other => CliError::Data(format!("{}: {other}", path.display())),
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Model(m) => m.into(),
            TrainError::InvalidConfig(_) => CliError::Config(e.to_string()),
            TrainError::EmptyDataset(_) | TrainError::Loss(_) => CliError::Data(e.to_string()),
            TrainError::Checkpoint { source, partial } => {
                log::error!("training stopped after {} epochs", partial.records.len());
                match source {
                    CheckpointError::Io(source) => CliError::Io {
                        path: PathBuf::from("checkpoint"),
                        source,
                    },
                    other => CliError::Runtime(other.to_string()),
                }
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}
