use std::path::Path;

use orgmol_core::assemble::AssembleError;
use orgmol_core::bonds::BondError;
use orgmol_core::chem::CorpusError;
use orgmol_core::metrics::MetricsError;
use orgmol_core::sde::SdeError;
use orgmol_core::vocab::VocabError;

use crate::checkpoint::CheckpointError;
use crate::config::ConfigError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    TargetTooSmall(VocabError),
    #[error("configuration: {0}")]
    Config(String),
    #[error("vocabulary fingerprint mismatch: {what} was built for {found}, vocabulary is {expected}")]
    Fingerprint { what: String, expected: String, found: String },
    #[error("non-finite loss in epoch {0}")]
    NonFiniteLoss(usize),
    #[error(transparent)]
    Vocab(VocabError),
    #[error(transparent)]
    Checkpoint(CheckpointError),
    #[error(transparent)]
    Sde(SdeError),
    #[error(transparent)]
    Bond(BondError),
    #[error(transparent)]
    Assemble(#[from] AssembleError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl CliError {
    /// 2 I/O or unusable input, 3 vocabulary target too small, 4 bad
    /// configuration or incompatible artifacts, 5 non-finite loss.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io { .. } | CliError::Input(_) => 2,
            CliError::Vocab(VocabError::Io { .. }) | CliError::Checkpoint(CheckpointError::Io { .. }) => 2,
            CliError::TargetTooSmall(_) => 3,
            CliError::Config(_) | CliError::Fingerprint { .. } => 4,
            CliError::Checkpoint(CheckpointError::Kind { .. } | CheckpointError::Layout(_)) => 4,
            CliError::NonFiniteLoss(_) => 5,
            _ => 1,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> CliError {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

impl From<VocabError> for CliError {
    fn from(e: VocabError) -> Self {
        match e {
            VocabError::TargetTooSmall { .. } => CliError::TargetTooSmall(e),
            other => CliError::Vocab(other),
        }
    }
}

impl From<SdeError> for CliError {
    fn from(e: SdeError) -> Self {
        match e {
            SdeError::NonFiniteLoss { epoch } => CliError::NonFiniteLoss(epoch),
            SdeError::InvalidSpec(m) => CliError::Config(m),
            other => CliError::Sde(other),
        }
    }
}

impl From<BondError> for CliError {
    fn from(e: BondError) -> Self {
        match e {
            BondError::NonFiniteLoss { epoch } => CliError::NonFiniteLoss(epoch),
            BondError::InvalidConfig(m) => CliError::Config(m),
            other => CliError::Bond(other),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Checkpoint(e)
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Io { path, source } => CliError::Io { path, source },
        }
    }
}
