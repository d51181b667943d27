use hte_core::{Error, ErrorKind};

/// A core error tagged with the pipeline stage that raised it.
#[derive(Debug, thiserror::Error)]
#[error("{stage}: {source}")]
pub struct CliError {
    pub stage: &'static str,
    #[source]
    pub source: Error,
}

impl CliError {
    pub fn new(stage: &'static str, source: Error) -> Self {
        CliError { stage, source }
    }

    /// 1 for configuration errors, 2 for data errors, 3 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self.source.kind() {
            ErrorKind::Config => 1,
            ErrorKind::Data => 2,
            ErrorKind::Numeric => 3,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub trait Stage<T> {
    fn stage(self, stage: &'static str) -> CliResult<T>;
}

impl<T> Stage<T> for hte_core::Result<T> {
    fn stage(self, stage: &'static str) -> CliResult<T> {
        self.map_err(|e| CliError::new(stage, e))
    }
}
