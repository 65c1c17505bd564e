use mvh_core::MvhError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] MvhError),
    #[error("self-check failed: {}", .0.join(", "))]
    CheckFailed(Vec<String>),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(MvhError::Io(e))
    }
}

impl CliError {
    /// Process exit code: 2 invalid configuration, 3 blow-up, 4 numeric
    /// overflow, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(MvhError::ConfigInvalid(_)) => 2,
            CliError::Core(MvhError::BlowUp { .. }) => 3,
            CliError::Core(MvhError::NumericOverflow { .. }) => 4,
            _ => 1,
        }
    }
}
