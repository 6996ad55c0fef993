use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(#[from] atom_diode::Error),

    #[error("output error: {0}")]
    Output(String),
}

impl CliError {
    /// Process exit code: 1 for configuration and output problems, 2 for
    /// numerical failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Output(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }
}
