use ballconv_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error(transparent)]
    Core(#[from] CoreError),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    /// Errors caused by the scenario itself rather than by the analysis.
    pub fn is_config(&self) -> bool {
        match self {
            CliError::Config(_) | CliError::Io(_) => true,
            CliError::Core(e) => is_config_error(e),
        }
    }
}

/// Core errors that point at malformed input.
pub fn is_config_error(e: &CoreError) -> bool {
    matches!(
        e,
        CoreError::Domain(_)
            | CoreError::Dimension(_)
            | CoreError::Invalid(_)
            | CoreError::UnsupportedSpace(_)
            | CoreError::DegenerateDomain(_)
    )
}
