use deltadpd::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;
pub const EXIT_GATE: i32 = 5;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("quality gate not met: {0}")]
    GateUnmet(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::GateUnmet(_) => EXIT_GATE,
            CliError::Core(e) => match e {
                Error::Config(_) => EXIT_CONFIG,
                Error::Io { .. } | Error::Format { .. } => EXIT_IO,
                Error::Numeric { .. } | Error::Diverged { .. } => EXIT_NUMERIC,
                Error::Dimension { .. } | Error::Contract(_) | Error::Data(_) => EXIT_OTHER,
            },
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
