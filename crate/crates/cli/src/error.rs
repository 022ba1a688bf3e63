use std::fmt;
use std::io::ErrorKind;

/// A command failure with the process exit code it maps to.
#[derive(Debug)]
pub enum CliError {
    /// A required file, directory or argument is absent.
    MissingInput(String),
    /// A config, topology, dataset or artifact could not be parsed.
    Parse(String),
    CheckpointVersion(String),
    /// Parsed fine but the values are unusable.
    Invalid(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Runtime(_) => 1,
            CliError::MissingInput(_) => 3,
            CliError::Parse(_) => 4,
            CliError::CheckpointVersion(_) => 5,
            CliError::Invalid(_) => 6,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::MissingInput(m) => write!(f, "missing input: {m}"),
            CliError::Parse(m) => write!(f, "parse error: {m}"),
            CliError::CheckpointVersion(m) => write!(f, "checkpoint version mismatch: {m}"),
            CliError::Invalid(m) => write!(f, "invalid input: {m}"),
            CliError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<hybrid_imc::Error> for CliError {
    fn from(e: hybrid_imc::Error) -> Self {
        use hybrid_imc::Error as E;
        match e {
            E::Io(io) => io.into(),
            E::Format(m) => CliError::Parse(m),
            E::CheckpointVersion { .. } => CliError::CheckpointVersion(e.to_string()),
            E::InvalidInput(m) | E::InvalidModel(m) | E::InvalidState(m) => CliError::Invalid(m),
            E::Singular(m) => CliError::Runtime(format!("singular system: {m}")),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        match e.kind() {
            ErrorKind::NotFound => CliError::MissingInput(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
