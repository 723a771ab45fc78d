use std::fmt;

use rdlab::cohort::CohortError;
use rdlab::io::DataError;
use rdlab::simulate::SimulationError;
use rdlab::study::StudyError;

/// Failure classes, each with its own exit status.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or config files (exit 2).
    Config(String),
    /// Missing, unreadable or malformed inputs (exit 3).
    Data(String),
    /// Fits or samplers that failed on valid inputs (exit 4).
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config: {m}"),
            CliError::Data(m) => write!(f, "data: {m}"),
            CliError::Numeric(m) => write!(f, "numeric: {m}"),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<SimulationError> for CliError {
    fn from(e: SimulationError) -> Self {
        match e {
            SimulationError::Input(m) => CliError::Config(m),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

impl From<StudyError> for CliError {
    fn from(e: StudyError) -> Self {
        match e {
            StudyError::Config(m) => CliError::Config(m),
            StudyError::Cohort(c @ CohortError::Parameter { .. }) => CliError::Config(c.to_string()),
            StudyError::Cohort(c) => CliError::Numeric(c.to_string()),
            StudyError::Data(d) => d.into(),
            StudyError::Simulation(s) => s.into(),
            StudyError::Pool(m) => CliError::Numeric(m),
        }
    }
}
