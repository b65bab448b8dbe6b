use std::fmt;

use hemscast_core::datagen::DataError;
use hemscast_core::forecaster::ForecastError;
use hemscast_core::mpc::MpcError;
use hemscast_core::simulator::SimError;
use hemscast_core::timeseries::SeriesError;

/// Failure classes, each with its own process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Unexpected I/O failure.
    Io,
    /// Invalid or unreadable configuration.
    Config,
    /// Missing, malformed or insufficient input data.
    Data,
    /// Training diverged.
    Training,
    /// The dispatch LP could not be solved.
    Solver,
    /// Output already exists and `--force` was not given.
    OutputExists,
}

impl ErrorKind {
    pub fn exit_code(self) -> u8 {
        match self {
            ErrorKind::Io => 1,
            ErrorKind::Config => 3,
            ErrorKind::Data => 4,
            ErrorKind::Training => 5,
            ErrorKind::Solver => 6,
            ErrorKind::OutputExists => 7,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    kind: ErrorKind,
    error: anyhow::Error,
}

impl CliError {
    pub fn new(kind: ErrorKind, error: impl Into<anyhow::Error>) -> Self {
        Self { kind, error: error.into() }
    }

    pub fn msg(kind: ErrorKind, msg: impl fmt::Display) -> Self {
        Self { kind, error: anyhow::anyhow!("{msg}") }
    }

    pub fn kind(&self) -> ErrorKind {
        self.kind
    }

    pub fn context(self, ctx: impl fmt::Display + Send + Sync + 'static) -> Self {
        Self { kind: self.kind, error: self.error.context(ctx) }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::new(ErrorKind::Io, e)
    }
}

impl From<SeriesError> for CliError {
    fn from(e: SeriesError) -> Self {
        CliError::new(ErrorKind::Data, e)
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::new(ErrorKind::Data, e)
    }
}

fn forecast_kind(e: &ForecastError) -> ErrorKind {
    match e {
        ForecastError::Config(_) => ErrorKind::Config,
        ForecastError::Divergence { .. } => ErrorKind::Training,
        ForecastError::Io { .. } => ErrorKind::Io,
        _ => ErrorKind::Data,
    }
}

impl From<ForecastError> for CliError {
    fn from(e: ForecastError) -> Self {
        CliError::new(forecast_kind(&e), e)
    }
}

impl From<MpcError> for CliError {
    fn from(e: MpcError) -> Self {
        let kind = match e {
            MpcError::Series(_) => ErrorKind::Data,
            _ => ErrorKind::Solver,
        };
        CliError::new(kind, e)
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        let kind = match &e {
            SimError::Config(_) => ErrorKind::Config,
            SimError::Solver { .. } | SimError::Mpc(_) => ErrorKind::Solver,
            SimError::Forecast(f) => forecast_kind(f),
            SimError::Io { .. } => ErrorKind::Io,
            SimError::History { .. } | SimError::Series(_) | SimError::Data(_) => ErrorKind::Data,
        };
        CliError::new(kind, e)
    }
}
