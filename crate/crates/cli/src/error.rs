use geolab::GeoError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure in {stage}: {error}")]
    Numerical { stage: String, error: GeoError },
    #[error("unknown suite '{0}' (known: {known})", known = crate::suites::SUITES.join(", "))]
    UnknownSuite(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::UnknownSuite(_) => 2,
            CliError::Numerical { .. } => 3,
            CliError::Io(_) => 1,
        }
    }

    /// Wraps a library error raised while running `stage`; errors that
    /// point at the input are reported as configuration errors.
    pub fn at(stage: &str) -> impl Fn(GeoError) -> CliError + '_ {
        move |error| match error {
            GeoError::Parse { .. }
            | GeoError::InvalidArgument(_)
            | GeoError::OffSurface { .. }
            | GeoError::NotTangent { .. }
            | GeoError::DimensionMismatch { .. }
            | GeoError::WrongTupleLength { .. }
            | GeoError::DegreeMismatch { .. } => CliError::Config(format!("{stage}: {error}")),
            error => CliError::Numerical { stage: stage.to_string(), error },
        }
    }

    pub fn diagnostic(&self) -> serde_json::Value {
        match self {
            CliError::Numerical { stage, error } => {
                let dbg = format!("{error:?}");
                let variant = dbg.split([' ', '(', '{']).next().unwrap_or("").to_string();
                serde_json::json!({ "error": "NumericalFailure", "stage": stage, "kind": variant, "message": error.to_string(), "detail": dbg })
            }
            CliError::Config(m) => serde_json::json!({ "error": "ConfigError", "message": m }),
            CliError::UnknownSuite(s) => serde_json::json!({ "error": "UnknownSuite", "suite": s }),
            CliError::Io(m) => serde_json::json!({ "error": "IoError", "message": m }),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
