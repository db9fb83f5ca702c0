use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid composition: {0}")]
    InvalidComposition(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("no subsystem named `{0}`")]
    UnknownSubsystem(String),

    #[error("subsystem `{0}` does not accept this projector")]
    SubsystemKindMismatch(String),

    #[error("OAM charge {charge} outside the alphabet {min}..={max}")]
    OamOutOfRange { charge: i32, min: i32, max: i32 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("annulus ({r_min} mm, {r_max} mm) contains no pixels")]
    EmptyAnnulus { r_min: f64, r_max: f64 },

    #[error("Poisson mean {0:e} exceeds the 1e12 overflow guard")]
    MeanOverflow(f64),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::InvalidParameter(_)
            | Error::OamOutOfRange { .. }
            | Error::EmptyAnnulus { .. } => 2,
            Error::Io(_) | Error::Csv(_) => 4,
            Error::Json(e) if e.is_io() => 4,
            Error::Json(_) => 2,
            _ => 3,
        }
    }
}
