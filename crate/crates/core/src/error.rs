use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("grid too coarse: dx = {dx} exceeds 1/(4A) = {limit}")]
    Resolution { dx: f64, limit: f64 },

    #[error("launch point x0 = {start} lies inside the defect influence zone (|x0| < {radius})")]
    InfluenceZone { start: f64, radius: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite value in field at node {0}")]
    NonFinite(usize),

    #[error("solution blew up at t = {time}: max|u| = {peak} exceeds guard {guard}")]
    BlowUp { time: f64, peak: f64, guard: f64 },

    #[error("inconclusive classification: mass fraction {fraction:.4} inside the trapping window")]
    Inconclusive { fraction: f64 },

    #[error("final time {t_final} too short: soliton needs to travel {required} but only covers {covered}")]
    InsufficientTime { t_final: f64, required: f64, covered: f64 },

    #[error("separation point detection failed: {0}")]
    DetectionFailed(String),

    #[error("invalid bracket: {0}")]
    BracketInvalid(String),

    #[error("non-monotone classification: {0}")]
    NonMonotone(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code: 2 for validation failures, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_)
            | Error::Resolution { .. }
            | Error::InfluenceZone { .. }
            | Error::Domain(_)
            | Error::Config(_)
            | Error::BracketInvalid(_) => 2,
            Error::Io(_) | Error::Csv(_) | Error::Json(_) => 1,
            _ => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::Resolution { .. } => "resolution",
            Error::InfluenceZone { .. } => "influence-zone",
            Error::Domain(_) => "domain",
            Error::NonFinite(_) => "non-finite",
            Error::BlowUp { .. } => "blow-up",
            Error::Inconclusive { .. } => "inconclusive",
            Error::InsufficientTime { .. } => "insufficient-time",
            Error::DetectionFailed(_) => "detection-failed",
            Error::BracketInvalid(_) => "bracket-invalid",
            Error::NonMonotone(_) => "non-monotone",
            Error::Internal(_) => "internal",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
