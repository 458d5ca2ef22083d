use thiserror::Error;

/// Errors raised by constructions, parsers and certificates.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("descriptor error: {0}")]
    Descriptor(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("family error: {0}")]
    Family(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("norm error: {0}")]
    Norm(String),
    #[error("referee error: {0}")]
    Referee(String),
    #[error("resolution error: {0}")]
    Resolution(String),
    #[error("budget error: {0}")]
    Budget(String),
    #[error("cover error: {0}")]
    Cover(String),
    #[error("premise error: {0}")]
    Premise(String),
    #[error("modulus error: {0}")]
    Modulus(String),
    #[error("hypothesis error: {0}")]
    Hypothesis(String),
    #[error("construction error: {0}")]
    Construction(String),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
