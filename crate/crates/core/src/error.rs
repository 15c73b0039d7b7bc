use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// The bin count must be prime; carries the next prime as a suggestion.
    #[error("n = {n} is not prime; the next prime is {suggestion} (try --n {suggestion})")]
    NotPrime { n: u64, suggestion: u64 },

    #[error("d = {d} exceeds the number of bins n = {n}")]
    TooManyChoices { d: usize, n: u64 },

    #[error("tables have different sizes ({left} vs {right})")]
    SizeMismatch { left: usize, right: usize },

    #[error("integer overflow: {0}")]
    Overflow(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("{what} out of range: {detail}")]
    OutOfRange { what: &'static str, detail: String },

    /// Something that the algebra says cannot happen did happen.
    #[error("internal consistency check failed: {0}")]
    Consistency(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub fn is_consistency(&self) -> bool {
        matches!(self, Error::Consistency(_))
    }
}
