use thiserror::Error;

/// Errors raised while building, evaluating or searching split-plot designs.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid layout: {0}")]
    InvalidLayout(String),

    #[error("unknown factor {0}")]
    UnknownFactor(String),

    #[error("invalid term `{term}`: {reason}")]
    InvalidTerm { term: String, reason: String },

    #[error("malformed design: {0}")]
    MalformedDesign(String),

    #[error("duplicate run at plot {plot}, subplot {subplot} (runs must be distinct)")]
    DuplicateRun { plot: usize, subplot: usize },

    #[error("singular design: information matrix is rank deficient in terms [{}]", .terms.join(", "))]
    SingularDesign { terms: Vec<String> },

    #[error("criterion undefined: {0}")]
    CriterionUndefined(String),

    #[error("invalid scale constant {0} (must be > 0)")]
    InvalidScale(f64),

    #[error("{what} = {actual} exceeds the guard {limit}; use the closed-form path instead")]
    Capacity {
        what: &'static str,
        limit: usize,
        actual: usize,
    },

    #[error("infeasible problem: {0}")]
    Infeasible(String),

    #[error("invalid parameter `{key}`: {reason}")]
    InvalidParam { key: String, reason: String },
}

impl Error {
    pub(crate) fn param(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParam {
            key: key.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
