use std::path::PathBuf;

use crate::types::Pathway;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the engine can report. Each variant names the field,
/// item, stage or role it concerns.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("value out of range for `{field}`: {detail}")]
    Range { field: &'static str, detail: String },

    #[error("dimension mismatch for `{item_id}`: expected {expected}, got {actual}")]
    DimMismatch {
        item_id: String,
        expected: usize,
        actual: usize,
    },

    #[error("zero-norm vector for `{0}`")]
    ZeroNorm(String),

    #[error("non-finite component in vector for `{0}`")]
    NonFiniteVector(String),

    #[error("duplicate item id `{0}`")]
    DuplicateId(String),

    #[error("unknown item id `{0}`")]
    UnknownItem(String),

    #[error("{role} backend unavailable: {detail}")]
    BackendUnavailable { role: &'static str, detail: String },

    #[error("{role} backend returned an empty response")]
    EmptyResponse { role: &'static str },

    #[error("verifier response carries no usable log-probabilities")]
    LogprobsMissing,

    #[error("verifier answer could not be parsed: {0:?}")]
    VerifyUnparseable(String),

    #[error("refiner response does not follow the reflection grammar: {0}")]
    UnparseableReflection(String),

    #[error("no precomputed embedding for key `{0}`")]
    LookupMiss(String),

    #[error("non-finite verifier logits ({yes}, {no})")]
    NonFinite { yes: f64, no: f64 },

    #[error("no pool member belongs to the {0} pathway")]
    EmptyPathway(Pathway),

    #[error("fusion mode {0} is not valid here")]
    ModeMismatch(String),

    #[error("ground-truth set is empty")]
    EmptyGt,

    #[error("invalid subset: {0}")]
    BadSubset(String),

    #[error("schema error at line {line}, field `{field}`: {detail}")]
    Schema {
        line: usize,
        field: String,
        detail: String,
    },

    #[error("query `{0}` references an item missing from the database manifest")]
    MissingReference(String),

    #[error("could not draw a satisfiable query after {0} attempts")]
    Unsatisfiable(usize),

    #[error("precondition violated in {stage}: {detail}")]
    Precondition { stage: &'static str, detail: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn range(field: &'static str, detail: impl Into<String>) -> Self {
        Error::Range {
            field,
            detail: detail.into(),
        }
    }

    pub(crate) fn schema(line: usize, field: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Schema {
            line,
            field: field.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn precondition(stage: &'static str, detail: impl Into<String>) -> Self {
        Error::Precondition {
            stage,
            detail: detail.into(),
        }
    }

    /// True for errors caused by bad input rather than a failing run.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Range { .. }
                | Error::DimMismatch { .. }
                | Error::ZeroNorm(_)
                | Error::NonFiniteVector(_)
                | Error::DuplicateId(_)
                | Error::Schema { .. }
                | Error::MissingReference(_)
                | Error::BadSubset(_)
                | Error::ModeMismatch(_)
        )
    }
}
