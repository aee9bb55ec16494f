use thiserror::Error;
use uuid::Uuid;

use crate::graph::LinkError;
use crate::query::QueryError;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KindError {
    #[error("unknown node kind `{0}`")]
    Unknown(String),
    #[error("malformed node kind `{0}`")]
    Malformed(String),
    #[error("kind `{0}` cannot be registered: only data kinds are extensible")]
    NotExtensible(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AttrError {
    #[error("integer out of 64-bit signed range at `{0}`")]
    IntegerRange(String),
    #[error("attribute document of {size} bytes exceeds the {cap} byte cap")]
    TooLarge { size: usize, cap: usize },
    #[error("invalid key path `{0}`")]
    KeyPath(String),
    #[error("attribute root must be a map")]
    NotAMap,
}

/// Errors raised by the store, the process layer and the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Kind(#[from] KindError),
    #[error(transparent)]
    Attr(#[from] AttrError),
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error("node {0} is already stored")]
    AlreadyStored(Uuid),
    #[error("node {0} is not stored")]
    NotStored(Uuid),
    #[error("duplicate uuid {0}")]
    DuplicateUuid(Uuid),
    #[error("immutable: {0}")]
    Immutable(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("invalid repository path `{0}`")]
    InvalidPath(String),
    #[error("process spec violation: {0}")]
    Spec(String),
    #[error("create violation: {0}")]
    CreateViolation(String),
    #[error("return violation: {0}")]
    ReturnViolation(String),
    #[error("process {0} is terminal")]
    Terminal(Uuid),
    #[error("illegal state transition {from} -> {to}")]
    IllegalTransition { from: String, to: String },
    #[error("process {0} unreachable")]
    Unreachable(Uuid),
    #[error("lease on process {0} lost")]
    LeaseLost(Uuid),
    #[error("archive: {0}")]
    Archive(String),
    #[error("config: {0}")]
    Config(String),
    #[error("sqlite: {0}")]
    Sqlite(#[from] rusqlite::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// SQLite busy/locked conditions are retryable at the transaction level.
    pub fn is_busy(&self) -> bool {
        matches!(
            self,
            Error::Sqlite(rusqlite::Error::SqliteFailure(e, _))
                if matches!(e.code, rusqlite::ErrorCode::DatabaseBusy | rusqlite::ErrorCode::DatabaseLocked)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl From<crate::graph::Violation> for Error {
    fn from(v: crate::graph::Violation) -> Self {
        Error::Link(LinkError::Violation(v))
    }
}

impl From<crate::graph::ViewError> for Error {
    fn from(v: crate::graph::ViewError) -> Self {
        Error::Link(LinkError::View(v))
    }
}
