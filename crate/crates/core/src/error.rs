use thiserror::Error;

use crate::model::TupleId;

/// Errors raised while building or mutating a database with error estimation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum DesError {
    #[error("tuple {0} does not exist")]
    UnknownTuple(TupleId),
    #[error("error probability {err} of tuple {tuple} is outside [0, 0.5]")]
    ErrOutOfRange { tuple: TupleId, err: f64 },
    #[error("tuple {0} carries an error probability but no label")]
    ErrOnUnlabeled(TupleId),
    #[error("tuple {0} is labeled but has no error probability")]
    MissingErr(TupleId),
    #[error("relation {relation}: row {row} has {found} values, schema expects {expected}")]
    Arity {
        relation: String,
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("relation {relation}: column {column} expects {expected}, found {found}")]
    CellType {
        relation: String,
        column: String,
        expected: String,
        found: String,
    },
    #[error("duplicate relation {0}")]
    DuplicateRelation(String),
    #[error("relation {0} has no key column")]
    MissingKey(String),
    #[error("world has no value for tuple {0}")]
    WorldMissing(TupleId),
}

/// Errors raised by provenance expressions.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProvError {
    #[error("provenance expression has no groups")]
    Empty,
    #[error("provenance expression has an empty group")]
    EmptyGroup,
    #[error("no value for variable {0}")]
    MissingVariable(TupleId),
    #[error("expected a {expected} expression")]
    FormMismatch { expected: &'static str },
    #[error("cannot parse provenance expression: {0}")]
    Parse(String),
}

/// Errors raised while parsing, planning or evaluating a query.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum QueryError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        offset: usize,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown relation {0}")]
    UnknownRelation(String),
    #[error("unknown column {0}")]
    UnknownColumn(String),
    #[error("ambiguous column {0}")]
    AmbiguousColumn(String),
    #[error("duplicate alias {0}")]
    DuplicateAlias(String),
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error("union branches have different arity ({0} vs {1})")]
    UnionArity(usize, usize),
    #[error(transparent)]
    Provenance(#[from] ProvError),
}

/// Errors raised by the MES computations and the risky-tuple analysis.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum MesError {
    #[error("output label is unknown; re-verify its provenance before computing MES")]
    UnknownOutputLabel,
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("brute force over {vars} variables exceeds the cap of {cap}")]
    CapExceeded { vars: usize, cap: usize },
    #[error(transparent)]
    Provenance(#[from] ProvError),
    #[error(transparent)]
    Des(#[from] DesError),
}

/// Errors raised by simulated verifiers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum VerifyError {
    #[error("worker error {0} must lie in (0, 0.5 - 1e-6]")]
    WorkerError(f64),
    #[error("target error probability {0} must lie in (0, 0.5)")]
    Target(f64),
    #[error("target error probability {target} is unreachable within {cap} votes")]
    Unreachable { target: f64, cap: u64 },
}

/// Errors raised while reading or writing the on-disk formats.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Des(#[from] DesError),
}

/// Umbrella error for callers that drive several subsystems.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Des(#[from] DesError),
    #[error(transparent)]
    Provenance(#[from] ProvError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Mes(#[from] MesError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("{0}")]
    Config(String),
}
