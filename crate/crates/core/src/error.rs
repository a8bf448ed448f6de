use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the library can report.
///
/// Variants are split roughly into input problems (schema, file, config) and
/// estimation problems; [`Error::is_input_error`] tells the two apart so
/// front ends can map them to distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("file {0} is empty")]
    EmptyFile(PathBuf),
    #[error("column `{0}` declared in the schema is missing from the file header")]
    MissingColumn(String),
    #[error("missing value in column `{column}` at data row {row}")]
    MissingCell { column: String, row: usize },
    #[error("non-numeric value `{value}` in column `{column}` at data row {row}")]
    NonNumeric {
        column: String,
        row: usize,
        value: String,
    },
    #[error("non-finite value in column `{column}` at data row {row}")]
    NonFinite { column: String, row: usize },
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("level `{level}` of column `{column}` does not occur in the population")]
    UnknownLevel { column: String, level: String },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("sample id `{0}` does not occur in the population")]
    UnknownId(String),
    #[error("sample row {row} (id `{id}`) disagrees with its linked population row on column `{column}`")]
    CovariateMismatch {
        row: usize,
        id: String,
        column: String,
    },
    #[error("sample is not linked to the population; {0} requires unit linkage")]
    Unlinked(&'static str),
    #[error("outcome value {value} at sample row {row} is outside the domain of {transform}")]
    TransformDomain {
        transform: &'static str,
        row: usize,
        value: f64,
    },
    #[error("length mismatch: expected {expected}, got {actual} ({what})")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("column `{0}` already exists")]
    DuplicateColumn(String),
    #[error("column `{0}` is not a {1} column")]
    WrongColumnKind(String, &'static str),
    #[error("quantile cut points for column `{0}` are degenerate; reduce the number of bins")]
    DegenerateQuantiles(String),
    #[error("post-stratum {cell} has population units but no sample units")]
    EmptyCell { cell: String },
    #[error("sample stratum {cell} does not occur in the population")]
    UnmatchedStratum { cell: String },
    #[error("raking did not converge after {iterations} iterations (max margin discrepancy {discrepancy:e})")]
    RakingNotConverged { iterations: usize, discrepancy: f64 },
    #[error("margin `{column}` level `{level}` has population total {total} but no sample weight")]
    EmptyMarginLevel {
        column: String,
        level: String,
        total: f64,
    },
    #[error("inclusion indicators are degenerate (all {0})")]
    DegenerateInclusion(u8),
    #[error("subpopulation filter `{0}` selects no population units")]
    EmptySubpopulation(String),
    #[error("subpopulation has no sample units; {0} cannot estimate it")]
    EmptyDomainSample(&'static str),
    #[error("invalid filter expression `{0}`")]
    FilterSyntax(String),
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("method {method} is not feasible for scenario {scenario}: {reason}")]
    Infeasible {
        method: String,
        scenario: String,
        reason: &'static str,
    },
    #[error("move {0} is not applicable to this tree")]
    InapplicableMove(&'static str),
}

impl Error {
    /// True for problems with the inputs (files, schema, configuration) as
    /// opposed to failures of an estimator on otherwise valid inputs.
    pub fn is_input_error(&self) -> bool {
        !matches!(
            self,
            Error::Unlinked(_)
                | Error::TransformDomain { .. }
                | Error::DegenerateQuantiles(_)
                | Error::EmptyCell { .. }
                | Error::UnmatchedStratum { .. }
                | Error::RakingNotConverged { .. }
                | Error::EmptyMarginLevel { .. }
                | Error::DegenerateInclusion(_)
                | Error::EmptyDomainSample(_)
                | Error::InapplicableMove(_)
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
