//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("attribute `{0}` appears more than once")]
    DuplicateAttribute(String),

    #[error("drill dimension `{0}` is already bound in the parent predicate")]
    NonWildcardDrill(String),

    #[error("attribute `{0}` has no observed values to drill into")]
    EmptyDomain(String),

    #[error("sub-measure columns differ: {left:?} vs {right:?}")]
    ColumnMismatch {
        left: Vec<String>,
        right: Vec<String>,
    },

    #[error("shape mismatch: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),

    #[error("non-finite value in matrix cell ({row}, {col})")]
    NonFinite { row: String, col: String },

    #[error("syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },

    #[error("unknown sub-measure `{name}` at position {pos}")]
    UnknownSubMeasure { name: String, pos: usize },

    #[error("division by zero while evaluating the measure")]
    DivisionByZero,

    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),

    #[error("column `{0}` not present in the input")]
    UnknownColumn(String),

    #[error("cannot sum non-numeric value `{value}` in column `{column}`")]
    TypeMismatch { column: String, value: String },

    #[error("aggregator `{0}` is not additive; route through the non-GAM attribution path")]
    NonAdditiveAggregator(String),

    #[error("{n} players exceed the exact-enumeration limit of {max}; use a sampling engine")]
    TooManyPlayers { n: usize, max: usize },

    #[error("sampled coalition design is rank-deficient; resample with a different seed")]
    SingularSystem,

    #[error("measure undefined along the integration path at alpha = {alpha}")]
    PathSingularity { alpha: f64 },

    #[error("measure undefined: denominator column sum is zero on the {0} side")]
    UndefinedMeasure(&'static str),

    #[error("engine `{engine}` cannot attribute a `{class}` measure")]
    EngineMismatch { engine: String, class: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("record arity mismatch: expected {expected} {kind} values, got {got}")]
    RecordArity {
        kind: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("csv error: {0}")]
    Csv(String),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}
