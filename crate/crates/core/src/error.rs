use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[non_exhaustive]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("shape mismatch in {context}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("non-finite value in {context} at index {index}")]
    NonFinite { context: &'static str, index: usize },

    #[error("episode needs {requested} classes but only {available} are available")]
    InsufficientClasses { requested: usize, available: usize },

    #[error("class {class} has {available} records, episode needs {required}")]
    InsufficientRecords {
        class: u32,
        available: usize,
        required: usize,
    },

    #[error("{name} = {value} is out of range ({expected})")]
    OutOfRange {
        name: &'static str,
        value: f64,
        expected: &'static str,
    },

    #[error("class {0} has no support rows")]
    EmptyClass(usize),

    #[error("{context} row {row} has zero norm")]
    ZeroNorm { context: &'static str, row: usize },

    #[error("{phase} loss became non-finite at epoch {epoch}")]
    Diverged { phase: &'static str, epoch: usize },

    #[error("expected {expected} {what}, got {actual}")]
    CountMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl Error {
    pub(crate) fn out_of_range(
        name: &'static str,
        value: impl Into<f64>,
        expected: &'static str,
    ) -> Self {
        Error::OutOfRange {
            name,
            value: value.into(),
            expected,
        }
    }
}
