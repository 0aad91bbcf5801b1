use thiserror::Error;

/// Unified error type for the whole crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("singular system: condition estimate {cond:.3e} exceeds {limit:.1e}")]
    SingularSystem { cond: f64, limit: f64 },
    #[error("grouping structure {structure} does not divide layer shape {shape:?}")]
    IndivisibleShape { structure: String, shape: Vec<usize> },
    #[error("invalid entry {value} at index {index}: expected -1 or +1")]
    InvalidEntry { index: usize, value: f64 },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("incompatible grouping for bitwise execution: {0}")]
    IncompatibleGrouping(String),
    #[error("masks are not nested at level {level}, row {row}")]
    NonNestedMask { level: usize, row: usize },
    #[error("sparsity level {0} not found")]
    LevelNotFound(usize),
    #[error("row size {row_size} exceeds the range of {index_bits}-bit indices")]
    RowSizeExceedsIndexWidth { row_size: usize, index_bits: u32 },
    #[error("pruning target {target} is infeasible")]
    TargetInfeasible { target: i64 },
    #[error("corrupt header: {0}")]
    CorruptHeader(String),
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u16, found: u16 },
    #[error("truncated file: needed {needed} more bytes")]
    TruncatedFile { needed: usize },
    #[error("dataset item count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("config error: {0}")]
    Config(String),
    #[error("data stream exhausted: requested {requested}, available {available}")]
    StreamExhausted { requested: usize, available: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
