use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the toolkit can report.
///
/// [`Error::kind`] gives a stable, machine-readable name for each variant;
/// the CLI prints it on failure.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("non-finite value in activations")]
    NonFiniteInput,
    #[error("non-finite value at payload index {index}")]
    NonFiniteValue { index: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("probability entry {index} is not strictly positive ({value})")]
    NonPositiveProbability { index: usize, value: f64 },
    #[error("signature map already has the contrast transform applied")]
    AlreadyContrasted,
    #[error("internal numeric error: {0}")]
    Internal(String),

    #[error("bad magic bytes in {path:?}")]
    BadMagic { path: PathBuf },
    #[error("unsupported format version {version} in {path:?}")]
    BadVersion { path: PathBuf, version: u32 },
    #[error("truncated file {path:?}: expected {expected} bytes, found {found}")]
    TruncatedFile { path: PathBuf, expected: u64, found: u64 },
    #[error("trailing bytes in {path:?}: expected {expected} bytes, found {found}")]
    TrailingBytes { path: PathBuf, expected: u64, found: u64 },
    #[error("i/o failure on {path:?}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest parse error: {0}")]
    ManifestParse(String),
    #[error("duplicate record id {0:?}")]
    DuplicateId(String),
    #[error("missing activation file {0:?}")]
    MissingFile(PathBuf),
    #[error("geometry mismatch for {context}: expected L={expected_layers} d={expected_dim}, found L={found_layers} d={found_dim}")]
    GeometryMismatch {
        context: String,
        expected_layers: usize,
        expected_dim: usize,
        found_layers: usize,
        found_dim: usize,
    },
    #[error("record {id:?} declares token_count {declared} but its file holds {found}")]
    TokenCountMismatch { id: String, declared: usize, found: usize },
    #[error("record {id:?} has label {label}; labels must be 0 or 1")]
    BadLabel { id: String, label: i64 },
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("feature table fingerprint {found} does not match configuration {expected}")]
    FingerprintMismatch { expected: String, found: String },
    #[error("feature table parse error: {0}")]
    FeatureTableParse(String),

    #[error("need at least {required} records to split, found {found}")]
    TooFewRecords { required: usize, found: usize },
    #[error("degenerate split: {0}")]
    DegenerateSplit(String),

    #[error("training data contains a single class")]
    SingleClass,
    #[error("training split is empty")]
    EmptyTrain,
    #[error("dimension mismatch: model expects {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("bad model file: {0}")]
    BadModelFile(String),
    #[error("probe did not converge: gradient norm {gradient_norm} after {iterations} iterations")]
    NoConvergence { iterations: usize, gradient_norm: f64 },
    #[error("layer index {index} out of range for {n_layers} layers")]
    LayerOutOfRange { index: usize, n_layers: usize },

    #[error("no positive (error) instances in evaluation set")]
    NoPositives,
    #[error("test id {0:?} absent from the shifted manifest")]
    IdMismatch(String),
}

impl Error {
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::InvalidGeometry(_) => "InvalidGeometry",
            Error::NonFiniteInput => "NonFiniteInput",
            Error::NonFiniteValue { .. } => "NonFiniteValue",
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::NonPositiveProbability { .. } => "NonPositiveProbability",
            Error::AlreadyContrasted => "AlreadyContrasted",
            Error::Internal(_) => "Internal",
            Error::BadMagic { .. } => "BadMagic",
            Error::BadVersion { .. } => "BadVersion",
            Error::TruncatedFile { .. } => "TruncatedFile",
            Error::TrailingBytes { .. } => "TrailingBytes",
            Error::IoFailure { .. } => "IoFailure",
            Error::ManifestParse(_) => "ManifestParse",
            Error::DuplicateId(_) => "DuplicateId",
            Error::MissingFile(_) => "MissingFile",
            Error::GeometryMismatch { .. } => "GeometryMismatch",
            Error::TokenCountMismatch { .. } => "TokenCountMismatch",
            Error::BadLabel { .. } => "BadLabel",
            Error::EmptyInput(_) => "EmptyInput",
            Error::FingerprintMismatch { .. } => "FingerprintMismatch",
            Error::FeatureTableParse(_) => "FeatureTableParse",
            Error::TooFewRecords { .. } => "TooFewRecords",
            Error::DegenerateSplit(_) => "DegenerateSplit",
            Error::SingleClass => "SingleClass",
            Error::EmptyTrain => "EmptyTrain",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::BadModelFile(_) => "BadModelFile",
            Error::NoConvergence { .. } => "NoConvergence",
            Error::LayerOutOfRange { .. } => "LayerOutOfRange",
            Error::NoPositives => "NoPositives",
            Error::IdMismatch(_) => "IdMismatch",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::IoFailure { path: path.into(), source }
    }
}
