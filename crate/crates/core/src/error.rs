use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the toolkit can report.
///
/// Variants are grouped by the exit-code class the CLI maps them to
/// (see [`Error::class`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    // -- file formats --------------------------------------------------
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("payload size mismatch: expected {expected} bytes, found {found}")]
    SizeMismatch { expected: usize, found: usize },
    #[error("voxel spacing must be positive, got {0:?}")]
    NonPositiveSpacing([f32; 3]),
    #[error("pixel {index} has value {value} outside [0, 1]")]
    PixelOutOfRange { index: usize, value: f32 },
    #[error("embedding dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("embedding {id:?} has norm {norm}, expected 1")]
    NonUnitNorm { id: String, norm: f64 },
    #[error("malformed sidecar {path}: {reason}")]
    MalformedSidecar { path: PathBuf, reason: String },

    // -- manifest ------------------------------------------------------
    #[error("duplicate patient id {0:?}")]
    DuplicatePatientId(String),
    #[error("patient {patient_id:?} has {found} labels, expected {expected}")]
    LabelArityMismatch {
        patient_id: String,
        expected: usize,
        found: usize,
    },
    #[error("patient {0:?} appears in both train and test splits")]
    SplitLeak(String),
    #[error("malformed manifest: {0}")]
    MalformedManifest(String),

    // -- preprocessing -------------------------------------------------
    #[error("volume too shallow: {depth} slices cannot fill {num_blocks} blocks")]
    VolumeTooShallow { depth: usize, num_blocks: usize },
    #[error("bad intensity window ({lo}, {hi}): lo must be below hi")]
    BadWindow { lo: f64, hi: f64 },
    #[error("invalid preprocessing config: {0}")]
    InvalidPreprocess(String),

    // -- text ----------------------------------------------------------
    #[error("invalid filter rule {rule:?}: {reason}")]
    InvalidFilterRule { rule: String, reason: String },
    #[error("vocabulary is empty after applying min_freq = {0}")]
    EmptyVocabulary(usize),
    #[error("invalid text config: {0}")]
    InvalidTextConfig(String),

    // -- encoder / training --------------------------------------------
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("embedding norm {0:e} too small to normalize")]
    NormalizationDegenerate(f64),
    #[error("non-finite logits in similarity matrix")]
    NonFiniteLogits,
    #[error("invalid trainer config: {0}")]
    InvalidTrainer(String),

    // -- zero-shot -----------------------------------------------------
    #[error("template {0:?} lacks the CLASSNAME placeholder")]
    MissingPlaceholder(String),
    #[error("template {0:?} contains CLASSNAME more than once")]
    MultiplePlaceholders(String),
    #[error("invalid template registry: {0}")]
    InvalidRegistry(String),
    #[error("averaged embedding for class {0:?} is degenerate")]
    DegenerateMeanEmbedding(String),
    #[error("no embedding for {0:?}")]
    MissingEmbedding(String),
    #[error("missing labels: {0}")]
    MissingLabels(String),

    // -- config --------------------------------------------------------
    #[error("config error: {0}")]
    Config(String),
}

/// Coarse failure class, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            InvalidPreprocess(_) | InvalidFilterRule { .. } | InvalidTextConfig(_)
            | InvalidTrainer(_) | MissingPlaceholder(_) | MultiplePlaceholders(_)
            | InvalidRegistry(_) | Config(_) | BadWindow { .. } => ErrorClass::Config,
            NormalizationDegenerate(_) | NonFiniteLogits | DegenerateMeanEmbedding(_) => {
                ErrorClass::Numeric
            }
            _ => ErrorClass::Data,
        }
    }

    /// Process exit code: 2 config, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self.class() {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Numeric => 4,
        }
    }
}
