//! Error type shared by every stage of the toolkit.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("MalformedName: `{0}` does not match L<int>_S<int>_<F|D><int>")]
    MalformedName(String),

    #[error("DuplicateColumn: `{0}` appears more than once in the header")]
    DuplicateColumn(String),

    #[error("MissingIdColumn: header must start with `Id`, found `{0}`")]
    MissingIdColumn(String),

    #[error("IdMismatch at data row {row}: {left_kind} file has Id {left}, {right_kind} file has Id {right}")]
    IdMismatch {
        row: u64,
        left_kind: &'static str,
        left: u64,
        right_kind: &'static str,
        right: u64,
    },

    #[error("ArityMismatch at line {line} of {kind} file: expected {expected} cells, found {found}")]
    ArityMismatch {
        kind: &'static str,
        line: u64,
        expected: usize,
        found: usize,
    },

    #[error("RowCountMismatch: {kind} file ended after {rows} rows while other files continue")]
    RowCountMismatch { kind: &'static str, rows: u64 },

    #[error("ParseValue at line {line}, column `{column}`: cannot parse `{value}`")]
    ParseValue {
        line: u64,
        column: String,
        value: String,
    },

    #[error("InvalidK: fold count must be at least 2, got {0}")]
    InvalidK(usize),

    #[error("MissingLabel: row Id {0} has no Response value")]
    MissingLabel(u64),

    #[error("InvalidTick: tick must be positive, got {0}")]
    InvalidTick(f64),

    #[error("DegenerateSeries: {0}")]
    DegenerateSeries(&'static str),

    #[error("NoPeak: autocorrelation has no strict local maximum at a positive lag")]
    NoPeak,

    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),

    #[error("EmptyData: {0}")]
    EmptyData(&'static str),

    #[error("UnknownFeature: model column `{0}` is absent from the input")]
    UnknownFeature(String),

    #[error("EmptyFold: fold {0} received no rows")]
    EmptyFold(usize),

    #[error("OneClassOnly: labels contain a single class")]
    OneClassOnly,

    #[error("LengthMismatch: {left} scores vs {right} labels")]
    LengthMismatch { left: usize, right: usize },

    #[error("EmptyInput: at least one value is required")]
    EmptyInput,

    #[error("TooFewRows: decile lift needs at least 10 rows, got {0}")]
    TooFewRows(usize),

    #[error("NoPositives: decile lift needs at least one positive label")]
    NoPositives,

    #[error("ManifestMismatch: {0}")]
    ManifestMismatch(String),

    #[error("ModelFormat: {0}")]
    ModelFormat(String),

    #[error("MissingInput: {0}")]
    MissingInput(PathBuf),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("[{stage}] {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wrap `self` with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// Innermost error, skipping stage tags.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.in_stage(stage))
    }
}
