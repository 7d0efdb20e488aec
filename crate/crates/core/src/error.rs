use std::path::PathBuf;

use thiserror::Error;

use crate::imagecore::BBox;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest schema error: missing column `{column}`")]
    MissingColumn { column: String },

    #[error("manifest row error at line {line}: {message}")]
    Row { line: u64, message: String },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("cannot decode raster: {0}")]
    Decode(String),

    #[error("bbox {bbox} lies outside image bounds {bounds}")]
    BBoxOutOfBounds { bbox: BBox, bounds: BBox },

    #[error("invalid bbox {0}: requires left < right and top < bottom")]
    InvalidBBox(BBox),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("image has {size} pixel(s) along the {axis} axis, at least 3 are required for second differences")]
    ImageTooSmall { axis: &'static str, size: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("cannot normalize a zero vector")]
    ZeroVector,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("embedding for `{id}` is not unit norm (norm = {norm})")]
    NotUnitNorm { id: String, norm: f64 },

    #[error("triplet mining needs at least two classes, found {0}")]
    TooFewClasses(usize),

    #[error("training diverged at iteration {iteration}: loss = {loss}")]
    Divergence { iteration: usize, loss: f64 },

    #[error("no usable queries under setting {setting}: {reason}")]
    NoUsableQueries { setting: String, reason: String },

    #[error("malformed file: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
