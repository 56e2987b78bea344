//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by imaging, dataset, training, and evaluation code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("malformed header at offset {offset}: {detail}")]
    MalformedHeader { offset: usize, detail: String },

    #[error("unsupported maxval {maxval} at offset {offset} (only 255 is supported)")]
    UnsupportedMaxval { offset: usize, maxval: u32 },

    #[error("truncated payload: expected {expected} pixel bytes at offset {offset}, found {found}")]
    TruncatedPayload {
        offset: usize,
        expected: usize,
        found: usize,
    },

    #[error("singular matrix: determinant is zero")]
    SingularMatrix,

    #[error("degenerate projection: {0}")]
    DegenerateProjection(String),

    #[error("invalid transform ranges: {0}")]
    InvalidRanges(String),

    #[error("non-positive scale factor {0}")]
    NonPositiveScale(f64),

    #[error("non-positive brightness factor {0}")]
    NonPositiveBrightness(f64),

    #[error("negative noise sigma {0}")]
    NegativeSigma(f64),

    #[error("trigger size fraction {0} is outside (0, 1]")]
    InvalidTriggerFraction(f64),

    #[error("trigger overflows host by {x_overflow}x{y_overflow} px (patch {patch_w}x{patch_h} at ({x0},{y0}) on {host_w}x{host_h} host)")]
    TriggerOverflow {
        x0: usize,
        y0: usize,
        patch_w: usize,
        patch_h: usize,
        host_w: usize,
        host_h: usize,
        x_overflow: usize,
        y_overflow: usize,
    },

    #[error("class index {index} is out of range for {num_classes} classes")]
    InvalidClassIndex { index: usize, num_classes: usize },

    #[error("empty class directory: {0}")]
    EmptyClassDir(String),

    #[error("image dimension mismatch: {path} is {found_w}x{found_h}x{found_c}, dataset is {expected_w}x{expected_h}x{expected_c}")]
    DimensionMismatch {
        path: String,
        found_w: usize,
        found_h: usize,
        found_c: usize,
        expected_w: usize,
        expected_h: usize,
        expected_c: usize,
    },

    #[error("unreadable file {path}: {detail}")]
    UnreadableFile { path: String, detail: String },

    #[error("insufficient donors: requested {requested} poison samples, only {available} eligible clean samples outside the target class")]
    InsufficientDonors { requested: usize, available: usize },

    #[error("model input mismatch: image is {found_w}x{found_h}x{found_c}, model expects {expected_w}x{expected_h}x{expected_c}")]
    InputMismatch {
        found_w: usize,
        found_h: usize,
        found_c: usize,
        expected_w: usize,
        expected_h: usize,
        expected_c: usize,
    },

    #[error("NaN loss at epoch {epoch}, batch {batch}: training aborted")]
    NanLoss { epoch: usize, batch: usize },

    #[error("not a checkpoint: bad magic bytes")]
    NotACheckpoint,

    #[error("truncated checkpoint: expected {expected} bytes after header, found {found}")]
    TruncatedCheckpoint { expected: usize, found: usize },

    #[error("architecture mismatch: expected {expected}, found {found}")]
    ArchMismatch { expected: String, found: String },

    #[error("not enough probe candidates: need {needed} non-target test images, found {available}")]
    InsufficientProbes { needed: usize, available: usize },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
