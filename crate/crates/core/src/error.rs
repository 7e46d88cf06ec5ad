//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported {kind} version {found} (expected {expected})")]
    UnsupportedVersion {
        kind: &'static str,
        expected: u16,
        found: u16,
    },

    #[error("truncated payload: expected {expected} bytes, got {actual}")]
    Truncated { expected: u64, actual: u64 },

    #[error("day-of-year sequence not strictly increasing at position {position}")]
    NonIncreasingDoys { position: usize },

    #[error("invalid label value {0} (allowed: 0, 1, 2, 255)")]
    InvalidLabelValue(u8),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("missing band {0}")]
    MissingBand(String),

    #[error("series contains no finite value")]
    AllNan,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("series too short: length {len} < window {window}")]
    SeriesTooShort { len: usize, window: usize },

    #[error("too few timesteps for stage detection: {0} < 4")]
    TooFewTimesteps(usize),

    #[error("no eligible senescence index after greenup index {greenup}")]
    NoSenescence { greenup: usize },

    #[error("non-positive growing days: senescence {senescence} <= greenup {greenup}")]
    NonPositiveDelta { greenup: u16, senescence: u16 },

    #[error("class {class} has {available} candidates, need {requested}")]
    ClassShortfall {
        class: u8,
        available: usize,
        requested: usize,
    },

    #[error("raster too small: {rows}x{cols} (need at least {min}x{min})")]
    RasterTooSmall { rows: usize, cols: usize, min: usize },

    #[error("pixel ({row}, {col}) is masked")]
    MaskedPixel { row: usize, col: usize },

    #[error("patch around pixel ({row}, {col}) falls outside the raster")]
    PatchOutOfBounds { row: usize, col: usize },

    #[error("non-finite value in selected inputs at pixel ({row}, {col})")]
    NonFiniteSample { row: usize, col: usize },

    #[error("selector does not match season mode: {0}")]
    SelectorMismatch(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("feature length mismatch: model expects {expected}, got {got}")]
    FeatureLenMismatch { expected: usize, got: usize },

    #[error("non-finite feature value at index {0}")]
    NonFiniteFeature(usize),

    #[error("model/season mismatch: {0}")]
    ModeMismatch(String),
}
