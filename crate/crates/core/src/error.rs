use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("probability at index {index} is {value}, expected a finite value in [0, 1]")]
    InvalidProbability { index: usize, value: f64 },

    #[error("probabilities sum to {sum}, expected 1 within {tolerance}")]
    NotOnSimplex { sum: f64, tolerance: f64 },

    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),

    #[error("class {class} out of range for {num_classes} classes")]
    ClassOutOfRange { class: usize, num_classes: usize },

    #[error("tie-breaking value u = {0} outside (0, 1]")]
    InvalidU(f64),

    #[error("{name} must be a finite value >= 0, got {value}")]
    NegativeHyperparameter { name: &'static str, value: f64 },

    #[error("k_reg = {k_reg} outside [1, {num_classes}]")]
    InvalidKReg { k_reg: usize, num_classes: usize },

    #[error("alpha = {0} outside (0, 1)")]
    InvalidAlpha(f64),

    #[error("calibration set is empty")]
    EmptyCalibration,

    #[error("non-finite nonconformity score {0}")]
    NonFiniteScore(f64),

    #[error("expected {expected} classes, found {found}")]
    ClassCountMismatch { expected: usize, found: usize },

    #[error("input is empty")]
    EmptyInput,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("cannot aggregate trials with differing score specs or alpha")]
    MixedTrials,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("need at least {needed} examples, got {available}")]
    InsufficientData { needed: usize, available: usize },

    #[error("pixel histogram is empty")]
    EmptyHistogram,

    #[error("unknown class id {0}")]
    UnknownClass(u16),

    #[error("cannot keep {target} tiles of class {class}: only {available} present")]
    TargetExceedsCount {
        class: u16,
        target: usize,
        available: usize,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("image {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by bad input or configuration, as opposed to
    /// failures of the environment (I/O, decoding).
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io(_) | Error::Image { .. })
    }

    pub(crate) fn parse(path: &str, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.to_string(),
            line,
            message: message.into(),
        }
    }
}
