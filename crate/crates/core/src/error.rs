use chrono::NaiveDateTime;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("MalformedHeader: mapped column `{0}` not found in header")]
    MalformedHeader(String),
    #[error("EmptyInput: no data rows")]
    EmptyInput,
    #[error("DuplicateTimestamp: {0}")]
    DuplicateTimestamp(NaiveDateTime),
    #[error("IrregularGap: {prev} -> {next} is not a whole number of sample periods")]
    IrregularGap {
        prev: NaiveDateTime,
        next: NaiveDateTime,
    },
    #[error("AllMissing: column `{0}` has no measured values")]
    AllMissing(&'static str),
    #[error("EmptySeries")]
    EmptySeries,
    #[error("LengthMismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("InvalidWindow: window must be >= 1")]
    InvalidWindow,
    #[error("WindowTooLarge: window {window} exceeds series length {len}")]
    WindowTooLarge { window: usize, len: usize },
    #[error("LengthTooShort: need at least {min} samples, got {len}")]
    LengthTooShort { len: usize, min: usize },
    #[error("NoPeaks: spectrum has no local maxima in the period range")]
    NoPeaks,
    #[error("InvalidDims: {0}")]
    InvalidDims(String),
    #[error("ShapeMismatch: {0}")]
    ShapeMismatch(String),
    #[error("NonFiniteInput")]
    NonFiniteInput,
    #[error("SeriesTooShort: {len} rows, need at least {min}")]
    SeriesTooShort { len: usize, min: usize },
    #[error("EmptySplit: {n} samples cannot fill train/val/test = {train}/{val}/{test}")]
    EmptySplit {
        n: usize,
        train: usize,
        val: usize,
        test: usize,
    },
    #[error("NonFiniteGradient: in `{tensor}` at epoch {epoch}")]
    NonFiniteGradient { tensor: String, epoch: usize },
    #[error("MissingCheckpoint: {0}")]
    MissingCheckpoint(String),
    #[error("ZeroVariance: target is constant, R² undefined")]
    ZeroVariance,
    #[error("InvalidSize: {0}")]
    InvalidSize(String),
    #[error("InvalidCase: {0}")]
    InvalidCase(String),
    #[error("NonConvergence: mismatch {mismatch:.3e} after {iterations} iterations{context}")]
    NonConvergence {
        mismatch: f64,
        iterations: usize,
        context: String,
    },
    #[error("ProfileMismatch: {0}")]
    ProfileMismatch(String),
    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),
    #[error("Parse: {0}")]
    Parse(String),
    #[error("Io: {0}")]
    Io(#[from] std::io::Error),
    #[error("Csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("Json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable variant name, used on stderr by the CLI.
    pub fn name(&self) -> &'static str {
        match self {
            Error::MalformedHeader(_) => "MalformedHeader",
            Error::EmptyInput => "EmptyInput",
            Error::DuplicateTimestamp(_) => "DuplicateTimestamp",
            Error::IrregularGap { .. } => "IrregularGap",
            Error::AllMissing(_) => "AllMissing",
            Error::EmptySeries => "EmptySeries",
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::InvalidWindow => "InvalidWindow",
            Error::WindowTooLarge { .. } => "WindowTooLarge",
            Error::LengthTooShort { .. } => "LengthTooShort",
            Error::NoPeaks => "NoPeaks",
            Error::InvalidDims(_) => "InvalidDims",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::NonFiniteInput => "NonFiniteInput",
            Error::SeriesTooShort { .. } => "SeriesTooShort",
            Error::EmptySplit { .. } => "EmptySplit",
            Error::NonFiniteGradient { .. } => "NonFiniteGradient",
            Error::MissingCheckpoint(_) => "MissingCheckpoint",
            Error::ZeroVariance => "ZeroVariance",
            Error::InvalidSize(_) => "InvalidSize",
            Error::InvalidCase(_) => "InvalidCase",
            Error::NonConvergence { .. } => "NonConvergence",
            Error::ProfileMismatch(_) => "ProfileMismatch",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::Parse(_) => "Parse",
            Error::Io(_) => "Io",
            Error::Csv(_) => "Csv",
            Error::Json(_) => "Json",
        }
    }

    /// True for failures of the environment (files, encodings) rather than
    /// of the data or model.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_) | Error::Csv(_) | Error::Json(_))
    }
}
