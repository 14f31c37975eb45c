use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("placement {placement:?} makes the image block overlap its point reflection in a {n}x{n} canvas")]
    Overlap { placement: (usize, usize), n: usize },

    #[error("total noise variance is zero; sign samples carry no magnitude information")]
    ZeroNoise,

    #[error("matrix is not square ({rows}x{cols})")]
    NonSquare { rows: usize, cols: usize },

    #[error("matrix contains a non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("pixel ({row}, {col}) = {value} is outside [0, 255]")]
    PixelRange { row: usize, col: usize, value: f64 },

    #[error("spectrum violates conjugate symmetry at bin ({k1}, {k2}) (deviation {deviation:e})")]
    Asymmetry { k1: usize, k2: usize, deviation: f64 },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("gamma {gamma} outside the open interval (0, {upper})")]
    GammaRange { gamma: f64, upper: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("sampling mode mismatch: {0}")]
    Mode(String),

    #[error("image side {side} too small for {scales} scales with window {window}")]
    Scale { side: usize, scales: usize, window: usize },

    #[error("malformed {format} data: {reason}")]
    Format { format: &'static str, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// I/O error annotated with the file it concerns.
    pub fn io_at(path: &std::path::Path, err: std::io::Error) -> Self {
        Error::Io(std::io::Error::new(err.kind(), format!("{}: {err}", path.display())))
    }

    pub(crate) fn format(format: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            format,
            reason: reason.into(),
        }
    }
}
