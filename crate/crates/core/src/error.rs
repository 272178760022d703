use std::io;

/// Every failure the library can report.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("point lies outside the visible hemisphere of the tangent plane (cos c = {cos_c})")]
    HemisphereViolation { cos_c: f64 },
    #[error("field of view must lie strictly between 0 and pi radians, got {0}")]
    InvalidFov(f64),
    #[error("invalid resolution {0}")]
    InvalidResolution(usize),
    #[error("latitude {0} is outside [-pi/2, pi/2]")]
    InvalidLatitude(f64),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("feature map {got:?} does not match stride {stride} of the {erp:?} ERP grid (expected {expected:?})")]
    StrideMismatch {
        stride: usize,
        erp: (usize, usize),
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },
    #[error("feature vector {index} has (near) zero norm")]
    ZeroVector { index: usize },
    #[error("label {label} is out of range for {classes} classes")]
    LabelOutOfRange { label: u16, classes: usize },
    #[error("every pixel carries the ignore label")]
    AllIgnored,
    #[error("loss term {name} is not finite ({value})")]
    NonFiniteTerm { name: &'static str, value: f64 },
    #[error("non-finite loss at step {step}: {term} = {value} ({detail})")]
    NonFiniteLoss {
        step: u64,
        term: &'static str,
        value: f64,
        detail: String,
    },
    #[error("forward cache does not belong to the current parameters")]
    StaleCache,
    #[error("evaluation set is empty")]
    EmptyEvalSet,
    #[error("confusion matrix holds no pixels")]
    EmptyMatrix,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}
