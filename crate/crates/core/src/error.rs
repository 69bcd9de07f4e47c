use thiserror::Error;

pub type Result<T, E = GripError> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GripError {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("sequence too short: need at least {needed} samples, got {got}")]
    SequenceTooShort { needed: usize, got: usize },
    #[error("invalid cutoff {cutoff_hz} Hz for sample period {dt} s")]
    InvalidCutoff { cutoff_hz: f64, dt: f64 },
    #[error("flat signal: variance {variance:e} below 1e-12")]
    FlatSignal { variance: f64 },
    #[error("staticity violated: accel variance {variance:.4} (m/s^2)^2 exceeds bound {bound}")]
    StaticityViolation { variance: f64, bound: f64 },
    #[error("missing calibration context: {0}")]
    MissingContext(String),
    #[error("missing T-pose reference: {0}")]
    MissingTpose(String),
    #[error("degenerate trajectory: {0}")]
    DegenerateTrajectory(String),
    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("history underflow: requested {requested} frames, have {available}")]
    Underflow { requested: usize, available: usize },
    #[error("numerical divergence: {0}")]
    NumericalDivergence(String),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty set")]
    EmptySet,
    #[error("invalid config `{key}`: {reason}")]
    InvalidConfig { key: String, reason: String },
    #[error("invalid rotation: {0}")]
    InvalidRotation(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(String),
}

impl GripError {
    /// Process exit status: 2 for missing or malformed input, 1 when the data
    /// loads but violates an invariant of the computation.
    pub fn exit_code(&self) -> i32 {
        use GripError::*;
        match self {
            Format(_) | Io(_) | InvalidConfig { .. } | MissingContext(_) | MissingTpose(_) | InvalidRotation(_)
            | ShapeMismatch(_) | LayoutMismatch(_) | LengthMismatch(..) | SequenceTooShort { .. } | EmptySet
            | InvalidCutoff { .. } => 2,
            DegenerateInput(_) | FlatSignal { .. } | StaticityViolation { .. } | DegenerateTrajectory(_)
            | Underflow { .. } | NumericalDivergence(_) => 1,
        }
    }
}

impl From<std::io::Error> for GripError {
    fn from(e: std::io::Error) -> Self {
        GripError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for GripError {
    fn from(e: serde_json::Error) -> Self {
        GripError::Format(e.to_string())
    }
}
