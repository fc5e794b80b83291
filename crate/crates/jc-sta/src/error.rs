//! Error type shared across the crate, with process exit-code mapping.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, JcError>;

#[derive(Debug, Error)]
pub enum JcError {
    #[error("config error at `{path}`: {msg}")]
    Config { path: String, msg: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("state leaks into the top Fock level (population {leak:.3e} > tolerance {tol:.1e})")]
    TruncationUnsafe { leak: f64, tol: f64 },

    #[error("singular schedule: {0}")]
    SingularSchedule(String),

    #[error("projective measurement outcome has probability {0:.3e} < 1e-12")]
    MeasurementImpossible(f64),

    #[error("norm drift {drift:.3e} exceeds 1e-6; raise steps_per_unit (currently {steps_per_unit})")]
    StepSize { drift: f64, steps_per_unit: u32 },

    #[error("density matrix lost positivity: min eigenvalue {0:.3e} < -1e-6")]
    Positivity(f64),

    #[error("degenerate eigenvalues (gap {0:.3e} < 1e-10) in excitation block")]
    Degeneracy(f64),

    #[error("Fourier fit is ill-conditioned (condition number {0:.3e} > 1e12)")]
    FitIllConditioned(f64),

    #[error("undefined value: {0}")]
    UndefinedValue(String),

    #[error("amplitude underflow: {0}")]
    AmplitudeUnderflow(String),

    #[error("time {t} outside segment range [0, {span}]")]
    TimeOutOfRange { t: f64, span: f64 },

    #[error("io error on `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("linear algebra backend failure: {0}")]
    Linalg(String),
}

impl JcError {
    /// CLI exit code: 2 config, 3 numerical, 4 io.
    pub fn exit_code(&self) -> i32 {
        match self {
            JcError::Config { .. } => 2,
            JcError::Io { .. } => 4,
            _ => 3,
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        JcError::Io { path: path.into(), source }
    }

    pub fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        JcError::Config { path: path.into(), msg: msg.into() }
    }
}

impl From<ndarray_linalg::error::LinalgError> for JcError {
    fn from(e: ndarray_linalg::error::LinalgError) -> Self {
        JcError::Linalg(e.to_string())
    }
}
