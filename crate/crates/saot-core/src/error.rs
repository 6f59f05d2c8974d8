use std::fmt;

/// Library-wide error type. Variants map onto the CLI exit-code contract:
/// configuration/shape/format problems are validation failures (exit 2),
/// everything numerical (non-finite values, solver stalls, divergence) is
/// a numeric failure (exit 3).
#[derive(Debug)]
pub enum Error {
    /// Shape or dimension mismatch; message names both shapes.
    Dimension(String),
    /// Invalid configuration or argument at construction time.
    Config(String),
    /// File format violation: bad magic, version, truncation, checksum.
    Format(String),
    /// Non-finite values, overflow, symmetry violations.
    Numeric(String),
    /// Iterative solver exhausted its budget.
    Convergence { residual: f64, iterations: usize },
    /// Training produced a non-finite loss.
    Divergence { step: usize },
    /// A function handed to grad_check returned different values at the same point.
    Determinism(String),
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension(m) => write!(f, "dimension error: {m}"),
            Error::Config(m) => write!(f, "config error: {m}"),
            Error::Format(m) => write!(f, "format error: {m}"),
            Error::Numeric(m) => write!(f, "numeric error: {m}"),
            Error::Convergence { residual, iterations } => write!(
                f,
                "convergence failure: residual {residual:.3e} after {iterations} iterations"
            ),
            Error::Divergence { step } => write!(f, "divergence: non-finite loss at step {step}"),
            Error::Determinism(m) => write!(f, "determinism error: {m}"),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors the CLI reports as numeric failures (exit 3).
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Numeric(_) | Error::Convergence { .. } | Error::Divergence { .. }
        )
    }
}
