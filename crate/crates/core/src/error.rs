use thiserror::Error;

/// Errors raised by the solver library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// The interpolation displacement matrix is singular or too badly conditioned to solve.
    #[error("interpolation geometry failure (condition estimate {condition:e})")]
    Geometry { condition: f64 },

    /// A residual evaluation produced a non-finite value.
    #[error("residual evaluation at {point} is not finite ({context})")]
    Evaluation { context: String, point: String },

    #[error("point {0} duplicates an existing interpolation point")]
    DuplicatePoint(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}

/// Compact rendering of a point for diagnostics; long vectors are truncated.
pub(crate) fn describe_point(x: &[f64]) -> String {
    const SHOWN: usize = 6;
    let mut out = String::from("[");
    for (i, v) in x.iter().take(SHOWN).enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push_str(&format!("{v}"));
    }
    if x.len() > SHOWN {
        out.push_str(&format!(", ... ({} entries)", x.len()));
    }
    out.push(']');
    out
}
