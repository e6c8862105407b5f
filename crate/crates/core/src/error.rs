use alloc::string::String;
use core::fmt;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A model or problem parameter is out of its admissible range.
    InvalidParameter(String),
    /// A point lies outside the effective domain of a function.
    Domain(String),
    /// Two fields live on different meshes, or have mismatched lengths.
    MeshMismatch,
    /// Data violate a compatibility condition (charge neutrality, sign of q, ...).
    Incompatible(String),
    /// A linear system could not be factorised.
    Singular(String),
    /// An iterative method ran out of iterations.
    NotConverged {
        method: &'static str,
        iterations: usize,
        residual: f64,
    },
    /// The prescribed energy does not exceed the minimal electrostatic energy.
    Infeasible { e0: f64, minimal_energy: f64 },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidParameter(m) => write!(f, "invalid parameter: {m}"),
            Error::Domain(m) => write!(f, "outside domain: {m}"),
            Error::MeshMismatch => write!(f, "fields are defined on different meshes"),
            Error::Incompatible(m) => write!(f, "incompatible data: {m}"),
            Error::Singular(m) => write!(f, "singular system: {m}"),
            Error::NotConverged {
                method,
                iterations,
                residual,
            } => write!(
                f,
                "{method} did not converge after {iterations} iterations (residual {residual:e})"
            ),
            Error::Infeasible { e0, minimal_energy } => write!(
                f,
                "energy level {e0} does not exceed the minimal electrostatic energy {minimal_energy}"
            ),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
