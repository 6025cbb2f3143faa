use std::fmt;

use thiserror::Error;

/// Position-annotated failure while parsing a coefficient expression.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    /// Byte offset into the source text.
    pub pos: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    UnexpectedChar(char),
    UnexpectedToken(String),
    UnexpectedEnd,
    InvalidNumber(String),
    UnknownVariable(String),
    UnknownFunction(String),
    Arity {
        name: String,
        expected: String,
        found: usize,
    },
    /// A `case` condition refers to something other than `x` or `t`.
    StateInCondition(String),
    TrailingInput,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "at offset {}: ", self.pos)?;
        match &self.kind {
            ParseErrorKind::UnexpectedChar(c) => write!(f, "unexpected character {c:?}"),
            ParseErrorKind::UnexpectedToken(t) => write!(f, "unexpected token {t:?}"),
            ParseErrorKind::UnexpectedEnd => write!(f, "unexpected end of input"),
            ParseErrorKind::InvalidNumber(s) => write!(f, "invalid number {s:?}"),
            ParseErrorKind::UnknownVariable(s) => write!(f, "unknown variable {s:?}"),
            ParseErrorKind::UnknownFunction(s) => write!(f, "unknown function {s:?}"),
            ParseErrorKind::Arity { name, expected, found } => {
                write!(f, "{name} expects {expected} argument(s), found {found}")
            }
            ParseErrorKind::StateInCondition(s) => {
                write!(f, "case condition may only depend on x or t, found {s:?}")
            }
            ParseErrorKind::TrailingInput => write!(f, "trailing input"),
        }
    }
}

impl std::error::Error for ParseError {}

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error in {field}: {source}")]
    Parse {
        field: String,
        #[source]
        source: ParseError,
    },
    #[error("{which} must be positive, found {value} at x = {x}")]
    NonPositiveSpeed { which: &'static str, x: f64, value: f64 },
    #[error("origin is not an equilibrium: {which} = {value} at {at}")]
    NotEquilibrium {
        which: &'static str,
        at: String,
        value: f64,
    },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("quadrature did not converge on [{a}, {b}]")]
    QuadratureNonConvergence { a: f64, b: f64 },
    #[error("implicit solve did not converge at x = {x}")]
    RootNonConvergence { x: f64 },
    #[error("time step {dt} exceeds the CFL limit {limit}")]
    Cfl { dt: f64, limit: f64 },
    #[error("state blew up at t = {t}: sup-norm {norm}")]
    BlowUp { t: f64, norm: f64 },
    #[error("grid mismatch: expected {expected} nodes, found {found}")]
    GridMismatch { expected: usize, found: usize },
    #[error("prediction operator is not linear: superposition defect {defect:e}")]
    Nonlinear { defect: f64 },
    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error("kernel cache {0} does not match the requested spec")]
    StaleCache(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Toml(String),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for errors that stem from bad user input rather than a failed run.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::NonPositiveSpeed { .. }
                | Error::NotEquilibrium { .. }
                | Error::Invalid { .. }
                | Error::Toml(_)
                | Error::GridMismatch { .. }
                | Error::Nonlinear { .. }
        )
    }

    pub fn is_blow_up(&self) -> bool {
        matches!(self, Error::BlowUp { .. } | Error::NonFinite(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
