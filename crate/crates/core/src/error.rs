//! Crate-wide error type.

use std::fmt;

/// Errors produced by graph, cost, plant, tuning, and simulation routines.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Matrix/vector dimensions do not line up.
    Dimension(String),
    /// A digraph violates its construction invariants (self-loop, negative weight, ...).
    InvalidGraph(String),
    /// A cost function violates its construction invariants.
    InvalidCost(String),
    /// Controller/generator gains violate their invariants.
    InvalidGains(String),
    /// All Markov parameters C A^{r-1} B vanished up to r = n.
    NoRelativeDegree { n: usize, tol: f64 },
    /// A matrix required to be Hurwitz is not.
    NotHurwitz(String),
    /// A linear solve hit a (numerically) singular matrix.
    Singular(String),
    /// Polynomial root iteration failed to converge; carries the worst residual.
    RootsDiverged { residual: f64 },
    /// The aggregate gradient never changed sign: the problem is not coercive
    /// on the search range, i.e. the strong-convexity assumption fails.
    NoBracket { limit: f64 },
    /// Bisection collapsed its bracket without meeting the requested tolerance.
    ToleranceUnreachable { achieved: f64, requested: f64 },
    /// A pre-check (connectivity, balance, relative degree over the box, ...) failed.
    AssumptionViolated(String),
    /// No gamma up to the search cap yields a stable closed loop.
    NoPassingGamma { gamma_max: f64, best_margin: f64 },
    /// A trajectory left the admissible region (|state| > threshold or non-finite).
    Divergence { t: f64, max_abs: f64 },
    /// Scenario/config parsing or validation failure.
    Config(String),
    /// CSV parsing failure with the 1-based offending line.
    CsvParse { line: usize, message: String },
    /// Underlying I/O failure.
    Io(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension(msg) => write!(f, "dimension mismatch: {msg}"),
            Error::InvalidGraph(msg) => write!(f, "invalid digraph: {msg}"),
            Error::InvalidCost(msg) => write!(f, "invalid cost function: {msg}"),
            Error::InvalidGains(msg) => write!(f, "invalid gains: {msg}"),
            Error::NoRelativeDegree { n, tol } => write!(
                f,
                "no relative degree <= {n}: all Markov parameters below tolerance {tol:e}"
            ),
            Error::NotHurwitz(msg) => write!(f, "matrix is not Hurwitz: {msg}"),
            Error::Singular(msg) => write!(f, "singular system: {msg}"),
            Error::RootsDiverged { residual } => write!(
                f,
                "polynomial root iteration did not converge (residual {residual:e})"
            ),
            Error::NoBracket { limit } => write!(
                f,
                "no sign change of the aggregate gradient within |y| <= {limit:e}; \
                 input appears non-coercive"
            ),
            Error::ToleranceUnreachable {
                achieved,
                requested,
            } => write!(
                f,
                "bisection stalled at residual {achieved:e} (requested {requested:e})"
            ),
            Error::AssumptionViolated(msg) => write!(f, "assumption violated: {msg}"),
            Error::NoPassingGamma {
                gamma_max,
                best_margin,
            } => write!(
                f,
                "no gamma <= {gamma_max} certifies the closed loop (best margin {best_margin:e})"
            ),
            Error::Divergence { t, max_abs } => write!(
                f,
                "trajectory diverged at t = {t} (max |state| = {max_abs:e})"
            ),
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::CsvParse { line, message } => {
                write!(f, "csv parse error at line {line}: {message}")
            }
            Error::Io(msg) => write!(f, "io error: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
