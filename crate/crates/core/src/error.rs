//! Error type shared by every module of the crate.

use std::fmt;
use std::path::PathBuf;

/// A single violated parameter invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub field: String,
    pub message: String,
    /// Sampled input that exposed the violation, when there is one.
    pub witness: Option<String>,
}

impl Violation {
    pub fn new(field: &str, message: impl Into<String>) -> Self {
        Self { field: field.to_string(), message: message.into(), witness: None }
    }

    pub fn with_witness(mut self, witness: impl Into<String>) -> Self {
        self.witness = Some(witness.into());
        self
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)?;
        if let Some(w) = &self.witness {
            write!(f, " (witness: {w})")?;
        }
        Ok(())
    }
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| format!("  - {x}")).collect::<Vec<_>>().join("\n")
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameters:\n{}", join_violations(.0))]
    Validation(Vec<Violation>),

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed data in {}: {message}", path.display())]
    Parse { path: PathBuf, message: String },

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("combined support of {size} atoms exceeds the exact transport cap of {cap}; subsample first")]
    SupportTooLarge { size: usize, cap: usize },

    #[error("time grids do not match: {0}")]
    GridMismatch(String),

    #[error("explicit step violates the CFL bound (number {number:.3} > 0.9); use n_time >= {required}")]
    Cfl { number: f64, required: usize },

    #[error("non-finite {what} at step {step}, atom {atom}")]
    NonFinite { what: String, step: usize, atom: usize },

    #[error("horizon T = {horizon} exceeds the admissible T_max = {t_max}")]
    Horizon { horizon: f64, t_max: f64 },

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
