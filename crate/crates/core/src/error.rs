use thiserror::Error;

/// Failure classes, mapped onto process exit codes by the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Numerical,
    Gate,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Config => 2,
            ErrorClass::Numerical => 3,
            ErrorClass::Gate => 4,
        }
    }
}

/// One problem found while validating a scenario config.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigIssue {
    pub line: usize,
    pub message: String,
}

impl std::fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.line == 0 {
            write!(f, "{}", self.message)
        } else {
            write!(f, "line {}: {}", self.line, self.message)
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("fields live on different grids")]
    GridMismatch,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {}", format_issues(.0))]
    Config(Vec<ConfigIssue>),

    #[error("(H1) violated: {0}")]
    BoundStates(String),

    #[error("small bound-state branch exhausted at |w| = {0}")]
    BranchExhausted(f64),

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("ground state lost positivity (min value {0:e})")]
    LostPositivity(f64),

    #[error("degenerate: {0}")]
    Degenerate(String),

    #[error("Krein-negative eigenvector at e = {0}")]
    KreinNegative(f64),

    #[error("expected {expected} internal eigenvalues, found {found}")]
    EigenvalueCount { expected: usize, found: usize },

    #[error("smallness gate failed: |F(x,0)| = {residual:e} exceeds {bound:e}")]
    GateFailed { residual: f64, bound: f64 },

    #[error("not in contraction basin: observed step ratio {0}")]
    NotInBasin(f64),

    #[error("non-finite field encountered at t = {0}")]
    NonFinite(f64),

    #[error("bad snapshot: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn format_issues(issues: &[ConfigIssue]) -> String {
    issues
        .iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) | Error::BoundStates(_) | Error::Format(_) => {
                ErrorClass::Config
            }
            Error::Io(_) | Error::Json(_) | Error::Csv(_) => ErrorClass::Config,
            Error::GateFailed { .. } | Error::NotInBasin(_) => ErrorClass::Gate,
            _ => ErrorClass::Numerical,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
