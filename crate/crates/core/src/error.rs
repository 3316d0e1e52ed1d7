use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("topology error: {0}")]
    Topology(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error(
        "power flow did not converge after {iterations} iterations (last max |dv2| = {residual:e})"
    )]
    PowerFlowDiverged { iterations: usize, residual: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("operating envelope of prosumer {prosumer} cannot be met by its device bounds")]
    EnvelopeInfeasible { prosumer: usize },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("dual solver did not converge after {iterations} iterations (dual residual {dual_residual:e}, primal residual {primal_residual:e})")]
    SolverDiverged {
        iterations: usize,
        dual_residual: f64,
        primal_residual: f64,
    },

    #[error("no sign change found for the root bracket [{lo}, {hi}]")]
    RootBracket { lo: f64, hi: f64 },

    #[error(
        "equilibrium violated at prosumer {prosumer}: deviation {deviation:e} exceeds {tol:e}"
    )]
    EquilibriumViolation {
        prosumer: usize,
        deviation: f64,
        tol: f64,
    },

    #[error("settlement check failed: {0}")]
    Settlement(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("unknown {kind} `{name}` (registered: {available})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        available: String,
    },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error beneath any context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            e => e,
        }
    }
}
