use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("communication graph is not connected")]
    Disconnected,

    #[error("invalid constraint set: {0}")]
    InvalidSet(String),

    #[error("entropy generating function requires a unit-simplex domain")]
    IncompatibleGenerator,

    #[error("point outside the generator domain (violation {violation:.3e})")]
    DomainViolation { violation: f64 },

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("Slater condition fails at the reference point (agent {agent}, aggregate margin {margin:.6e})")]
    SlaterViolated { agent: usize, margin: f64 },

    #[error("reference solver did not reach tolerance {tol:.1e} (best residual {best_residual:.3e})")]
    OracleNonConvergence { tol: f64, best_residual: f64 },

    #[error("NO_FEASIBLE_NODE: no mesh node satisfies the coupled constraints")]
    NoFeasibleNode,

    #[error("mesh search supports at most 3 free dimensions, got {0}")]
    MeshTooLarge(usize),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("a reference saddle point is required")]
    MissingReference,

    #[error("config error at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(context: &'static str, expected: usize, found: usize) -> Self {
        Error::DimensionMismatch {
            context,
            expected,
            found,
        }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
