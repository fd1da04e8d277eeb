use thiserror::Error;

/// Errors raised anywhere in the inference stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("invalid sample size {0}: need n >= 2")]
    InvalidSampleSize(usize),

    #[error("matrix is not positive semi-definite: eigenvalue {eigenvalue:.3e} below -{tolerance:.3e}")]
    NotPsd { eigenvalue: f64, tolerance: f64 },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("model evaluation failed at theta={theta:?}, alpha={alpha:?}, beta={beta:?}: {reason}")]
    ModelEvaluation {
        theta: Vec<f64>,
        alpha: Vec<f64>,
        beta: Vec<f64>,
        reason: String,
    },

    #[error("solver failed: {0}")]
    Solver(String),

    #[error("generalized cross-validation is degenerate: trace of the hat matrix reaches the residual count for every grid point")]
    GcvDegenerate,

    #[error("estimated degrees of freedom {df} <= 0 (rank(Sigma)={r_sigma}, rank(grad_alpha g)={r_alpha})")]
    DegreesOfFreedom {
        df: i64,
        r_sigma: usize,
        r_alpha: usize,
    },

    #[error("equilibrium iteration did not converge (residual {residual:.3e}); trajectory tail: {tail:?}")]
    Equilibrium { residual: f64, tail: Vec<Vec<f64>> },

    #[error("insufficient data: state {state} observed {count} times (need at least {required})")]
    InsufficientData {
        state: usize,
        count: usize,
        required: usize,
    },

    #[error("{failures} of {replications} replications failed, above the allowed {allowed}")]
    ErrorBudget {
        failures: usize,
        replications: usize,
        allowed: usize,
    },

    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn dimension(context: &'static str, expected: usize, found: usize) -> Self {
        Error::Dimension {
            context,
            expected,
            found,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
