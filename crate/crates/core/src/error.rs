use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid stochastic {what} at row {row}: {detail}")]
    InvalidStochastic {
        what: &'static str,
        row: usize,
        detail: String,
    },

    #[error("induced Markov chain is not irreducible")]
    NotIrreducible,

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("linear system is singular: {0}")]
    SingularSystem(&'static str),

    #[error("Aw + b = 0 has no solution (residual {residual:e})")]
    InconsistentSystem { residual: f64 },

    #[error("v_* routes disagree: least-norm vs contraction iteration differ by {gap:e}")]
    FixedValueMismatch { gap: f64 },

    #[error("A is not negative semi-definite (largest symmetric eigenvalue {max_eig:e})")]
    NotNegativeSemidefinite { max_eig: f64 },

    #[error("zero eigenvalue of A is not semisimple: rank(A) = {rank_a}, rank(A^2) = {rank_a2}")]
    ZeroEigenvalueNotSemisimple { rank_a: usize, rank_a2: usize },

    #[error("budget {budget} is smaller than the first step size {alpha}")]
    BudgetTooSmall { alpha: f64, budget: f64 },

    #[error("non-finite TD iterate at step {step}")]
    NonFiniteIterate { step: usize },

    #[error("assumption violated: {}", .0.join("; "))]
    AssumptionViolation(Vec<String>),
}
