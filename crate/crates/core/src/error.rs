use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("template matrix has rank {rank} < state dimension {n}; the template set is unbounded")]
    UnboundedTemplate { rank: usize, n: usize },

    #[error("template set is empty or degenerate: {0}")]
    DegenerateTemplate(String),

    #[error("exact volume is only available for dimensions 1..=3 (got {0})")]
    DimensionUnsupported(usize),

    #[error("set matrix W is singular (|det W| = {det:e})")]
    SingularW { det: f64 },

    #[error("trajectory length mismatch: {states} states and {inputs} inputs (need states = inputs + 1 >= 2)")]
    LengthMismatch { states: usize, inputs: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("feasible model set is empty: data inconsistent with the disturbance bound")]
    InfeasibleModelSet,

    #[error("decision layout does not provide {0}")]
    LayoutMismatch(&'static str),

    #[error("previous iterate X_ij for pair ({i}, {j}) is not invertible")]
    SingularIterate { i: usize, j: usize },

    #[error("synthesis problem is infeasible ({0})")]
    SynthesisInfeasible(String),

    #[error("invalid options: {0}")]
    InvalidOptions(String),

    #[error("solver failed: {0}")]
    Solver(String),

    #[error("linear program is infeasible")]
    LpInfeasible,

    #[error("linear program is unbounded")]
    LpUnbounded,

    #[error("disturbance set is unbounded: D has rank {rank} < {n}")]
    UnboundedDisturbance { rank: usize, n: usize },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
