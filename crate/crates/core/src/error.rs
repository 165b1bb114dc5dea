use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid environment: {0}")]
    InvalidEnvironment(String),

    #[error("action {action} is not admissible in state {state}")]
    InadmissibleAction { state: usize, action: usize },

    #[error("non-finite action {0:?}")]
    NonFiniteAction([f64; 2]),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("relative value iteration did not converge after {iterations} sweeps (span residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("no feasible policy: phase-one residual {residual:e} on constraint rows {rows:?}")]
    Infeasible { residual: f64, rows: Vec<usize> },

    #[error("linear program is unbounded")]
    Unbounded,

    #[error("training diverged at iteration {iteration}: ‖θ‖ = {norm:e}")]
    Diverged { iteration: usize, norm: f64 },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
