use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A closed-form expression left its real domain (negative root argument, |gamma| >= 1, ...).
    #[error("domain error: {what} (at {at})")]
    Domain { what: &'static str, at: String },

    #[error("exponential saturated while evaluating {0}")]
    Saturation(&'static str),

    #[error("internal consistency violated: {0}")]
    Consistency(String),

    #[error("solver did not converge after {iterations} iterations (last residual {residual:e} V)")]
    Convergence { iterations: usize, residual: f64 },

    #[error("surrogate evaluation produced a non-finite value at V_M = {v_m} V, N_d = {n_d:e} m^-3")]
    Evaluation { v_m: f64, n_d: f64 },

    #[error("voltage partition inconsistent: |V_Sch| = {v_sch} V exceeds |V_M| = {v_m} V")]
    Partition { v_sch: f64, v_m: f64 },

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("substep underflow: dt = {dt:e} s is below {limit:e} s (stiff region)")]
    Stiffness { dt: f64, limit: f64 },

    #[error("search failed: {0}")]
    Search(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: String, got: String },

    #[error("{path}: line {line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("{path}: malformed IDX data at byte offset {offset}: {msg}")]
    Format { path: String, offset: usize, msg: String },

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("config: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
