use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    Param { field: &'static str, reason: String },

    #[error("newton iteration did not converge at t = {time:.3} s (residual norm {residual:.3e})")]
    Solver { time: f64, residual: f64 },

    #[error("unphysical state at t = {time:.3} s: {what}")]
    Physicality { time: f64, what: String },

    #[error("simulation failed at t = {time:.1} s: {source}")]
    Simulation {
        time: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("format error at byte {offset}: {reason}")]
    Format { offset: usize, reason: String },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("optimizer error: non-finite gradient in tensor `{0}`")]
    Optimizer(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("training diverged at epoch {epoch}, batch {batch} (learning rate {lr:.3e})")]
    Diverged { epoch: usize, batch: usize, lr: f64 },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("estimation error: {0}")]
    Estimation(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Param {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn at_time(self, time: f64) -> Self {
        match self {
            e @ Error::Simulation { .. } => e,
            other => Error::Simulation {
                time,
                source: Box::new(other),
            },
        }
    }
}
