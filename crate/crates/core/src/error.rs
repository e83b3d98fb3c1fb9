use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, AtigError>;

#[derive(Debug, Error)]
pub enum AtigError {
    /// Malformed or out-of-range input supplied by the caller.
    #[error("input error: {0}")]
    Input(String),

    /// An operation was invoked on an object in the wrong state.
    #[error("state error: {0}")]
    State(String),

    #[error("{what} did not converge after {iterations} sweeps (residual {residual:e})")]
    Convergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("environment generation failed: {0}")]
    Generation(String),

    #[error("{file}:{line}: {msg}")]
    Parse { file: String, line: usize, msg: String },

    #[error("training iteration {iteration}: {source}")]
    Training { iteration: usize, source: Box<AtigError> },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl AtigError {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        AtigError::Input(msg.into())
    }

    pub(crate) fn state(msg: impl Into<String>) -> Self {
        AtigError::State(msg.into())
    }

    pub(crate) fn parse(file: &str, line: usize, msg: impl Into<String>) -> Self {
        AtigError::Parse {
            file: file.to_string(),
            line,
            msg: msg.into(),
        }
    }
}
