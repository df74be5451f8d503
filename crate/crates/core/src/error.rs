use thiserror::Error;

#[derive(Debug, Error)]
pub enum NlmcError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("law rejected: {reason} (witness z={z:?}, v={v:?})")]
    LawRejected {
        reason: String,
        z: [f64; 2],
        v: [f64; 2],
    },
    #[error("incompatible source for pure-Neumann problem: net source {0:e}")]
    IncompatibleSource(f64),
    #[error("singular system: {0}")]
    Singular(String),
    #[error("degenerate continuum {index}: zero weighted measure")]
    DegenerateContinuum { index: usize },
    #[error("nonlinear solver did not converge after {iterations} iterations (residual {residual:e}): {context}")]
    NotConverged {
        iterations: usize,
        residual: f64,
        context: String,
    },
    #[error("time step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<NlmcError>,
    },
    #[error("model for edge class {0} is untrained")]
    Untrained(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, NlmcError>;

impl NlmcError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        NlmcError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn at_step(self, step: usize) -> Self {
        NlmcError::Step {
            step,
            source: Box::new(self),
        }
    }
}
