//! Nonlocal multi-continuum (NLMC) upscaling for linear, nonlinear and
//! space-time flow problems in heterogeneous fractured media.

pub mod continua;
pub mod error;
pub mod exec;
pub mod fine_solver;
pub mod linalg;
pub mod media;
pub mod mesh;
pub mod nlmc;
pub mod spacetime;
pub mod surrogate;

pub use error::{NlmcError, Result};
pub use exec::Exec;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
