use thiserror::Error;

use crate::lattice::Frame;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("size guard exceeded: {what} needs {requested}, limit is {limit}")]
    SizeGuard {
        what: &'static str,
        requested: usize,
        limit: usize,
    },
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("index {index} out of range for {bits} spins")]
    IndexOutOfRange { index: u64, bits: usize },
    #[error("frame mismatch: expected {expected:?}, got {got:?}")]
    FrameMismatch { expected: Frame, got: Frame },
    #[error("length {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("constraint is infeasible: {0}")]
    Infeasible(String),
    #[error("eigensolver did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("amplitude {0:e} is below the zero guard")]
    ZeroAmplitude(f64),
    #[error("sampler: {0}")]
    Sampler(String),
    #[error("training diverged at iteration {iteration}: energy {energy}")]
    Diverged { iteration: usize, energy: f64 },
    #[error("unsupported: {0}")]
    Unsupported(String),
}
