use crate::numkernel::KernelError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("system is not stable: spectral radius {rho}")]
    Unstable { rho: f64 },
    #[error("Riccati iteration did not converge after {iterations} iterations (last change {delta:e})")]
    RiccatiNoConvergence { iterations: usize, delta: f64 },
    #[error("control weight R must be symmetric positive definite")]
    IndefiniteR,
    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepUnderflow { t: f64, h: f64 },
    #[error("non-finite loss at epoch {epoch}, batch {batch} (parameter norm {param_norm:e})")]
    NanLoss {
        epoch: usize,
        batch: usize,
        param_norm: f64,
    },
    #[error("empty batch")]
    EmptyBatch,
    #[error("model mode mismatch: expected {expected}, found {found}")]
    ModeMismatch {
        expected: &'static str,
        found: &'static str,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// True for failures of the numerics rather than of inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Kernel(_)
                | Error::Unstable { .. }
                | Error::RiccatiNoConvergence { .. }
                | Error::StepUnderflow { .. }
                | Error::NanLoss { .. }
        )
    }
}
