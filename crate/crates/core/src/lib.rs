//! Learning LTI discrepancy models between a nonlinear plant and its nominal
//! linearization.
//!
//! The nominal model's left coprime factors are perturbed by stable,
//! H∞-norm-bounded systems living in a lifted state space. Training the
//! perturbation together with a bias-free lifting network yields an improved
//! lifted LTI approximation of the plant.

pub mod discrepancy;
pub mod error;
pub mod lti;
pub mod normbounded;
pub mod numkernel;
pub mod parallel;
pub mod plants;
pub mod training;

pub use error::{Error, Result};
pub use numkernel::{KernelError, Matrix};
