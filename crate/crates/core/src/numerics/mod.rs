//! Dense array arithmetic, differentiable network primitives, the Adam
//! optimizer, and a finite-difference gradient checker.
//!
//! Everything runs in 64-bit floats on a single thread; given fixed inputs
//! every function here is bit-for-bit reproducible.

mod array;
mod gradcheck;
pub mod ops;
mod optim;

pub use array::{ComplexArray, RealArray};
pub use gradcheck::grad_check;
pub use optim::{adam_step, adam_step_filtered, OptimizerState, Param, ParameterSet};

/// Epsilon inside the batch-norm variance denominator.
pub const BATCHNORM_EPS: f64 = 1e-5;
/// Momentum for batch-norm running statistics.
pub const BATCHNORM_MOMENTUM: f64 = 0.1;
