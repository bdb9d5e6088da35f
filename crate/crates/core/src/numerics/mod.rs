//! Numerical foundation: tensors, a reverse-mode tape over the handful of
//! layer kernels the models need, the Adam and EMA update rules, gradient
//! checking, and a small dense eigenvalue solver.

pub mod adam;
pub mod eigen;
pub mod ema;
pub mod gradcheck;
pub mod ops;
pub mod params;
pub mod real;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, AdamState};
pub use eigen::{det_lu, eigenvalues, MAX_EIGEN_N};
pub use ema::ema_update;
pub use gradcheck::{grad_check, grad_check_sampled, GradCheckReport};
pub use params::ModelParams;
pub use real::Real;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
