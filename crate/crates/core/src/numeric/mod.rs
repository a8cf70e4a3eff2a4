//! Tensors, dense kernels, eigenvalues, gradient checks and the RNG.

mod eig;
mod gradcheck;
pub mod ops;
mod real;
mod rng;
mod tensor;

pub use eig::{eig_unsymmetric, ComplexSpectrum, SWEEPS_PER_DIM};
pub use gradcheck::{grad_check, grad_check_at, relative_error, REL_ERR_FLOOR};
pub use ops::{matmul, softmax_rows, Mask};
pub use real::Real;
pub use rng::{Rng, RngState};
pub use tensor::Tensor;
