//! Fourier neural operators for steady-state PDEs.
//!
//! The crate provides a small reverse-mode differentiation engine, spectral
//! tooling, the FNO family of architectures (plain, residual input-injected,
//! weight-tied and equilibrium), fixed-point and Newton solvers, implicit
//! gradients through equilibria, classical Darcy and Navier-Stokes solvers,
//! dataset generation, and a training loop.

pub mod autodiff;
pub mod datagen;
pub mod error;
pub mod fixedpoint;
pub mod fno;
pub mod format;
pub mod gradcheck;
pub mod implicit_grad;
pub mod ops;
pub mod pde;
pub mod spectral;
pub mod tensor;
pub mod testing;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{ComplexTensor, Tensor};
pub use autodiff::activation_meter;
