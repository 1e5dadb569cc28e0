//! Classical solvers that manufacture training data.
//!
//! * [`darcy`]: `-∇·(a ∇u) = f` on the unit square with zero Dirichlet data,
//!   discretized by a five-point flux stencil and solved with conjugate gradients.
//! * [`cubic`]: the 1-D periodic problem `u - εu'' + u³ = f` used by Newton.
//! * [`ns`]: vorticity form of incompressible Navier-Stokes on the `[0, 2π)²`
//!   torus, stepped pseudo-spectrally, plus the steady residual `u·∇ω - ν∆ω - f`.

pub mod cubic;
pub mod darcy;
pub mod ns;

pub use cubic::CubicProblem;
pub use darcy::{darcy_residual, darcy_solve, DarcyProblem};
pub use ns::{
    advection, cfl_number, kolmogorov_forcing, mask_two_thirds, ns_force_from_solution,
    ns_residual, ns_step, velocity_from_vorticity, vorticity_from_force, NsStepper,
};
