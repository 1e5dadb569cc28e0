use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected:?}, got {got:?}")]
    Shape {
        context: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("relative error against a zero-norm target")]
    DegenerateTarget,
    #[error("unsupported transform size {0}: only powers of two >= 4 are supported")]
    UnsupportedSize(usize),
    #[error("spectrum is not conjugate symmetric (max asymmetry {0:.3e})")]
    Symmetry(f64),
    #[error("Poisson problem not solvable on the torus: mean {0:.3e}")]
    Solvability(f64),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("iteration diverged at step {step}")]
    Divergence { step: usize },
    #[error("derivative is singular: inner solve failed after {iterations} iterations (residual {residual:.3e})")]
    SingularDerivative { iterations: usize, residual: f64 },
    #[error("adjoint solve did not converge (residual {0:.3e}): equilibrium is ill-conditioned")]
    IllConditioned(f64),
    #[error("linear solver did not converge in {iterations} iterations (relative residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("coefficient must be strictly positive (min {0:.3e})")]
    NonPositiveCoefficient(f64),
    #[error("CFL condition violated: max|u| dt / h = {0:.3}")]
    Cfl(f64),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(context: &'static str, expected: &[usize], got: &[usize]) -> Self {
        Error::Shape {
            context,
            expected: expected.to_vec(),
            got: got.to_vec(),
        }
    }

    /// True for failures caused by the numerics rather than by bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_)
                | Error::Divergence { .. }
                | Error::SingularDerivative { .. }
                | Error::IllConditioned(_)
                | Error::NotConverged { .. }
                | Error::Cfl(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
