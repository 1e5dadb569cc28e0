//! Gradients through an equilibrium `z* = G(z*)`.
//!
//! Given the upstream gradient `dL/dz*`, three modes produce parameter
//! gradients: the exact implicit gradient (solving the adjoint system
//! `w = dL/dz* + J^T w` with `J = dG/dz` at `z*`), the Jacobian-free
//! approximation (`w = dL/dz*`), and the phantom gradient, which backpropagates
//! through a short damped unroll `z <- tau G(z) + (1 - tau) z` started at `z*`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::fixedpoint::linsolve;
use crate::tensor::Tensor;

/// A fixed-point map that can be recorded on a differentiation tape.
pub trait DifferentiableMap {
    /// Records `G(z)` on `graph`. Parameters must be registered by name so
    /// that repeated applications share leaves.
    fn record(&self, graph: &mut Graph, z: NodeId) -> Result<NodeId>;

    /// Evaluates `G(z)` without keeping the tape.
    fn eval(&self, z: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let zi = g.constant(z.clone())?;
        let out = self.record(&mut g, zi)?;
        Ok(g.value(out)?.clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhantomConfig {
    pub tau: f64,
    pub steps: usize,
}

impl PhantomConfig {
    pub fn new(tau: f64, steps: usize) -> Result<Self> {
        if !(tau > 0.0 && tau <= 1.0) || steps == 0 {
            return Err(Error::Config(format!(
                "phantom gradient needs tau in (0, 1] and S >= 1, got tau={tau}, S={steps}"
            )));
        }
        Ok(PhantomConfig { tau, steps })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BackwardMode {
    Exact,
    JacobianFree,
    Phantom(PhantomConfig),
}

impl fmt::Display for BackwardMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackwardMode::Exact => f.write_str("exact"),
            BackwardMode::JacobianFree => f.write_str("jfree"),
            BackwardMode::Phantom(p) => write!(f, "phantom({},{})", p.tau, p.steps),
        }
    }
}

impl FromStr for BackwardMode {
    type Err = Error;

    /// Accepts `exact`, `jfree` and `phantom(tau,S)`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "exact" => return Ok(BackwardMode::Exact),
            "jfree" => return Ok(BackwardMode::JacobianFree),
            _ => {}
        }
        let bad = || Error::Config(format!("unknown backward mode '{s}'"));
        let inner = s
            .strip_prefix("phantom(")
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(bad)?;
        let (tau, steps) = inner.split_once(',').ok_or_else(bad)?;
        let tau: f64 = tau.trim().parse().map_err(|_| bad())?;
        let steps: usize = steps.trim().parse().map_err(|_| bad())?;
        Ok(BackwardMode::Phantom(PhantomConfig::new(tau, steps)?))
    }
}

/// Adjoint solve settings for [`BackwardMode::Exact`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdjointConfig {
    pub max_iter: usize,
    pub tol: f64,
    /// Iteration cap of the GMRES fallback.
    pub fallback_max_iter: usize,
}

impl Default for AdjointConfig {
    fn default() -> Self {
        AdjointConfig {
            max_iter: 100,
            tol: 1e-10,
            fallback_max_iter: 500,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ImplicitGrads {
    pub params: BTreeMap<String, Tensor>,
    /// Adjoint iterations (fixed-point plus fallback); zero for approximate modes.
    pub adjoint_iterations: usize,
    /// Final relative residual of the adjoint system.
    pub adjoint_residual: f64,
}

pub fn implicit_backward(
    map: &dyn DifferentiableMap,
    z_star: &Tensor,
    grad_z: &Tensor,
    mode: BackwardMode,
    adjoint: &AdjointConfig,
) -> Result<ImplicitGrads> {
    z_star.expect_shape(grad_z.shape(), "upstream gradient")?;
    match mode {
        BackwardMode::Exact => exact_implicit_grad(map, z_star, grad_z, adjoint),
        BackwardMode::JacobianFree => jacobian_free_grad(map, z_star, grad_z),
        BackwardMode::Phantom(p) => phantom_grad(map, z_star, grad_z, p),
    }
}

/// One tape holding a single application of the map at `z*`.
struct Linearization {
    graph: Graph,
    z: NodeId,
    out: NodeId,
}

impl Linearization {
    fn new(map: &dyn DifferentiableMap, z_star: &Tensor) -> Result<Self> {
        let mut graph = Graph::new();
        let z = graph.input(z_star.clone())?;
        let out = map.record(&mut graph, z)?;
        graph.value(out)?.expect_shape(z_star.shape(), "fixed-point map output")?;
        Ok(Linearization { graph, z, out })
    }

    /// `J^T w`.
    fn jt(&self, w: &Tensor) -> Result<Tensor> {
        Ok(self.graph.vjp(self.out, w)?.of(self.z))
    }

    fn param_grads(&self, w: &Tensor) -> Result<BTreeMap<String, Tensor>> {
        Ok(self.graph.vjp(self.out, w)?.params())
    }
}

/// Solves `w = g + J^T w` by fixed-point iteration, falling back to GMRES on
/// `(I - J^T) w = g` when the iteration stalls, then pulls `w` back to the parameters.
pub fn exact_implicit_grad(
    map: &dyn DifferentiableMap,
    z_star: &Tensor,
    grad_z: &Tensor,
    cfg: &AdjointConfig,
) -> Result<ImplicitGrads> {
    let lin = Linearization::new(map, z_star)?;
    let gnorm = grad_z.norm();
    if gnorm == 0.0 {
        return Ok(ImplicitGrads {
            params: lin.param_grads(grad_z)?,
            adjoint_iterations: 0,
            adjoint_residual: 0.0,
        });
    }
    let mut w = grad_z.clone();
    let mut best = (f64::INFINITY, w.clone());
    let mut iterations = 0;
    let mut stalled = true;
    for _ in 0..cfg.max_iter {
        let next = grad_z.add(&lin.jt(&w)?)?;
        let res = next.sub(&w)?.norm() / gnorm;
        iterations += 1;
        if !res.is_finite() {
            break;
        }
        if res < best.0 {
            best = (res, w.clone());
        } else if res > 2.0 * best.0 {
            break;
        }
        w = next;
        if res <= cfg.tol {
            stalled = false;
            best = (res, w.clone());
            break;
        }
    }
    let (mut residual, mut w) = best;
    if stalled {
        log::debug!("adjoint iteration stalled at {residual:.3e}; switching to GMRES");
        let shape = z_star.shape().to_vec();
        let apply = |v: &[f64]| -> Result<Vec<f64>> {
            let t = Tensor::new(shape.clone(), v.to_vec())?;
            Ok(t.sub(&lin.jt(&t)?)?.into_vec())
        };
        let restart = cfg.fallback_max_iter.min(grad_z.len());
        match linsolve::gmres(apply, grad_z.data(), Some(w.data()), cfg.tol, cfg.fallback_max_iter, restart) {
            Ok(s) => {
                iterations += s.iterations;
                residual = s.relative_residual;
                w = Tensor::new(shape, s.x)?;
            }
            Err(Error::NotConverged { residual, .. }) => return Err(Error::IllConditioned(residual)),
            Err(Error::NonFinite(_)) => return Err(Error::IllConditioned(f64::INFINITY)),
            Err(e) => return Err(e),
        }
    }
    Ok(ImplicitGrads {
        params: lin.param_grads(&w)?,
        adjoint_iterations: iterations,
        adjoint_residual: residual,
    })
}

/// Backpropagates `dL/dz*` through one application of the map.
pub fn jacobian_free_grad(
    map: &dyn DifferentiableMap,
    z_star: &Tensor,
    grad_z: &Tensor,
) -> Result<ImplicitGrads> {
    let lin = Linearization::new(map, z_star)?;
    Ok(ImplicitGrads {
        params: lin.param_grads(grad_z)?,
        adjoint_iterations: 0,
        adjoint_residual: 0.0,
    })
}

/// Backpropagates `dL/dz*` through `S` damped steps started at a detached `z*`.
pub fn phantom_grad(
    map: &dyn DifferentiableMap,
    z_star: &Tensor,
    grad_z: &Tensor,
    cfg: PhantomConfig,
) -> Result<ImplicitGrads> {
    let mut graph = Graph::new();
    let mut z = graph.constant(z_star.clone())?;
    for _ in 0..cfg.steps {
        let gz = map.record(&mut graph, z)?;
        z = if cfg.tau == 1.0 {
            gz
        } else {
            let a = graph.scale(gz, cfg.tau)?;
            let b = graph.scale(z, 1.0 - cfg.tau)?;
            graph.add(a, b)?
        };
    }
    Ok(ImplicitGrads {
        params: graph.vjp(z, grad_z)?.params(),
        adjoint_iterations: 0,
        adjoint_residual: 0.0,
    })
}

/// Estimate of `||dG/dz||_2` at `z` by power iteration on `J J^T`, using
/// reverse products for `J^T` and central differences for `J`.
pub fn jacobian_norm_estimate(map: &dyn DifferentiableMap, z: &Tensor, iters: usize) -> Result<f64> {
    let lin = Linearization::new(map, z)?;
    let eps = 1e-6 * z.norm().max(1.0);
    let jv = |v: &Tensor| -> Result<Tensor> {
        let p = map.eval(&z.axpy(eps, v)?)?;
        let m = map.eval(&z.axpy(-eps, v)?)?;
        Ok(p.sub(&m)?.scale(0.5 / eps))
    };
    let mut v = Tensor::from_fn(z.shape(), |i| 1.0 + ((i * 7919) % 13) as f64 / 13.0);
    v = v.scale(1.0 / v.norm());
    let mut sigma = 0.0;
    for _ in 0..iters {
        let u = jv(&lin.jt(&v)?)?;
        let n = u.norm();
        if n == 0.0 {
            return Ok(0.0);
        }
        sigma = n.sqrt();
        v = u.scale(1.0 / n);
    }
    Ok(sigma)
}

/// The scalar family `G(z) = a z + theta` on a one-point, one-channel field.
///
/// Its equilibrium is `theta / (1 - a)`, so `dz*/dtheta = 1 / (1 - a)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalarAffineMap {
    pub a: f64,
    pub theta: f64,
}

impl ScalarAffineMap {
    pub const PARAM: &'static str = "theta";

    pub fn equilibrium(&self) -> Tensor {
        Tensor::full(&[1, 1, 1], self.theta / (1.0 - self.a))
    }
}

impl DifferentiableMap for ScalarAffineMap {
    fn record(&self, graph: &mut Graph, z: NodeId) -> Result<NodeId> {
        let w = graph.constant(Tensor::full(&[1, 1], self.a))?;
        let b = graph.param(Self::PARAM, Tensor::full(&[1], self.theta))?;
        graph.linear(z, w, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation_meter;

    fn theta_grad(g: &ImplicitGrads) -> f64 {
        g.params[ScalarAffineMap::PARAM].data()[0]
    }

    fn one() -> Tensor {
        Tensor::full(&[1, 1, 1], 1.0)
    }

    #[test]
    fn scalar_exact_gradient_is_geometric_series() {
        let m = ScalarAffineMap { a: 0.5, theta: 0.3 };
        let g = exact_implicit_grad(&m, &m.equilibrium(), &one(), &AdjointConfig::default()).unwrap();
        assert!((theta_grad(&g) - 2.0).abs() < 1e-9);
        let jf = jacobian_free_grad(&m, &m.equilibrium(), &one()).unwrap();
        assert_eq!(theta_grad(&jf), 1.0);
    }

    #[test]
    fn constant_map_gradient_equals_single_backprop() {
        let m = ScalarAffineMap { a: 0.0, theta: 0.7 };
        let z = m.equilibrium();
        let ex = exact_implicit_grad(&m, &z, &one(), &AdjointConfig::default()).unwrap();
        let jf = jacobian_free_grad(&m, &z, &one()).unwrap();
        assert_eq!(ex.params, jf.params);
    }

    #[test]
    fn phantom_examples() {
        let m = ScalarAffineMap { a: 0.5, theta: 0.3 };
        let z = m.equilibrium();
        let p11 = phantom_grad(&m, &z, &one(), PhantomConfig::new(1.0, 1).unwrap()).unwrap();
        let jf = jacobian_free_grad(&m, &z, &one()).unwrap();
        assert_eq!(theta_grad(&p11).to_bits(), theta_grad(&jf).to_bits());
        // c = 1 - tau + tau a = 0.75; dz_3/dtheta = tau (1 + c + c^2).
        let p = phantom_grad(&m, &z, &one(), PhantomConfig::new(0.5, 3).unwrap()).unwrap();
        assert!((theta_grad(&p) - 1.15625).abs() < 1e-15);
        let p50 = phantom_grad(&m, &z, &one(), PhantomConfig::new(0.5, 50).unwrap()).unwrap();
        assert!((theta_grad(&p50) - 2.0).abs() / 2.0 < 1e-6);
    }

    #[test]
    fn zero_upstream_gradient_gives_zero() {
        let m = ScalarAffineMap { a: 0.5, theta: 0.3 };
        let z = Tensor::zeros(&[1, 1, 1]);
        for mode in [
            BackwardMode::Exact,
            BackwardMode::JacobianFree,
            BackwardMode::Phantom(PhantomConfig::new(0.5, 2).unwrap()),
        ] {
            let g = implicit_backward(&m, &m.equilibrium(), &z, mode, &AdjointConfig::default()).unwrap();
            assert_eq!(theta_grad(&g), 0.0);
        }
    }

    #[test]
    fn expansive_map_falls_back_to_gmres() {
        // a = 1.5 makes the adjoint iteration diverge; (1 - a) w = 1 still solves.
        let m = ScalarAffineMap { a: 1.5, theta: 0.3 };
        let g = exact_implicit_grad(&m, &m.equilibrium(), &one(), &AdjointConfig::default()).unwrap();
        assert!((theta_grad(&g) + 2.0).abs() < 1e-9);
        let singular = ScalarAffineMap { a: 1.0, theta: 0.3 };
        let r = exact_implicit_grad(&singular, &one(), &one(), &AdjointConfig::default());
        assert!(matches!(r, Err(Error::IllConditioned(_))));
    }

    #[test]
    fn parse_backward_modes() {
        assert_eq!("exact".parse::<BackwardMode>().unwrap(), BackwardMode::Exact);
        assert_eq!("jfree".parse::<BackwardMode>().unwrap(), BackwardMode::JacobianFree);
        let p: BackwardMode = "phantom(0.8, 3)".parse().unwrap();
        assert_eq!(p, BackwardMode::Phantom(PhantomConfig { tau: 0.8, steps: 3 }));
        assert_eq!(p.to_string().parse::<BackwardMode>().unwrap(), p);
        assert!("phantom(0,1)".parse::<BackwardMode>().is_err());
        assert!("adjoint".parse::<BackwardMode>().is_err());
    }

    #[test]
    fn jacobian_norm_of_scalar_map() {
        let m = ScalarAffineMap { a: -0.4, theta: 1.0 };
        let s = jacobian_norm_estimate(&m, &one(), 5).unwrap();
        assert!((s - 0.4).abs() < 1e-8);
    }

    #[test]
    fn phantom_retains_s_applications() {
        let m = ScalarAffineMap { a: 0.5, theta: 0.3 };
        let z = m.equilibrium();
        activation_meter::reset_peak();
        let base = activation_meter::live();
        phantom_grad(&m, &z, &one(), PhantomConfig::new(1.0, 4).unwrap()).unwrap();
        assert_eq!(activation_meter::peak() - base, 4);
    }
}
