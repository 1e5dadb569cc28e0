//! Central finite-difference checks of analytic gradients.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, NodeId};
use crate::error::Result;
use crate::fixedpoint::{SolverConfig, SolverKind};
use crate::fno::{ArchConfig, ArchKind, DeqSettings, Model, Normalizer};
use crate::implicit_grad::{AdjointConfig, BackwardMode};
use crate::tensor::Tensor;

/// Relative error `||num - ana|| / ||num||` of one gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub rel_err: f64,
}

fn rel(num: &[f64], ana: &[f64]) -> f64 {
    let d: f64 = num.iter().zip(ana).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let s = crate::tensor::norm(num).max(crate::tensor::norm(ana));
    if s == 0.0 {
        0.0
    } else {
        d / s
    }
}

fn perturbed(t: &Tensor, e: usize, h: f64) -> Tensor {
    let mut d = t.to_vec();
    d[e] += h;
    Tensor::new(t.shape().to_vec(), d).expect("same shape")
}

/// Compares reverse-mode gradients of a scalar graph with central differences
/// of step `h` for every leaf entry; one [`Check`] per leaf.
pub fn check_graph(
    name: &str,
    leaves: &[Tensor],
    h: f64,
    build: &dyn Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
) -> Result<Vec<Check>> {
    let mut g = Graph::new();
    let ids = leaves
        .iter()
        .map(|t| g.input(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let loss = build(&mut g, &ids)?;
    let grads = g.backward(loss)?;
    let eval = |ls: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let ids = ls.iter().map(|t| g.input(t.clone())).collect::<Result<Vec<_>>>()?;
        let l = build(&mut g, &ids)?;
        Ok(g.value(l)?.data()[0])
    };
    let mut out = Vec::new();
    for (li, leaf) in leaves.iter().enumerate() {
        let mut num = Vec::with_capacity(leaf.len());
        for e in 0..leaf.len() {
            let mut plus = leaves.to_vec();
            plus[li] = perturbed(leaf, e, h);
            let mut minus = leaves.to_vec();
            minus[li] = perturbed(leaf, e, -h);
            num.push((eval(&plus)? - eval(&minus)?) / (2.0 * h));
        }
        out.push(Check {
            name: format!("{name}[{li}]"),
            rel_err: rel(&num, grads.of(ids[li]).data()),
        });
    }
    Ok(out)
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Finite-difference checks of every graph operation on small random inputs.
pub fn op_checks(seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-6;
    let mut all = Vec::new();
    let t3 = random(&mut rng, &[4, 4, 3]);
    let t2 = random(&mut rng, &[4, 4, 2]);
    let target2 = random(&mut rng, &[4, 4, 2]);
    let w = random(&mut rng, &[3, 2]);
    let b = random(&mut rng, &[2]);
    all.extend(check_graph("pointwise_linear", &[t3.clone(), w, b], h, &|g, x| {
        let l = g.linear(x[0], x[1], x[2])?;
        g.mse(l, &target2)
    })?);
    let other = random(&mut rng, &[4, 4, 2]);
    all.extend(check_graph("add", &[t2.clone(), other], h, &|g, x| {
        let a = g.add(x[0], x[1])?;
        g.mse(a, &target2)
    })?);
    all.extend(check_graph("scale", &[t2.clone()], h, &|g, x| {
        let a = g.scale(x[0], -1.3)?;
        g.mse(a, &target2)
    })?);
    all.extend(check_graph("gelu", &[t2.clone().scale(2.5)], h, &|g, x| {
        let a = g.gelu(x[0])?;
        g.mse(a, &target2)
    })?);
    all.extend(check_graph("fft2+ifft2", &[t2.clone()], h, &|g, x| {
        let s = g.fft2(x[0])?;
        let r = g.ifft2(s)?;
        let q = g.gelu(r)?;
        g.mse(q, &target2)
    })?);
    let re = random(&mut rng, &[3, 2, 2, 2]);
    let im = random(&mut rng, &[3, 2, 2, 2]);
    all.extend(check_graph("mode_mul", &[t2.clone(), re, im], h, &|g, x| {
        let s = g.fft2(x[0])?;
        let m = g.mode_mul(s, x[1], x[2], 1)?;
        let r = g.ifft2(m)?;
        g.mse(r, &target2)
    })?);
    all.extend(check_graph("mse", &[t2.clone()], h, &|g, x| g.mse(x[0], &target2))?);
    all.extend(check_graph("relative_l2", &[t2.clone()], h, &|g, x| g.rel_l2(x[0], &target2))?);
    all.extend(check_graph("sum", &[t2], h, &|g, x| {
        let a = g.gelu(x[0])?;
        g.sum(a)
    })?);
    Ok(all)
}

#[derive(Clone, Debug)]
pub struct ModelCheckOptions {
    pub kind: ArchKind,
    pub backward: BackwardMode,
    pub seed: u64,
    pub grid: usize,
    pub dv: usize,
    pub modes: usize,
    pub step: f64,
    /// Spectral-normalization target applied to the seeded model.
    pub rho: f64,
}

impl Default for ModelCheckOptions {
    fn default() -> Self {
        ModelCheckOptions {
            kind: ArchKind::FnoDeq,
            backward: BackwardMode::Exact,
            seed: 0,
            grid: 8,
            dv: 4,
            modes: 3,
            step: 1e-5,
            rho: 0.6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ModelCheck {
    pub per_param: Vec<Check>,
    pub parameters: usize,
}

impl ModelCheck {
    pub fn max_rel_err(&self) -> f64 {
        self.per_param.iter().map(|c| c.rel_err).fold(0.0, f64::max)
    }
}

/// Settings used for both the analytic and the finite-difference passes of
/// equilibrium models: tight enough that solver error is far below `h`.
pub fn tight_deq_settings(backward: BackwardMode) -> DeqSettings {
    DeqSettings {
        solver: SolverKind::Anderson,
        solver_cfg: SolverConfig {
            max_steps: 400,
            tol_abs: 1e-14,
            tol_rel: 1e-15,
            ..SolverConfig::default()
        },
        backward,
        adjoint: AdjointConfig {
            tol: 1e-12,
            ..AdjointConfig::default()
        },
    }
}

/// End-to-end gradient check of a seeded model, with coordinate channels and
/// a fixed normalizer, using the normalized MSE loss on random data.
///
/// Each parameter tensor is scored by
/// `||num - ana|| / max(||num||, ||ana||, 1e-5 ||num_all||)`, where `num_all`
/// is the full numerical gradient; the floor keeps tensors with vanishing
/// gradients from being scored on rounding noise alone. Tensors whose analytic
/// gradient is exactly zero (parameters that cannot influence the output, such
/// as the initial-state projection of an equilibrium model) are scored by
/// `||num|| / ||num_all||`.
pub fn check_model(opts: &ModelCheckOptions) -> Result<ModelCheck> {
    let mut cfg = ArchConfig::new(opts.kind, 1, 1, opts.dv, opts.modes);
    cfg.grid = true;
    if opts.kind == ArchKind::FnoWt {
        cfg.unroll = 3;
    }
    let mut model = Model::init(cfg, opts.seed)?.spectrally_normalized(opts.rho)?;
    model.norm = Normalizer {
        in_mean: vec![0.3],
        in_std: vec![1.7],
        out_mean: vec![-0.2],
        out_std: vec![0.6],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x9e37_79b9_7f4a_7c15);
    let f = random(&mut rng, &[opts.grid, opts.grid, 1]);
    let target = random(&mut rng, &[opts.grid, opts.grid, 1]);
    let deq = tight_deq_settings(opts.backward);
    let analytic = model.loss_and_grad(&f, &target, &deq)?;
    let scaled_target = model.norm.target(&target)?;
    let loss_at = |m: &Model| -> Result<f64> {
        let out = m.forward(&f, &deq)?.output;
        crate::ops::mse(&m.norm.target(&out)?, &scaled_target)
    };
    let h = opts.step;
    let mut numeric: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (name, t) in &model.params {
        let mut num = Vec::with_capacity(t.len());
        for e in 0..t.len() {
            let mut m = model.clone();
            m.params.insert(name.clone(), perturbed(t, e, h));
            let lp = loss_at(&m)?;
            m.params.insert(name.clone(), perturbed(t, e, -h));
            let lm = loss_at(&m)?;
            num.push((lp - lm) / (2.0 * h));
        }
        numeric.insert(name.clone(), num);
    }
    let global = numeric
        .values()
        .flat_map(|v| v.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    let per_param = numeric
        .iter()
        .map(|(name, num)| {
            let ana = analytic.grads[name].data();
            let rel_err = if ana.iter().all(|x| *x == 0.0) {
                if global == 0.0 {
                    0.0
                } else {
                    crate::tensor::norm(num) / global
                }
            } else {
                let d: f64 = num.iter().zip(ana).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                let scale = crate::tensor::norm(num)
                    .max(crate::tensor::norm(ana))
                    .max(1e-5 * global);
                d / scale
            };
            Check {
                name: name.clone(),
                rel_err,
            }
        })
        .collect();
    Ok(ModelCheck {
        per_param,
        parameters: model.parameter_count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_matches_finite_differences() {
        for c in op_checks(1).unwrap() {
            assert!(c.rel_err < 1e-5, "{}: {}", c.name, c.rel_err);
        }
    }

    #[test]
    fn plain_fno_matches_finite_differences() {
        let r = check_model(&ModelCheckOptions {
            kind: ArchKind::Fno,
            ..ModelCheckOptions::default()
        })
        .unwrap();
        assert!(r.max_rel_err() < 1e-4, "{:?}", r.per_param);
    }

    #[test]
    fn jacobian_free_gradient_is_biased() {
        let r = check_model(&ModelCheckOptions {
            backward: BackwardMode::JacobianFree,
            rho: 0.9,
            ..ModelCheckOptions::default()
        })
        .unwrap();
        assert!(r.max_rel_err() > 1e-4);
    }
}
