//! Fixed-point and root solvers: Picard, Anderson, Broyden and Newton.
//!
//! Every solver records the residual of each iterate it evaluates and returns
//! the iterate with the smallest residual seen, which need not be the last.

pub mod linsolve;

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    /// Number of updates; the map is evaluated at most `max_steps + 1` times.
    pub max_steps: usize,
    pub tol_abs: f64,
    pub tol_rel: f64,
    /// Anderson history length.
    pub memory: usize,
    /// Anderson mixing parameter.
    pub damping: f64,
    /// Tikhonov weight on the Anderson Gram matrix, relative to its largest diagonal entry.
    pub regularization: f64,
    /// Number of rank-one pairs kept by Broyden.
    pub broyden_memory: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_steps: 32,
            tol_abs: 1e-10,
            tol_rel: 1e-10,
            memory: 5,
            damping: 1.0,
            regularization: 1e-8,
            broyden_memory: 32,
        }
    }
}

impl SolverConfig {
    pub fn with_steps(max_steps: usize) -> Self {
        SolverConfig {
            max_steps,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be at least 1".into()));
        }
        if !(self.tol_abs > 0.0 && self.tol_rel > 0.0) {
            return Err(Error::Config("solver tolerances must be positive".into()));
        }
        if self.memory == 0 || self.broyden_memory == 0 {
            return Err(Error::Config("solver memory must be at least 1".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Config(format!("damping {} outside (0, 1]", self.damping)));
        }
        if self.regularization < 0.0 {
            return Err(Error::Config("regularization must be nonnegative".into()));
        }
        Ok(())
    }

    fn converged(&self, abs: f64, rel: f64) -> bool {
        abs <= self.tol_abs || rel <= self.tol_rel
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub abs: f64,
    pub rel: f64,
}

/// Residual history of one solver run; row `t` belongs to iterate `z_t`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SolverTrace {
    pub rows: Vec<TraceRow>,
    pub converged: bool,
    /// Row index of the returned iterate.
    pub best: usize,
}

impl SolverTrace {
    /// Number of updates performed.
    pub fn steps(&self) -> usize {
        self.rows.len().saturating_sub(1)
    }

    pub fn best_row(&self) -> TraceRow {
        self.rows[self.best]
    }

    /// Smallest relative residual among the first `upto + 1` rows.
    pub fn best_rel_within(&self, upto: usize) -> f64 {
        self.rows
            .iter()
            .take(upto + 1)
            .map(|r| r.rel)
            .fold(f64::INFINITY, f64::min)
    }

    /// `step,abs_residual,rel_residual` lines with a header.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,abs_residual,rel_residual\n");
        for (i, r) in self.rows.iter().enumerate() {
            let _ = writeln!(s, "{i},{:e},{:e}", r.abs, r.rel);
        }
        s
    }

    fn push(&mut self, abs: f64, rel: f64) {
        if self.rows.is_empty() || abs < self.rows[self.best].abs {
            self.best = self.rows.len();
        }
        self.rows.push(TraceRow { abs, rel });
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolverKind {
    Picard,
    Anderson,
    Broyden,
}

impl std::str::FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "picard" => Ok(SolverKind::Picard),
            "anderson" => Ok(SolverKind::Anderson),
            "broyden" => Ok(SolverKind::Broyden),
            other => Err(Error::Config(format!("unknown solver '{other}'"))),
        }
    }
}

impl std::fmt::Display for SolverKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SolverKind::Picard => "picard",
            SolverKind::Anderson => "anderson",
            SolverKind::Broyden => "broyden",
        })
    }
}

pub fn solve(
    kind: SolverKind,
    g: impl Fn(&Tensor) -> Result<Tensor>,
    z0: &Tensor,
    cfg: &SolverConfig,
) -> Result<(Tensor, SolverTrace)> {
    match kind {
        SolverKind::Picard => picard(g, z0, cfg),
        SolverKind::Anderson => anderson(g, z0, cfg),
        SolverKind::Broyden => broyden(g, z0, cfg),
    }
}

fn relative(abs: f64, z: &[f64]) -> f64 {
    let zn = crate::tensor::norm(z);
    if abs == 0.0 {
        0.0
    } else if zn == 0.0 {
        f64::INFINITY
    } else {
        abs / zn
    }
}

/// Evaluates `G(z)` and returns it with `F = G(z) - z`.
fn residual(
    g: &impl Fn(&Tensor) -> Result<Tensor>,
    z: &Tensor,
    step: usize,
) -> Result<(Tensor, Vec<f64>)> {
    let gz = match g(z) {
        Ok(v) => v,
        Err(Error::NonFinite(_)) => return Err(Error::Divergence { step }),
        Err(e) => return Err(e),
    };
    gz.expect_shape(z.shape(), "fixed-point map output")?;
    if !gz.is_finite() {
        return Err(Error::Divergence { step });
    }
    let f = gz.data().iter().zip(z.data()).map(|(a, b)| a - b).collect();
    Ok((gz, f))
}

struct Best {
    z: Tensor,
    abs: f64,
}

impl Best {
    fn offer(slot: &mut Option<Best>, z: &Tensor, abs: f64) {
        if slot.as_ref().is_none_or(|b| abs < b.abs) {
            *slot = Some(Best { z: z.clone(), abs });
        }
    }
}

/// Plain iteration `z <- G(z)`.
pub fn picard(
    g: impl Fn(&Tensor) -> Result<Tensor>,
    z0: &Tensor,
    cfg: &SolverConfig,
) -> Result<(Tensor, SolverTrace)> {
    cfg.validate()?;
    let mut trace = SolverTrace::default();
    let mut best = None;
    let mut z = z0.clone();
    for t in 0..=cfg.max_steps {
        let (gz, f) = residual(&g, &z, t)?;
        let abs = crate::tensor::norm(&f);
        let rel = relative(abs, z.data());
        trace.push(abs, rel);
        Best::offer(&mut best, &z, abs);
        if cfg.converged(abs, rel) {
            trace.converged = true;
            break;
        }
        z = gz;
    }
    Ok((best.expect("at least one evaluation").z, trace))
}

/// Anderson acceleration with Tikhonov-regularized mixing weights.
pub fn anderson(
    g: impl Fn(&Tensor) -> Result<Tensor>,
    z0: &Tensor,
    cfg: &SolverConfig,
) -> Result<(Tensor, SolverTrace)> {
    cfg.validate()?;
    let n = z0.len();
    let mut trace = SolverTrace::default();
    let mut best = None;
    let mut z = z0.clone();
    let mut hist_z: Vec<Vec<f64>> = Vec::new();
    let mut hist_g: Vec<Vec<f64>> = Vec::new();
    let mut hist_f: Vec<Vec<f64>> = Vec::new();
    for t in 0..=cfg.max_steps {
        let (gz, f) = residual(&g, &z, t)?;
        let abs = crate::tensor::norm(&f);
        let rel = relative(abs, z.data());
        trace.push(abs, rel);
        Best::offer(&mut best, &z, abs);
        if cfg.converged(abs, rel) {
            trace.converged = true;
            break;
        }
        if t == cfg.max_steps {
            break;
        }
        if hist_f.len() == cfg.memory {
            hist_z.remove(0);
            hist_g.remove(0);
            hist_f.remove(0);
        }
        hist_z.push(z.to_vec());
        hist_g.push(gz.to_vec());
        hist_f.push(f);
        let alpha = mixing_weights(&hist_f, cfg.regularization);
        let beta = cfg.damping;
        let mut next = vec![0.0; n];
        for (k, a) in alpha.iter().enumerate() {
            for i in 0..n {
                next[i] += a * (beta * hist_g[k][i] + (1.0 - beta) * hist_z[k][i]);
            }
        }
        z = Tensor::new(z0.shape().to_vec(), next)?;
    }
    Ok((best.expect("at least one evaluation").z, trace))
}

/// Minimizes `||sum a_i f_i||^2 + lam ||a||^2` subject to `sum a_i = 1`.
fn mixing_weights(fs: &[Vec<f64>], lam: f64) -> Vec<f64> {
    let m = fs.len();
    let mut gram = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..=i {
            let v: f64 = fs[i].iter().zip(&fs[j]).map(|(a, b)| a * b).sum();
            gram[i * m + j] = v;
            gram[j * m + i] = v;
        }
    }
    let scale = (0..m).map(|i| gram[i * m + i]).fold(0.0, f64::max);
    for i in 0..m {
        gram[i * m + i] += lam * scale;
    }
    match linsolve::dense_solve(gram, vec![1.0; m]) {
        Some(y) if y.iter().sum::<f64>().abs() > 0.0 && y.iter().all(|v| v.is_finite()) => {
            let s: f64 = y.iter().sum();
            y.into_iter().map(|v| v / s).collect()
        }
        _ => {
            let mut a = vec![0.0; m];
            a[m - 1] = 1.0;
            a
        }
    }
}

/// Good Broyden on `F(z) = G(z) - z` with a limited-memory inverse Jacobian.
///
/// The inverse estimate starts at `-I`, so the first step is a Picard step.
/// A trial step that produces a non-finite value or grows the residual more
/// than tenfold is replaced by the damped Picard step `z + F(z) / 2`, and the
/// memory is cleared.
pub fn broyden(
    g: impl Fn(&Tensor) -> Result<Tensor>,
    z0: &Tensor,
    cfg: &SolverConfig,
) -> Result<(Tensor, SolverTrace)> {
    cfg.validate()?;
    let shape = z0.shape().to_vec();
    let n = z0.len();
    let mut trace = SolverTrace::default();
    let mut best = None;
    let mut z = z0.clone();
    let (_, mut f) = residual(&g, &z, 0)?;
    let mut abs = crate::tensor::norm(&f);
    let rel = relative(abs, z.data());
    trace.push(abs, rel);
    Best::offer(&mut best, &z, abs);
    if cfg.converged(abs, rel) {
        trace.converged = true;
        return Ok((z, trace));
    }
    let mut us: Vec<Vec<f64>> = Vec::new();
    let mut vs: Vec<Vec<f64>> = Vec::new();
    let dot = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| x * y).sum() };
    // H x = -x + sum u_i (v_i . x);  H^T x = -x + sum v_i (u_i . x)
    let h_apply = |us: &[Vec<f64>], vs: &[Vec<f64>], x: &[f64]| -> Vec<f64> {
        let mut out: Vec<f64> = x.iter().map(|v| -v).collect();
        for (u, v) in us.iter().zip(vs) {
            let c = dot(v, x);
            out.iter_mut().zip(u).for_each(|(o, ui)| *o += c * ui);
        }
        out
    };
    let ht_apply = |us: &[Vec<f64>], vs: &[Vec<f64>], x: &[f64]| -> Vec<f64> {
        let mut out: Vec<f64> = x.iter().map(|v| -v).collect();
        for (u, v) in us.iter().zip(vs) {
            let c = dot(u, x);
            out.iter_mut().zip(v).for_each(|(o, vi)| *o += c * vi);
        }
        out
    };
    for t in 1..=cfg.max_steps {
        let hf = h_apply(&us, &vs, &f);
        let dz: Vec<f64> = hf.iter().map(|v| -v).collect();
        let trial = Tensor::new(shape.clone(), z.data().iter().zip(&dz).map(|(a, b)| a + b).collect())?;
        let attempt = match residual(&g, &trial, t) {
            Ok((_, fnew)) => {
                let a = crate::tensor::norm(&fnew);
                (a.is_finite() && a <= 10.0 * abs).then_some((fnew, a))
            }
            Err(Error::Divergence { .. }) => None,
            Err(e) => return Err(e),
        };
        let (znew, fnew, anew) = match attempt {
            Some((fnew, anew)) => {
                let df: Vec<f64> = fnew.iter().zip(&f).map(|(a, b)| a - b).collect();
                let hdf = h_apply(&us, &vs, &df);
                let denom = dot(&dz, &hdf);
                if denom.abs() > 1e-300 && denom.is_finite() {
                    let u: Vec<f64> = dz.iter().zip(&hdf).map(|(a, b)| (a - b) / denom).collect();
                    let v = ht_apply(&us, &vs, &dz);
                    if us.len() == cfg.broyden_memory {
                        us.remove(0);
                        vs.remove(0);
                    }
                    us.push(u);
                    vs.push(v);
                }
                (trial, fnew, anew)
            }
            None => {
                log::debug!("broyden step {t} stalled; taking a damped Picard step");
                us.clear();
                vs.clear();
                let damped = Tensor::new(
                    shape.clone(),
                    z.data().iter().zip(&f).map(|(a, b)| a + 0.5 * b).collect(),
                )?;
                let (_, fnew) = residual(&g, &damped, t)?;
                let anew = crate::tensor::norm(&fnew);
                (damped, fnew, anew)
            }
        };
        debug_assert_eq!(fnew.len(), n);
        z = znew;
        f = fnew;
        abs = anew;
        let rel = relative(abs, z.data());
        trace.push(abs, rel);
        Best::offer(&mut best, &z, abs);
        if cfg.converged(abs, rel) {
            trace.converged = true;
            break;
        }
    }
    Ok((best.expect("at least one evaluation").z, trace))
}

#[derive(Clone, Debug, PartialEq)]
pub struct NewtonConfig {
    pub max_steps: usize,
    /// Stop once `||L(u) - f|| <= tol`.
    pub tol: f64,
    /// Relative tolerance of the inner matrix-free solve.
    pub inner_tol: f64,
    pub inner_max_iter: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig {
            max_steps: 50,
            tol: 1e-12,
            inner_tol: 1e-12,
            inner_max_iter: 500,
        }
    }
}

/// Newton's method for `L(u) = f`.
///
/// `deriv(u, v)` applies the Frechet derivative `L'(u)` to `v`; the linear
/// system is solved with matrix-free GMRES. Trace rows hold `||L(u_t) - f||`
/// and that value divided by `||f||`.
pub fn newton(
    op: impl Fn(&Tensor) -> Result<Tensor>,
    deriv: impl Fn(&Tensor, &Tensor) -> Result<Tensor>,
    f: &Tensor,
    u0: &Tensor,
    cfg: &NewtonConfig,
) -> Result<(Tensor, SolverTrace)> {
    if cfg.max_steps == 0 || !(cfg.tol > 0.0) {
        return Err(Error::Config("newton needs max_steps >= 1 and tol > 0".into()));
    }
    let fnorm = f.norm();
    let rel = |a: f64| if fnorm == 0.0 { a } else { a / fnorm };
    let mut trace = SolverTrace::default();
    let mut best = None;
    let mut u = u0.clone();
    for t in 0..=cfg.max_steps {
        let r = op(&u)?.sub(f)?;
        let abs = r.norm();
        if !abs.is_finite() {
            return Err(Error::Divergence { step: t });
        }
        trace.push(abs, rel(abs));
        Best::offer(&mut best, &u, abs);
        if abs <= cfg.tol {
            trace.converged = true;
            break;
        }
        if t == cfg.max_steps {
            break;
        }
        let shape = u.shape().to_vec();
        let apply = |v: &[f64]| -> Result<Vec<f64>> {
            Ok(deriv(&u, &Tensor::new(shape.clone(), v.to_vec())?)?.into_vec())
        };
        let restart = cfg.inner_max_iter.min(r.len());
        let step = match linsolve::gmres(apply, r.data(), None, cfg.inner_tol, cfg.inner_max_iter, restart) {
            Ok(s) => s,
            Err(Error::NotConverged {
                iterations,
                residual,
            }) => {
                return Err(Error::SingularDerivative {
                    iterations,
                    residual,
                })
            }
            Err(e) => return Err(e),
        };
        u = u.sub(&Tensor::new(shape, step.x)?)?;
    }
    Ok((best.expect("at least one evaluation").z, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scalar(x: f64) -> Tensor {
        Tensor::scalar(x)
    }

    fn map1(f: impl Fn(f64) -> f64) -> impl Fn(&Tensor) -> Result<Tensor> {
        move |z: &Tensor| Ok(z.map(&f))
    }

    #[test]
    fn identity_converges_immediately() {
        let z0 = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        for kind in [SolverKind::Picard, SolverKind::Anderson, SolverKind::Broyden] {
            let (z, tr) = solve(kind, |z: &Tensor| Ok(z.clone()), &z0, &SolverConfig::default()).unwrap();
            assert_eq!(z, z0);
            assert_eq!(tr.steps(), 0);
            assert!(tr.converged);
        }
    }

    #[test]
    fn picard_halves_error_on_affine_map() {
        let cfg = SolverConfig {
            max_steps: 60,
            tol_abs: 1e-14,
            tol_rel: 1e-14,
            ..SolverConfig::default()
        };
        let (z, tr) = picard(map1(|z| 0.5 * z + 1.0), &scalar(0.0), &cfg).unwrap();
        assert!((z.data()[0] - 2.0).abs() < 1e-13);
        for w in tr.rows.windows(2) {
            assert!((w[1].abs / w[0].abs - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn cosine_fixed_point() {
        let dottie = 0.739_085_133_215_160_6;
        let cfg = SolverConfig {
            max_steps: 200,
            tol_abs: 1e-13,
            tol_rel: 1e-13,
            ..SolverConfig::default()
        };
        for kind in [SolverKind::Picard, SolverKind::Anderson, SolverKind::Broyden] {
            let (z, tr) = solve(kind, map1(f64::cos), &scalar(0.0), &cfg).unwrap();
            assert!((z.data()[0] - dottie).abs() < 1e-9, "{kind}");
            assert!(tr.converged);
        }
    }

    #[test]
    fn nan_is_reported_as_divergence() {
        let r = picard(map1(|z| z + f64::NAN), &scalar(1.0), &SolverConfig::default());
        assert!(matches!(r, Err(Error::Divergence { step: 0 })));
    }

    fn affine(n: usize, seed: u64, radius: f64) -> (Vec<f64>, Vec<f64>) {
        crate::testing::symmetric_contraction(n, seed, radius)
    }

    fn affine_map(a: Vec<f64>, b: Vec<f64>) -> impl Fn(&Tensor) -> Result<Tensor> {
        move |z: &Tensor| {
            let n = b.len();
            let zd = z.data();
            let out = (0..n)
                .map(|i| (0..n).map(|j| a[i * n + j] * zd[j]).sum::<f64>() + b[i])
                .collect();
            Tensor::new(vec![n], out)
        }
    }

    #[test]
    fn broyden_solves_linear_system_within_two_n_steps() {
        let (a, b) = affine(8, 3, 0.9);
        let cfg = SolverConfig {
            max_steps: 16,
            ..SolverConfig::default()
        };
        let (_, tr) = broyden(affine_map(a, b), &Tensor::zeros(&[8]), &cfg).unwrap();
        assert!(tr.converged, "{:?}", tr.rows.last());
        assert!(tr.best_row().abs <= 1e-10);
    }

    #[test]
    fn anderson_needs_half_the_picard_steps() {
        let (a, b) = affine(16, 7, 0.9);
        let cfg = SolverConfig {
            max_steps: 1000,
            tol_abs: 1e-10,
            tol_rel: 1e-300,
            ..SolverConfig::default()
        };
        let (_, p) = picard(affine_map(a.clone(), b.clone()), &Tensor::zeros(&[16]), &cfg).unwrap();
        let (_, q) = anderson(affine_map(a, b), &Tensor::zeros(&[16]), &cfg).unwrap();
        assert!(p.converged && q.converged);
        assert!(2 * q.steps() <= p.steps(), "anderson {} picard {}", q.steps(), p.steps());
    }

    #[test]
    fn newton_is_exact_on_linear_maps() {
        let (a, _) = affine(6, 1, 0.5);
        let apply = move |v: &Tensor| -> Result<Tensor> {
            let d = v.data();
            Tensor::new(vec![6], (0..6).map(|i| d[i] + (0..6).map(|j| a[i * 6 + j] * d[j]).sum::<f64>()).collect())
        };
        let f = Tensor::from_fn(&[6], |i| i as f64 - 2.0);
        let (u, tr) = newton(&apply, |_, v| apply(v), &f, &Tensor::zeros(&[6]), &NewtonConfig::default()).unwrap();
        assert_eq!(tr.steps(), 1);
        assert!(apply(&u).unwrap().sub(&f).unwrap().norm() < 1e-11);
    }

    #[test]
    fn newton_squares_the_error_on_scalar_cubic() {
        let op = |u: &Tensor| Ok(u.map(|x| x + x * x * x));
        let d = |u: &Tensor, v: &Tensor| u.zip_map(v, |x, y| (1.0 + 3.0 * x * x) * y);
        let cfg = NewtonConfig {
            tol: 1e-15,
            ..NewtonConfig::default()
        };
        let (u, tr) = newton(op, d, &scalar(2.0), &scalar(0.5), &cfg).unwrap();
        assert!((u.data()[0] - 1.0).abs() < 1e-15);
        // r_{t+1} / r_t^2 settles near L''/(2 L'^2) = 6 / 32 at the root.
        let r: Vec<f64> = tr.rows.iter().map(|r| r.abs).collect();
        for t in 1..r.len() - 1 {
            if r[t] > 1e-7 {
                assert!(r[t + 1] / (r[t] * r[t]) < 1.0);
            }
        }
        assert!(tr.steps() <= 6);
    }

    #[test]
    fn trace_csv_layout() {
        let (_, tr) = picard(map1(|z| 0.5 * z), &scalar(1.0), &SolverConfig::with_steps(2)).unwrap();
        let csv = tr.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "step,abs_residual,rel_residual");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("0,5e-1,5e-1"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]

        #[test]
        fn picard_residuals_decrease_on_contractions(seed in 0u64..10_000) {
            let (a, b) = affine(10, seed, 0.8);
            let cfg = SolverConfig { max_steps: 40, tol_abs: 1e-300, tol_rel: 1e-300, ..SolverConfig::default() };
            let (_, tr) = picard(affine_map(a, b), &Tensor::zeros(&[10]), &cfg).unwrap();
            for w in tr.rows.windows(2) {
                prop_assert!(w[1].abs <= w[0].abs);
            }
        }

        #[test]
        fn anderson_best_residual_never_worse_than_picard(seed in 0u64..10_000) {
            let (a, b) = affine(16, seed, 0.9);
            let cfg = SolverConfig { max_steps: 30, tol_abs: 1e-300, tol_rel: 1e-300, ..SolverConfig::default() };
            let (_, p) = picard(affine_map(a.clone(), b.clone()), &Tensor::zeros(&[16]), &cfg).unwrap();
            let (_, q) = anderson(affine_map(a, b), &Tensor::zeros(&[16]), &cfg).unwrap();
            prop_assert!(q.best_row().abs <= p.best_row().abs);
        }

        #[test]
        fn solvers_are_deterministic(seed in 0u64..10_000) {
            let (a, b) = affine(12, seed, 0.9);
            let cfg = SolverConfig::default();
            for kind in [SolverKind::Picard, SolverKind::Anderson, SolverKind::Broyden] {
                let (z1, t1) = solve(kind, affine_map(a.clone(), b.clone()), &Tensor::zeros(&[12]), &cfg).unwrap();
                let (z2, t2) = solve(kind, affine_map(a.clone(), b.clone()), &Tensor::zeros(&[12]), &cfg).unwrap();
                prop_assert_eq!(z1.to_vec(), z2.to_vec());
                prop_assert_eq!(t1, t2);
            }
        }
    }
}
