//! Reverse-mode differentiation over the closed op set used by the operators.
//!
//! A [`Graph`] is an append-only tape. Nodes are created in topological order,
//! so a reverse sweep over node indices visits every node after all of its
//! consumers. Complex nodes carry the adjoint `dL/dRe + i dL/dIm`.

use std::cell::Cell;
use std::collections::BTreeMap;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::ops;
use crate::spectral;
use crate::tensor::{ComplexTensor, Tensor};

thread_local! {
    static LIVE: Cell<usize> = const { Cell::new(0) };
    static PEAK: Cell<usize> = const { Cell::new(0) };
}

/// Per-thread count of scalar values held as saved activations by live graphs.
///
/// Leaves (parameters, inputs, constants) are not counted; every other node
/// counts its stored output (two per complex entry).
pub mod activation_meter {
    use super::{LIVE, PEAK};

    pub fn live() -> usize {
        LIVE.with(|c| c.get())
    }

    pub fn peak() -> usize {
        PEAK.with(|c| c.get())
    }

    /// Resets the peak to the current live count.
    pub fn reset_peak() {
        PEAK.with(|p| p.set(live()));
    }

    pub(super) fn retain(n: usize) {
        let now = LIVE.with(|c| {
            let v = c.get() + n;
            c.set(v);
            v
        });
        PEAK.with(|p| p.set(p.get().max(now)));
    }

    pub(super) fn release(n: usize) {
        LIVE.with(|c| c.set(c.get().saturating_sub(n)));
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Value {
    Real(Tensor),
    Complex(ComplexTensor),
}

impl Value {
    fn scalars(&self) -> usize {
        match self {
            Value::Real(t) => t.len(),
            Value::Complex(t) => 2 * t.len(),
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Param,
    Input,
    Constant,
    Linear { v: NodeId, w: NodeId, b: NodeId },
    Add(NodeId, NodeId),
    Scale(NodeId, f64),
    Gelu(NodeId),
    Fft2(NodeId),
    ModeMul { x: NodeId, re: NodeId, im: NodeId, k: usize },
    Ifft2(NodeId),
    Mse { a: NodeId, target: Tensor },
    RelL2 { a: NodeId, target: Tensor },
    Sum(NodeId),
}

struct Node {
    op: Op,
    value: Value,
    requires_grad: bool,
}

/// Append-only computation tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<String, NodeId>,
    retained: usize,
}

impl Drop for Graph {
    fn drop(&mut self) {
        activation_meter::release(self.retained);
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Scalars currently held as activations by this graph.
    pub fn retained(&self) -> usize {
        self.retained
    }

    fn push(&mut self, op: Op, value: Value, requires_grad: bool) -> NodeId {
        if !matches!(op, Op::Param | Op::Input | Op::Constant) {
            let n = value.scalars();
            self.retained += n;
            activation_meter::retain(n);
        }
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn real(&self, id: NodeId) -> Result<&Tensor> {
        match &self.node(id)?.value {
            Value::Real(t) => Ok(t),
            Value::Complex(_) => Err(Error::Contract(format!("node {} is complex", id.0))),
        }
    }

    fn complex(&self, id: NodeId) -> Result<&ComplexTensor> {
        match &self.node(id)?.value {
            Value::Complex(t) => Ok(t),
            Value::Real(_) => Err(Error::Contract(format!("node {} is real", id.0))),
        }
    }

    fn node(&self, id: NodeId) -> Result<&Node> {
        self.nodes
            .get(id.0)
            .ok_or_else(|| Error::Contract(format!("unknown node {}", id.0)))
    }

    fn grad_flag(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|i| self.nodes[i.0].requires_grad)
    }

    /// Value of a real node.
    pub fn value(&self, id: NodeId) -> Result<&Tensor> {
        self.real(id)
    }

    /// Value of a complex node.
    pub fn complex_value(&self, id: NodeId) -> Result<&ComplexTensor> {
        self.complex(id)
    }

    /// Named trainable leaf. Registering the same name twice returns the first node.
    pub fn param(&mut self, name: &str, t: Tensor) -> Result<NodeId> {
        if let Some(&id) = self.params.get(name) {
            let existing = self.real(id)?;
            existing.expect_shape(t.shape(), "parameter re-registration")?;
            return Ok(id);
        }
        t.ensure_finite_ref("parameter")?;
        let id = self.push(Op::Param, Value::Real(t), true);
        self.params.insert(name.to_string(), id);
        Ok(id)
    }

    /// Unnamed leaf that receives a gradient.
    pub fn input(&mut self, t: Tensor) -> Result<NodeId> {
        t.ensure_finite_ref("input")?;
        Ok(self.push(Op::Input, Value::Real(t), true))
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, t: Tensor) -> Result<NodeId> {
        t.ensure_finite_ref("constant")?;
        Ok(self.push(Op::Constant, Value::Real(t), false))
    }

    pub fn param_id(&self, name: &str) -> Option<NodeId> {
        self.params.get(name).copied()
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|s| s.as_str())
    }

    pub fn linear(&mut self, v: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let out = ops::pointwise_linear(self.real(v)?, self.real(w)?, self.real(b)?)?
            .ensure_finite("pointwise_linear")?;
        let rg = self.grad_flag(&[v, w, b]);
        Ok(self.push(Op::Linear { v, w, b }, Value::Real(out), rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = match (&self.node(a)?.value, &self.node(b)?.value) {
            (Value::Real(x), Value::Real(y)) => Value::Real(x.add(y)?.ensure_finite("add")?),
            (Value::Complex(x), Value::Complex(y)) => {
                if x.shape() != y.shape() {
                    return Err(Error::shape("add", x.shape(), y.shape()));
                }
                let d = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
                Value::Complex(ComplexTensor::new(x.shape().to_vec(), d)?)
            }
            _ => return Err(Error::Contract("add of real and complex nodes".into())),
        };
        let rg = self.grad_flag(&[a, b]);
        Ok(self.push(Op::Add(a, b), out, rg))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> Result<NodeId> {
        let out = self.real(a)?.scale(s).ensure_finite("scale")?;
        let rg = self.grad_flag(&[a]);
        Ok(self.push(Op::Scale(a, s), Value::Real(out), rg))
    }

    pub fn gelu(&mut self, a: NodeId) -> Result<NodeId> {
        let out = ops::gelu(self.real(a)?);
        let rg = self.grad_flag(&[a]);
        Ok(self.push(Op::Gelu(a), Value::Real(out), rg))
    }

    /// Unitary forward transform of a real `[nx, ny, c]` field.
    pub fn fft2(&mut self, a: NodeId) -> Result<NodeId> {
        let out = spectral::fft2(self.real(a)?)?;
        let rg = self.grad_flag(&[a]);
        Ok(self.push(Op::Fft2(a), Value::Complex(out), rg))
    }

    /// Real part of the unitary inverse transform.
    pub fn ifft2(&mut self, a: NodeId) -> Result<NodeId> {
        let out = spectral::ifft2_real_part(self.complex(a)?)?.ensure_finite("ifft2")?;
        let rg = self.grad_flag(&[a]);
        Ok(self.push(Op::Ifft2(a), Value::Real(out), rg))
    }

    /// Per-mode complex channel mixing on the retained square `|kx|, |ky| <= k`.
    ///
    /// `re` and `im` have shape `[2k+1, k+1, cin, cout]`; see [`mode_mul`].
    pub fn mode_mul(&mut self, x: NodeId, re: NodeId, im: NodeId, k: usize) -> Result<NodeId> {
        let out = mode_mul(self.complex(x)?, self.real(re)?, self.real(im)?, k)?;
        let rg = self.grad_flag(&[x, re, im]);
        Ok(self.push(Op::ModeMul { x, re, im, k }, Value::Complex(out), rg))
    }

    /// Mean squared error against a fixed target.
    pub fn mse(&mut self, a: NodeId, target: &Tensor) -> Result<NodeId> {
        let out = ops::mse(self.real(a)?, target)?;
        let rg = self.grad_flag(&[a]);
        Ok(self.push(
            Op::Mse {
                a,
                target: target.clone(),
            },
            Value::Real(Tensor::scalar(out)),
            rg,
        ))
    }

    /// Relative L2 error against a fixed target.
    pub fn rel_l2(&mut self, a: NodeId, target: &Tensor) -> Result<NodeId> {
        let out = ops::relative_l2(self.real(a)?, target)?;
        let rg = self.grad_flag(&[a]);
        Ok(self.push(
            Op::RelL2 {
                a,
                target: target.clone(),
            },
            Value::Real(Tensor::scalar(out)),
            rg,
        ))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let out = self.real(a)?.sum();
        let rg = self.grad_flag(&[a]);
        Ok(self.push(Op::Sum(a), Value::Real(Tensor::scalar(out)), rg))
    }

    /// Gradient of a scalar loss with respect to every differentiable node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let v = self.real(loss)?;
        if v.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                v.shape()
            )));
        }
        self.vjp(loss, &Tensor::new(v.shape().to_vec(), vec![1.0])?)
    }

    /// Vector-Jacobian product: pulls `seed` (shaped like `output`) back to every node.
    pub fn vjp(&self, output: NodeId, seed: &Tensor) -> Result<Gradients> {
        self.real(output)?.expect_shape(seed.shape(), "vjp seed")?;
        let mut grads: Vec<Option<Adjoint>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Adjoint::Real(seed.to_vec()));
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.pull(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        let out = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.map(|g| match (g, &self.nodes[i].value) {
                    (Adjoint::Real(d), Value::Real(t)) => {
                        Tensor::new(t.shape().to_vec(), d).map(GradValue::Real)
                    }
                    (Adjoint::Complex(d), Value::Complex(t)) => {
                        ComplexTensor::new(t.shape().to_vec(), d).map(GradValue::Complex)
                    }
                    _ => Err(Error::Contract("adjoint kind mismatch".into())),
                })
                .transpose()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Gradients {
            grads: out,
            params: self.params.clone(),
            shapes: self
                .nodes
                .iter()
                .map(|n| match &n.value {
                    Value::Real(t) => t.shape().to_vec(),
                    Value::Complex(t) => t.shape().to_vec(),
                })
                .collect(),
        })
    }

    fn pull(&self, node: &Node, g: &Adjoint, grads: &mut [Option<Adjoint>]) -> Result<()> {
        let rg = |id: NodeId| self.nodes[id.0].requires_grad;
        match &node.op {
            Op::Param | Op::Input | Op::Constant => {}
            Op::Linear { v, w, b } => {
                let g = g.real();
                let (vt, wt) = (self.real(*v)?, self.real(*w)?);
                let (cin, cout) = (wt.shape()[0], wt.shape()[1]);
                let points = vt.len() / cin;
                if rg(*v) {
                    let mut dv = vec![0.0; vt.len()];
                    let wd = wt.data();
                    for p in 0..points {
                        let gp = &g[p * cout..(p + 1) * cout];
                        for i in 0..cin {
                            let wrow = &wd[i * cout..(i + 1) * cout];
                            dv[p * cin + i] = wrow.iter().zip(gp).map(|(a, b)| a * b).sum();
                        }
                    }
                    accumulate_real(grads, *v, dv);
                }
                if rg(*w) {
                    let mut dw = vec![0.0; cin * cout];
                    let vd = vt.data();
                    for p in 0..points {
                        let gp = &g[p * cout..(p + 1) * cout];
                        for i in 0..cin {
                            let x = vd[p * cin + i];
                            for (d, &go) in dw[i * cout..(i + 1) * cout].iter_mut().zip(gp) {
                                *d += x * go;
                            }
                        }
                    }
                    accumulate_real(grads, *w, dw);
                }
                if rg(*b) {
                    let mut db = vec![0.0; cout];
                    for gp in g.chunks_exact(cout) {
                        for (d, &go) in db.iter_mut().zip(gp) {
                            *d += go;
                        }
                    }
                    accumulate_real(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                for id in [*a, *b] {
                    if rg(id) {
                        match g {
                            Adjoint::Real(d) => accumulate_real(grads, id, d.clone()),
                            Adjoint::Complex(d) => accumulate_complex(grads, id, d.clone()),
                        }
                    }
                }
            }
            Op::Scale(a, s) => {
                if rg(*a) {
                    accumulate_real(grads, *a, g.real().iter().map(|x| x * s).collect());
                }
            }
            Op::Gelu(a) => {
                if rg(*a) {
                    let x = self.real(*a)?.data();
                    let d = g
                        .real()
                        .iter()
                        .zip(x)
                        .map(|(gi, &xi)| gi * ops::gelu_derivative(xi))
                        .collect();
                    accumulate_real(grads, *a, d);
                }
            }
            Op::Fft2(a) => {
                if rg(*a) {
                    let shape = self.real(*a)?.shape().to_vec();
                    let gc = ComplexTensor::new(shape, g.complex().to_vec())?;
                    let back = spectral::ifft2_complex(&gc)?;
                    accumulate_real(grads, *a, back.data().iter().map(|z| z.re).collect());
                }
            }
            Op::Ifft2(a) => {
                if rg(*a) {
                    let shape = self.complex(*a)?.shape().to_vec();
                    let gr = Tensor::new(shape, g.real().to_vec())?;
                    accumulate_complex(grads, *a, spectral::fft2(&gr)?.into_data());
                }
            }
            Op::ModeMul { x, re, im, k } => {
                let gc = ComplexTensor::new(self.complex(*x)?.shape().to_vec(), g.complex().to_vec())?;
                let (dx, dre, dim) = mode_mul_adjoint(
                    &gc,
                    self.complex(*x)?,
                    self.real(*re)?,
                    self.real(*im)?,
                    *k,
                    rg(*x),
                    rg(*re) || rg(*im),
                )?;
                if let Some(dx) = dx {
                    accumulate_complex(grads, *x, dx);
                }
                if let Some((dre, dim)) = dre.zip(dim) {
                    if rg(*re) {
                        accumulate_real(grads, *re, dre);
                    }
                    if rg(*im) {
                        accumulate_real(grads, *im, dim);
                    }
                }
            }
            Op::Mse { a, target } => {
                if rg(*a) {
                    let s = g.real()[0];
                    let av = self.real(*a)?;
                    let n = av.len() as f64;
                    let d = av
                        .data()
                        .iter()
                        .zip(target.data())
                        .map(|(p, t)| s * 2.0 * (p - t) / n)
                        .collect();
                    accumulate_real(grads, *a, d);
                }
            }
            Op::RelL2 { a, target } => {
                if rg(*a) {
                    let s = g.real()[0];
                    let av = self.real(*a)?;
                    let diff = av.sub(target)?;
                    let dn = diff.norm();
                    let tn = target.norm();
                    let d = if dn == 0.0 {
                        vec![0.0; av.len()]
                    } else {
                        diff.data().iter().map(|x| s * x / (dn * tn)).collect()
                    };
                    accumulate_real(grads, *a, d);
                }
            }
            Op::Sum(a) => {
                if rg(*a) {
                    let n = self.real(*a)?.len();
                    accumulate_real(grads, *a, vec![g.real()[0]; n]);
                }
            }
        }
        Ok(())
    }
}

trait EnsureFiniteRef {
    fn ensure_finite_ref(&self, context: &'static str) -> Result<()>;
}

impl EnsureFiniteRef for Tensor {
    fn ensure_finite_ref(&self, context: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(context))
        }
    }
}

#[derive(Clone, Debug)]
enum Adjoint {
    Real(Vec<f64>),
    Complex(Vec<Complex64>),
}

impl Adjoint {
    fn real(&self) -> &[f64] {
        match self {
            Adjoint::Real(d) => d,
            Adjoint::Complex(_) => panic!("real adjoint expected"),
        }
    }

    fn complex(&self) -> &[Complex64] {
        match self {
            Adjoint::Complex(d) => d,
            Adjoint::Real(_) => panic!("complex adjoint expected"),
        }
    }
}

fn accumulate_real(grads: &mut [Option<Adjoint>], id: NodeId, d: Vec<f64>) {
    match &mut grads[id.0] {
        Some(Adjoint::Real(acc)) => acc.iter_mut().zip(&d).for_each(|(a, b)| *a += b),
        slot => *slot = Some(Adjoint::Real(d)),
    }
}

fn accumulate_complex(grads: &mut [Option<Adjoint>], id: NodeId, d: Vec<Complex64>) {
    match &mut grads[id.0] {
        Some(Adjoint::Complex(acc)) => acc.iter_mut().zip(&d).for_each(|(a, b)| *a += b),
        slot => *slot = Some(Adjoint::Complex(d)),
    }
}

#[derive(Clone, Debug)]
pub enum GradValue {
    Real(Tensor),
    Complex(ComplexTensor),
}

/// Result of a reverse sweep.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<GradValue>>,
    params: BTreeMap<String, NodeId>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of a real node; zeros when the node was not reached.
    pub fn of(&self, id: NodeId) -> Tensor {
        match self.grads.get(id.0) {
            Some(Some(GradValue::Real(t))) => t.clone(),
            _ => Tensor::zeros(&self.shapes[id.0]),
        }
    }

    /// Gradient of a named parameter, if it exists in the graph.
    pub fn param(&self, name: &str) -> Option<Tensor> {
        self.params.get(name).map(|&id| self.of(id))
    }

    /// Gradients of every parameter, keyed by name.
    pub fn params(&self) -> BTreeMap<String, Tensor> {
        self.params
            .iter()
            .map(|(k, &id)| (k.clone(), self.of(id)))
            .collect()
    }
}

/// Spectral channel mixing used by the kernel integral operator.
///
/// With `y(k) = sum_i R[k, i, :] x_i(k)` for `|kx| <= k`, `0 <= ky <= k`:
/// modes with `ky > 0` are set to `y(k)` and mirrored to `conj(y(k))` at `-k`;
/// modes on the `ky = 0` line are set to `(y(kx) + conj(y(-kx))) / 2`. Every
/// other mode is zero, so the output is the spectrum of a real field.
pub fn mode_mul(x: &ComplexTensor, re: &Tensor, im: &Tensor, k: usize) -> Result<ComplexTensor> {
    let (nx, ny, cin, cout) = mode_mul_dims(x, re, im, k)?;
    let ki = k as i64;
    let mut out = vec![Complex64::new(0.0, 0.0); nx * ny * cout];
    let xd = x.data();
    let (rd, id) = (re.data(), im.data());
    let apply = |kx: i64, ky: i64| -> Vec<Complex64> {
        let xs = (spectral::mode_slot(kx, nx) * ny + spectral::mode_slot(ky, ny)) * cin;
        let rbase = ((kx + ki) as usize * (k + 1) + ky as usize) * cin * cout;
        let mut y = vec![Complex64::new(0.0, 0.0); cout];
        for i in 0..cin {
            let xi = xd[xs + i];
            let off = rbase + i * cout;
            for (o, yo) in y.iter_mut().enumerate() {
                *yo += Complex64::new(rd[off + o], id[off + o]) * xi;
            }
        }
        y
    };
    for kx in -ki..=ki {
        for ky in 1..=ki {
            let y = apply(kx, ky);
            let s = (spectral::mode_slot(kx, nx) * ny + spectral::mode_slot(ky, ny)) * cout;
            let m = (spectral::mode_slot(-kx, nx) * ny + spectral::mode_slot(-ky, ny)) * cout;
            for o in 0..cout {
                out[s + o] = y[o];
                out[m + o] = y[o].conj();
            }
        }
    }
    let line: Vec<Vec<Complex64>> = (-ki..=ki).map(|kx| apply(kx, 0)).collect();
    for kx in -ki..=ki {
        let (y, ym) = (&line[(kx + ki) as usize], &line[(ki - kx) as usize]);
        let s = spectral::mode_slot(kx, nx) * ny * cout;
        for o in 0..cout {
            out[s + o] = 0.5 * (y[o] + ym[o].conj());
        }
    }
    ComplexTensor::new(vec![nx, ny, cout], out)
}

fn mode_mul_dims(x: &ComplexTensor, re: &Tensor, im: &Tensor, k: usize) -> Result<(usize, usize, usize, usize)> {
    let (nx, ny, cin) = x.field_dims()?;
    if k == 0 || k + 1 > nx.min(ny) / 2 {
        return Err(Error::Dimension(format!(
            "{k} retained modes do not fit a {nx}x{ny} grid"
        )));
    }
    let cout = match re.shape() {
        &[a, b, c, d] if a == 2 * k + 1 && b == k + 1 && c == cin => d,
        other => {
            return Err(Error::shape(
                "spectral weights",
                &[2 * k + 1, k + 1, cin, 0],
                other,
            ))
        }
    };
    im.expect_shape(re.shape(), "spectral weights (imaginary part)")?;
    Ok((nx, ny, cin, cout))
}

type ModeMulAdjoint = (Option<Vec<Complex64>>, Option<Vec<f64>>, Option<Vec<f64>>);

fn mode_mul_adjoint(
    g: &ComplexTensor,
    x: &ComplexTensor,
    re: &Tensor,
    im: &Tensor,
    k: usize,
    want_x: bool,
    want_r: bool,
) -> Result<ModeMulAdjoint> {
    let (nx, ny, cin, cout) = mode_mul_dims(x, re, im, k)?;
    let ki = k as i64;
    let gd = g.data();
    let xd = x.data();
    let (rd, id) = (re.data(), im.data());
    let mut dx = want_x.then(|| vec![Complex64::new(0.0, 0.0); x.len()]);
    let mut dre = want_r.then(|| vec![0.0; re.len()]);
    let mut dim = want_r.then(|| vec![0.0; im.len()]);
    let at = |kx: i64, ky: i64| spectral::mode_slot(kx, nx) * ny + spectral::mode_slot(ky, ny);
    for kx in -ki..=ki {
        for ky in 0..=ki {
            let (s, m) = (at(kx, ky) * cout, at(-kx, -ky) * cout);
            let ybar: Vec<Complex64> = (0..cout)
                .map(|o| {
                    let v = gd[s + o] + gd[m + o].conj();
                    if ky == 0 {
                        0.5 * v
                    } else {
                        v
                    }
                })
                .collect();
            let xs = at(kx, ky) * cin;
            let rbase = ((kx + ki) as usize * (k + 1) + ky as usize) * cin * cout;
            for i in 0..cin {
                let off = rbase + i * cout;
                if let Some(dx) = dx.as_mut() {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for (o, yb) in ybar.iter().enumerate() {
                        acc += Complex64::new(rd[off + o], -id[off + o]) * yb;
                    }
                    dx[xs + i] += acc;
                }
                if let (Some(dre), Some(dim)) = (dre.as_mut(), dim.as_mut()) {
                    let xc = xd[xs + i].conj();
                    for (o, yb) in ybar.iter().enumerate() {
                        let r = yb * xc;
                        dre[off + o] += r.re;
                        dim[off + o] += r.im;
                    }
                }
            }
        }
    }
    Ok((dx, dre, dim))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    /// Central-difference check of d(loss)/d(leaf) for a graph builder.
    fn check_gradient(
        leaves: &[Tensor],
        build: &dyn Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
    ) -> f64 {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = leaves.iter().map(|t| g.input(t.clone()).unwrap()).collect();
        let loss = build(&mut g, &ids).unwrap();
        let grads = g.backward(loss).unwrap();
        let eval = |perturbed: &[Tensor]| {
            let mut g = Graph::new();
            let ids: Vec<NodeId> = perturbed.iter().map(|t| g.input(t.clone()).unwrap()).collect();
            let l = build(&mut g, &ids).unwrap();
            g.value(l).unwrap().data()[0]
        };
        let h = 1e-6;
        let mut num = Vec::new();
        let mut ana = Vec::new();
        for (li, leaf) in leaves.iter().enumerate() {
            let analytic = grads.of(ids[li]);
            for e in 0..leaf.len() {
                let mut plus = leaves.to_vec();
                let mut minus = leaves.to_vec();
                let mut d = leaf.to_vec();
                d[e] += h;
                plus[li] = Tensor::new(leaf.shape().to_vec(), d.clone()).unwrap();
                d[e] -= 2.0 * h;
                minus[li] = Tensor::new(leaf.shape().to_vec(), d).unwrap();
                num.push((eval(&plus) - eval(&minus)) / (2.0 * h));
                ana.push(analytic.data()[e]);
            }
        }
        let diff: f64 = num.iter().zip(&ana).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale: f64 = num.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
        diff / scale
    }

    #[test]
    fn sum_and_quadratic_examples() {
        let p = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let mut g = Graph::new();
        let id = g.param("p", p.clone()).unwrap();
        let s = g.sum(id).unwrap();
        assert_eq!(g.backward(s).unwrap().param("p").unwrap(), Tensor::ones(&[3]));

        let mut g = Graph::new();
        let id = g.param("p", p.clone()).unwrap();
        let m = g.mse(id, &Tensor::zeros(&[3])).unwrap();
        let l = g.scale(m, 1.5).unwrap();
        let grad = g.backward(l).unwrap().param("p").unwrap();
        assert!(grad.sub(&p).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn untouched_parameters_get_zero_and_non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let a = g.param("a", Tensor::ones(&[2])).unwrap();
        g.param("unused", Tensor::ones(&[4])).unwrap();
        let s = g.sum(a).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.param("unused").unwrap(), Tensor::zeros(&[4]));
        assert!(matches!(g.backward(a), Err(Error::Contract(_))));
    }

    #[test]
    fn parameters_are_deduplicated_by_name() {
        let mut g = Graph::new();
        let a = g.param("w", Tensor::ones(&[2])).unwrap();
        let b = g.param("w", Tensor::ones(&[2])).unwrap();
        assert_eq!(a, b);
        let c = g.add(a, b).unwrap();
        let s = g.sum(c).unwrap();
        assert_eq!(g.backward(s).unwrap().param("w").unwrap(), Tensor::full(&[2], 2.0));
    }

    #[test]
    fn gradient_linear_gelu() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let leaves = vec![
            rand_tensor(&mut rng, &[2, 2, 3]),
            rand_tensor(&mut rng, &[3, 2]),
            rand_tensor(&mut rng, &[2]),
        ];
        let target = rand_tensor(&mut rng, &[2, 2, 2]);
        let err = check_gradient(&leaves, &|g, ids| {
            let l = g.linear(ids[0], ids[1], ids[2])?;
            let a = g.gelu(l)?;
            let s = g.scale(a, 0.7)?;
            let t = g.add(s, l)?;
            g.mse(t, &target)
        });
        assert!(err < 1e-5, "rel err {err}");
    }

    #[test]
    fn gradient_spectral_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let k = 1;
        let leaves = vec![
            rand_tensor(&mut rng, &[4, 4, 2]),
            rand_tensor(&mut rng, &[3, 2, 2, 2]),
            rand_tensor(&mut rng, &[3, 2, 2, 2]),
        ];
        let target = rand_tensor(&mut rng, &[4, 4, 2]);
        let err = check_gradient(&leaves, &|g, ids| {
            let f = g.fft2(ids[0])?;
            let m = g.mode_mul(f, ids[1], ids[2], k)?;
            let b = g.ifft2(m)?;
            g.rel_l2(b, &target)
        });
        assert!(err < 1e-5, "rel err {err}");
    }

    #[test]
    fn gradient_fft_round_trip_and_complex_add() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let leaves = vec![rand_tensor(&mut rng, &[4, 8, 1]), rand_tensor(&mut rng, &[4, 8, 1])];
        let target = rand_tensor(&mut rng, &[4, 8, 1]);
        let err = check_gradient(&leaves, &|g, ids| {
            let a = g.fft2(ids[0])?;
            let b = g.fft2(ids[1])?;
            let c = g.add(a, b)?;
            let r = g.ifft2(c)?;
            let q = g.gelu(r)?;
            g.mse(q, &target)
        });
        assert!(err < 1e-5, "rel err {err}");
    }

    #[test]
    fn mode_mul_output_is_hermitian() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = spectral::fft2(&rand_tensor(&mut rng, &[8, 8, 2])).unwrap();
        let re = rand_tensor(&mut rng, &[5, 3, 2, 3]);
        let im = rand_tensor(&mut rng, &[5, 3, 2, 3]);
        let out = mode_mul(&f, &re, &im, 2).unwrap();
        assert!(spectral::conjugate_asymmetry(&out).unwrap() < 1e-14);
        assert_eq!(out.shape(), &[8, 8, 3]);
        assert!(mode_mul(&f, &re, &im, 4).is_err());
    }

    #[test]
    fn activations_are_released_on_drop() {
        let before = activation_meter::live();
        {
            let mut g = Graph::new();
            let a = g.input(Tensor::ones(&[4, 4, 1])).unwrap();
            let f = g.fft2(a).unwrap();
            g.ifft2(f).unwrap();
            assert_eq!(g.retained(), 32 + 16);
            assert_eq!(activation_meter::live(), before + 48);
        }
        assert_eq!(activation_meter::live(), before);
    }

    fn two_losses(seed: u64) -> (Gradients, Gradients, Gradients, NodeId) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = rand_tensor(&mut rng, &[4, 4, 2]);
        let w = rand_tensor(&mut rng, &[2, 2]);
        let b = rand_tensor(&mut rng, &[2]);
        let t1 = rand_tensor(&mut rng, &[4, 4, 2]);
        let t2 = rand_tensor(&mut rng, &[4, 4, 2]);
        let mut g = Graph::new();
        let vi = g.input(v).unwrap();
        let wi = g.param("w", w).unwrap();
        let bi = g.param("b", b).unwrap();
        let l = g.linear(vi, wi, bi).unwrap();
        let a = g.gelu(l).unwrap();
        let l1 = g.mse(a, &t1).unwrap();
        let l2 = g.rel_l2(a, &t2).unwrap();
        let s1 = g.scale(l1, 0.3).unwrap();
        let s2 = g.scale(l2, -1.7).unwrap();
        let total = g.add(s1, s2).unwrap();
        (
            g.backward(l1).unwrap(),
            g.backward(l2).unwrap(),
            g.backward(total).unwrap(),
            wi,
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn gradients_are_linear_in_the_loss(seed in any::<u64>()) {
            let (g1, g2, gt, w) = two_losses(seed);
            let combo = g1.of(w).scale(0.3).axpy(-1.7, &g2.of(w)).unwrap();
            prop_assert!(combo.sub(&gt.of(w)).unwrap().max_abs() < 1e-12);
        }

        #[test]
        fn backward_is_bitwise_deterministic(seed in any::<u64>()) {
            let (a, _, _, w) = two_losses(seed);
            let (b, _, _, _) = two_losses(seed);
            prop_assert_eq!(a.of(w).to_vec(), b.of(w).to_vec());
            prop_assert_eq!(a.params(), b.params());
        }
    }
}
