//! Fourier neural operator layers and the four architectures.
//!
//! * `fno`: `Q ∘ layers ∘ P2(f)` with plain layers `σ(W v + b + K v)`.
//! * `fno++`: `B` distinct blocks of input-injected layers
//!   `g + σ(W v + b + K v)` with `g = P2(f)`, started at `v0 = P1(0)`.
//! * `fno-wt`: one input-injected block applied `M` times from `v0 = P1(0)`.
//! * `fno-deq`: the equilibrium `v* = B(v*, g)` of the same block, found by a
//!   root solver from `v0 = P1(0)`, followed by `Q`.
//!
//! `K v` keeps the Fourier modes with `|kx| <= K`, `|ky| <= K` and mixes
//! channels per mode with a complex matrix; see [`crate::autodiff::mode_mul`].

mod checkpoint;
mod normalize;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub use normalize::Normalizer;

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::fixedpoint::{self, SolverConfig, SolverKind, SolverTrace};
use crate::implicit_grad::{self, AdjointConfig, BackwardMode, DifferentiableMap, PhantomConfig};
use crate::tensor::Tensor;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArchKind {
    Fno,
    FnoPlusPlus,
    FnoWt,
    FnoDeq,
}

impl ArchKind {
    pub(crate) fn code(self) -> u8 {
        match self {
            ArchKind::Fno => 0,
            ArchKind::FnoPlusPlus => 1,
            ArchKind::FnoWt => 2,
            ArchKind::FnoDeq => 3,
        }
    }

    pub(crate) fn from_code(c: u8) -> Result<Self> {
        Ok(match c {
            0 => ArchKind::Fno,
            1 => ArchKind::FnoPlusPlus,
            2 => ArchKind::FnoWt,
            3 => ArchKind::FnoDeq,
            _ => return Err(Error::Format(format!("unknown architecture code {c}"))),
        })
    }

    fn injected(self) -> bool {
        self != ArchKind::Fno
    }
}

impl fmt::Display for ArchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ArchKind::Fno => "fno",
            ArchKind::FnoPlusPlus => "fno++",
            ArchKind::FnoWt => "fno-wt",
            ArchKind::FnoDeq => "fno-deq",
        })
    }
}

impl FromStr for ArchKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fno" => Ok(ArchKind::Fno),
            "fno++" | "fnopp" => Ok(ArchKind::FnoPlusPlus),
            "fno-wt" | "fnowt" => Ok(ArchKind::FnoWt),
            "fno-deq" | "fnodeq" => Ok(ArchKind::FnoDeq),
            other => Err(Error::Config(format!("unknown architecture '{other}'"))),
        }
    }
}

/// Activation applied by the output embedding `Q`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputActivation {
    Gelu,
    Identity,
}

impl FromStr for OutputActivation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gelu" => Ok(OutputActivation::Gelu),
            "none" | "identity" => Ok(OutputActivation::Identity),
            other => Err(Error::Config(format!("unknown output activation '{other}'"))),
        }
    }
}

impl fmt::Display for OutputActivation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutputActivation::Gelu => "gelu",
            OutputActivation::Identity => "none",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArchConfig {
    pub kind: ArchKind,
    /// Solution channels.
    pub du: usize,
    /// Data channels.
    pub df: usize,
    /// Hidden width.
    pub dv: usize,
    /// Layers per block.
    pub layers: usize,
    /// Distinct blocks (`fno`, `fno++`); weight-tied kinds use one.
    pub blocks: usize,
    /// Retained modes per axis.
    pub modes: usize,
    /// Unroll count of `fno-wt`.
    pub unroll: usize,
    pub output_activation: OutputActivation,
    /// Appends the coordinates `(x, y)` in `[0, 1]²` to the input of `P2`.
    pub grid: bool,
}

impl ArchConfig {
    pub fn new(kind: ArchKind, du: usize, df: usize, dv: usize, modes: usize) -> Self {
        ArchConfig {
            kind,
            du,
            df,
            dv,
            layers: 3,
            blocks: 1,
            modes,
            unroll: 1,
            output_activation: OutputActivation::Gelu,
            grid: false,
        }
    }

    /// Input channels seen by `P2`.
    pub fn lifted_channels(&self) -> usize {
        self.df + if self.grid { 2 } else { 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.du == 0 || self.df == 0 || self.dv == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if self.layers == 0 || self.blocks == 0 || self.modes == 0 {
            return Err(Error::Config("layers, blocks and modes must be positive".into()));
        }
        if self.kind == ArchKind::FnoWt && self.unroll == 0 {
            return Err(Error::Config("fno-wt needs M >= 1".into()));
        }
        if matches!(self.kind, ArchKind::FnoWt | ArchKind::FnoDeq) && self.blocks != 1 {
            return Err(Error::Config(format!("{} uses exactly one weight-tied block", self.kind)));
        }
        Ok(())
    }

    /// Layer count in the depth convention where every FNO layer contributes a
    /// spectral and a pointwise layer and `P`, `Q` contribute four:
    /// `6B + 4` for three-layer blocks. Weight-tied kinds count `M` blocks;
    /// `fno-deq` counts one application.
    pub fn depth(&self) -> usize {
        let applications = match self.kind {
            ArchKind::Fno | ArchKind::FnoPlusPlus => self.blocks,
            ArchKind::FnoWt => self.unroll,
            ArchKind::FnoDeq => 1,
        };
        2 * self.layers * applications + 4
    }

    /// Real parameters in one layer: `dv² + dv + 2 (2K+1)(K+1) dv²`.
    pub fn layer_parameter_count(&self) -> usize {
        let (dv, k) = (self.dv, self.modes);
        dv * dv + dv + 2 * (2 * k + 1) * (k + 1) * dv * dv
    }

    pub fn block_parameter_count(&self) -> usize {
        self.layers * self.layer_parameter_count()
    }

    pub fn projection_parameter_count(&self) -> usize {
        let (du, df, dv) = (self.du, self.lifted_channels(), self.dv);
        let p1 = if self.kind.injected() { du * dv + dv } else { 0 };
        p1 + df * dv + dv + dv * du + du
    }

    pub fn parameter_count(&self) -> usize {
        self.blocks * self.block_parameter_count() + self.projection_parameter_count()
    }

    fn spectral_shape(&self) -> [usize; 4] {
        [2 * self.modes + 1, self.modes + 1, self.dv, self.dv]
    }
}

/// Parameters of one FNO layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub w: Tensor,
    pub b: Tensor,
    pub r_re: Tensor,
    pub r_im: Tensor,
    pub modes: usize,
}

/// Parameters of a pointwise `σ(W v + b)` map.
#[derive(Clone, Debug, PartialEq)]
pub struct Pointwise {
    pub w: Tensor,
    pub b: Tensor,
}

pub fn layer_name(block: usize, layer: usize, field: &str) -> String {
    format!("block{block}.layer{layer}.{field}")
}

fn register(g: &mut Graph, name: &str, t: &Tensor) -> Result<NodeId> {
    g.param(name, t.clone())
}

/// `σ(W v + b)` (or `W v + b` with `activate = false`) with named parameters.
fn record_pointwise(
    g: &mut Graph,
    prefix: &str,
    p: &Pointwise,
    v: NodeId,
    activate: bool,
) -> Result<NodeId> {
    let w = register(g, &format!("{prefix}.W"), &p.w)?;
    let b = register(g, &format!("{prefix}.b"), &p.b)?;
    let l = g.linear(v, w, b)?;
    if activate {
        g.gelu(l)
    } else {
        Ok(l)
    }
}

/// `K v`.
fn record_kernel(g: &mut Graph, prefix: &str, p: &LayerParams, v: NodeId) -> Result<NodeId> {
    let re = register(g, &format!("{prefix}.R_re"), &p.r_re)?;
    let im = register(g, &format!("{prefix}.R_im"), &p.r_im)?;
    let spec = g.fft2(v)?;
    let mixed = g.mode_mul(spec, re, im, p.modes)?;
    g.ifft2(mixed)
}

/// `σ(W v + b + K v)`, plus `g` when injected.
fn record_layer(
    g: &mut Graph,
    prefix: &str,
    p: &LayerParams,
    v: NodeId,
    injection: Option<NodeId>,
) -> Result<NodeId> {
    let w = register(g, &format!("{prefix}.W"), &p.w)?;
    let b = register(g, &format!("{prefix}.b"), &p.b)?;
    let lin = g.linear(v, w, b)?;
    let k = record_kernel(g, prefix, p, v)?;
    let pre = g.add(lin, k)?;
    let act = g.gelu(pre)?;
    match injection {
        Some(inj) => g.add(inj, act),
        None => Ok(act),
    }
}

/// Appends the channels `x = i / (nx - 1)` and `y = j / (ny - 1)`.
pub fn with_coordinates(f: &Tensor) -> Result<Tensor> {
    let (nx, ny, c) = f.field_dims()?;
    let step = |n: usize| if n > 1 { 1.0 / (n - 1) as f64 } else { 0.0 };
    let (hx, hy) = (step(nx), step(ny));
    let mut data = Vec::with_capacity(nx * ny * (c + 2));
    for (p, chunk) in f.data().chunks(c).enumerate() {
        data.extend_from_slice(chunk);
        data.push((p / ny) as f64 * hx);
        data.push((p % ny) as f64 * hy);
    }
    Tensor::new(vec![nx, ny, c + 2], data)
}

fn eval_graph(build: impl FnOnce(&mut Graph) -> Result<NodeId>) -> Result<Tensor> {
    let mut g = Graph::new();
    let out = build(&mut g)?;
    Ok(g.value(out)?.clone())
}

/// `(σ(W1 v + b1), σ(W2 f + b2))`.
pub fn project_p(v: &Tensor, f: &Tensor, p1: &Pointwise, p2: &Pointwise) -> Result<(Tensor, Tensor)> {
    let a = eval_graph(|g| {
        let x = g.constant(v.clone())?;
        record_pointwise(g, "P1", p1, x, true)
    })?;
    let b = eval_graph(|g| {
        let x = g.constant(f.clone())?;
        record_pointwise(g, "P2", p2, x, true)
    })?;
    Ok((a, b))
}

/// `σ(W_Q v + b_Q)`.
pub fn embed_q(v: &Tensor, q: &Pointwise) -> Result<Tensor> {
    eval_graph(|g| {
        let x = g.constant(v.clone())?;
        record_pointwise(g, "Q", q, x, true)
    })
}

/// `F^{-1}(R · F v)` on the retained modes.
pub fn kernel_operator(v: &Tensor, p: &LayerParams) -> Result<Tensor> {
    eval_graph(|g| {
        let x = g.constant(v.clone())?;
        record_kernel(g, "L", p, x)
    })
}

/// `σ(W v + b + K v)`.
pub fn fno_layer(v: &Tensor, p: &LayerParams) -> Result<Tensor> {
    eval_graph(|g| {
        let x = g.constant(v.clone())?;
        record_layer(g, "L", p, x, None)
    })
}

/// `g + σ(W v + b + K v)`.
pub fn input_injected_layer(v: &Tensor, inj: &Tensor, p: &LayerParams) -> Result<Tensor> {
    v.expect_shape(inj.shape(), "injected layer")?;
    eval_graph(|g| {
        let x = g.constant(v.clone())?;
        let i = g.constant(inj.clone())?;
        record_layer(g, "L", p, x, Some(i))
    })
}

/// Chain of injected layers sharing the same `g`.
pub fn fno_block(v: &Tensor, inj: &Tensor, layers: &[LayerParams]) -> Result<Tensor> {
    v.expect_shape(inj.shape(), "fno block")?;
    eval_graph(|g| {
        let mut x = g.constant(v.clone())?;
        let i = g.constant(inj.clone())?;
        for (j, p) in layers.iter().enumerate() {
            x = record_layer(g, &format!("L{j}"), p, x, Some(i))?;
        }
        Ok(x)
    })
}

/// Forward-pass and gradient settings of the equilibrium model.
#[derive(Clone, Debug, PartialEq)]
pub struct DeqSettings {
    pub solver: SolverKind,
    pub solver_cfg: SolverConfig,
    pub backward: BackwardMode,
    pub adjoint: AdjointConfig,
}

impl Default for DeqSettings {
    fn default() -> Self {
        DeqSettings {
            solver: SolverKind::Anderson,
            solver_cfg: SolverConfig::default(),
            backward: BackwardMode::Phantom(PhantomConfig { tau: 0.5, steps: 1 }),
            adjoint: AdjointConfig::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Forward {
    pub output: Tensor,
    /// Solver record for `fno-deq`.
    pub trace: Option<SolverTrace>,
}

#[derive(Clone, Debug)]
pub struct LossGrad {
    pub loss: f64,
    pub output: Tensor,
    /// Gradient of every model parameter, keyed by name.
    pub grads: BTreeMap<String, Tensor>,
    pub trace: Option<SolverTrace>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ArchConfig,
    pub params: BTreeMap<String, Tensor>,
    /// Not trained; fitted to the training split by [`crate::train::train`].
    pub norm: Normalizer,
}

impl Model {
    /// Seeded initialization: `W`, `b` uniform in `±1/sqrt(fan_in)` (fan-in
    /// `dv` inside blocks), spectral weights Gaussian (real and imaginary
    /// parts) scaled by `1 / (dv (2K+1)(K+1))`.
    pub fn init(config: ArchConfig, seed: u64) -> Result<Model> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = BTreeMap::new();
        let (du, df, dv) = (config.du, config.lifted_channels(), config.dv);
        let uniform = |rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            Tensor::from_fn(shape, |_| rng.random_range(-bound..bound))
        };
        let pointwise = |rng: &mut ChaCha8Rng, params: &mut BTreeMap<String, Tensor>, name: &str, cin: usize, cout: usize| {
            params.insert(format!("proj.{name}.W"), uniform(rng, &[cin, cout], cin));
            params.insert(format!("proj.{name}.b"), uniform(rng, &[cout], cin));
        };
        if config.kind.injected() {
            pointwise(&mut rng, &mut params, "P1", du, dv);
        }
        pointwise(&mut rng, &mut params, "P2", df, dv);
        pointwise(&mut rng, &mut params, "Q", dv, du);
        let shape = config.spectral_shape();
        let scale = 1.0 / (dv * shape[0] * shape[1]) as f64;
        let bound = 1.0 / (dv as f64).sqrt();
        for blk in 0..config.blocks {
            for l in 0..config.layers {
                params.insert(
                    layer_name(blk, l, "W"),
                    Tensor::from_fn(&[dv, dv], |_| rng.random_range(-bound..bound)),
                );
                params.insert(
                    layer_name(blk, l, "b"),
                    Tensor::from_fn(&[dv], |_| rng.random_range(-bound..bound)),
                );
                for part in ["R_re", "R_im"] {
                    params.insert(
                        layer_name(blk, l, part),
                        Tensor::from_fn(&shape, |_| scale * rng.sample::<f64, _>(StandardNormal)),
                    );
                }
            }
        }
        let norm = Normalizer::identity(config.df, config.du);
        Ok(Model { config, params, norm })
    }

    /// Rescales every layer so that `1.13 (||W||_F + max_k ||R_k||_F) = rho`.
    ///
    /// GELU is 1.13-Lipschitz and each layer acts per Fourier mode as `W + R_k`,
    /// so with `rho < 1` every block is a contraction in `v`.
    pub fn spectrally_normalized(mut self, rho: f64) -> Result<Model> {
        const GELU_LIPSCHITZ: f64 = 1.13;
        let (dv, k) = (self.config.dv, self.config.modes);
        for blk in 0..self.config.blocks {
            for l in 0..self.config.layers {
                let p = self.layer(blk, l)?;
                let wn = p.w.norm();
                let mut rmax: f64 = 0.0;
                for m in 0..(2 * k + 1) * (k + 1) {
                    let s = m * dv * dv;
                    let e = s + dv * dv;
                    let n: f64 = p.r_re.data()[s..e]
                        .iter()
                        .chain(&p.r_im.data()[s..e])
                        .map(|x| x * x)
                        .sum::<f64>()
                        .sqrt();
                    rmax = rmax.max(n);
                }
                let total = GELU_LIPSCHITZ * (wn + rmax);
                if total == 0.0 {
                    continue;
                }
                let f = rho / total;
                for part in ["W", "R_re", "R_im"] {
                    let name = layer_name(blk, l, part);
                    let t = self.params[&name].scale(f);
                    self.params.insert(name, t);
                }
            }
        }
        Ok(self)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.values().map(|t| t.len()).sum()
    }

    fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter '{name}'")))
    }

    pub fn layer(&self, block: usize, layer: usize) -> Result<LayerParams> {
        Ok(LayerParams {
            w: self.get(&layer_name(block, layer, "W"))?.clone(),
            b: self.get(&layer_name(block, layer, "b"))?.clone(),
            r_re: self.get(&layer_name(block, layer, "R_re"))?.clone(),
            r_im: self.get(&layer_name(block, layer, "R_im"))?.clone(),
            modes: self.config.modes,
        })
    }

    pub fn pointwise(&self, name: &str) -> Result<Pointwise> {
        Ok(Pointwise {
            w: self.get(&format!("proj.{name}.W"))?.clone(),
            b: self.get(&format!("proj.{name}.b"))?.clone(),
        })
    }

    /// Checks parameter names and shapes against the configuration.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let reference = Model::init(self.config.clone(), 0)?;
        for (name, t) in &reference.params {
            let mine = self.get(name)?;
            if mine.shape() != t.shape() {
                return Err(Error::Config(format!(
                    "parameter '{name}' has shape {:?}, expected {:?}",
                    mine.shape(),
                    t.shape()
                )));
            }
            if !mine.is_finite() {
                return Err(Error::NonFinite("model parameter"));
            }
        }
        if self.params.len() != reference.params.len() {
            return Err(Error::Config("unexpected extra parameters".into()));
        }
        self.norm.validate(self.config.df, self.config.du)
    }

    fn check_input(&self, f: &Tensor) -> Result<(usize, usize)> {
        let (nx, ny, c) = f.field_dims()?;
        if c != self.config.df {
            return Err(Error::shape("model input", &[nx, ny, self.config.df], f.shape()));
        }
        Ok((nx, ny))
    }

    fn record_p1(&self, g: &mut Graph, nx: usize, ny: usize) -> Result<NodeId> {
        let zero = g.constant(Tensor::zeros(&[nx, ny, self.config.du]))?;
        record_pointwise(g, "proj.P1", &self.pointwise("P1")?, zero, true)
    }

    fn record_p2(&self, g: &mut Graph, f: NodeId) -> Result<NodeId> {
        let f = if self.config.grid || !self.norm.is_identity() {
            let mut x = self.norm.input(g.value(f)?)?;
            if self.config.grid {
                x = with_coordinates(&x)?;
            }
            g.constant(x)?
        } else {
            f
        };
        record_pointwise(g, "proj.P2", &self.pointwise("P2")?, f, true)
    }

    fn record_q(&self, g: &mut Graph, v: NodeId) -> Result<NodeId> {
        let act = self.config.output_activation == OutputActivation::Gelu;
        record_pointwise(g, "proj.Q", &self.pointwise("Q")?, v, act)
    }

    fn record_block(&self, g: &mut Graph, block: usize, mut v: NodeId, inj: Option<NodeId>) -> Result<NodeId> {
        for l in 0..self.config.layers {
            let p = self.layer(block, l)?;
            v = record_layer(g, &format!("block{block}.layer{l}"), &p, v, inj)?;
        }
        Ok(v)
    }

    /// Records the full forward pass of an explicit (non-equilibrium) model.
    pub fn record_forward(&self, g: &mut Graph, f: NodeId) -> Result<NodeId> {
        let (nx, ny) = self.check_input(g.value(f)?)?;
        let cfg = &self.config;
        let v = match cfg.kind {
            ArchKind::Fno => {
                let mut v = self.record_p2(g, f)?;
                for blk in 0..cfg.blocks {
                    v = self.record_block(g, blk, v, None)?;
                }
                v
            }
            ArchKind::FnoPlusPlus => {
                let inj = self.record_p2(g, f)?;
                let mut v = self.record_p1(g, nx, ny)?;
                for blk in 0..cfg.blocks {
                    v = self.record_block(g, blk, v, Some(inj))?;
                }
                v
            }
            ArchKind::FnoWt => {
                let inj = self.record_p2(g, f)?;
                let mut v = self.record_p1(g, nx, ny)?;
                for _ in 0..cfg.unroll {
                    v = self.record_block(g, 0, v, Some(inj))?;
                }
                v
            }
            ArchKind::FnoDeq => {
                return Err(Error::Contract("fno-deq has no explicit forward graph".into()))
            }
        };
        self.record_q(g, v)
    }

    /// The injected block `z -> B(z, P2(f))` of a weight-tied model.
    pub fn block_map(&self, f: &Tensor) -> Result<BlockMap<'_>> {
        self.check_input(f)?;
        let inj = eval_graph(|g| {
            let x = g.constant(f.clone())?;
            self.record_p2(g, x)
        })?;
        Ok(BlockMap {
            model: self,
            f: f.clone(),
            inj,
        })
    }

    /// Starting point `P1(0)` of the hidden iteration.
    pub fn initial_state(&self, nx: usize, ny: usize) -> Result<Tensor> {
        eval_graph(|g| self.record_p1(g, nx, ny))
    }

    /// Solves `z = B(z, P2(f))` from `P1(0)`.
    pub fn equilibrium(&self, f: &Tensor, deq: &DeqSettings) -> Result<(Tensor, SolverTrace)> {
        let (nx, ny) = self.check_input(f)?;
        let map = self.block_map(f)?;
        let z0 = self.initial_state(nx, ny)?;
        fixedpoint::solve(deq.solver, |z| map.eval(z), &z0, &deq.solver_cfg)
    }

    pub fn forward(&self, f: &Tensor, deq: &DeqSettings) -> Result<Forward> {
        if self.config.kind == ArchKind::FnoDeq {
            let (z, trace) = self.equilibrium(f, deq)?;
            let output = eval_graph(|g| {
                let zi = g.constant(z)?;
                self.record_q(g, zi)
            })?;
            return Ok(Forward {
                output: self.norm.output(&output)?,
                trace: Some(trace),
            });
        }
        let output = eval_graph(|g| {
            let fi = g.constant(f.clone())?;
            self.record_forward(g, fi)
        })?;
        Ok(Forward {
            output: self.norm.output(&output)?,
            trace: None,
        })
    }

    /// MSE loss against `target`, measured in normalized units, and its
    /// gradient with respect to every parameter.
    pub fn loss_and_grad(&self, f: &Tensor, target: &Tensor, deq: &DeqSettings) -> Result<LossGrad> {
        let target = &self.norm.target(target)?;
        let mut grads: BTreeMap<String, Tensor> = self
            .params
            .iter()
            .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
            .collect();
        let mut merge = |src: BTreeMap<String, Tensor>| -> Result<()> {
            for (k, v) in src {
                if let Some(acc) = grads.get_mut(&k) {
                    *acc = acc.add(&v)?;
                }
            }
            Ok(())
        };
        if self.config.kind != ArchKind::FnoDeq {
            let mut g = Graph::new();
            let fi = g.constant(f.clone())?;
            let out = self.record_forward(&mut g, fi)?;
            let loss = g.mse(out, target)?;
            let back = g.backward(loss)?;
            merge(back.params())?;
            return Ok(LossGrad {
                loss: g.value(loss)?.data()[0],
                output: self.norm.output(g.value(out)?)?,
                grads,
                trace: None,
            });
        }
        let (z, trace) = self.equilibrium(f, deq)?;
        let (loss, output, grad_z) = {
            let mut g = Graph::new();
            let zi = g.input(z.clone())?;
            let out = self.record_q(&mut g, zi)?;
            let loss = g.mse(out, target)?;
            let back = g.backward(loss)?;
            merge(back.params())?;
            (g.value(loss)?.data()[0], g.value(out)?.clone(), back.of(zi))
        };
        let map = self.block_map(f)?;
        let implicit = implicit_grad::implicit_backward(&map, &z, &grad_z, deq.backward, &deq.adjoint)?;
        merge(implicit.params)?;
        Ok(LossGrad {
            loss,
            output: self.norm.output(&output)?,
            grads,
            trace: Some(trace),
        })
    }
}

/// `z -> B(z, g)` with `g = P2(f)`.
///
/// Plain evaluation reuses a cached `g`; recording on a tape rebuilds `g`
/// from `f` so gradients reach the `P2` parameters.
pub struct BlockMap<'a> {
    model: &'a Model,
    f: Tensor,
    inj: Tensor,
}

impl BlockMap<'_> {
    pub fn injection(&self) -> &Tensor {
        &self.inj
    }
}

impl DifferentiableMap for BlockMap<'_> {
    fn record(&self, graph: &mut Graph, z: NodeId) -> Result<NodeId> {
        let fi = graph.constant(self.f.clone())?;
        let inj = self.model.record_p2(graph, fi)?;
        self.model.record_block(graph, 0, z, Some(inj))
    }

    fn eval(&self, z: &Tensor) -> Result<Tensor> {
        eval_graph(|g| {
            let zi = g.constant(z.clone())?;
            let inj = g.constant(self.inj.clone())?;
            self.model.record_block(g, 0, zi, Some(inj))
        })
    }
}
