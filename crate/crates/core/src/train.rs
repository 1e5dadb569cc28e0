//! AdamW training with optional cosine annealing, evaluation, and metric logs.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::datagen::{parse_key_values, Dataset, Sample};
use crate::error::{Error, Result};
use crate::fixedpoint::{SolverConfig, SolverKind};
use crate::fno::{save_checkpoint, ArchConfig, ArchKind, DeqSettings, Model, Normalizer, OutputActivation};
use crate::implicit_grad::{BackwardMode, PhantomConfig};
use crate::ops::relative_l2;
use crate::tensor::Tensor;

pub const METRICS_HEADER: &str = "epoch,train_mse,test_rel_l2,mean_abs_residual,mean_rel_residual,seconds";
pub const SELECTION_HEADER: &str = "epoch,test_rel_l2,best_test_rel_l2,saved";
/// Global gradient norm above which gradients are rescaled.
pub const CLIP_NORM: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Schedule {
    Constant,
    Cosine,
}

impl FromStr for Schedule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(Schedule::Constant),
            "cosine" => Ok(Schedule::Cosine),
            _ => Err(Error::Config(format!("unknown schedule {s:?}"))),
        }
    }
}

impl Schedule {
    /// Learning-rate multiplier at optimizer step `t` of `total`.
    pub fn multiplier(self, t: usize, total: usize) -> f64 {
        match self {
            Schedule::Constant => 1.0,
            Schedule::Cosine if total == 0 => 1.0,
            Schedule::Cosine => 0.5 * (1.0 + (std::f64::consts::PI * t as f64 / total as f64).cos()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
    pub t: u64,
}

/// One AdamW update with learning rate `cfg.lr * lr_mult`; weight decay is
/// decoupled from the moment estimates.
pub fn adam_step(
    params: &mut BTreeMap<String, Tensor>,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
    lr_mult: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    state.t += 1;
    let t = state.t as i32;
    let (c1, c2) = (1.0 - cfg.beta1.powi(t), 1.0 - cfg.beta2.powi(t));
    let lr = cfg.lr * lr_mult;
    for (name, p) in params.iter_mut() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::Config(format!("no gradient for parameter {name}")))?;
        g.expect_shape(p.shape(), "adam gradient")?;
        let m = state.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape()));
        let v = state.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape()));
        m.expect_shape(p.shape(), "adam first moment")?;
        v.expect_shape(p.shape(), "adam second moment")?;
        let m_new = m.zip_map(g, |m, g| cfg.beta1 * m + (1.0 - cfg.beta1) * g)?;
        let v_new = v.zip_map(g, |v, g| cfg.beta2 * v + (1.0 - cfg.beta2) * g * g)?;
        let mut data = p.to_vec();
        for ((x, m), v) in data.iter_mut().zip(m_new.data()).zip(v_new.data()) {
            let step = (m / c1) / ((v / c2).sqrt() + cfg.eps) + cfg.weight_decay * *x;
            *x -= lr * step;
        }
        *p = Tensor::new(p.shape().to_vec(), data)?;
        *m = m_new;
        *v = v_new;
    }
    Ok(())
}

/// Rescales `grads` so that their global norm is at most `max_norm`; returns the norm before clipping.
pub fn clip_global_norm(grads: &mut BTreeMap<String, Tensor>, max_norm: f64) -> f64 {
    let norm = grads.values().map(|g| g.data().iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.values_mut() {
            *g = g.scale(s);
        }
    }
    norm
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub arch: ArchKind,
    pub dv: usize,
    pub modes: usize,
    pub layers: usize,
    pub blocks: usize,
    /// Unroll count of `fno-wt`.
    pub unroll: usize,
    /// Output activation of `Q`; targets are standardized, so `none` by default.
    pub q_activation: OutputActivation,
    /// Feed the grid coordinates to the lifting `P2`.
    pub grid: bool,
    pub backward: BackwardMode,
    pub solver: SolverKind,
    pub solver_steps: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub schedule: Schedule,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    /// Rescale the initial weights to this contraction estimate (DEQ stability).
    pub init_rho: Option<f64>,
    /// Record wall-clock seconds in the metrics; off by default so that
    /// metric files are reproducible byte for byte.
    pub wall_time: bool,
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            arch: ArchKind::FnoDeq,
            dv: 16,
            modes: 8,
            layers: 3,
            blocks: 1,
            unroll: 6,
            q_activation: OutputActivation::Identity,
            grid: true,
            backward: BackwardMode::Phantom(PhantomConfig { tau: 0.5, steps: 1 }),
            solver: SolverKind::Anderson,
            solver_steps: 32,
            lr: 1e-3,
            weight_decay: 1e-4,
            schedule: Schedule::Cosine,
            epochs: 10,
            batch: 32,
            seed: 0,
            init_rho: None,
            wall_time: false,
            data_dir: None,
            out_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive: {}", self.lr)));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be at least 1".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("wd must be non-negative".into()));
        }
        if self.solver_steps == 0 {
            return Err(Error::Config("solver_steps must be at least 1".into()));
        }
        Ok(())
    }

    /// Parses `key=value` lines; unknown keys are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let kv = parse_key_values(text)?;
        let mut c = TrainConfig::default();
        let mut tau = 0.5;
        let mut steps = 1;
        let mut backward: Option<String> = None;
        fn num<T: FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Config(format!("bad value for {k}: {v:?}")))
        }
        for (k, v) in &kv {
            match k.as_str() {
                "arch" => c.arch = v.parse()?,
                "dv" => c.dv = num(k, v)?,
                "modes" => c.modes = num(k, v)?,
                "layers" => c.layers = num(k, v)?,
                "blocks" => c.blocks = num(k, v)?,
                "M" => c.unroll = num(k, v)?,
                "q_activation" => c.q_activation = v.parse()?,
                "grid" => c.grid = num(k, v)?,
                "backward" => backward = Some(v.clone()),
                "tau" => tau = num(k, v)?,
                "S" => steps = num(k, v)?,
                "solver" => c.solver = v.parse()?,
                "solver_steps" => c.solver_steps = num(k, v)?,
                "lr" => c.lr = num(k, v)?,
                "wd" => c.weight_decay = num(k, v)?,
                "schedule" => c.schedule = v.parse()?,
                "epochs" => c.epochs = num(k, v)?,
                "batch" => c.batch = num(k, v)?,
                "seed" => c.seed = num(k, v)?,
                "init_rho" => c.init_rho = Some(num(k, v)?),
                "wall_time" => c.wall_time = num(k, v)?,
                "data_dir" => c.data_dir = Some(PathBuf::from(v)),
                "out_dir" => c.out_dir = Some(PathBuf::from(v)),
                _ => return Err(Error::Config(format!("unknown config key {k}"))),
            }
        }
        c.backward = match backward.as_deref() {
            None if kv.contains_key("tau") || kv.contains_key("S") => {
                BackwardMode::Phantom(PhantomConfig::new(tau, steps)?)
            }
            None => c.backward,
            Some("phantom") => BackwardMode::Phantom(PhantomConfig::new(tau, steps)?),
            Some(s) => s.parse()?,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn arch_config(&self, channels: (usize, usize)) -> ArchConfig {
        let (df, du) = channels;
        let mut a = ArchConfig::new(self.arch, du, df, self.dv, self.modes);
        a.layers = self.layers;
        a.blocks = self.blocks;
        a.unroll = self.unroll;
        a.grid = self.grid;
        a.output_activation = self.q_activation;
        a
    }

    pub fn deq_settings(&self) -> DeqSettings {
        DeqSettings {
            solver: self.solver,
            solver_cfg: SolverConfig::with_steps(self.solver_steps),
            backward: self.backward,
            ..DeqSettings::default()
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig::new(self.lr, self.weight_decay)
    }
}

/// Test-split metrics of one model.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub test_rel_l2: f64,
    /// Best-iterate solver residuals of `fno-deq`; `NaN` for explicit models.
    pub mean_abs_residual: f64,
    pub mean_rel_residual: f64,
    pub max_abs_residual: f64,
    pub max_rel_residual: f64,
}

/// Mean relative L2 error over `samples`, plus DEQ residual statistics.
pub fn evaluate_samples(model: &Model, samples: &[Sample], deq: &DeqSettings) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::Config("evaluation needs at least one sample".into()));
    }
    let rows = samples
        .par_iter()
        .map(|s| {
            let fwd = model.forward(&s.input, deq)?;
            let err = relative_l2(&fwd.output, &s.target)?;
            let res = fwd.trace.map(|t| {
                let b = t.best_row();
                (b.abs, b.rel)
            });
            Ok((err, res))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = rows.len() as f64;
    let mean = |f: &dyn Fn(&(f64, Option<(f64, f64)>)) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let max = |f: &dyn Fn(&(f64, Option<(f64, f64)>)) -> f64| rows.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
    let abs = |r: &(f64, Option<(f64, f64)>)| r.1.map_or(f64::NAN, |x| x.0);
    let rel = |r: &(f64, Option<(f64, f64)>)| r.1.map_or(f64::NAN, |x| x.1);
    Ok(Evaluation {
        test_rel_l2: mean(&|r| r.0),
        mean_abs_residual: mean(&abs),
        mean_rel_residual: mean(&rel),
        max_abs_residual: max(&abs),
        max_rel_residual: max(&rel),
    })
}

/// Evaluates on the clean test split after checking channel counts.
pub fn evaluate(model: &Model, dataset: &Dataset, deq: &DeqSettings) -> Result<Evaluation> {
    check_compatible(model, dataset)?;
    evaluate_samples(model, dataset.test(), deq)
}

fn check_compatible(model: &Model, dataset: &Dataset) -> Result<()> {
    let (df, du) = dataset.manifest.channels();
    if model.config.df != df || model.config.du != du {
        return Err(Error::Config(format!(
            "model expects {} input and {} output channels, dataset has {df} and {du}",
            model.config.df, model.config.du
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub train_mse: f64,
    pub eval: Evaluation,
    pub seconds: f64,
}

impl MetricsRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e},{}",
            self.epoch,
            self.train_mse,
            self.eval.test_rel_l2,
            self.eval.mean_abs_residual,
            self.eval.mean_rel_residual,
            self.seconds
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    /// Parameters with the lowest test error (the initialization when no epoch ran).
    pub best: Model,
    pub last: Model,
    pub metrics: Vec<MetricsRow>,
    /// `(epoch, test_rel_l2, best_so_far, saved)` per epoch.
    pub selection: Vec<(usize, f64, f64, bool)>,
}

impl TrainResult {
    pub fn metrics_csv(&self) -> String {
        let mut s = format!("{METRICS_HEADER}\n");
        for r in &self.metrics {
            s.push_str(&r.csv());
            s.push('\n');
        }
        s
    }

    pub fn selection_csv(&self) -> String {
        let mut s = format!("{SELECTION_HEADER}\n");
        for (e, err, best, saved) in &self.selection {
            s.push_str(&format!("{e},{err:e},{best:e},{}\n", *saved as u8));
        }
        s
    }
}

fn mean_grads(per_sample: Vec<BTreeMap<String, Tensor>>) -> Result<BTreeMap<String, Tensor>> {
    let n = per_sample.len() as f64;
    let mut it = per_sample.into_iter();
    let mut acc = it.next().ok_or_else(|| Error::Config("empty batch".into()))?;
    for g in it {
        for (k, v) in g {
            let a = acc.get_mut(&k).ok_or_else(|| Error::Config(format!("stray gradient {k}")))?;
            *a = a.add(&v)?;
        }
    }
    for v in acc.values_mut() {
        *v = v.scale(1.0 / n);
    }
    Ok(acc)
}

fn dump_batch(out: Option<&Path>, epoch: usize, batch: &[usize], losses: &[f64]) {
    let msg = format!("epoch={epoch}\nbatch={batch:?}\nlosses={losses:?}\n");
    log::error!("non-finite loss; last batch: {msg}");
    if let Some(dir) = out {
        let _ = fs::write(dir.join("nan_dump.txt"), msg);
    }
}

/// Trains a fresh model on `dataset`; writes `metrics.csv`, `selection.csv`,
/// `best.fnc` and `last.fnc` to `out_dir` when given.
pub fn train(dataset: &Dataset, cfg: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainResult> {
    cfg.validate()?;
    if dataset.train().is_empty() || dataset.test().is_empty() {
        return Err(Error::Config("training needs non-empty train and test splits".into()));
    }
    let arch = cfg.arch_config(dataset.manifest.channels());
    let mut model = Model::init(arch, cfg.seed)?;
    if let Some(rho) = cfg.init_rho {
        model = model.spectrally_normalized(rho)?;
    }
    let inputs: Vec<&Tensor> = dataset.train().iter().map(|s| &s.input).collect();
    let targets: Vec<&Tensor> = dataset.train().iter().map(|s| &s.target).collect();
    model.norm = Normalizer::fit(&inputs, &targets, model.config.df, model.config.du)?;
    train_model(model, dataset, cfg, out_dir)
}

/// Continues training `model`.
pub fn train_model(mut model: Model, dataset: &Dataset, cfg: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainResult> {
    cfg.validate()?;
    check_compatible(&model, dataset)?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
    }
    let deq = cfg.deq_settings();
    let adam = cfg.adam();
    let mut state = AdamState::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let train = dataset.train();
    let batches_per_epoch = train.len().div_ceil(cfg.batch);
    let total_steps = batches_per_epoch * cfg.epochs;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut result = TrainResult {
        best: model.clone(),
        last: model.clone(),
        metrics: Vec::new(),
        selection: Vec::new(),
    };
    let mut best_err = f64::INFINITY;
    let mut metrics_file = match out_dir {
        Some(dir) => {
            let mut f = fs::File::create(dir.join("metrics.csv"))?;
            writeln!(f, "{METRICS_HEADER}")?;
            Some(f)
        }
        None => None,
    };
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch) {
            let outs = batch
                .par_iter()
                .map(|&i| model.loss_and_grad(&train[i].input, &train[i].target, &deq))
                .collect::<Result<Vec<_>>>()?;
            let losses: Vec<f64> = outs.iter().map(|o| o.loss).collect();
            if losses.iter().any(|l| !l.is_finite()) {
                dump_batch(out_dir, epoch, batch, &losses);
                return Err(Error::NonFinite("training loss"));
            }
            loss_sum += losses.iter().sum::<f64>();
            let mut grads = mean_grads(outs.into_iter().map(|o| o.grads).collect())?;
            clip_global_norm(&mut grads, CLIP_NORM);
            let mult = cfg.schedule.multiplier(step, total_steps);
            adam_step(&mut model.params, &grads, &mut state, mult, &adam)?;
            step += 1;
            if model.params.values().any(|p| !p.is_finite()) {
                dump_batch(out_dir, epoch, batch, &losses);
                return Err(Error::NonFinite("parameter update"));
            }
        }
        let eval = evaluate_samples(&model, dataset.test(), &deq)?;
        let row = MetricsRow {
            epoch,
            train_mse: loss_sum / train.len() as f64,
            seconds: if cfg.wall_time { start.elapsed().as_secs_f64() } else { 0.0 },
            eval,
        };
        log::info!("{}", row.csv());
        let improved = row.eval.test_rel_l2 < best_err;
        if improved {
            best_err = row.eval.test_rel_l2;
            result.best = model.clone();
            if let Some(dir) = out_dir {
                save_checkpoint(dir.join("best.fnc"), &model)?;
            }
        }
        result.selection.push((epoch, row.eval.test_rel_l2, best_err, improved));
        if let Some(f) = metrics_file.as_mut() {
            writeln!(f, "{}", row.csv())?;
        }
        result.metrics.push(row);
    }
    result.last = model;
    if let Some(dir) = out_dir {
        if cfg.epochs == 0 {
            save_checkpoint(dir.join("best.fnc"), &result.best)?;
        }
        save_checkpoint(dir.join("last.fnc"), &result.last)?;
        fs::write(dir.join("selection.csv"), result.selection_csv())?;
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_params(x: f64) -> BTreeMap<String, Tensor> {
        BTreeMap::from([("x".to_string(), Tensor::scalar(x))])
    }

    #[test]
    fn zero_gradient_without_decay_leaves_params() {
        let mut p = scalar_params(1.5);
        let g = scalar_params(0.0);
        let mut s = AdamState::default();
        for _ in 0..3 {
            adam_step(&mut p, &g, &mut s, 1.0, &AdamConfig::new(0.1, 0.0)).unwrap();
        }
        assert_eq!(p["x"].data()[0], 1.5);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = scalar_params(0.0);
        let mut s = AdamState::default();
        adam_step(&mut p, &scalar_params(1.0), &mut s, 1.0, &AdamConfig::new(0.1, 0.0)).unwrap();
        assert!((p["x"].data()[0] + 0.1).abs() < 1e-8);
        // Constant gradients keep the bias-corrected step at lr.
        adam_step(&mut p, &scalar_params(1.0), &mut s, 1.0, &AdamConfig::new(0.1, 0.0)).unwrap();
        assert!((p["x"].data()[0] + 0.2).abs() < 1e-8);
    }

    #[test]
    fn decoupled_decay_shrinks_params() {
        let mut p = scalar_params(2.0);
        let mut s = AdamState::default();
        adam_step(&mut p, &scalar_params(0.0), &mut s, 1.0, &AdamConfig::new(0.1, 0.5)).unwrap();
        assert!((p["x"].data()[0] - 1.9).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = scalar_params(0.0);
        let g = BTreeMap::from([("x".to_string(), Tensor::zeros(&[2]))]);
        assert!(adam_step(&mut p, &g, &mut AdamState::default(), 1.0, &AdamConfig::new(0.1, 0.0)).is_err());
    }

    #[test]
    fn cosine_schedule() {
        assert_eq!(Schedule::Cosine.multiplier(0, 10), 1.0);
        assert!((Schedule::Cosine.multiplier(5, 10) - 0.5).abs() < 1e-15);
        assert!(Schedule::Cosine.multiplier(10, 10).abs() < 1e-15);
        assert_eq!(Schedule::Constant.multiplier(7, 10), 1.0);
    }

    #[test]
    fn clipping_caps_global_norm() {
        let mut g = BTreeMap::from([
            ("a".to_string(), Tensor::full(&[4], 10.0)),
            ("b".to_string(), Tensor::full(&[1], 0.0)),
        ]);
        assert_eq!(clip_global_norm(&mut g, 10.0), 20.0);
        assert!((g["a"].norm() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn config_parsing() {
        let c = TrainConfig::parse(
            "arch=fno-deq\ndv=8\nmodes=4\nbackward=phantom\ntau=0.8\nS=3\nsolver_steps=16\nlr=0.005\nwd=1e-4\nschedule=constant\nepochs=2\nbatch=4\nseed=1\ndata_dir=d\nout_dir=o\n",
        )
        .unwrap();
        assert_eq!(c.backward, BackwardMode::Phantom(PhantomConfig { tau: 0.8, steps: 3 }));
        assert_eq!(c.dv, 8);
        assert_eq!(c.schedule, Schedule::Constant);
        assert_eq!(c.data_dir, Some(PathBuf::from("d")));
        assert!(TrainConfig::parse("lr=0\n").is_err());
        assert!(TrainConfig::parse("batch=0\n").is_err());
        assert!(TrainConfig::parse("colour=blue\n").is_err());
        assert_eq!(TrainConfig::parse("backward=exact\n").unwrap().backward, BackwardMode::Exact);
    }
}
