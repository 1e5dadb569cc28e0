//! `steadyop`: data generation, training, evaluation, gradient checks and
//! fixed-point traces for Fourier neural operators on steady-state PDEs.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 numerical failure
//! (including a failed gradient check).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use steadyop_core::datagen::{self, Dataset, NoiseSchedule, NoiseTarget, PdeKind};
use steadyop_core::fixedpoint::{SolverConfig, SolverKind};
use steadyop_core::fno::{load_checkpoint, ArchKind, DeqSettings};
use steadyop_core::gradcheck::{check_model, op_checks, ModelCheckOptions};
use steadyop_core::implicit_grad::BackwardMode;
use steadyop_core::train::{self, TrainConfig};
use steadyop_core::Error;

/// Tolerance of `gradcheck`.
const GRADCHECK_TOL: f64 = 1e-4;

#[derive(Parser, Debug)]
#[command(name = "steadyop", version, about = "Fourier neural operators for steady-state PDEs")]
struct Cli {
    /// Worker threads (falls back to STEADYOP_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a Darcy or Navier-Stokes dataset.
    GenData(GenData),
    /// Train a model from a key=value config file.
    Train(Train),
    /// Evaluate a checkpoint on the clean test split.
    Eval(Eval),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(Gradcheck),
    /// Record the fixed-point solver trace of an equilibrium model.
    FpTrace(FpTrace),
}

#[derive(Args, Debug)]
struct GenData {
    #[arg(long, value_parser = parse::<PdeKind>)]
    pde: PdeKind,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    res: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Viscosity (Navier-Stokes only).
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long, default_value = "none", value_parser = parse::<NoiseTarget>)]
    noise_target: NoiseTarget,
    /// Comma-separated noise variances starting at 0.
    #[arg(long, value_delimiter = ',')]
    noise_vars: Option<Vec<f64>>,
    /// Fraction of samples in the training split.
    #[arg(long, default_value_t = datagen::DEFAULT_SPLIT)]
    split: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct Train {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `data_dir` of the config.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Overrides `out_dir` of the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct SolverFlags {
    #[arg(long, default_value = "anderson", value_parser = parse::<SolverKind>)]
    solver: SolverKind,
    #[arg(long, default_value_t = 32)]
    max_steps: usize,
    #[arg(long, default_value_t = 5)]
    anderson_memory: usize,
    #[arg(long, default_value_t = 1.0)]
    anderson_damping: f64,
    #[arg(long, default_value_t = 1e-8)]
    anderson_reg: f64,
}

impl SolverFlags {
    fn settings(&self, tol: f64) -> DeqSettings {
        DeqSettings {
            solver: self.solver,
            solver_cfg: SolverConfig {
                max_steps: self.max_steps,
                tol_abs: tol,
                tol_rel: tol,
                memory: self.anderson_memory,
                damping: self.anderson_damping,
                regularization: self.anderson_reg,
                ..SolverConfig::default()
            },
            ..DeqSettings::default()
        }
    }
}

#[derive(Args, Debug)]
struct Eval {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    solver: SolverFlags,
    /// Also write the result row to this CSV file.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct Gradcheck {
    #[arg(long, default_value = "fno-deq", value_parser = parse::<ArchKind>)]
    arch: ArchKind,
    #[arg(long, default_value = "exact", value_parser = parse::<BackwardMode>)]
    backward: BackwardMode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also check every primitive operation.
    #[arg(long)]
    ops: bool,
}

#[derive(Args, Debug)]
struct FpTrace {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Index into the test split.
    #[arg(long, default_value_t = 0)]
    sample: usize,
    #[command(flatten)]
    solver: SolverFlags,
    /// Stopping tolerance (absolute and relative).
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> Result<T, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Failure classes mapped to exit codes.
enum Failure {
    Usage(String),
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Usage(e.to_string())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn refuse_overwrite(path: &Path, force: bool) -> Result<(), Failure> {
    if path.exists() && !force {
        return Err(Failure::Usage(format!("{} exists (use --force to overwrite)", path.display())));
    }
    Ok(())
}

fn write_output(out: Option<&Path>, force: bool, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => {
            refuse_overwrite(p, force)?;
            fs::write(p, text)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn gen_data(a: &GenData) -> Result<(), Failure> {
    refuse_overwrite(&a.out.join("manifest.txt"), a.force)?;
    let schedule = match &a.noise_vars {
        Some(v) => NoiseSchedule::new(v.clone(), a.noise_target)?,
        None if a.noise_target == NoiseTarget::None => NoiseSchedule::clean(),
        None => NoiseSchedule::darcy_levels(a.noise_target)?,
    };
    let mut d = match a.pde {
        PdeKind::Darcy => {
            if a.nu.is_some() {
                return Err(Failure::Usage("--nu only applies to --pde ns".into()));
            }
            datagen::gen_darcy(a.n, a.res, a.seed)?
        }
        PdeKind::NavierStokes => {
            let nu = a.nu.ok_or_else(|| Failure::Usage("--pde ns needs --nu".into()))?;
            datagen::gen_ns(a.n, a.res, nu, a.seed)?
        }
    };
    d.manifest.split = a.split;
    d.manifest.validate()?;
    let d = datagen::apply_noise(&d, &schedule, a.seed)?;
    d.write(&a.out, a.force)?;
    log::info!("wrote {} samples to {}", d.samples.len(), a.out.display());
    Ok(())
}

fn run_train(a: &Train) -> Result<(), Failure> {
    let mut cfg = TrainConfig::load(&a.config)?;
    if let Some(d) = &a.data {
        cfg.data_dir = Some(d.clone());
    }
    if let Some(o) = &a.out {
        cfg.out_dir = Some(o.clone());
    }
    let data = cfg.data_dir.clone().ok_or_else(|| Failure::Usage("no data_dir given".into()))?;
    let out = cfg.out_dir.clone().ok_or_else(|| Failure::Usage("no out_dir given".into()))?;
    refuse_overwrite(&out.join("metrics.csv"), a.force)?;
    let dataset = Dataset::read(&data)?;
    let arch = cfg.arch_config(dataset.manifest.channels());
    log::info!("{} with {} parameters, depth {}", arch.kind, arch.parameter_count(), arch.depth());
    let r = train::train(&dataset, &cfg, Some(&out))?;
    if let Some(last) = r.metrics.last() {
        println!("{}", last.csv());
    }
    Ok(())
}

fn run_eval(a: &Eval) -> Result<(), Failure> {
    if let Some(o) = &a.out {
        refuse_overwrite(o, a.force)?;
    }
    let model = load_checkpoint(&a.ckpt)?;
    let dataset = Dataset::read(&a.data)?;
    let e = train::evaluate(&model, &dataset, &a.solver.settings(SolverConfig::default().tol_abs))?;
    let text = format!(
        "test_rel_l2,mean_abs_residual,mean_rel_residual,max_abs_residual,max_rel_residual\n{:e},{:e},{:e},{:e},{:e}\n",
        e.test_rel_l2, e.mean_abs_residual, e.mean_rel_residual, e.max_abs_residual, e.max_rel_residual
    );
    print!("{text}");
    if let Some(o) = &a.out {
        fs::write(o, text)?;
    }
    Ok(())
}

fn run_gradcheck(a: &Gradcheck) -> Result<(), Failure> {
    let mut worst: f64 = 0.0;
    if a.ops {
        for c in op_checks(a.seed)? {
            eprintln!("op {:<12} {:e}", c.name, c.rel_err);
            worst = worst.max(c.rel_err);
        }
    }
    let check = check_model(&ModelCheckOptions {
        kind: a.arch,
        backward: a.backward,
        seed: a.seed,
        ..ModelCheckOptions::default()
    })?;
    for c in &check.per_param {
        eprintln!("{:<28} {:e}", c.name, c.rel_err);
    }
    worst = worst.max(check.max_rel_err());
    println!("max_rel_err={worst:e}");
    if worst < GRADCHECK_TOL {
        Ok(())
    } else {
        Err(Failure::Numerical(format!("gradient check failed: {worst:e} >= {GRADCHECK_TOL:e}")))
    }
}

fn run_fp_trace(a: &FpTrace) -> Result<(), Failure> {
    if let Some(o) = &a.out {
        refuse_overwrite(o, a.force)?;
    }
    let model = load_checkpoint(&a.ckpt)?;
    if model.config.kind != ArchKind::FnoDeq {
        return Err(Failure::Usage(format!("fp-trace needs an fno-deq checkpoint, got {}", model.config.kind)));
    }
    let dataset = Dataset::read(&a.data)?;
    let sample = dataset
        .test()
        .get(a.sample)
        .ok_or_else(|| Failure::Usage(format!("test split has {} samples", dataset.test().len())))?;
    let (_, trace) = model.equilibrium(&sample.input, &a.solver.settings(a.tol))?;
    write_output(a.out.as_deref(), a.force, &trace.to_csv())
}

fn configure_threads(flag: Option<usize>) -> Result<(), Failure> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var("STEADYOP_THREADS") {
            Ok(v) => Some(v.trim().parse().map_err(|_| Failure::Usage(format!("bad STEADYOP_THREADS {v:?}")))?),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = configure_threads(cli.threads).and_then(|_| match &cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Gradcheck(a) => run_gradcheck(a),
        Command::FpTrace(a) => run_fp_trace(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            log::error!("{m}");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(m)) => {
            log::error!("{m}");
            ExitCode::from(2)
        }
    }
}
