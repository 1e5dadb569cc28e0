//! Reproducible Darcy and steady Navier-Stokes datasets with noise schedules.
//!
//! Every sample draws from its own ChaCha stream derived from `(seed, index)`,
//! so output is identical for any thread count.
//!
//! On disk a dataset is a directory holding `manifest.txt` (`key=value` lines)
//! and `input_%05d.fnt` / `target_%05d.fnt` per sample.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::format::{load_tensor, save_tensor};
use crate::pde::{self, ns};
use crate::spectral::{grf_sample_with, GrfParams, SpectralGrid};
use crate::tensor::Tensor;

pub const MANIFEST_VERSION: u32 = 1;
pub const DEFAULT_SPLIT: f64 = 0.9;
/// CG tolerance for Darcy targets.
pub const DARCY_TOL: f64 = 1e-10;
/// Largest admissible relative steady residual of an NS sample.
pub const NS_RESIDUAL_TOL: f64 = 1e-6;
const ATTEMPTS: u64 = 4;
const NOISE_DOMAIN: u64 = 0x6e6f_6973_6500_0000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PdeKind {
    Darcy,
    NavierStokes,
}

impl FromStr for PdeKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "darcy" => Ok(PdeKind::Darcy),
            "ns" => Ok(PdeKind::NavierStokes),
            _ => Err(Error::Config(format!("unknown pde {s:?} (expected darcy or ns)"))),
        }
    }
}

impl fmt::Display for PdeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PdeKind::Darcy => "darcy",
            PdeKind::NavierStokes => "ns",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseTarget {
    None,
    Inputs,
    Observations,
}

impl FromStr for NoiseTarget {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(NoiseTarget::None),
            "inputs" => Ok(NoiseTarget::Inputs),
            "observations" => Ok(NoiseTarget::Observations),
            _ => Err(Error::Config(format!(
                "unknown noise target {s:?} (expected none, inputs or observations)"
            ))),
        }
    }
}

impl fmt::Display for NoiseTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseTarget::None => "none",
            NoiseTarget::Inputs => "inputs",
            NoiseTarget::Observations => "observations",
        })
    }
}

/// Increasing variances `σ²₀ = 0 ≤ … ≤ σ²_{M-1}` and the side they corrupt.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    variances: Vec<f64>,
    target: NoiseTarget,
}

impl NoiseSchedule {
    pub fn new(variances: Vec<f64>, target: NoiseTarget) -> Result<Self> {
        if variances.first() != Some(&0.0) {
            return Err(Error::Config("noise schedule must start at variance 0".into()));
        }
        if variances.iter().any(|v| !v.is_finite()) || variances.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Config(format!("noise variances must be finite and non-decreasing: {variances:?}")));
        }
        if target == NoiseTarget::None && variances.len() > 1 {
            return Err(Error::Config("noise target none admits only the schedule [0]".into()));
        }
        if target != NoiseTarget::None && variances.len() < 2 {
            return Err(Error::Config(format!("noise target {target} needs at least one positive variance")));
        }
        Ok(NoiseSchedule { variances, target })
    }

    pub fn clean() -> Self {
        NoiseSchedule {
            variances: vec![0.0],
            target: NoiseTarget::None,
        }
    }

    /// Variances used for Darcy: `[0, 1e-9, …, 1e-3]`.
    pub fn darcy_levels(target: NoiseTarget) -> Result<Self> {
        Self::new(vec![0.0, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3], target)
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn target(&self) -> NoiseTarget {
        self.target
    }

    /// Checks `σ²_max ≤ 1/r`.
    pub fn validate_for_resolution(&self, res: usize) -> Result<()> {
        let max = *self.variances.last().unwrap_or(&0.0);
        if max > 1.0 / res as f64 {
            return Err(Error::Config(format!(
                "max noise variance {max} exceeds 1/resolution = {}",
                1.0 / res as f64
            )));
        }
        Ok(())
    }

    /// Samples per level when `n` samples are split into contiguous blocks;
    /// the remainder goes to level 0.
    pub fn level_counts(&self, n: usize) -> Vec<usize> {
        let m = self.variances.len();
        let mut counts = vec![n / m; m];
        counts[0] += n % m;
        counts
    }

    /// Noise level of sample `index` among `n`.
    pub fn level_of(&self, index: usize, n: usize) -> usize {
        let mut end = 0;
        for (level, c) in self.level_counts(n).into_iter().enumerate() {
            end += c;
            if index < end {
                return level;
            }
        }
        0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub pde: PdeKind,
    pub n: usize,
    pub res: usize,
    pub seed: u64,
    pub nu: Option<f64>,
    pub noise: NoiseSchedule,
    pub split: f64,
    pub version: u32,
}

impl Manifest {
    pub fn n_train(&self) -> usize {
        (self.split * self.n as f64).floor() as usize
    }

    /// `(input channels, target channels)`.
    pub fn channels(&self) -> (usize, usize) {
        match self.pde {
            PdeKind::Darcy => (1, 1),
            PdeKind::NavierStokes => (2, 1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("dataset needs at least one sample".into()));
        }
        if self.res < 4 || !self.res.is_power_of_two() {
            return Err(Error::UnsupportedSize(self.res));
        }
        if !(self.split > 0.0 && self.split <= 1.0) {
            return Err(Error::Config(format!("split must lie in (0, 1]: {}", self.split)));
        }
        match (self.pde, self.nu) {
            (PdeKind::NavierStokes, Some(nu)) if nu > 0.0 => {}
            (PdeKind::NavierStokes, _) => return Err(Error::Config("ns needs a positive nu".into())),
            (PdeKind::Darcy, None) => {}
            (PdeKind::Darcy, Some(_)) => return Err(Error::Config("nu is meaningless for darcy".into())),
        }
        self.noise.validate_for_resolution(self.res)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("version={}\n", self.version));
        s.push_str(&format!("pde={}\n", self.pde));
        s.push_str(&format!("n={}\n", self.n));
        s.push_str(&format!("res={}\n", self.res));
        s.push_str(&format!("seed={}\n", self.seed));
        if let Some(nu) = self.nu {
            s.push_str(&format!("nu={nu}\n"));
        }
        s.push_str(&format!("noise_target={}\n", self.noise.target));
        let vars: Vec<String> = self.noise.variances.iter().map(|v| v.to_string()).collect();
        s.push_str(&format!("noise_vars={}\n", vars.join(",")));
        s.push_str(&format!("split={}\n", self.split));
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let kv = parse_key_values(text)?;
        let get = |k: &str| kv.get(k).ok_or_else(|| Error::Format(format!("manifest lacks {k}")));
        let num = |k: &str| -> Result<f64> {
            get(k)?.parse().map_err(|_| Error::Format(format!("bad manifest value for {k}")))
        };
        let int = |k: &str| -> Result<u64> {
            get(k)?.parse().map_err(|_| Error::Format(format!("bad manifest value for {k}")))
        };
        for k in kv.keys() {
            if !["version", "pde", "n", "res", "seed", "nu", "noise_target", "noise_vars", "split"].contains(&k.as_str()) {
                return Err(Error::Format(format!("unknown manifest key {k}")));
            }
        }
        let variances = get("noise_vars")?
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| Error::Format(format!("bad noise variance {v:?}"))))
            .collect::<Result<Vec<_>>>()?;
        let m = Manifest {
            version: if kv.contains_key("version") { int("version")? as u32 } else { MANIFEST_VERSION },
            pde: get("pde")?.parse()?,
            n: int("n")? as usize,
            res: int("res")? as usize,
            seed: int("seed")?,
            nu: if kv.contains_key("nu") { Some(num("nu")?) } else { None },
            noise: NoiseSchedule::new(variances, get("noise_target")?.parse()?)?,
            split: if kv.contains_key("split") { num("split")? } else { DEFAULT_SPLIT },
        };
        if m.version != MANIFEST_VERSION {
            return Err(Error::Format(format!("unsupported manifest version {}", m.version)));
        }
        m.validate()?;
        Ok(m)
    }
}

/// Parses UTF-8 `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("line {}: expected key=value", lineno + 1)))?;
        if out.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
            return Err(Error::Format(format!("line {}: duplicate key {}", lineno + 1, k.trim())));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub input: Tensor,
    pub target: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn train(&self) -> &[Sample] {
        &self.samples[..self.manifest.n_train()]
    }

    pub fn test(&self) -> &[Sample] {
        &self.samples[self.manifest.n_train()..]
    }

    /// Writes the manifest and sample files. An existing manifest is only
    /// replaced when `force` is set.
    pub fn write(&self, dir: impl AsRef<Path>, force: bool) -> Result<()> {
        let dir = dir.as_ref();
        let manifest = dir.join("manifest.txt");
        if manifest.exists() && !force {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::AlreadyExists,
                format!("{} exists (use --force to overwrite)", manifest.display()),
            )));
        }
        fs::create_dir_all(dir)?;
        for (i, s) in self.samples.iter().enumerate() {
            save_tensor(dir.join(format!("input_{i:05}.fnt")), &s.input)?;
            save_tensor(dir.join(format!("target_{i:05}.fnt")), &s.target)?;
        }
        fs::write(manifest, self.manifest.to_text())?;
        Ok(())
    }

    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest = Manifest::parse(&fs::read_to_string(dir.join("manifest.txt"))?)?;
        let (ci, ct) = manifest.channels();
        let r = manifest.res;
        let samples = (0..manifest.n)
            .map(|i| {
                let input = load_tensor(dir.join(format!("input_{i:05}.fnt")))?;
                let target = load_tensor(dir.join(format!("target_{i:05}.fnt")))?;
                input.expect_shape(&[r, r, ci], "dataset input")?;
                target.expect_shape(&[r, r, ct], "dataset target")?;
                Ok(Sample { input, target })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset { manifest, samples })
    }
}

fn sample_stream(seed: u64, index: usize, attempt: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 * ATTEMPTS + attempt);
    rng
}

fn generate(n: usize, seed: u64, make: impl Fn(&mut ChaCha8Rng) -> Result<Sample> + Sync) -> Result<Vec<Sample>> {
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut last = None;
            for attempt in 0..ATTEMPTS {
                match make(&mut sample_stream(seed, i, attempt)) {
                    Ok(s) => return Ok(s),
                    Err(e) => {
                        log::warn!("sample {i} (seed {seed}, attempt {attempt}) failed: {e}");
                        last = Some(e);
                    }
                }
            }
            Err(last.unwrap())
        })
        .collect()
}

/// Coefficient `12` where a GRF is non-negative and `3` elsewhere.
pub fn darcy_coefficient(rng: &mut impl rand::Rng, res: usize) -> Result<Tensor> {
    let grid = SpectralGrid::torus(res)?;
    Ok(grf_sample_with(rng, &grid, &GrfParams::default())?.map(|x| if x >= 0.0 { 12.0 } else { 3.0 }))
}

/// `n` Darcy pairs `(a, u*)` with `f ≡ 1`, split 90/10.
pub fn gen_darcy(n: usize, res: usize, seed: u64) -> Result<Dataset> {
    let manifest = Manifest {
        pde: PdeKind::Darcy,
        n,
        res,
        seed,
        nu: None,
        noise: NoiseSchedule::clean(),
        split: DEFAULT_SPLIT,
        version: MANIFEST_VERSION,
    };
    manifest.validate()?;
    let samples = generate(n, seed, |rng| {
        let a = darcy_coefficient(rng, res)?;
        let p = pde::DarcyProblem::new(a.clone(), Tensor::ones(&[res, res, 1]))?;
        let u = pde::darcy_solve(&p, DARCY_TOL)?;
        Ok(Sample { input: a, target: u })
    })?;
    Ok(Dataset { manifest, samples })
}

/// One NS sample: evolve a GRF vorticity to `T`, then manufacture the forcing
/// that makes the final state steady.
pub fn ns_sample(rng: &mut impl rand::Rng, res: usize, nu: f64) -> Result<Sample> {
    let grid = SpectralGrid::torus(res)?;
    let w0 = ns::mask_two_thirds(&grf_sample_with(rng, &grid, &GrfParams::default())?)?;
    let stepper = ns::NsStepper::new(grid.clone(), nu, &ns::kolmogorov_forcing(&grid), ns::DT)?;
    let steps = (ns::FINAL_TIME / ns::DT).round() as usize;
    let chunk = 25;
    let mut w = w0;
    let mut done = 0;
    while done < steps {
        let cfl = ns::cfl_number(&w, ns::DT)?;
        if cfl > 1.0 {
            return Err(Error::Cfl(cfl));
        }
        let k = chunk.min(steps - done);
        w = stepper.run(&w, k)?;
        done += k;
    }
    let mean = w.mean();
    let w = ns::mask_two_thirds(&w.map(|x| x - mean))?;
    let force = ns::ns_force_from_solution(&w, nu)?;
    let f = ns::vorticity_from_force(&force)?;
    let rel = ns::ns_residual(&w, &f, nu)?.norm() / f.norm();
    if !(rel < NS_RESIDUAL_TOL) {
        return Err(Error::Contract(format!("steady residual {rel:e} of generated sample")));
    }
    Ok(Sample { input: force, target: w })
}

/// `n` NS pairs `((f₁, f₂), ω*)`, split 90/10.
pub fn gen_ns(n: usize, res: usize, nu: f64, seed: u64) -> Result<Dataset> {
    let manifest = Manifest {
        pde: PdeKind::NavierStokes,
        n,
        res,
        seed,
        nu: Some(nu),
        noise: NoiseSchedule::clean(),
        split: DEFAULT_SPLIT,
        version: MANIFEST_VERSION,
    };
    manifest.validate()?;
    let samples = generate(n, seed, |rng| ns_sample(rng, res, nu))?;
    Ok(Dataset { manifest, samples })
}

/// Adds white Gaussian noise to one side of the training split. Training
/// samples are partitioned into contiguous blocks, one per variance level;
/// the test split stays clean.
pub fn apply_noise(dataset: &Dataset, schedule: &NoiseSchedule, seed: u64) -> Result<Dataset> {
    if dataset.manifest.noise != NoiseSchedule::clean() {
        return Err(Error::Config("dataset already carries noise".into()));
    }
    schedule.validate_for_resolution(dataset.manifest.res)?;
    let n_train = dataset.manifest.n_train();
    let samples = dataset
        .samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            if i >= n_train || schedule.target == NoiseTarget::None {
                return s.clone();
            }
            let var = schedule.variances[schedule.level_of(i, n_train)];
            if var == 0.0 {
                return s.clone();
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ NOISE_DOMAIN);
            rng.set_stream(i as u64);
            let sd = var.sqrt();
            let noisy = |t: &Tensor, rng: &mut ChaCha8Rng| {
                t.zip_map(&Tensor::from_fn(t.shape(), |_| {
                    let z: f64 = StandardNormal.sample(rng);
                    sd * z
                }), |a, b| a + b)
            };
            match schedule.target {
                NoiseTarget::Inputs => Sample {
                    input: noisy(&s.input, &mut rng).expect("same shape"),
                    target: s.target.clone(),
                },
                _ => Sample {
                    input: s.input.clone(),
                    target: noisy(&s.target, &mut rng).expect("same shape"),
                },
            }
        })
        .collect();
    let mut manifest = dataset.manifest.clone();
    manifest.noise = schedule.clone();
    Ok(Dataset { manifest, samples })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eight_levels_over_800_samples_give_100_each() {
        let s = NoiseSchedule::darcy_levels(NoiseTarget::Inputs).unwrap();
        assert_eq!(s.level_counts(800), vec![100; 8]);
        assert_eq!(s.level_of(0, 800), 0);
        assert_eq!(s.level_of(99, 800), 0);
        assert_eq!(s.level_of(100, 800), 1);
        assert_eq!(s.level_of(799, 800), 7);
        assert_eq!(s.level_counts(803)[0], 103);
    }

    #[test]
    fn schedule_validation() {
        assert!(NoiseSchedule::new(vec![1e-3], NoiseTarget::Inputs).is_err());
        assert!(NoiseSchedule::new(vec![0.0, 1e-3], NoiseTarget::None).is_err());
        assert!(NoiseSchedule::new(vec![0.0, 1e-2, 1e-3], NoiseTarget::Inputs).is_err());
        let s = NoiseSchedule::new(vec![0.0, 0.1], NoiseTarget::Observations).unwrap();
        assert!(s.validate_for_resolution(64).is_err());
        assert!(s.validate_for_resolution(8).is_ok());
    }

    #[test]
    fn manifest_round_trip() {
        let m = Manifest {
            pde: PdeKind::NavierStokes,
            n: 10,
            res: 32,
            seed: 7,
            nu: Some(1e-3),
            noise: NoiseSchedule::darcy_levels(NoiseTarget::Observations).unwrap(),
            split: 0.9,
            version: MANIFEST_VERSION,
        };
        assert_eq!(Manifest::parse(&m.to_text()).unwrap(), m);
        assert!(Manifest::parse("pde=darcy\nn=1\n").is_err());
    }

    #[test]
    fn darcy_generation_is_deterministic_and_constructional() {
        let a = gen_darcy(3, 16, 5).unwrap();
        let b = gen_darcy(3, 16, 5).unwrap();
        assert_eq!(a, b);
        for s in &a.samples {
            assert!(s.input.data().iter().all(|&x| x == 3.0 || x == 12.0));
            for i in 0..16 {
                for j in 0..16 {
                    if i == 0 || j == 0 || i == 15 || j == 15 {
                        assert_eq!(s.target.at(i, j, 0), 0.0);
                    }
                }
            }
        }
        assert_ne!(a.samples[0], a.samples[1]);
    }

    #[test]
    fn clean_schedule_is_identity() {
        let d = gen_darcy(4, 8, 1).unwrap();
        assert_eq!(apply_noise(&d, &NoiseSchedule::clean(), 3).unwrap(), d);
    }

    #[test]
    fn noise_touches_one_side_of_the_training_split_only() {
        let d = gen_darcy(20, 8, 2).unwrap();
        let s = NoiseSchedule::new(vec![0.0, 1e-4], NoiseTarget::Observations).unwrap();
        let noisy = apply_noise(&d, &s, 9).unwrap();
        for (i, (a, b)) in d.samples.iter().zip(&noisy.samples).enumerate() {
            assert_eq!(a.input, b.input);
            let level = if i < 18 { s.level_of(i, 18) } else { 0 };
            assert_eq!(a.target == b.target, level == 0, "sample {i}");
        }
        assert_eq!(noisy.test(), d.test());
    }
}
