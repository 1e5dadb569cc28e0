//! Two-dimensional Fourier analysis on periodic grids.
//!
//! All transforms use the unitary convention: both the forward and inverse
//! transforms carry a factor `1 / sqrt(nx * ny)`. Spectra share the
//! `[nx, ny, channels]` layout of the fields they come from; array index `i`
//! along an axis of length `n` holds integer frequency `i` for `i < n/2`,
//! `-n/2` at the Nyquist index `i = n/2`, and `i - n` above it. Physical
//! wavenumbers are the integer frequency times `2π / L` for domain length `L`.

pub mod fft;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::{ComplexTensor, Tensor};

pub use fft::Radix2;

/// Signed integer frequency stored at array index `i` of an axis of length `n`.
pub fn mode_index(i: usize, n: usize) -> i64 {
    if i < n.div_ceil(2) || n == 1 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

/// Array index holding integer frequency `k` on an axis of length `n`.
pub fn mode_slot(k: i64, n: usize) -> usize {
    k.rem_euclid(n as i64) as usize
}

fn is_nyquist(i: usize, n: usize) -> bool {
    n % 2 == 0 && n > 1 && i == n / 2
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

/// Uniform periodic grid with its wavenumber tables.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralGrid {
    nx: usize,
    ny: usize,
    lx: f64,
    ly: f64,
    kx: Vec<f64>,
    ky: Vec<f64>,
}

impl SpectralGrid {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        for n in [nx, ny] {
            if n < 4 || !n.is_power_of_two() {
                return Err(Error::UnsupportedSize(n));
            }
        }
        if !(lx > 0.0 && ly > 0.0) {
            return Err(Error::Config(format!("domain lengths must be positive: {lx}, {ly}")));
        }
        let table = |n: usize, l: f64| {
            (0..n)
                .map(|i| 2.0 * std::f64::consts::PI / l * mode_index(i, n) as f64)
                .collect::<Vec<_>>()
        };
        Ok(SpectralGrid {
            nx,
            ny,
            lx,
            ly,
            kx: table(nx, lx),
            ky: table(ny, ly),
        })
    }

    /// Square `n × n` grid on the `[0, 2π)²` torus.
    pub fn torus(n: usize) -> Result<Self> {
        let l = 2.0 * std::f64::consts::PI;
        Self::new(n, n, l, l)
    }

    pub fn for_field(f: &Tensor, lx: f64, ly: f64) -> Result<Self> {
        let (nx, ny, _) = f.field_dims()?;
        Self::new(nx, ny, lx, ly)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn lengths(&self) -> (f64, f64) {
        (self.lx, self.ly)
    }

    pub fn kx(&self) -> &[f64] {
        &self.kx
    }

    pub fn ky(&self) -> &[f64] {
        &self.ky
    }

    /// Grid spacing `(hx, hy)`.
    pub fn spacing(&self) -> (f64, f64) {
        (self.lx / self.nx as f64, self.ly / self.ny as f64)
    }

    /// Coordinates of grid point `(i, j)`.
    pub fn point(&self, i: usize, j: usize) -> (f64, f64) {
        let (hx, hy) = self.spacing();
        (i as f64 * hx, j as f64 * hy)
    }

    /// Single-channel field sampled from a function of position.
    pub fn sample(&self, f: impl Fn(f64, f64) -> f64) -> Tensor {
        Tensor::field_from_fn(self.nx, self.ny, 1, |i, j, _| {
            let (x, y) = self.point(i, j);
            f(x, y)
        })
    }

    pub(crate) fn check(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 3 || shape[0] != self.nx || shape[1] != self.ny {
            return Err(Error::shape("spectral grid", &[self.nx, self.ny], shape));
        }
        Ok(())
    }
}

/// Maximum retained integer frequency per axis for [`truncate_modes`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TruncationOrder(usize);

impl TruncationOrder {
    pub fn new(n: usize, nx: usize, ny: usize) -> Result<Self> {
        let cap = nx.min(ny) / 2;
        if n == 0 || n + 1 > cap {
            return Err(Error::Config(format!(
                "truncation order {n} outside 1..={} for a {nx}x{ny} grid",
                cap.saturating_sub(1)
            )));
        }
        Ok(TruncationOrder(n))
    }

    pub fn get(self) -> usize {
        self.0
    }
}

/// Unitary forward transform of a real field.
pub fn fft2(f: &Tensor) -> Result<ComplexTensor> {
    let (nx, ny, nc) = f.field_dims()?;
    let mut data: Vec<Complex64> = f.data().iter().map(|&x| Complex64::new(x, 0.0)).collect();
    fft::transform_2d(&mut data, nx, ny, nc, false)?;
    let s = 1.0 / ((nx * ny) as f64).sqrt();
    data.iter_mut().for_each(|z| *z *= s);
    ComplexTensor::new(f.shape().to_vec(), data)
}

/// Unitary forward transform of a complex field.
pub fn fft2_complex(f: &ComplexTensor) -> Result<ComplexTensor> {
    unitary(f, false)
}

/// Unitary inverse transform, complex output.
pub fn ifft2_complex(f: &ComplexTensor) -> Result<ComplexTensor> {
    unitary(f, true)
}

fn unitary(f: &ComplexTensor, inverse: bool) -> Result<ComplexTensor> {
    let (nx, ny, nc) = f.field_dims()?;
    let mut data = f.data().to_vec();
    fft::transform_2d(&mut data, nx, ny, nc, inverse)?;
    let s = 1.0 / ((nx * ny) as f64).sqrt();
    data.iter_mut().for_each(|z| *z *= s);
    ComplexTensor::new(f.shape().to_vec(), data)
}

/// Largest `|F(k) - conj(F(-k))|` over the spectrum.
pub fn conjugate_asymmetry(spec: &ComplexTensor) -> Result<f64> {
    let (nx, ny, nc) = spec.field_dims()?;
    let mut worst: f64 = 0.0;
    for i in 0..nx {
        let ni = (nx - i) % nx;
        for j in 0..ny {
            let nj = (ny - j) % ny;
            for c in 0..nc {
                worst = worst.max((spec.at(i, j, c) - spec.at(ni, nj, c).conj()).norm());
            }
        }
    }
    Ok(worst)
}

/// Tolerance on conjugate asymmetry accepted by [`ifft2`], relative to the
/// largest coefficient magnitude (and absolute below magnitude one).
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Unitary inverse transform to a real field.
///
/// The spectrum must be conjugate symmetric to within [`SYMMETRY_TOL`]; it is
/// symmetrized before inversion so the residual imaginary part is dropped.
pub fn ifft2(spec: &ComplexTensor) -> Result<Tensor> {
    let (nx, ny, nc) = spec.field_dims()?;
    let scale = spec.data().iter().fold(1.0f64, |m, z| m.max(z.norm()));
    let asym = conjugate_asymmetry(spec)?;
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::Symmetry(asym));
    }
    let mut sym = spec.clone();
    {
        let d = sym.data_mut();
        for i in 0..nx {
            let ni = (nx - i) % nx;
            for j in 0..ny {
                let nj = (ny - j) % ny;
                for c in 0..nc {
                    let a = spec.at(i, j, c);
                    let b = spec.at(ni, nj, c).conj();
                    d[(i * ny + j) * nc + c] = 0.5 * (a + b);
                }
            }
        }
    }
    Ok(ifft2_complex(&sym)?.re())
}

/// Real part of the unitary inverse transform, without a symmetry check.
pub(crate) fn ifft2_real_part(spec: &ComplexTensor) -> Result<Tensor> {
    Ok(ifft2_complex(spec)?.re())
}

/// Zeroes every coefficient with `max(|kx|, |ky|) > N`.
pub fn truncate_modes(spec: &ComplexTensor, order: TruncationOrder) -> Result<ComplexTensor> {
    let (nx, ny, nc) = spec.field_dims()?;
    let n = order.get() as i64;
    let mut out = spec.clone();
    let d = out.data_mut();
    for i in 0..nx {
        let mi = mode_index(i, nx).abs();
        for j in 0..ny {
            let mj = mode_index(j, ny).abs();
            if mi.max(mj) > n {
                for c in 0..nc {
                    d[(i * ny + j) * nc + c] = Complex64::new(0.0, 0.0);
                }
            }
        }
    }
    Ok(out)
}

/// Applies `Π_N` to a real field: transform, truncate, invert.
pub fn project_modes(f: &Tensor, order: TruncationOrder) -> Result<Tensor> {
    ifft2(&truncate_modes(&fft2(f)?, order)?)
}

/// Multiplies every coefficient by a real symbol of the wavenumbers.
fn apply_symbol(
    grid: &SpectralGrid,
    spec: &mut ComplexTensor,
    symbol: impl Fn(usize, usize) -> Complex64,
) -> Result<()> {
    grid.check(spec.shape())?;
    let (nx, ny, nc) = spec.field_dims()?;
    let d = spec.data_mut();
    for i in 0..nx {
        for j in 0..ny {
            let s = symbol(i, j);
            for c in 0..nc {
                d[(i * ny + j) * nc + c] *= s;
            }
        }
    }
    Ok(())
}

/// `(i k)^order` along one axis; the Nyquist mode is zeroed for odd orders.
fn derivative_symbol(grid: &SpectralGrid, axis: Axis, order: u32, i: usize, j: usize) -> Complex64 {
    let (idx, n, k) = match axis {
        Axis::X => (i, grid.nx, grid.kx[i]),
        Axis::Y => (j, grid.ny, grid.ky[j]),
    };
    if order % 2 == 1 && is_nyquist(idx, n) {
        return Complex64::new(0.0, 0.0);
    }
    Complex64::new(0.0, k).powu(order)
}

/// Derivative in spectral space (in place on a spectrum).
pub fn differentiate_spectrum(
    grid: &SpectralGrid,
    spec: &mut ComplexTensor,
    axis: Axis,
    order: u32,
) -> Result<()> {
    apply_symbol(grid, spec, |i, j| derivative_symbol(grid, axis, order, i, j))
}

/// `∂^order f / ∂axis^order` of a periodic field.
pub fn spectral_derivative(grid: &SpectralGrid, f: &Tensor, axis: Axis, order: u32) -> Result<Tensor> {
    grid.check(f.shape())?;
    let mut spec = fft2(f)?;
    differentiate_spectrum(grid, &mut spec, axis, order)?;
    ifft2(&spec)
}

/// `Δf` of a periodic field.
pub fn laplacian(grid: &SpectralGrid, f: &Tensor) -> Result<Tensor> {
    grid.check(f.shape())?;
    let mut spec = fft2(f)?;
    apply_symbol(grid, &mut spec, |i, j| {
        Complex64::new(-(grid.kx[i] * grid.kx[i] + grid.ky[j] * grid.ky[j]), 0.0)
    })?;
    ifft2(&spec)
}

/// Largest admissible `|mean(ω)|` for [`poisson_solve`].
pub const SOLVABILITY_TOL: f64 = 1e-8;

/// Solves `ΔΨ = ω` on the periodic grid with `mean(Ψ) = 0`.
pub fn poisson_solve(grid: &SpectralGrid, omega: &Tensor) -> Result<Tensor> {
    grid.check(omega.shape())?;
    let (_, _, nc) = omega.field_dims()?;
    for c in 0..nc {
        let m = omega.channel(c)?.mean();
        if m.abs() > SOLVABILITY_TOL {
            return Err(Error::Solvability(m));
        }
    }
    let mut spec = fft2(omega)?;
    poisson_spectrum(grid, &mut spec)?;
    ifft2(&spec)
}

/// Divides by `-|k|²` in place, zeroing the mean mode.
pub(crate) fn poisson_spectrum(grid: &SpectralGrid, spec: &mut ComplexTensor) -> Result<()> {
    apply_symbol(grid, spec, |i, j| {
        let k2 = grid.kx[i] * grid.kx[i] + grid.ky[j] * grid.ky[j];
        if k2 == 0.0 {
            Complex64::new(0.0, 0.0)
        } else {
            Complex64::new(-1.0 / k2, 0.0)
        }
    })
}

/// Keeps integer frequencies with `|kx| <= nx/3` and `|ky| <= ny/3` (the 2/3 rule).
pub fn dealias(spec: &mut ComplexTensor) -> Result<()> {
    let (nx, ny, nc) = spec.field_dims()?;
    let (cx, cy) = ((nx / 3) as i64, (ny / 3) as i64);
    let d = spec.data_mut();
    for i in 0..nx {
        let keep_i = mode_index(i, nx).abs() <= cx && !is_nyquist(i, nx);
        for j in 0..ny {
            let keep = keep_i && mode_index(j, ny).abs() <= cy && !is_nyquist(j, ny);
            if !keep {
                for c in 0..nc {
                    d[(i * ny + j) * nc + c] = Complex64::new(0.0, 0.0);
                }
            }
        }
    }
    Ok(())
}

/// Covariance parameters of a Gaussian random field.
///
/// Fourier-series coefficients `c_k` of the field `Σ c_k e^{i k·x}` are unit
/// complex Gaussians scaled by the standard deviation
/// `scale · (1 + stiffness |k|²)^(-power / 2)`; the mean mode is removed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GrfParams {
    pub scale: f64,
    pub stiffness: f64,
    pub power: f64,
}

impl Default for GrfParams {
    fn default() -> Self {
        GrfParams {
            scale: 5f64.powf(1.5),
            stiffness: 25.0,
            power: 2.5,
        }
    }
}

impl GrfParams {
    /// Standard deviation of the coefficient at squared wavenumber `k2`.
    pub fn amplitude(&self, k2: f64) -> f64 {
        self.scale * (1.0 + self.stiffness * k2).powf(-0.5 * self.power)
    }
}

/// Draws one zero-mean Gaussian random field as a `[nx, ny, 1]` tensor.
pub fn grf_sample(seed: u64, grid: &SpectralGrid, params: &GrfParams) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    grf_sample_with(&mut rng, grid, params)
}

/// As [`grf_sample`], drawing from a caller-provided stream.
pub fn grf_sample_with(
    rng: &mut impl rand::Rng,
    grid: &SpectralGrid,
    params: &GrfParams,
) -> Result<Tensor> {
    let (nx, ny) = (grid.nx, grid.ny);
    let noise = Tensor::from_fn(&[nx, ny, 1], |_| StandardNormal.sample(rng));
    // The unitary transform of white noise has unit-variance, conjugate-symmetric modes.
    let mut spec = fft2(&noise)?;
    let root_n = ((nx * ny) as f64).sqrt();
    apply_symbol(grid, &mut spec, |i, j| {
        let k2 = grid.kx[i] * grid.kx[i] + grid.ky[j] * grid.ky[j];
        if k2 == 0.0 {
            Complex64::new(0.0, 0.0)
        } else {
            Complex64::new(root_n * params.amplitude(k2), 0.0)
        }
    })?;
    let field = ifft2(&spec)?;
    let mean = field.mean();
    Ok(field.map(|x| x - mean))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn random_field(nx: usize, ny: usize, nc: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(&[nx, ny, nc], |_| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn mode_index_layout() {
        let idx: Vec<i64> = (0..8).map(|i| mode_index(i, 8)).collect();
        assert_eq!(idx, vec![0, 1, 2, 3, -4, -3, -2, -1]);
        for k in -3..=3 {
            assert_eq!(mode_index(mode_slot(k, 8), 8), k);
        }
        let grid = SpectralGrid::torus(8).unwrap();
        assert_eq!(grid.kx()[4], -4.0);
        assert_eq!(grid.ky()[7], -1.0);
    }

    #[test]
    fn grid_rejects_bad_sizes() {
        assert!(matches!(SpectralGrid::torus(12), Err(Error::UnsupportedSize(12))));
        assert!(SpectralGrid::torus(2).is_err());
        assert!(fft2(&Tensor::zeros(&[6, 8, 1])).is_err());
    }

    #[test]
    fn constant_field_has_only_mean_mode() {
        let f = Tensor::full(&[8, 16, 1], 3.0);
        let s = fft2(&f).unwrap();
        let expected = 3.0 * (8.0f64 * 16.0).sqrt();
        assert!((s.at(0, 0, 0) - Complex64::new(expected, 0.0)).norm() < 1e-12);
        let others: f64 = s.data()[1..].iter().map(|z| z.norm()).sum();
        assert!(others < 1e-12);
    }

    #[test]
    fn cosine_lives_in_first_x_modes() {
        let grid = SpectralGrid::torus(16).unwrap();
        let f = grid.sample(|x, _| x.cos());
        let s = fft2(&f).unwrap();
        for i in 0..16 {
            for j in 0..16 {
                let m = s.at(i, j, 0).norm();
                if j == 0 && (i == 1 || i == 15) {
                    assert!((m - 8.0).abs() < 1e-12);
                } else {
                    assert!(m < 1e-12, "mode ({i},{j}) = {m}");
                }
            }
        }
    }

    #[test]
    fn round_trip_and_parseval() {
        let f = random_field(8, 8, 2, 3);
        let s = fft2(&f).unwrap();
        let back = ifft2(&s).unwrap();
        assert!(back.sub(&f).unwrap().max_abs() < 1e-12);
        assert!((s.norm() - f.norm()).abs() < 1e-10);
    }

    #[test]
    fn delta_spectrum_is_a_plane_wave() {
        let mut s = ComplexTensor::zeros(&[8, 8, 1]);
        s.data_mut()[(1 * 8) * 1] = Complex64::new(0.5, 0.0);
        s.data_mut()[(7 * 8) * 1] = Complex64::new(0.5, 0.0);
        let f = ifft2(&s).unwrap();
        let grid = SpectralGrid::torus(8).unwrap();
        let expected = grid.sample(|x, _| x.cos() / 8.0);
        assert!(f.sub(&expected).unwrap().max_abs() < 1e-14);
        assert_eq!(ifft2(&ComplexTensor::zeros(&[4, 4, 1])).unwrap(), Tensor::zeros(&[4, 4, 1]));
    }

    #[test]
    fn ifft2_rejects_asymmetric_spectrum() {
        let mut s = ComplexTensor::zeros(&[8, 8, 1]);
        s.data_mut()[8] = Complex64::new(1.0, 0.0);
        assert!(matches!(ifft2(&s), Err(Error::Symmetry(_))));
    }

    #[test]
    fn truncation_examples() {
        let grid = SpectralGrid::torus(16).unwrap();
        let n1 = TruncationOrder::new(1, 16, 16).unwrap();
        let n2 = TruncationOrder::new(2, 16, 16).unwrap();
        let mode1 = grid.sample(|x, _| x.cos());
        assert!(project_modes(&mode1, n1).unwrap().sub(&mode1).unwrap().max_abs() < 1e-14);
        let mode3 = grid.sample(|x, _| (3.0 * x).cos());
        assert!(project_modes(&mode3, n2).unwrap().max_abs() < 1e-14);
        assert!(TruncationOrder::new(0, 16, 16).is_err());
        assert!(TruncationOrder::new(8, 16, 16).is_err());
        assert!(TruncationOrder::new(7, 16, 16).is_ok());
    }

    #[test]
    fn truncation_matches_direct_fourier_series() {
        // Brute force: Fourier coefficients by direct summation, then the
        // series restricted to max(|kx|,|ky|) <= 2 evaluated at every point.
        let n = 8;
        let f = random_field(n, n, 1, 11);
        let order = TruncationOrder::new(2, n, n).unwrap();
        let fast = project_modes(&f, order).unwrap();
        let h = 2.0 * PI / n as f64;
        let mut retained = 0;
        let mut coeffs = Vec::new();
        for kx in -2i64..=2 {
            for ky in -2i64..=2 {
                retained += 1;
                let mut c = Complex64::new(0.0, 0.0);
                for i in 0..n {
                    for j in 0..n {
                        let th = -(kx as f64 * i as f64 + ky as f64 * j as f64) * h;
                        c += f.at(i, j, 0) * Complex64::new(th.cos(), th.sin());
                    }
                }
                coeffs.push((kx, ky, c / (n * n) as f64));
            }
        }
        assert_eq!(retained, 25);
        for i in 0..n {
            for j in 0..n {
                let v: Complex64 = coeffs
                    .iter()
                    .map(|&(kx, ky, c)| {
                        let th = (kx as f64 * i as f64 + ky as f64 * j as f64) * h;
                        c * Complex64::new(th.cos(), th.sin())
                    })
                    .sum();
                assert!((v.re - fast.at(i, j, 0)).abs() < 1e-12);
                assert!(v.im.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn derivative_of_sine_and_laplacian_eigenfunction() {
        let grid = SpectralGrid::torus(32).unwrap();
        let s = grid.sample(|x, _| x.sin());
        let d = spectral_derivative(&grid, &s, Axis::X, 1).unwrap();
        assert!(d.sub(&grid.sample(|x, _| x.cos())).unwrap().max_abs() < 1e-10);
        let e = grid.sample(|x, y| x.sin() * y.sin());
        let lap = laplacian(&grid, &e).unwrap();
        assert!(lap.sub(&e.scale(-2.0)).unwrap().max_abs() < 1e-10);
        let dyy = spectral_derivative(&grid, &e, Axis::Y, 2).unwrap();
        assert!(dyy.sub(&e.scale(-1.0)).unwrap().max_abs() < 1e-10);
    }

    #[test]
    fn derivative_matches_dense_differentiation_matrix() {
        // Dense oracle: the periodic spectral differentiation matrix for even n,
        // D[i][j] = 0.5 (-1)^(i-j) cot((i-j) h / 2) for i != j (Nyquist dropped).
        let n = 16;
        let grid = SpectralGrid::torus(n).unwrap();
        let order = TruncationOrder::new(5, n, n).unwrap();
        let f = project_modes(&random_field(n, n, 1, 5), order).unwrap();
        let h = 2.0 * PI / n as f64;
        let dmat = |i: usize, j: usize| -> f64 {
            if i == j {
                0.0
            } else {
                let d = i as i64 - j as i64;
                let sign = if d.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                0.5 * sign / (d as f64 * h / 2.0).tan()
            }
        };
        let fast_x = spectral_derivative(&grid, &f, Axis::X, 1).unwrap();
        let fast_y = spectral_derivative(&grid, &f, Axis::Y, 1).unwrap();
        for i in 0..n {
            for j in 0..n {
                let dx: f64 = (0..n).map(|m| dmat(i, m) * f.at(m, j, 0)).sum();
                let dy: f64 = (0..n).map(|m| dmat(j, m) * f.at(i, m, 0)).sum();
                assert!((dx - fast_x.at(i, j, 0)).abs() < 1e-9);
                assert!((dy - fast_y.at(i, j, 0)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn derivative_commutes_with_truncation() {
        let n = 16;
        let grid = SpectralGrid::torus(n).unwrap();
        let order = TruncationOrder::new(4, n, n).unwrap();
        let f = project_modes(&random_field(n, n, 1, 9), TruncationOrder::new(6, n, n).unwrap()).unwrap();
        let a = project_modes(&spectral_derivative(&grid, &f, Axis::Y, 1).unwrap(), order).unwrap();
        let b = spectral_derivative(&grid, &project_modes(&f, order).unwrap(), Axis::Y, 1).unwrap();
        assert!(a.sub(&b).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn poisson_examples() {
        let grid = SpectralGrid::torus(32).unwrap();
        let psi = grid.sample(|x, y| x.sin() * y.sin());
        let omega = psi.scale(-2.0);
        let solved = poisson_solve(&grid, &omega).unwrap();
        assert!(solved.sub(&psi).unwrap().max_abs() < 1e-12);
        assert_eq!(poisson_solve(&grid, &Tensor::zeros(&[32, 32, 1])).unwrap().max_abs(), 0.0);
        let shifted = omega.map(|x| x + 1e-3);
        assert!(matches!(poisson_solve(&grid, &shifted), Err(Error::Solvability(_))));
    }

    #[test]
    fn poisson_residual_on_random_zero_mean_input() {
        let grid = SpectralGrid::torus(16).unwrap();
        let raw = random_field(16, 16, 1, 2);
        let m = raw.mean();
        let omega = raw.map(|x| x - m);
        let psi = poisson_solve(&grid, &omega).unwrap();
        let res = laplacian(&grid, &psi).unwrap().sub(&omega).unwrap();
        // Nyquist content of a white-noise field survives the even-order Laplacian.
        assert!(res.norm() / omega.norm() < 1e-10);
        assert!(psi.mean().abs() < 1e-14);
    }

    #[test]
    fn grf_is_deterministic_and_zero_mean() {
        let grid = SpectralGrid::torus(32).unwrap();
        let p = GrfParams::default();
        let a = grf_sample(7, &grid, &p).unwrap();
        let b = grf_sample(7, &grid, &p).unwrap();
        assert_eq!(a.data(), b.data());
        assert!(a.mean().abs() < 1e-15);
        let c = grf_sample(8, &grid, &p).unwrap();
        assert_ne!(a.data(), c.data());
    }
}
