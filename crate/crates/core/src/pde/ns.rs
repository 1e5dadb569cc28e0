//! Vorticity-form Navier-Stokes on the `[0, 2π)²` torus.
//!
//! `∂ω/∂t + u·∇ω = ν∆ω + g` with `u = (-∂Ψ/∂x₂, ∂Ψ/∂x₁)`, `∆Ψ = ω`, so that
//! `∂u₂/∂x₁ - ∂u₁/∂x₂ = ω` and `∇·u = 0`. The advection term is evaluated in
//! conservative form `∇·(uω)` with 2/3-rule dealiasing; time stepping is a
//! second-order integrating-factor Runge-Kutta (Heun) scheme.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::spectral::{dealias, fft2, ifft2, SpectralGrid};
use crate::tensor::{ComplexTensor, Tensor};

/// Time step used for data generation.
pub const DT: f64 = 0.002;
/// Final time used for data generation.
pub const FINAL_TIME: f64 = 0.5;

fn check_scalar(grid: &SpectralGrid, f: &Tensor) -> Result<()> {
    grid.check(f.shape())?;
    if f.shape()[2] != 1 {
        return Err(Error::shape("vorticity", &[grid.nx(), grid.ny(), 1], f.shape()));
    }
    Ok(())
}

fn torus_for(f: &Tensor) -> Result<SpectralGrid> {
    let (nx, ny, _) = f.field_dims()?;
    let l = 2.0 * std::f64::consts::PI;
    SpectralGrid::new(nx, ny, l, l)
}

/// Spectra of `(u₁, u₂)` from a vorticity spectrum.
fn velocity_spectra(grid: &SpectralGrid, w: &ComplexTensor) -> (ComplexTensor, ComplexTensor) {
    let ny = grid.ny();
    let mut u1 = ComplexTensor::zeros(w.shape());
    let mut u2 = ComplexTensor::zeros(w.shape());
    let (d1, d2) = (u1.data_mut(), u2.data_mut());
    for (i, &kx) in grid.kx().iter().enumerate() {
        for (j, &ky) in grid.ky().iter().enumerate() {
            let k2 = kx * kx + ky * ky;
            if k2 == 0.0 {
                continue;
            }
            let idx = i * ny + j;
            let psi = -w.data()[idx] / k2;
            d1[idx] = -Complex64::new(0.0, ky) * psi;
            d2[idx] = Complex64::new(0.0, kx) * psi;
        }
    }
    (u1, u2)
}

/// Velocity `(u₁, u₂)` induced by a periodic vorticity field.
///
/// Odd derivatives drop the Nyquist modes, so the identity `∇×u = ω` is exact
/// for fields without Nyquist content.
pub fn velocity_from_vorticity(omega: &Tensor) -> Result<(Tensor, Tensor)> {
    let grid = torus_for(omega)?;
    check_scalar(&grid, omega)?;
    let mean = omega.mean();
    if mean.abs() > crate::spectral::SOLVABILITY_TOL {
        return Err(Error::Solvability(mean));
    }
    let mut w = fft2(omega)?;
    zero_nyquist(&grid, &mut w);
    let (u1, u2) = velocity_spectra(&grid, &w);
    Ok((ifft2(&u1)?, ifft2(&u2)?))
}

fn zero_nyquist(grid: &SpectralGrid, spec: &mut ComplexTensor) {
    let (nx, ny) = (grid.nx(), grid.ny());
    let d = spec.data_mut();
    for i in 0..nx {
        for j in 0..ny {
            if i == nx / 2 || j == ny / 2 {
                d[i * ny + j] = Complex64::new(0.0, 0.0);
            }
        }
    }
}

/// Spectrum of the dealiased advection term `∇·(uω)` for a vorticity spectrum.
fn advection_spectrum(grid: &SpectralGrid, w: &ComplexTensor) -> Result<ComplexTensor> {
    let mut wd = w.clone();
    dealias(&mut wd)?;
    let (u1s, u2s) = velocity_spectra(grid, &wd);
    let (om, u1, u2) = (ifft2(&wd)?, ifft2(&u1s)?, ifft2(&u2s)?);
    let mut f1 = fft2(&u1.zip_map(&om, |a, b| a * b)?)?;
    let f2 = fft2(&u2.zip_map(&om, |a, b| a * b)?)?;
    let ny = grid.ny();
    let d = f1.data_mut();
    for (i, &kx) in grid.kx().iter().enumerate() {
        for (j, &ky) in grid.ky().iter().enumerate() {
            let idx = i * ny + j;
            d[idx] = Complex64::new(0.0, kx) * d[idx] + Complex64::new(0.0, ky) * f2.data()[idx];
        }
    }
    dealias(&mut f1)?;
    Ok(f1)
}

/// Dealiased `u·∇ω` as a physical field.
pub fn advection(omega: &Tensor) -> Result<Tensor> {
    let grid = torus_for(omega)?;
    check_scalar(&grid, omega)?;
    ifft2(&advection_spectrum(&grid, &fft2(omega)?)?)
}

/// `max|u| · dt / h` for the velocity induced by `omega`.
pub fn cfl_number(omega: &Tensor, dt: f64) -> Result<f64> {
    let grid = torus_for(omega)?;
    let (u1, u2) = velocity_from_vorticity(&omega.map({
        let m = omega.mean();
        move |x| x - m
    }))?;
    let vmax = u1
        .data()
        .iter()
        .zip(u2.data())
        .map(|(a, b)| a.hypot(*b))
        .fold(0.0, f64::max);
    let (hx, hy) = grid.spacing();
    Ok(vmax * dt / hx.min(hy))
}

/// Integrating-factor RK2 stepper with cached symbols.
#[derive(Clone, Debug)]
pub struct NsStepper {
    grid: SpectralGrid,
    nu: f64,
    dt: f64,
    decay: Vec<f64>,
    forcing: ComplexTensor,
}

impl NsStepper {
    pub fn new(grid: SpectralGrid, nu: f64, forcing: &Tensor, dt: f64) -> Result<Self> {
        if !(nu > 0.0) || !(dt > 0.0) {
            return Err(Error::Config(format!("viscosity and time step must be positive: nu={nu}, dt={dt}")));
        }
        check_scalar(&grid, forcing)?;
        let mut decay = Vec::with_capacity(grid.nx() * grid.ny());
        for &kx in grid.kx() {
            for &ky in grid.ky() {
                decay.push((-nu * (kx * kx + ky * ky) * dt).exp());
            }
        }
        Ok(NsStepper {
            forcing: fft2(forcing)?,
            grid,
            nu,
            dt,
            decay,
        })
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// `-N̂(ω) + ĝ`.
    fn rhs(&self, w: &ComplexTensor) -> Result<ComplexTensor> {
        let mut n = advection_spectrum(&self.grid, w)?;
        for (a, g) in n.data_mut().iter_mut().zip(self.forcing.data()) {
            *a = g - *a;
        }
        Ok(n)
    }

    /// Advances a vorticity spectrum by one step.
    pub fn step_spectrum(&self, w: &ComplexTensor) -> Result<ComplexTensor> {
        let dt = self.dt;
        let f0 = self.rhs(w)?;
        let mut stage = w.clone();
        for ((s, f), e) in stage.data_mut().iter_mut().zip(f0.data()).zip(&self.decay) {
            *s = (*s + dt * f) * e;
        }
        let f1 = self.rhs(&stage)?;
        let mut out = w.clone();
        for (((o, a), b), e) in out.data_mut().iter_mut().zip(f0.data()).zip(f1.data()).zip(&self.decay) {
            *o = *e * (*o + 0.5 * dt * a) + 0.5 * dt * b;
        }
        if out.data().iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("navier-stokes step"));
        }
        Ok(out)
    }

    /// Advances `omega` by `steps` steps.
    pub fn run(&self, omega: &Tensor, steps: usize) -> Result<Tensor> {
        check_scalar(&self.grid, omega)?;
        let mut w = fft2(omega)?;
        for _ in 0..steps {
            w = self.step_spectrum(&w)?;
        }
        ifft2(&w)
    }
}

/// One IF-RK2 step of size `dt`; logs a warning when the CFL number exceeds one.
pub fn ns_step(omega: &Tensor, nu: f64, forcing: &Tensor, dt: f64) -> Result<Tensor> {
    let grid = torus_for(omega)?;
    let cfl = cfl_number(omega, dt)?;
    if cfl > 1.0 {
        log::warn!("CFL number {cfl:.3} exceeds 1");
    }
    NsStepper::new(grid, nu, forcing, dt)?.run(omega, 1)
}

/// The forcing `∇×(sin(5x₁) e₂) = 5 cos(5x₁)`.
pub fn kolmogorov_forcing(grid: &SpectralGrid) -> Tensor {
    grid.sample(|x, _| 5.0 * (5.0 * x).cos())
}

/// Scalar forcing `∂f₂/∂x₁ - ∂f₁/∂x₂` of a `[n, n, 2]` vector forcing.
pub fn vorticity_from_force(force: &Tensor) -> Result<Tensor> {
    let (nx, ny, c) = force.field_dims()?;
    if c != 2 {
        return Err(Error::shape("vector forcing", &[nx, ny, 2], force.shape()));
    }
    let grid = torus_for(force)?;
    let mut f1 = fft2(&force.channel(0)?)?;
    let f2 = fft2(&force.channel(1)?)?;
    let d = f1.data_mut();
    for (i, &kx) in grid.kx().iter().enumerate() {
        for (j, &ky) in grid.ky().iter().enumerate() {
            let idx = i * ny + j;
            let (kx, ky) = if i == nx / 2 || j == ny / 2 { (0.0, 0.0) } else { (kx, ky) };
            d[idx] = Complex64::new(0.0, kx) * f2.data()[idx] - Complex64::new(0.0, ky) * d[idx];
        }
    }
    ifft2(&f1)
}

/// Steady forcing that makes `omega` an exact equilibrium, as a vector field
/// `(f₁, f₂) = (-∂Φ/∂x₂, ∂Φ/∂x₁)` with `∆Φ = u·∇ω - ν∆ω`.
pub fn ns_force_from_solution(omega: &Tensor, nu: f64) -> Result<Tensor> {
    let grid = torus_for(omega)?;
    check_scalar(&grid, omega)?;
    let w = fft2(omega)?;
    let mut f = advection_spectrum(&grid, &w)?;
    let ny = grid.ny();
    for (i, &kx) in grid.kx().iter().enumerate() {
        for (j, &ky) in grid.ky().iter().enumerate() {
            let idx = i * ny + j;
            let k2 = kx * kx + ky * ky;
            f.data_mut()[idx] += nu * k2 * w.data()[idx];
        }
    }
    let (f1, f2) = velocity_spectra(&grid, &f);
    Tensor::stack_channels(&[ifft2(&f1)?, ifft2(&f2)?])
}

/// Steady residual `u·∇ω - ν∆ω - f` for a scalar forcing `f`.
pub fn ns_residual(omega: &Tensor, forcing: &Tensor, nu: f64) -> Result<Tensor> {
    let grid = torus_for(omega)?;
    check_scalar(&grid, omega)?;
    check_scalar(&grid, forcing)?;
    let lap = crate::spectral::laplacian(&grid, omega)?;
    let adv = advection(omega)?;
    adv.axpy(-nu, &lap)?.sub(forcing)
}

/// Zeroes every mode outside the 2/3 band.
pub fn mask_two_thirds(f: &Tensor) -> Result<Tensor> {
    let mut s = fft2(f)?;
    dealias(&mut s)?;
    ifft2(&s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{grf_sample, spectral_derivative, Axis, GrfParams};

    fn close(a: &Tensor, b: &Tensor, tol: f64) {
        let d = a.sub(b).unwrap().max_abs();
        assert!(d < tol, "max difference {d:e}");
    }

    fn random_vorticity(n: usize, seed: u64) -> Tensor {
        let grid = SpectralGrid::torus(n).unwrap();
        mask_two_thirds(&grf_sample(seed, &grid, &GrfParams::default()).unwrap()).unwrap()
    }

    #[test]
    fn velocity_has_vorticity_as_curl_and_is_divergence_free() {
        let omega = random_vorticity(32, 1);
        let grid = SpectralGrid::torus(32).unwrap();
        let (u1, u2) = velocity_from_vorticity(&omega).unwrap();
        let curl = spectral_derivative(&grid, &u2, Axis::X, 1)
            .unwrap()
            .sub(&spectral_derivative(&grid, &u1, Axis::Y, 1).unwrap())
            .unwrap();
        close(&curl, &omega, 1e-12);
        let div = spectral_derivative(&grid, &u1, Axis::X, 1)
            .unwrap()
            .add(&spectral_derivative(&grid, &u2, Axis::Y, 1).unwrap())
            .unwrap();
        assert!(div.max_abs() < 1e-12);
    }

    #[test]
    fn advection_matches_closed_form() {
        // ω = cos x + cos 2y gives u = (-sin(2y)/2, sin x) and u·∇ω = -1.5 sin x sin 2y.
        let grid = SpectralGrid::torus(16).unwrap();
        let omega = grid.sample(|x, y| x.cos() + (2.0 * y).cos());
        let (u1, u2) = velocity_from_vorticity(&omega).unwrap();
        close(&u1, &grid.sample(|_, y| -(2.0 * y).sin() / 2.0), 1e-13);
        close(&u2, &grid.sample(|x, _| x.sin()), 1e-13);
        close(&advection(&omega).unwrap(), &grid.sample(|x, y| -1.5 * x.sin() * (2.0 * y).sin()), 1e-12);
    }

    #[test]
    fn taylor_green_decays_exactly() {
        let grid = SpectralGrid::torus(32).unwrap();
        let omega = grid.sample(|x, y| 2.0 * x.sin() * y.sin());
        let nu = 0.05;
        let st = NsStepper::new(grid.clone(), nu, &Tensor::zeros(&[32, 32, 1]), 0.01).unwrap();
        let out = st.run(&omega, 100).unwrap();
        close(&out, &omega.scale((-2.0 * nu * 1.0f64).exp()), 1e-12);
    }

    #[test]
    fn mean_vorticity_is_conserved() {
        let grid = SpectralGrid::torus(32).unwrap();
        let omega = random_vorticity(32, 2).map(|x| x + 0.3);
        let st = NsStepper::new(grid.clone(), 1e-3, &kolmogorov_forcing(&grid), DT).unwrap();
        let out = st.run(&omega, 50).unwrap();
        assert!((out.mean() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn time_stepping_is_second_order() {
        let grid = SpectralGrid::torus(32).unwrap();
        let omega = random_vorticity(32, 3).scale(4.0);
        let g = kolmogorov_forcing(&grid);
        let t = 0.2;
        let run = |steps: usize| {
            NsStepper::new(grid.clone(), 1e-2, &g, t / steps as f64)
                .unwrap()
                .run(&omega, steps)
                .unwrap()
        };
        let reference = run(640);
        let e: Vec<f64> = [10, 20, 40].iter().map(|&s| run(s).sub(&reference).unwrap().norm()).collect();
        for w in e.windows(2) {
            assert!((w[0] / w[1]).log2() > 1.8, "{e:?}");
        }
    }

    #[test]
    fn manufactured_forcing_makes_the_field_steady() {
        let omega = random_vorticity(64, 4);
        let nu = 1e-3;
        let force = ns_force_from_solution(&omega, nu).unwrap();
        let f = vorticity_from_force(&force).unwrap();
        let r = ns_residual(&omega, &f, nu).unwrap();
        assert!(r.norm() / f.norm() < 1e-10, "{}", r.norm() / f.norm());
    }

    #[test]
    fn single_step_warns_but_succeeds_and_cfl_scales_with_dt() {
        let omega = random_vorticity(16, 5);
        let c1 = cfl_number(&omega, 0.01).unwrap();
        let c2 = cfl_number(&omega, 0.02).unwrap();
        assert!((c2 - 2.0 * c1).abs() < 1e-14);
        let g = Tensor::zeros(&[16, 16, 1]);
        assert!(ns_step(&omega, 1e-3, &g, 0.002).unwrap().is_finite());
    }
}
