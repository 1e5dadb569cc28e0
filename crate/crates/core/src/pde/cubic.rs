//! The 1-D periodic semilinear problem `L(u) = u - ε u'' + u³ = f` on `[0, 2π)`,
//! discretized spectrally. Used as the Newton test bed.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::spectral::fft::Radix2;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct CubicProblem {
    pub eps: f64,
    pub n: usize,
}

impl CubicProblem {
    pub fn new(eps: f64, n: usize) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::NonPositiveCoefficient(eps));
        }
        if n < 4 || !n.is_power_of_two() {
            return Err(Error::UnsupportedSize(n));
        }
        Ok(CubicProblem { eps, n })
    }

    fn check(&self, u: &Tensor) -> Result<()> {
        u.expect_shape(&[self.n], "cubic problem state")
    }

    /// `-u''` by FFT (the Nyquist mode is kept: second derivatives are real there).
    pub fn neg_second_derivative(&self, u: &Tensor) -> Result<Tensor> {
        self.check(u)?;
        let n = self.n;
        let plan = Radix2::cached(n)?;
        let mut buf: Vec<Complex64> = u.data().iter().map(|&x| Complex64::new(x, 0.0)).collect();
        plan.process(&mut buf, false);
        for (i, z) in buf.iter_mut().enumerate() {
            let k = crate::spectral::mode_index(i, n) as f64;
            *z *= k * k / n as f64;
        }
        plan.process(&mut buf, true);
        Tensor::new(vec![n], buf.iter().map(|z| z.re).collect())
    }

    pub fn apply(&self, u: &Tensor) -> Result<Tensor> {
        let d = self.neg_second_derivative(u)?;
        u.zip_map(&d, |x, dx| x + self.eps * dx + x * x * x)
    }

    /// `L'(u) v = v - ε v'' + 3u² v`.
    pub fn derivative(&self, u: &Tensor, v: &Tensor) -> Result<Tensor> {
        self.check(u)?;
        let d = self.neg_second_derivative(v)?;
        let lin = v.axpy(self.eps, &d)?;
        let cubic = u.zip_map(v, |x, y| 3.0 * x * x * y)?;
        lin.add(&cubic)
    }

    /// Grid points `2π i / n`.
    pub fn grid(&self) -> Vec<f64> {
        (0..self.n).map(|i| 2.0 * std::f64::consts::PI * i as f64 / self.n as f64).collect()
    }

    /// A seeded smooth periodic field with `modes` random Fourier modes.
    pub fn smooth_field(&self, seed: u64, modes: usize, amplitude: f64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coeffs: Vec<(f64, f64)> = (0..modes)
            .map(|_| (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let x = self.grid();
        Tensor::from_fn(&[self.n], |i| {
            coeffs
                .iter()
                .enumerate()
                .map(|(k, (a, b))| {
                    let k1 = (k + 1) as f64;
                    amplitude * (a * (k1 * x[i]).cos() + b * (k1 * x[i]).sin()) / k1
                })
                .sum()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn second_derivative_of_trig_modes() {
        let p = CubicProblem::new(0.1, 32).unwrap();
        let x = p.grid();
        let u = Tensor::from_fn(&[32], |i| (3.0 * x[i]).sin() + (5.0 * x[i]).cos());
        let want = Tensor::from_fn(&[32], |i| 9.0 * (3.0 * x[i]).sin() + 25.0 * (5.0 * x[i]).cos());
        assert!(p.neg_second_derivative(&u).unwrap().sub(&want).unwrap().max_abs() < 1e-11);
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let p = CubicProblem::new(0.05, 16).unwrap();
        let u = p.smooth_field(1, 4, 1.0);
        let v = p.smooth_field(2, 4, 1.0);
        let h = 1e-6;
        let fd = p
            .apply(&u.axpy(h, &v).unwrap())
            .unwrap()
            .sub(&p.apply(&u.axpy(-h, &v).unwrap()).unwrap())
            .unwrap()
            .scale(0.5 / h);
        let an = p.derivative(&u, &v).unwrap();
        assert!(fd.sub(&an).unwrap().norm() < 1e-7 * an.norm());
    }
}
