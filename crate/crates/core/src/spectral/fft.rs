//! Iterative radix-2 Cooley-Tukey transforms with cached twiddle tables.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Precomputed plan for one power-of-two length.
#[derive(Debug)]
pub struct Radix2 {
    n: usize,
    twiddles: Vec<Complex64>,
    bitrev: Vec<usize>,
}

impl Radix2 {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || !n.is_power_of_two() {
            return Err(Error::UnsupportedSize(n));
        }
        let twiddles = (0..n / 2)
            .map(|k| {
                let theta = -2.0 * PI * k as f64 / n as f64;
                Complex64::new(theta.cos(), theta.sin())
            })
            .collect();
        let bits = n.trailing_zeros();
        let bitrev = (0..n)
            .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
            .collect();
        Ok(Radix2 { n, twiddles, bitrev })
    }

    /// Shared plan for length `n`.
    pub fn cached(n: usize) -> Result<Arc<Radix2>> {
        static PLANS: OnceLock<Mutex<HashMap<usize, Arc<Radix2>>>> = OnceLock::new();
        let plans = PLANS.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = plans.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(p) = guard.get(&n) {
            return Ok(Arc::clone(p));
        }
        let plan = Arc::new(Radix2::new(n)?);
        guard.insert(n, Arc::clone(&plan));
        Ok(plan)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Unnormalized transform in place; `inverse` flips the exponent sign.
    pub fn process(&self, buf: &mut [Complex64], inverse: bool) {
        let n = self.n;
        debug_assert_eq!(buf.len(), n);
        for i in 0..n {
            let j = self.bitrev[i];
            if i < j {
                buf.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let stride = n / len;
            for start in (0..n).step_by(len) {
                for k in 0..half {
                    let mut w = self.twiddles[k * stride];
                    if inverse {
                        w = w.conj();
                    }
                    let a = buf[start + k];
                    let b = buf[start + k + half] * w;
                    buf[start + k] = a + b;
                    buf[start + k + half] = a - b;
                }
            }
            len <<= 1;
        }
    }
}

/// Unnormalized 2-D transform of a `[nx, ny, nc]` complex array, channel by channel.
pub(crate) fn transform_2d(
    data: &mut [Complex64],
    nx: usize,
    ny: usize,
    nc: usize,
    inverse: bool,
) -> Result<()> {
    let px = Radix2::cached(nx)?;
    let py = Radix2::cached(ny)?;
    let mut line = vec![Complex64::new(0.0, 0.0); nx.max(ny)];
    if ny > 1 {
        for i in 0..nx {
            for c in 0..nc {
                let l = &mut line[..ny];
                for (j, z) in l.iter_mut().enumerate() {
                    *z = data[(i * ny + j) * nc + c];
                }
                py.process(l, inverse);
                for (j, z) in l.iter().enumerate() {
                    data[(i * ny + j) * nc + c] = *z;
                }
            }
        }
    }
    if nx > 1 {
        for j in 0..ny {
            for c in 0..nc {
                let l = &mut line[..nx];
                for (i, z) in l.iter_mut().enumerate() {
                    *z = data[(i * ny + j) * nc + c];
                }
                px.process(l, inverse);
                for (i, z) in l.iter().enumerate() {
                    data[(i * ny + j) * nc + c] = *z;
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft(x: &[Complex64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(j, &v)| {
                        let th = -2.0 * PI * (j * k) as f64 / n as f64;
                        v * Complex64::new(th.cos(), th.sin())
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn matches_naive_dft() {
        for &n in &[1usize, 2, 4, 8, 32] {
            let x: Vec<Complex64> = (0..n)
                .map(|i| Complex64::new((i as f64 * 0.7).sin(), (i as f64 * 1.3).cos()))
                .collect();
            let mut y = x.clone();
            Radix2::new(n).unwrap().process(&mut y, false);
            for (a, b) in y.iter().zip(naive_dft(&x)) {
                assert!((a - b).norm() < 1e-12, "n = {n}");
            }
        }
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert!(matches!(Radix2::new(12), Err(Error::UnsupportedSize(12))));
        assert!(Radix2::new(0).is_err());
    }
}
