//! Seeded problem families shared by tests and the command-line checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Random symmetric `A` (row-major `n x n`) with spectral radius exactly
/// `radius`, and a random offset `b`, for the affine map `z -> A z + b`.
pub fn symmetric_contraction(n: usize, seed: u64, radius: f64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(n);
    while q.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        for u in &q {
            let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
        }
        let norm = crate::tensor::norm(&v);
        if norm > 1e-8 {
            q.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    let eig: Vec<f64> = (0..n)
        .map(|i| if i == 0 { radius } else { rng.random_range(-radius..radius) })
        .collect();
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = (0..n).map(|k| q[k][i] * eig[k] * q[k][j]).sum();
        }
    }
    let b = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    (a, b)
}
