//! Matrix-free Krylov solvers.

use crate::error::{Error, Result};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    crate::tensor::norm(a)
}

/// Outcome of an iterative linear solve.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearSolve {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// `||b - A x|| / ||b||` at exit.
    pub relative_residual: f64,
}

/// Conjugate gradients for a symmetric positive definite operator.
///
/// Stops when `||r|| <= tol * ||b||`; returns [`Error::NotConverged`] after `max_iter`.
pub fn cg(
    apply: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    x0: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> Result<LinearSolve> {
    let n = b.len();
    let bn = norm(b);
    let mut x = x0.map(|x| x.to_vec()).unwrap_or_else(|| vec![0.0; n]);
    if bn == 0.0 {
        return Ok(LinearSolve {
            x: vec![0.0; n],
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut ap = vec![0.0; n];
    apply(&x, &mut ap);
    let mut r: Vec<f64> = b.iter().zip(&ap).map(|(b, a)| b - a).collect();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    for it in 0..=max_iter {
        let rel = rr.sqrt() / bn;
        if !rel.is_finite() {
            return Err(Error::NonFinite("conjugate gradients"));
        }
        if rel <= tol {
            return Ok(LinearSolve {
                x,
                iterations: it,
                relative_residual: rel,
            });
        }
        if it == max_iter {
            return Err(Error::NotConverged {
                iterations: it,
                residual: rel,
            });
        }
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::NotConverged {
                iterations: it,
                residual: rel,
            });
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    unreachable!()
}

/// Restarted GMRES with modified Gram-Schmidt and Givens rotations.
pub fn gmres(
    apply: impl Fn(&[f64]) -> Result<Vec<f64>>,
    b: &[f64],
    x0: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
    restart: usize,
) -> Result<LinearSolve> {
    let n = b.len();
    let bn = norm(b);
    let mut x = x0.map(|x| x.to_vec()).unwrap_or_else(|| vec![0.0; n]);
    if bn == 0.0 {
        return Ok(LinearSolve {
            x: vec![0.0; n],
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let restart = restart.clamp(1, n.max(1));
    let mut total = 0;
    loop {
        let ax = apply(&x)?;
        let r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let beta = norm(&r);
        let rel = beta / bn;
        if !rel.is_finite() {
            return Err(Error::NonFinite("GMRES"));
        }
        if rel <= tol {
            return Ok(LinearSolve {
                x,
                iterations: total,
                relative_residual: rel,
            });
        }
        if total >= max_iter {
            return Err(Error::NotConverged {
                iterations: total,
                residual: rel,
            });
        }
        let mut basis: Vec<Vec<f64>> = vec![r.iter().map(|v| v / beta).collect()];
        let mut h: Vec<Vec<f64>> = Vec::new();
        let (mut cs, mut sn): (Vec<f64>, Vec<f64>) = (Vec::new(), Vec::new());
        let mut g = vec![beta];
        let mut inner_rel = rel;
        while basis.len() <= restart && total < max_iter {
            let j = basis.len() - 1;
            let mut w = apply(&basis[j])?;
            let mut col = vec![0.0; j + 2];
            for (i, q) in basis.iter().enumerate() {
                let hij = dot(&w, q);
                col[i] = hij;
                w.iter_mut().zip(q).for_each(|(a, b)| *a -= hij * b);
            }
            let wn = norm(&w);
            col[j + 1] = wn;
            for i in 0..j {
                let t = cs[i] * col[i] + sn[i] * col[i + 1];
                col[i + 1] = -sn[i] * col[i] + cs[i] * col[i + 1];
                col[i] = t;
            }
            let d = col[j].hypot(col[j + 1]);
            let (c, s) = if d == 0.0 { (1.0, 0.0) } else { (col[j] / d, col[j + 1] / d) };
            cs.push(c);
            sn.push(s);
            col[j] = d;
            col[j + 1] = 0.0;
            g.push(-s * g[j]);
            g[j] *= c;
            h.push(col);
            total += 1;
            inner_rel = g[j + 1].abs() / bn;
            if inner_rel <= tol || wn == 0.0 {
                break;
            }
            basis.push(w.iter().map(|v| v / wn).collect());
        }
        let m = h.len();
        let mut y = vec![0.0; m];
        for i in (0..m).rev() {
            let mut s = g[i];
            for k in i + 1..m {
                s -= h[k][i] * y[k];
            }
            y[i] = if h[i][i] == 0.0 { 0.0 } else { s / h[i][i] };
        }
        for (k, yk) in y.iter().enumerate() {
            x.iter_mut().zip(&basis[k]).for_each(|(a, q)| *a += yk * q);
        }
        if !inner_rel.is_finite() {
            return Err(Error::NonFinite("GMRES"));
        }
    }
}

/// Solves a small dense system by Gaussian elimination with partial pivoting.
///
/// `a` is row-major `n x n`. Returns `None` for an exactly singular pivot.
pub fn dense_solve(mut a: Vec<f64>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))?;
        if a[piv * n + col] == 0.0 {
            return None;
        }
        if piv != col {
            for k in 0..n {
                a.swap(col * n + k, piv * n + k);
            }
            b.swap(col, piv);
        }
        for row in col + 1..n {
            let f = a[row * n + col] / a[col * n + col];
            if f != 0.0 {
                for k in col..n {
                    a[row * n + k] -= f * a[col * n + k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row * n + k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row * n + row];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spd(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] = (0..n).map(|k| m[k * n + i] * m[k * n + j]).sum::<f64>();
            }
            a[i * n + i] += n as f64;
        }
        a
    }

    fn matvec(a: &[f64], x: &[f64]) -> Vec<f64> {
        let n = x.len();
        (0..n).map(|i| dot(&a[i * n..(i + 1) * n], x)).collect()
    }

    #[test]
    fn cg_and_gmres_agree_with_dense_solve() {
        let n = 12;
        let a = spd(n, 1);
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let exact = dense_solve(a.clone(), b.clone()).unwrap();
        let c = cg(|x, y| y.copy_from_slice(&matvec(&a, x)), &b, None, 1e-13, 100).unwrap();
        let g = gmres(|x| Ok(matvec(&a, x)), &b, None, 1e-13, 100, 5).unwrap();
        for i in 0..n {
            assert!((c.x[i] - exact[i]).abs() < 1e-10);
            assert!((g.x[i] - exact[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn gmres_handles_nonsymmetric_systems() {
        let n = 10;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut a: Vec<f64> = (0..n * n).map(|_| rng.random_range(-0.3..0.3)).collect();
        for i in 0..n {
            a[i * n + i] += 2.0;
        }
        let b = vec![1.0; n];
        let g = gmres(|x| Ok(matvec(&a, x)), &b, None, 1e-12, 200, 50).unwrap();
        let r: f64 = norm(&matvec(&a, &g.x).iter().zip(&b).map(|(p, q)| p - q).collect::<Vec<_>>());
        assert!(r < 1e-11);
        assert!(g.iterations <= n);
    }

    #[test]
    fn zero_right_hand_side_gives_zero() {
        let r = cg(|x, y| y.copy_from_slice(x), &[0.0; 3], None, 1e-12, 10).unwrap();
        assert_eq!(r.x, vec![0.0; 3]);
    }

    #[test]
    fn cg_reports_non_convergence() {
        let a = spd(20, 2);
        let b = vec![1.0; 20];
        let r = cg(|x, y| y.copy_from_slice(&matvec(&a, x)), &b, None, 1e-14, 2);
        assert!(matches!(r, Err(Error::NotConverged { .. })));
    }
}
