//! Numeric kernels shared by the differentiable graph and the plain code paths.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Applies a channel-mixing matrix at every grid point.
///
/// `v` is `[..., cin]`, `w` is `[cin, cout]` and `b` is `[cout]`; the result is
/// `[..., cout]` with `out[p, :] = w^T v[p, :] + b`.
pub fn pointwise_linear(v: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (cin, cout) = linear_dims(v, w, b)?;
    let points = v.len() / cin;
    let (vd, wd, bd) = (v.data(), w.data(), b.data());
    let mut out = vec![0.0; points * cout];
    for (p, row) in out.chunks_exact_mut(cout).enumerate() {
        row.copy_from_slice(bd);
        let x = &vd[p * cin..(p + 1) * cin];
        for (i, &xi) in x.iter().enumerate() {
            let wrow = &wd[i * cout..(i + 1) * cout];
            for (o, &wio) in row.iter_mut().zip(wrow) {
                *o += xi * wio;
            }
        }
    }
    let mut shape = v.shape().to_vec();
    *shape.last_mut().expect("checked non-empty") = cout;
    Tensor::new(shape, out)
}

pub(crate) fn linear_dims(v: &Tensor, w: &Tensor, b: &Tensor) -> Result<(usize, usize)> {
    let (cin, cout) = match w.shape() {
        &[cin, cout] => (cin, cout),
        other => {
            return Err(Error::Dimension(format!(
                "channel matrix must be 2-D, got {other:?}"
            )))
        }
    };
    match v.shape().last() {
        Some(&c) if c == cin => {}
        _ => return Err(Error::shape("pointwise_linear input", &[cin], v.shape())),
    }
    b.expect_shape(&[cout], "pointwise_linear bias")?;
    Ok((cin, cout))
}

/// Standard normal CDF via `erf`.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

/// Exact (erf-based) Gaussian error linear unit.
pub fn gelu_scalar(x: f64) -> f64 {
    x * normal_cdf(x)
}

/// d/dx of [`gelu_scalar`].
pub fn gelu_derivative(x: f64) -> f64 {
    let pdf = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
    normal_cdf(x) + x * pdf
}

pub fn gelu(v: &Tensor) -> Tensor {
    v.map(gelu_scalar)
}

/// `||pred - target|| / ||target||`.
pub fn relative_l2(pred: &Tensor, target: &Tensor) -> Result<f64> {
    pred.expect_shape(target.shape(), "relative_l2")?;
    let denom = target.norm();
    if denom == 0.0 {
        return Err(Error::DegenerateTarget);
    }
    let diff: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(diff / denom)
}

pub fn mse(pred: &Tensor, target: &Tensor) -> Result<f64> {
    pred.expect_shape(target.shape(), "mse")?;
    let n = pred.len().max(1) as f64;
    Ok(pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn pointwise_linear_zero_input_broadcasts_bias() {
        let v = Tensor::zeros(&[2, 2, 3]);
        let w = Tensor::from_fn(&[3, 2], |i| i as f64 + 0.5);
        let b = t(&[2], &[0.25, -1.0]);
        let out = pointwise_linear(&v, &w, &b).unwrap();
        assert_eq!(out.shape(), &[2, 2, 2]);
        for p in out.data().chunks(2) {
            assert_eq!(p, &[0.25, -1.0]);
        }
    }

    #[test]
    fn pointwise_linear_identity() {
        let v = Tensor::from_fn(&[2, 3, 2], |i| (i as f64).sin());
        let w = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let out = pointwise_linear(&v, &w, &Tensor::zeros(&[2])).unwrap();
        assert_eq!(out, v);
    }

    #[test]
    fn pointwise_linear_hand_example() {
        // out = W^T v + b with v = [1, 2], W = [[1, 0], [1, 1]], b = [0, 1].
        let v = t(&[1, 1, 2], &[1.0, 2.0]);
        let w = t(&[2, 2], &[1.0, 0.0, 1.0, 1.0]);
        let b = t(&[2], &[0.0, 1.0]);
        let out = pointwise_linear(&v, &w, &b).unwrap();
        assert_eq!(out.data(), &[3.0, 3.0]);
    }

    #[test]
    fn pointwise_linear_rejects_mismatch() {
        let v = Tensor::zeros(&[2, 2, 3]);
        let w = Tensor::zeros(&[2, 2]);
        assert!(matches!(
            pointwise_linear(&v, &w, &Tensor::zeros(&[2])),
            Err(Error::Shape { .. })
        ));
        let w = Tensor::zeros(&[3, 2]);
        assert!(pointwise_linear(&v, &w, &Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn gelu_values() {
        assert_eq!(gelu_scalar(0.0), 0.0);
        assert!((gelu_scalar(10.0) - 10.0).abs() < 1e-12);
        // Phi(1) from the closed form 0.5 * (1 + erf(1/sqrt 2)).
        assert!((gelu_scalar(1.0) - 0.841_344_746_068_542_9).abs() < 1e-12);
        assert!((gelu_scalar(-1.0) + 0.158_655_253_931_457_05).abs() < 1e-12);
    }

    #[test]
    fn gelu_derivative_matches_central_difference() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu_scalar(x + h) - gelu_scalar(x - h)) / (2.0 * h);
            assert!((fd - gelu_derivative(x)).abs() < 1e-8, "x = {x}");
        }
    }

    #[test]
    fn relative_l2_cases() {
        let target = t(&[3], &[1.0, -2.0, 0.5]);
        assert_eq!(relative_l2(&target, &target).unwrap(), 0.0);
        assert!((relative_l2(&target.scale(2.0), &target).unwrap() - 1.0).abs() < 1e-15);
        let r = relative_l2(&t(&[2], &[1.0, 0.0]), &t(&[2], &[0.0, 1.0])).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-15);
        assert!(matches!(
            relative_l2(&target, &Tensor::zeros(&[3])),
            Err(Error::DegenerateTarget)
        ));
    }
}
