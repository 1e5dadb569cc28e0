//! Fixed per-channel affine maps around the network.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Inputs enter the network as `(f - in_mean) / in_std` and outputs leave it
/// as `y * out_std + out_mean`, channel by channel.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    pub in_mean: Vec<f64>,
    pub in_std: Vec<f64>,
    pub out_mean: Vec<f64>,
    pub out_std: Vec<f64>,
}

fn channel_stats(fields: &[&Tensor], channels: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut sum = vec![0.0; channels];
    let mut count = 0usize;
    for t in fields {
        let (_, _, c) = t.field_dims()?;
        if c != channels {
            return Err(Error::shape("normalizer field", &[0, 0, channels], t.shape()));
        }
        for px in t.data().chunks(c) {
            sum.iter_mut().zip(px).for_each(|(s, x)| *s += x);
        }
        count += t.len() / c;
    }
    if count == 0 {
        return Err(Error::Config("normalizer needs at least one field".into()));
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
    let mut sq = vec![0.0; channels];
    for t in fields {
        for px in t.data().chunks(channels) {
            for ((s, x), m) in sq.iter_mut().zip(px).zip(&mean) {
                *s += (x - m) * (x - m);
            }
        }
    }
    let std = sq
        .iter()
        .map(|s| {
            let v = (s / count as f64).sqrt();
            if v > 0.0 && v.is_finite() {
                v
            } else {
                1.0
            }
        })
        .collect();
    Ok((mean, std))
}

fn affine(t: &Tensor, shift: &[f64], scale: &[f64], inverse: bool) -> Result<Tensor> {
    let (_, _, c) = t.field_dims()?;
    if c != shift.len() {
        return Err(Error::shape("normalized field", &[0, 0, shift.len()], t.shape()));
    }
    let mut data = t.data().to_vec();
    for px in data.chunks_mut(c) {
        for ((x, m), s) in px.iter_mut().zip(shift).zip(scale) {
            *x = if inverse { *x * s + m } else { (*x - m) / s };
        }
    }
    Tensor::new(t.shape().to_vec(), data)
}

impl Normalizer {
    pub fn identity(df: usize, du: usize) -> Self {
        Normalizer {
            in_mean: vec![0.0; df],
            in_std: vec![1.0; df],
            out_mean: vec![0.0; du],
            out_std: vec![1.0; du],
        }
    }

    /// Per-channel mean and standard deviation over all points of all fields.
    /// Constant channels keep a unit scale.
    pub fn fit(inputs: &[&Tensor], targets: &[&Tensor], df: usize, du: usize) -> Result<Self> {
        let (in_mean, in_std) = channel_stats(inputs, df)?;
        let (out_mean, out_std) = channel_stats(targets, du)?;
        Ok(Normalizer {
            in_mean,
            in_std,
            out_mean,
            out_std,
        })
    }

    pub fn is_identity(&self) -> bool {
        self.in_mean.iter().chain(&self.out_mean).all(|m| *m == 0.0)
            && self.in_std.iter().chain(&self.out_std).all(|s| *s == 1.0)
    }

    pub fn input(&self, f: &Tensor) -> Result<Tensor> {
        affine(f, &self.in_mean, &self.in_std, false)
    }

    pub fn target(&self, u: &Tensor) -> Result<Tensor> {
        affine(u, &self.out_mean, &self.out_std, false)
    }

    pub fn output(&self, y: &Tensor) -> Result<Tensor> {
        affine(y, &self.out_mean, &self.out_std, true)
    }

    pub fn validate(&self, df: usize, du: usize) -> Result<()> {
        if self.in_mean.len() != df || self.in_std.len() != df || self.out_mean.len() != du || self.out_std.len() != du {
            return Err(Error::Config("normalizer channel counts do not match the model".into()));
        }
        let all = || self.in_mean.iter().chain(&self.in_std).chain(&self.out_mean).chain(&self.out_std);
        if !all().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("normalizer"));
        }
        if !self.in_std.iter().chain(&self.out_std).all(|s| *s > 0.0) {
            return Err(Error::Config("normalizer scales must be positive".into()));
        }
        Ok(())
    }

    /// `[in_mean, in_std, out_mean, out_std]` flattened.
    pub fn to_tensor(&self) -> Tensor {
        let v: Vec<f64> = self
            .in_mean
            .iter()
            .chain(&self.in_std)
            .chain(&self.out_mean)
            .chain(&self.out_std)
            .copied()
            .collect();
        Tensor::new(vec![v.len()], v).expect("flat vector")
    }

    pub fn from_tensor(t: &Tensor, df: usize, du: usize) -> Result<Self> {
        let d = t.data();
        if t.shape() != [2 * (df + du)] {
            return Err(Error::Format("malformed normalizer entry".into()));
        }
        let n = Normalizer {
            in_mean: d[..df].to_vec(),
            in_std: d[df..2 * df].to_vec(),
            out_mean: d[2 * df..2 * df + du].to_vec(),
            out_std: d[2 * df + du..].to_vec(),
        };
        n.validate(df, du)?;
        Ok(n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_standardizes_each_channel() {
        let a = Tensor::from_fn(&[4, 4, 2], |i| if i % 2 == 0 { 3.0 + i as f64 } else { -2.0 * i as f64 });
        let b = a.map(|x| 0.5 * x + 1.0);
        let n = Normalizer::fit(&[&a, &b], &[&Tensor::from_fn(&[4, 4, 1], |_| 7.0)], 2, 1).unwrap();
        assert_eq!(n.out_std, vec![1.0]);
        let z: Vec<Tensor> = [&a, &b].iter().map(|t| n.input(t).unwrap()).collect();
        for c in 0..2 {
            let vals: Vec<f64> = z.iter().flat_map(|t| t.data().iter().skip(c).step_by(2).copied()).collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn output_inverts_target_and_round_trips() {
        let n = Normalizer {
            in_mean: vec![1.0],
            in_std: vec![2.0],
            out_mean: vec![-0.5, 0.25],
            out_std: vec![3.0, 0.1],
        };
        let u = Tensor::from_fn(&[3, 3, 2], |i| (i as f64).sin());
        assert!(n.output(&n.target(&u).unwrap()).unwrap().sub(&u).unwrap().max_abs() < 1e-15);
        assert_eq!(Normalizer::from_tensor(&n.to_tensor(), 1, 2).unwrap(), n);
        assert!(Normalizer::from_tensor(&n.to_tensor(), 1, 1).is_err());
    }
}
