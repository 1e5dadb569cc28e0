//! Dense row-major tensors.
//!
//! Fields on a 2-D grid are stored as `[nx, ny, channels]`, so the value at
//! grid point `(i, j)` and channel `c` lives at `(i * ny + j) * channels + c`.

use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Immutable real tensor. Cloning shares the underlying buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} holds {n} values but {} were given",
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data: Arc::new(data),
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(vec![value; n]),
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: Arc::new(vec![value]),
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new((0..n).map(&mut f).collect()),
        }
    }

    /// Field of shape `[nx, ny, channels]` from a function of `(i, j, c)`.
    pub fn field_from_fn(
        nx: usize,
        ny: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(nx * ny * channels);
        for i in 0..nx {
            for j in 0..ny {
                for c in 0..channels {
                    data.push(f(i, j, c));
                }
            }
        }
        Tensor {
            shape: vec![nx, ny, channels],
            data: Arc::new(data),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data.as_ref().clone()
    }

    /// Takes the buffer, copying only if it is shared.
    pub fn into_vec(self) -> Vec<f64> {
        Arc::try_unwrap(self.data).unwrap_or_else(|shared| shared.as_ref().clone())
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.len() {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Arc::clone(&self.data),
        })
    }

    /// `(nx, ny, channels)` of a field-shaped tensor.
    pub fn field_dims(&self) -> Result<(usize, usize, usize)> {
        match self.shape.as_slice() {
            &[nx, ny, c] => Ok((nx, ny, c)),
            other => Err(Error::Dimension(format!(
                "expected a [nx, ny, channels] field, got shape {other:?}"
            ))),
        }
    }

    pub fn at(&self, i: usize, j: usize, c: usize) -> f64 {
        let (ny, nc) = (self.shape[1], self.shape[2]);
        self.data[(i * ny + j) * nc + c]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|&x| f(x)).collect()),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.expect_shape(other.shape(), "zip_map")?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: Arc::new(
                self.data
                    .iter()
                    .zip(other.data.iter())
                    .map(|(&a, &b)| f(a, b))
                    .collect(),
            ),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|x| s * x)
    }

    /// `self + s * other`
    pub fn axpy(&self, s: f64, other: &Tensor) -> Result<Self> {
        self.zip_map(other, |a, b| a + s * b)
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        self.expect_shape(other.shape(), "dot")?;
        Ok(self.data.iter().zip(other.data.iter()).map(|(a, b)| a * b).sum())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.len() as f64
    }

    pub fn norm(&self) -> f64 {
        norm(&self.data)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn ensure_finite(self, context: &'static str) -> Result<Self> {
        if self.is_finite() {
            Ok(self)
        } else {
            Err(Error::NonFinite(context))
        }
    }

    pub fn expect_shape(&self, shape: &[usize], context: &'static str) -> Result<()> {
        if self.shape == shape {
            Ok(())
        } else {
            Err(Error::shape(context, shape, &self.shape))
        }
    }

    /// Selects one channel of a field as a `[nx, ny, 1]` field.
    pub fn channel(&self, c: usize) -> Result<Self> {
        let (nx, ny, nc) = self.field_dims()?;
        if c >= nc {
            return Err(Error::Dimension(format!("channel {c} out of range ({nc})")));
        }
        Ok(Tensor::field_from_fn(nx, ny, 1, |i, j, _| self.at(i, j, c)))
    }

    /// Stacks single-channel fields of equal grid size along the channel axis.
    pub fn stack_channels(fields: &[Tensor]) -> Result<Self> {
        let first = fields
            .first()
            .ok_or_else(|| Error::Dimension("no fields to stack".into()))?;
        let (nx, ny, _) = first.field_dims()?;
        let mut offsets = Vec::with_capacity(fields.len());
        let mut total = 0;
        for f in fields {
            let (fx, fy, fc) = f.field_dims()?;
            if (fx, fy) != (nx, ny) {
                return Err(Error::shape("stack_channels", &[nx, ny], &[fx, fy]));
            }
            offsets.push((total, fc));
            total += fc;
        }
        let mut data = vec![0.0; nx * ny * total];
        for (f, &(off, fc)) in fields.iter().zip(&offsets) {
            for p in 0..nx * ny {
                data[p * total + off..p * total + off + fc]
                    .copy_from_slice(&f.data[p * fc..(p + 1) * fc]);
            }
        }
        Tensor::new(vec![nx, ny, total], data)
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Complex tensor stored as interleaved `(re, im)` pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexTensor {
    shape: Vec<usize>,
    data: Vec<Complex64>,
}

impl ComplexTensor {
    pub fn new(shape: Vec<usize>, data: Vec<Complex64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} holds {n} values but {} were given",
                data.len()
            )));
        }
        Ok(ComplexTensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        ComplexTensor {
            shape: shape.to_vec(),
            data: vec![Complex64::new(0.0, 0.0); shape.iter().product()],
        }
    }

    pub fn from_real(t: &Tensor) -> Self {
        ComplexTensor {
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|&x| Complex64::new(x, 0.0)).collect(),
        }
    }

    /// Builds from separate real and imaginary parts of equal shape.
    pub fn from_parts(re: &Tensor, im: &Tensor) -> Result<Self> {
        re.expect_shape(im.shape(), "complex from parts")?;
        Ok(ComplexTensor {
            shape: re.shape().to_vec(),
            data: re
                .data()
                .iter()
                .zip(im.data())
                .map(|(&a, &b)| Complex64::new(a, b))
                .collect(),
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn field_dims(&self) -> Result<(usize, usize, usize)> {
        match self.shape.as_slice() {
            &[nx, ny, c] => Ok((nx, ny, c)),
            other => Err(Error::Dimension(format!(
                "expected a [nx, ny, channels] spectrum, got shape {other:?}"
            ))),
        }
    }

    pub fn at(&self, i: usize, j: usize, c: usize) -> Complex64 {
        let (ny, nc) = (self.shape[1], self.shape[2]);
        self.data[(i * ny + j) * nc + c]
    }

    pub fn re(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|z| z.re).collect()),
        }
    }

    pub fn im(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|z| z.im).collect()),
        }
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }
}
