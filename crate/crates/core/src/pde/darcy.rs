//! Darcy flow on a node grid of the unit square.
//!
//! A resolution `r` grid has nodes `x_i = i h`, `h = 1/(r-1)`, including the
//! boundary. Unknowns live on the `(r-2)²` interior nodes; boundary values are
//! zero. The flux between neighbouring nodes uses the harmonic mean of their
//! coefficients.

use crate::error::{Error, Result};
use crate::fixedpoint::linsolve;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct DarcyProblem {
    a: Tensor,
    f: Tensor,
    r: usize,
}

fn harmonic(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

impl DarcyProblem {
    /// `a` and `f` are `[r, r, 1]` node fields with `r >= 3`.
    pub fn new(a: Tensor, f: Tensor) -> Result<Self> {
        let (nx, ny, c) = a.field_dims()?;
        if nx != ny || c != 1 || nx < 3 {
            return Err(Error::shape("darcy coefficient", &[nx.max(3), nx.max(3), 1], a.shape()));
        }
        f.expect_shape(a.shape(), "darcy forcing")?;
        let amin = a.data().iter().copied().fold(f64::INFINITY, f64::min);
        if !(amin > 0.0) {
            return Err(Error::NonPositiveCoefficient(amin));
        }
        if !f.is_finite() || !a.is_finite() {
            return Err(Error::NonFinite("darcy problem"));
        }
        Ok(DarcyProblem { a, f, r: nx })
    }

    pub fn resolution(&self) -> usize {
        self.r
    }

    pub fn spacing(&self) -> f64 {
        1.0 / (self.r - 1) as f64
    }

    pub fn coefficient(&self) -> &Tensor {
        &self.a
    }

    pub fn forcing(&self) -> &Tensor {
        &self.f
    }

    /// Node coordinates `(x, y)` of grid point `(i, j)`.
    pub fn point(&self, i: usize, j: usize) -> (f64, f64) {
        let h = self.spacing();
        (i as f64 * h, j as f64 * h)
    }

    fn interior(&self) -> usize {
        self.r - 2
    }

    /// Applies the discrete operator to interior values (row-major `(r-2)²`).
    pub fn apply_interior(&self, u: &[f64], out: &mut [f64]) {
        let m = self.interior();
        let r = self.r;
        let a = self.a.data();
        let inv_h2 = 1.0 / (self.spacing() * self.spacing());
        let at = |i: usize, j: usize| a[i * r + j];
        let val = |i: usize, j: usize| -> f64 {
            if i == 0 || j == 0 || i == r - 1 || j == r - 1 {
                0.0
            } else {
                u[(i - 1) * m + (j - 1)]
            }
        };
        for i in 1..r - 1 {
            for j in 1..r - 1 {
                let c = at(i, j);
                let uc = val(i, j);
                let mut s = 0.0;
                for (ni, nj) in [(i + 1, j), (i - 1, j), (i, j + 1), (i, j - 1)] {
                    s += harmonic(c, at(ni, nj)) * (uc - val(ni, nj));
                }
                out[(i - 1) * m + (j - 1)] = s * inv_h2;
            }
        }
    }

    fn interior_of(&self, t: &Tensor) -> Vec<f64> {
        let r = self.r;
        let mut v = Vec::with_capacity(self.interior() * self.interior());
        for i in 1..r - 1 {
            for j in 1..r - 1 {
                v.push(t.data()[i * r + j]);
            }
        }
        v
    }

    fn embed(&self, interior: &[f64]) -> Tensor {
        let (r, m) = (self.r, self.interior());
        Tensor::field_from_fn(r, r, 1, |i, j, _| {
            if i == 0 || j == 0 || i == r - 1 || j == r - 1 {
                0.0
            } else {
                interior[(i - 1) * m + (j - 1)]
            }
        })
    }
}

/// `-∇·(a∇u) - f` at interior nodes, zero on the boundary.
///
/// `u` must vanish on the boundary.
pub fn darcy_residual(p: &DarcyProblem, u: &Tensor) -> Result<Tensor> {
    u.expect_shape(p.a.shape(), "darcy state")?;
    let r = p.r;
    for i in 0..r {
        for j in 0..r {
            if (i == 0 || j == 0 || i == r - 1 || j == r - 1) && u.data()[i * r + j] != 0.0 {
                return Err(Error::Contract("darcy state must vanish on the boundary".into()));
            }
        }
    }
    let ui = p.interior_of(u);
    let mut out = vec![0.0; ui.len()];
    p.apply_interior(&ui, &mut out);
    let fi = p.interior_of(&p.f);
    out.iter_mut().zip(&fi).for_each(|(o, f)| *o -= f);
    Ok(p.embed(&out))
}

/// Conjugate-gradient solve to relative residual `tol`.
pub fn darcy_solve(p: &DarcyProblem, tol: f64) -> Result<Tensor> {
    let b = p.interior_of(&p.f);
    let cap = 20 * b.len().max(50);
    let sol = linsolve::cg(|x, y| p.apply_interior(x, y), &b, None, tol, cap)?;
    Ok(p.embed(&sol.x))
}
