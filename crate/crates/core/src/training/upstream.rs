//! The integration point for a differentiable per-frame feature extractor
//! placed before rank pooling.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::maps::MapKind;

/// A per-frame map `v_t = f(x_t; theta)` with a reverse-mode hook.
pub trait UpstreamMap {
    fn output_dim(&self, input_dim: usize) -> usize;

    fn forward(&self, x: &DVector<f64>) -> DVector<f64>;

    /// Adds `dL/dtheta` to `grad_params`, given `grad_out = dL/dforward(x)`.
    fn backward(&self, x: &DVector<f64>, grad_out: &DVector<f64>, grad_params: &mut [f64]) -> Result<()>;

    fn params(&self) -> &[f64];

    fn params_mut(&mut self) -> &mut [f64];

    /// Frozen maps receive no gradient and are never updated.
    fn trainable(&self) -> bool {
        true
    }
}

/// `psi(A x + b)`. Parameters are stored as `A` row-major followed by `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineUpstream {
    in_dim: usize,
    out_dim: usize,
    params: Vec<f64>,
    pub map: MapKind,
    pub frozen: bool,
}

impl AffineUpstream {
    pub fn new(a: &DMatrix<f64>, b: &DVector<f64>, map: MapKind) -> Result<Self> {
        if b.len() != a.nrows() {
            return Err(Error::DimensionMismatch {
                expected: a.nrows(),
                found: b.len(),
            });
        }
        let mut params = Vec::with_capacity(a.len() + b.len());
        for i in 0..a.nrows() {
            params.extend(a.row(i).iter());
        }
        params.extend(b.iter());
        Ok(AffineUpstream {
            in_dim: a.ncols(),
            out_dim: a.nrows(),
            params,
            map,
            frozen: false,
        })
    }

    /// Rebuilds a map from its flat parameter vector.
    pub fn from_params(in_dim: usize, out_dim: usize, params: Vec<f64>, map: MapKind) -> Result<Self> {
        let expected = out_dim * in_dim + out_dim;
        if params.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: params.len(),
            });
        }
        Ok(AffineUpstream {
            in_dim,
            out_dim,
            params,
            map,
            frozen: false,
        })
    }

    pub fn identity(dim: usize, map: MapKind) -> Self {
        Self::new(&DMatrix::identity(dim, dim), &DVector::zeros(dim), map).expect("square")
    }

    pub fn frozen(mut self) -> Self {
        self.frozen = true;
        self
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    /// Rows of `A`, before the map.
    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.out_dim, self.in_dim, &self.params[..self.out_dim * self.in_dim])
    }

    pub fn offset(&self) -> DVector<f64> {
        DVector::from_row_slice(&self.params[self.out_dim * self.in_dim..])
    }

    fn pre_activation(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = self.in_dim;
        let (a, b) = self.params.split_at(self.out_dim * n);
        DVector::from_fn(self.out_dim, |i, _| {
            a[i * n..(i + 1) * n]
                .iter()
                .zip(x.iter())
                .map(|(w, x)| w * x)
                .sum::<f64>()
                + b[i]
        })
    }
}

impl UpstreamMap for AffineUpstream {
    fn output_dim(&self, _input_dim: usize) -> usize {
        self.map.output_dim(self.out_dim)
    }

    fn forward(&self, x: &DVector<f64>) -> DVector<f64> {
        self.map.apply(&self.pre_activation(x))
    }

    fn backward(&self, x: &DVector<f64>, grad_out: &DVector<f64>, grad_params: &mut [f64]) -> Result<()> {
        let ga = self.map.backward(&self.pre_activation(x), grad_out)?;
        let n = self.in_dim;
        let (ga_mat, gb) = grad_params.split_at_mut(self.out_dim * n);
        for i in 0..self.out_dim {
            for j in 0..n {
                ga_mat[i * n + j] += ga[i] * x[j];
            }
            gb[i] += ga[i];
        }
        Ok(())
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn trainable(&self) -> bool {
        !self.frozen
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::fd_gradient;

    #[test]
    fn identity_is_exact() {
        let up = AffineUpstream::identity(3, MapKind::Identity);
        let x = DVector::from_row_slice(&[0.1, -2.5, 1e-300]);
        assert_eq!(up.forward(&x), x);
    }

    #[test]
    fn backward_matches_fd() {
        let a = DMatrix::from_row_slice(2, 3, &[0.5, -1.0, 0.2, 1.5, 0.3, -0.7]);
        let b = DVector::from_row_slice(&[0.1, -0.3]);
        let x = DVector::from_row_slice(&[1.0, 0.4, -2.0]);
        for map in [MapKind::Identity, MapKind::Relu, MapKind::Ser] {
            let up = AffineUpstream::new(&a, &b, map).unwrap();
            let g = DVector::from_fn(up.output_dim(3), |i, _| 1.0 + i as f64);
            let mut analytic = vec![0.0; up.params().len()];
            up.backward(&x, &g, &mut analytic).unwrap();
            let fd = fd_gradient(
                |p| {
                    let mut m = up.clone();
                    m.params_mut().copy_from_slice(p);
                    g.dot(&m.forward(&x))
                },
                up.params(),
                1e-6,
            );
            for (a, f) in analytic.iter().zip(&fd) {
                assert!((a - f).abs() < 1e-7, "{map}: {a} vs {f}");
            }
        }
    }
}
