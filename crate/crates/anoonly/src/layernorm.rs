//! Layer normalization: the per-row counterpart of batch normalization.
//! No affine parameters, no running statistics; rows never interact.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone)]
pub struct LayerNormLayer {
    dim: usize,
    eps: f64,
    cache: Option<(Vec<f64>, Matrix)>, // per-row inv_std, normalized output
}

impl LayerNormLayer {
    pub fn new(dim: usize, eps: f64) -> Result<Self> {
        if eps <= 0.0 {
            return Err(Error::config(format!("layer norm eps must be > 0, got {eps}")));
        }
        Ok(LayerNormLayer { dim, eps, cache: None })
    }

    pub fn with_defaults(dim: usize) -> Self {
        Self::new(dim, 1e-5).expect("default eps is valid")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn normalize(&self, h: &Matrix) -> Result<(Vec<f64>, Matrix)> {
        if h.cols() != self.dim {
            return Err(Error::Shape {
                op: "ln_forward",
                expected: format!("{} columns", self.dim),
                got: format!("{}", h.cols()),
            });
        }
        let d = self.dim as f64;
        let mut inv_std = Vec::with_capacity(h.rows());
        let mut out = Matrix::zeros(h.rows(), self.dim);
        for i in 0..h.rows() {
            let row = h.row(i);
            let mean = row.iter().sum::<f64>() / d;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
            let s = 1.0 / (var + self.eps).sqrt();
            inv_std.push(s);
            for j in 0..self.dim {
                out.set(i, j, (row[j] - mean) * s);
            }
        }
        Ok((inv_std, out))
    }

    pub fn forward(&mut self, h: &Matrix) -> Result<Matrix> {
        let (inv_std, out) = self.normalize(h)?;
        self.cache = Some((inv_std, out.clone()));
        Ok(out)
    }

    /// Stateless forward for eval mode; identical values, no cache.
    pub fn forward_eval(&self, h: &Matrix) -> Result<Matrix> {
        Ok(self.normalize(h)?.1)
    }

    pub fn backward(&mut self, grad_out: &Matrix) -> Result<Matrix> {
        let (inv_std, normalized) = self
            .cache
            .take()
            .ok_or(Error::NoForwardCache { layer: "layer_norm" })?;
        let b = normalized.rows();
        if grad_out.rows() != b || grad_out.cols() != self.dim {
            return Err(Error::Shape {
                op: "ln_backward",
                expected: format!("{}x{}", b, self.dim),
                got: format!("{}x{}", grad_out.rows(), grad_out.cols()),
            });
        }
        let d = self.dim as f64;
        let mut grad_in = Matrix::zeros(b, self.dim);
        for i in 0..b {
            let s = inv_std[i];
            let mut dot = 0.0;
            let mut gsum = 0.0;
            for j in 0..self.dim {
                dot += grad_out.get(i, j) * normalized.get(i, j);
                gsum += grad_out.get(i, j);
            }
            for j in 0..self.dim {
                let xhat = normalized.get(i, j);
                let v = s * (grad_out.get(i, j) - gsum / d - xhat * dot / d);
                grad_in.set(i, j, v);
            }
        }
        Ok(grad_in)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{grad_check, GradCheckConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn row_standardization() {
        let mut ln = LayerNormLayer::new(2, 1e-12).unwrap();
        let h = Matrix::from_rows(&[vec![1.0, 3.0]]).unwrap();
        let out = ln.forward(&h).unwrap();
        assert!((out.get(0, 0) + 1.0).abs() < 1e-6);
        assert!((out.get(0, 1) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn constant_row_maps_to_zeros() {
        let mut ln = LayerNormLayer::with_defaults(3);
        let h = Matrix::from_rows(&[vec![4.0, 4.0, 4.0]]).unwrap();
        let out = ln.forward(&h).unwrap();
        assert!(out.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn dim_mismatch_is_shape_error() {
        let mut ln = LayerNormLayer::with_defaults(3);
        assert!(ln.forward(&Matrix::zeros(2, 4)).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let h = Matrix::new(
            6,
            4,
            (0..24).map(|_| rng.random_range(-2.0..2.0)).collect(),
        )
        .unwrap();
        let probe = Matrix::new(
            6,
            4,
            (0..24).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let eval = |p: &[f64]| {
            let mut ln = LayerNormLayer::with_defaults(4);
            let x = Matrix::new(6, 4, p.to_vec()).unwrap();
            let y = ln.forward(&x).unwrap();
            y.as_slice()
                .iter()
                .zip(probe.as_slice())
                .map(|(a, b)| a * b)
                .sum()
        };
        let mut ln = LayerNormLayer::with_defaults(4);
        ln.forward(&h).unwrap();
        let grad_in = ln.backward(&probe).unwrap();
        let report = grad_check(
            eval,
            h.as_slice(),
            grad_in.as_slice(),
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.passed, "rel diff {}", report.max_rel_diff);
    }
}
