//! Batch normalization over the batch dimension.
//!
//! Train mode standardizes each column by the batch mean and biased variance
//! and updates running statistics; eval mode is a deterministic per-row
//! transform using the running statistics. The backward pass combines the
//! direct path through the normalized output with the variance and mean
//! paths, so every row's gradient carries the batch statistics of the rows
//! it shared a batch with.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone)]
enum BnCache {
    /// Train-mode forward: batch statistics and the normalized (pre-affine)
    /// output.
    Batch {
        inv_std: Vec<f64>,
        normalized: Matrix,
    },
    /// Running-statistics forward used when the batch is too small for batch
    /// statistics; behaves as a fixed per-row affine map in backward.
    Frozen { inv_std: Vec<f64>, normalized: Matrix },
}

#[derive(Debug, Clone)]
pub struct BatchNormLayer {
    dim: usize,
    eps: f64,
    momentum: f64,
    gamma: Option<Vec<f64>>,
    beta: Option<Vec<f64>>,
    running_mean: Vec<f64>,
    running_var: Vec<f64>,
    cache: Option<BnCache>,
    grad_gamma: Option<Vec<f64>>,
    grad_beta: Option<Vec<f64>>,
}

impl BatchNormLayer {
    pub fn new(dim: usize, affine: bool, eps: f64, momentum: f64) -> Result<Self> {
        if eps <= 0.0 {
            return Err(Error::config(format!("batch norm eps must be > 0, got {eps}")));
        }
        if !(0.0..1.0).contains(&momentum) || momentum <= 0.0 {
            return Err(Error::config(format!(
                "batch norm momentum must be in (0,1), got {momentum}"
            )));
        }
        Ok(BatchNormLayer {
            dim,
            eps,
            momentum,
            gamma: affine.then(|| vec![1.0; dim]),
            beta: affine.then(|| vec![0.0; dim]),
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
            cache: None,
            grad_gamma: None,
            grad_beta: None,
        })
    }

    pub fn with_defaults(dim: usize, affine: bool) -> Self {
        Self::new(dim, affine, 1e-5, 0.1).expect("default hyperparameters are valid")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn affine(&self) -> bool {
        self.gamma.is_some()
    }

    pub fn running_mean(&self) -> &[f64] {
        &self.running_mean
    }

    pub fn running_var(&self) -> &[f64] {
        &self.running_var
    }

    pub fn set_running_stats(&mut self, mean: Vec<f64>, var: Vec<f64>) -> Result<()> {
        if mean.len() != self.dim || var.len() != self.dim {
            return Err(Error::Shape {
                op: "set_running_stats",
                expected: format!("{} entries", self.dim),
                got: format!("{}/{}", mean.len(), var.len()),
            });
        }
        if var.iter().any(|v| *v < 0.0) {
            return Err(Error::config("running variance must be nonnegative"));
        }
        self.running_mean = mean;
        self.running_var = var;
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        if self.affine() {
            2 * self.dim
        } else {
            0
        }
    }

    pub fn push_params(&self, out: &mut Vec<f64>) {
        if let (Some(g), Some(b)) = (&self.gamma, &self.beta) {
            out.extend_from_slice(g);
            out.extend_from_slice(b);
        }
    }

    pub fn pull_params(&mut self, src: &mut std::slice::Iter<'_, f64>) {
        if let (Some(g), Some(b)) = (&mut self.gamma, &mut self.beta) {
            for v in g.iter_mut() {
                *v = *src.next().expect("parameter vector too short");
            }
            for v in b.iter_mut() {
                *v = *src.next().expect("parameter vector too short");
            }
        }
    }

    fn check_dim(&self, h: &Matrix, op: &'static str) -> Result<()> {
        if h.cols() != self.dim {
            return Err(Error::Shape {
                op,
                expected: format!("{} columns", self.dim),
                got: format!("{}", h.cols()),
            });
        }
        Ok(())
    }

    fn apply_affine(&self, normalized: &Matrix) -> Matrix {
        match (&self.gamma, &self.beta) {
            (Some(g), Some(b)) => {
                let mut out = normalized.clone();
                for i in 0..out.rows() {
                    let row = out.row_mut(i);
                    for j in 0..row.len() {
                        row[j] = row[j] * g[j] + b[j];
                    }
                }
                out
            }
            _ => normalized.clone(),
        }
    }

    /// Train-mode forward: per-column batch standardization.
    pub fn forward_train(&mut self, h: &Matrix) -> Result<Matrix> {
        self.check_dim(h, "bn_forward_train")?;
        let b = h.rows();
        if b < 2 {
            return Err(Error::BatchTooSmall { rows: b });
        }
        let bf = b as f64;
        let mut mean = vec![0.0; self.dim];
        for i in 0..b {
            for (m, v) in mean.iter_mut().zip(h.row(i)) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= bf;
        }
        let mut var = vec![0.0; self.dim];
        for i in 0..b {
            for j in 0..self.dim {
                let d = h.get(i, j) - mean[j];
                var[j] += d * d;
            }
        }
        for v in var.iter_mut() {
            *v /= bf;
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();

        let mut normalized = Matrix::zeros(b, self.dim);
        for i in 0..b {
            for j in 0..self.dim {
                normalized.set(i, j, (h.get(i, j) - mean[j]) * inv_std[j]);
            }
        }

        for j in 0..self.dim {
            self.running_mean[j] =
                (1.0 - self.momentum) * self.running_mean[j] + self.momentum * mean[j];
            self.running_var[j] =
                (1.0 - self.momentum) * self.running_var[j] + self.momentum * var[j];
        }

        let out = self.apply_affine(&normalized);
        self.cache = Some(BnCache::Batch { inv_std, normalized });
        Ok(out)
    }

    /// Eval-mode forward: rows are independent, no state is touched.
    pub fn forward_eval(&self, h: &Matrix) -> Result<Matrix> {
        self.check_dim(h, "bn_forward_eval")?;
        let inv_std: Vec<f64> = self
            .running_var
            .iter()
            .map(|v| 1.0 / (v + self.eps).sqrt())
            .collect();
        let mut out = Matrix::zeros(h.rows(), self.dim);
        for i in 0..h.rows() {
            for j in 0..self.dim {
                let n = (h.get(i, j) - self.running_mean[j]) * inv_std[j];
                out.set(i, j, n);
            }
        }
        Ok(self.apply_affine(&out))
    }

    /// Running-statistics forward that still records a cache so backward can
    /// run. Used when the batch has fewer than two rows, where batch
    /// statistics are undefined; running statistics are not updated.
    pub fn forward_train_frozen(&mut self, h: &Matrix) -> Result<Matrix> {
        self.check_dim(h, "bn_forward_train_frozen")?;
        let inv_std: Vec<f64> = self
            .running_var
            .iter()
            .map(|v| 1.0 / (v + self.eps).sqrt())
            .collect();
        let mut normalized = Matrix::zeros(h.rows(), self.dim);
        for i in 0..h.rows() {
            for j in 0..self.dim {
                normalized.set(i, j, (h.get(i, j) - self.running_mean[j]) * inv_std[j]);
            }
        }
        let out = self.apply_affine(&normalized);
        self.cache = Some(BnCache::Frozen { inv_std, normalized });
        Ok(out)
    }

    /// Backward through the most recent train-mode forward.
    pub fn backward(&mut self, grad_out: &Matrix) -> Result<Matrix> {
        let cache = self
            .cache
            .take()
            .ok_or(Error::NoForwardCache { layer: "batch_norm" })?;
        let (inv_std, normalized, frozen) = match &cache {
            BnCache::Batch { inv_std, normalized } => (inv_std, normalized, false),
            BnCache::Frozen { inv_std, normalized } => (inv_std, normalized, true),
        };
        let b = normalized.rows();
        if grad_out.rows() != b || grad_out.cols() != self.dim {
            self.cache = Some(cache.clone());
            return Err(Error::Shape {
                op: "bn_backward",
                expected: format!("{}x{}", b, self.dim),
                got: format!("{}x{}", grad_out.rows(), grad_out.cols()),
            });
        }

        // Affine gradients accumulate from the raw output gradient.
        if self.affine() {
            let mut gg = vec![0.0; self.dim];
            let mut gb = vec![0.0; self.dim];
            for i in 0..b {
                for j in 0..self.dim {
                    gg[j] += grad_out.get(i, j) * normalized.get(i, j);
                    gb[j] += grad_out.get(i, j);
                }
            }
            self.grad_gamma = Some(gg);
            self.grad_beta = Some(gb);
        }

        // Gradient w.r.t. the normalized values.
        let gamma = self.gamma.as_deref();
        let mut d_norm = Matrix::zeros(b, self.dim);
        for i in 0..b {
            for j in 0..self.dim {
                let g = match gamma {
                    Some(g) => grad_out.get(i, j) * g[j],
                    None => grad_out.get(i, j),
                };
                d_norm.set(i, j, g);
            }
        }

        if frozen {
            // Fixed per-row transform: only the direct path exists.
            let mut grad_in = Matrix::zeros(b, self.dim);
            for i in 0..b {
                for j in 0..self.dim {
                    grad_in.set(i, j, d_norm.get(i, j) * inv_std[j]);
                }
            }
            return Ok(grad_in);
        }

        let bf = b as f64;
        let mut grad_in = Matrix::zeros(b, self.dim);
        for j in 0..self.dim {
            // Centered inputs recovered from the cached normalization.
            let mut d_var = 0.0;
            let mut d_norm_sum = 0.0;
            let mut centered_sum = 0.0;
            for i in 0..b {
                let xhat = normalized.get(i, j);
                let dn = d_norm.get(i, j);
                d_var += dn * xhat;
                d_norm_sum += dn;
                centered_sum += xhat / inv_std[j];
            }
            d_var *= -0.5 * inv_std[j] * inv_std[j];
            let d_mean = -inv_std[j] * d_norm_sum + d_var * (-2.0 / bf) * centered_sum;
            for i in 0..b {
                let centered = normalized.get(i, j) / inv_std[j];
                let v = d_norm.get(i, j) * inv_std[j]
                    + d_var * 2.0 * centered / bf
                    + d_mean / bf;
                grad_in.set(i, j, v);
            }
        }
        Ok(grad_in)
    }

    /// Affine gradients from the last backward, if any; clears them.
    pub fn take_affine_grads(&mut self) -> Option<(Vec<f64>, Vec<f64>)> {
        match (self.grad_gamma.take(), self.grad_beta.take()) {
            (Some(g), Some(b)) => Some((g, b)),
            _ => None,
        }
    }
}
