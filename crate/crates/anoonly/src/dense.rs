//! Fully connected layer with a hand-written backward pass.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// `y = x W + b`, with `W` of shape `in_dim x out_dim`.
///
/// The bias is optional: scoring heads that measure distance from the origin
/// drop it, since a free bias can translate outputs arbitrarily.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    weight: Matrix,
    bias: Option<Vec<f64>>,
    cached_input: Option<Matrix>,
}

/// Parameter gradients produced by [`DenseLayer::backward`].
#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub weight: Matrix,
    pub bias: Option<Vec<f64>>,
}

impl DenseLayer {
    /// Symmetric uniform init scaled by `1/sqrt(in_dim)`; biases start at zero.
    pub fn init(in_dim: usize, out_dim: usize, with_bias: bool, rng: &mut ChaCha8Rng) -> Self {
        let scale = 1.0 / (in_dim as f64).sqrt();
        let data = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-scale..scale))
            .collect();
        DenseLayer {
            weight: Matrix::new(in_dim, out_dim, data).expect("consistent dims"),
            bias: with_bias.then(|| vec![0.0; out_dim]),
            cached_input: None,
        }
    }

    pub fn from_parts(weight: Matrix, bias: Option<Vec<f64>>) -> Result<Self> {
        if let Some(b) = &bias {
            if b.len() != weight.cols() {
                return Err(Error::Shape {
                    op: "DenseLayer::from_parts",
                    expected: format!("bias length {}", weight.cols()),
                    got: format!("{}", b.len()),
                });
            }
        }
        Ok(DenseLayer {
            weight,
            bias,
            cached_input: None,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn weight(&self) -> &Matrix {
        &self.weight
    }

    pub fn bias(&self) -> Option<&[f64]> {
        self.bias.as_deref()
    }

    pub fn param_count(&self) -> usize {
        self.weight.rows() * self.weight.cols() + self.bias.as_ref().map_or(0, |b| b.len())
    }

    /// Append parameters in construction order (weight row-major, then bias).
    pub fn push_params(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.weight.as_slice());
        if let Some(b) = &self.bias {
            out.extend_from_slice(b);
        }
    }

    /// Consume parameters from `src` in the same order as [`push_params`].
    pub fn pull_params(&mut self, src: &mut std::slice::Iter<'_, f64>) {
        for v in self.weight.as_mut_slice() {
            *v = *src.next().expect("parameter vector too short");
        }
        if let Some(b) = &mut self.bias {
            for v in b.iter_mut() {
                *v = *src.next().expect("parameter vector too short");
            }
        }
    }

    pub fn forward(&mut self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.in_dim() {
            return Err(Error::Shape {
                op: "dense_forward",
                expected: format!("{} input columns", self.in_dim()),
                got: format!("{}", x.cols()),
            });
        }
        let mut out = x.matmul(&self.weight)?;
        if let Some(b) = &self.bias {
            for i in 0..out.rows() {
                let row = out.row_mut(i);
                for (v, bj) in row.iter_mut().zip(b) {
                    *v += bj;
                }
            }
        }
        self.cached_input = Some(x.clone());
        Ok(out)
    }

    /// Returns the input gradient; parameter gradients come out separately.
    pub fn backward(&mut self, grad_out: &Matrix) -> Result<(Matrix, DenseGrads)> {
        let x = self
            .cached_input
            .as_ref()
            .ok_or(Error::NoForwardCache { layer: "dense" })?;
        if grad_out.rows() != x.rows() || grad_out.cols() != self.out_dim() {
            return Err(Error::Shape {
                op: "dense_backward",
                expected: format!("{}x{}", x.rows(), self.out_dim()),
                got: format!("{}x{}", grad_out.rows(), grad_out.cols()),
            });
        }
        let grad_w = x.transpose().matmul(grad_out)?;
        let grad_b = self.bias.as_ref().map(|_| {
            let mut gb = vec![0.0; self.out_dim()];
            for i in 0..grad_out.rows() {
                for (g, v) in gb.iter_mut().zip(grad_out.row(i)) {
                    *g += v;
                }
            }
            gb
        });
        let grad_in = grad_out.matmul(&self.weight.transpose())?;
        Ok((
            grad_in,
            DenseGrads {
                weight: grad_w,
                bias: grad_b,
            },
        ))
    }
}
