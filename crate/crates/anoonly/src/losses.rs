//! Objective functions.
//!
//! The family is one formula with the normal-loss weight dialed: the full
//! objective keeps a weighted pull-to-origin term on unlabeled rows plus an
//! inverse-score push on labeled anomalies; setting the normal weight to zero
//! leaves only the anomaly term, with batch normalization supplying the
//! remaining supervision on normal rows through batch statistics. The
//! explicit-cluster variant replaces that implicit mechanism with a penalty
//! on the hidden batch's per-column mean and variance.

use serde::{Deserialize, Serialize};

use crate::data::TrainLabel;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{scores_from_output, ModelGrads, NormalizerKind, SSADModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Normal loss at weight 1 plus anomaly loss.
    DeepSad,
    /// Anomaly loss only; normal rows participate through batch statistics.
    AnoOnly,
    /// Normal loss at an arbitrary weight, interpolating the two above.
    Reweighted { lambda_n: f64 },
    /// Anomaly loss plus the explicit cluster penalty on the hidden batch;
    /// requires the normalizer slot to be empty.
    AnoOnlyExplicitBn,
}

impl Objective {
    /// Weight applied to the normal (unlabeled) loss term.
    pub fn lambda_n(&self) -> f64 {
        match self {
            Objective::DeepSad => 1.0,
            Objective::AnoOnly | Objective::AnoOnlyExplicitBn => 0.0,
            Objective::Reweighted { lambda_n } => *lambda_n,
        }
    }

    pub fn uses_explicit_bn(&self) -> bool {
        matches!(self, Objective::AnoOnlyExplicitBn)
    }

    pub fn name(&self) -> String {
        match self {
            Objective::DeepSad => "deep_sad".into(),
            Objective::AnoOnly => "ano_only".into(),
            Objective::Reweighted { lambda_n } => format!("reweighted({lambda_n})"),
            Objective::AnoOnlyExplicitBn => "ano_only_explicit_bn".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossConfig {
    pub objective: Objective,
    /// Weight-decay coefficient on dense weights.
    #[serde(default = "default_weight_decay")]
    pub lambda: f64,
    /// Guard added to scores before inversion in the anomaly loss.
    #[serde(default = "default_score_eps")]
    pub score_eps: f64,
}

fn default_weight_decay() -> f64 {
    1e-6
}

fn default_score_eps() -> f64 {
    1e-6
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            objective: Objective::AnoOnly,
            lambda: default_weight_decay(),
            score_eps: default_score_eps(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 {
            return Err(Error::config("weight decay must be nonnegative"));
        }
        if self.score_eps <= 0.0 {
            return Err(Error::config("score_eps must be positive"));
        }
        if let Objective::Reweighted { lambda_n } = self.objective {
            if lambda_n < 0.0 {
                return Err(Error::config("lambda_n must be nonnegative"));
            }
        }
        Ok(())
    }
}

/// Per-batch loss decomposition; inactive components are exactly zero.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BatchLossReport {
    pub total: f64,
    pub l_normal: f64,
    pub l_anomaly: f64,
    pub l_bn_explicit: f64,
    pub l_reg: f64,
    pub n_anomaly_rows: usize,
    pub n_unlabeled_rows: usize,
}

impl BatchLossReport {
    /// True when the batch carried no labeled anomaly; the training loop
    /// decides whether such a step updates parameters.
    pub fn zero_anomaly(&self) -> bool {
        self.n_anomaly_rows == 0
    }

    pub fn components_sum(&self) -> f64 {
        self.l_normal + self.l_anomaly + self.l_bn_explicit + self.l_reg
    }
}

/// Weighted sum of scores over unlabeled rows: pulls them toward the origin.
pub fn loss_normal(scores: &[f64], unlabeled: &[bool], lambda_n: f64) -> (f64, Vec<f64>) {
    debug_assert_eq!(scores.len(), unlabeled.len());
    let mut value = 0.0;
    let mut grad = vec![0.0; scores.len()];
    for (i, (&s, &u)) in scores.iter().zip(unlabeled).enumerate() {
        if u {
            value += lambda_n * s;
            grad[i] = lambda_n;
        }
    }
    (value, grad)
}

/// Sum of inverse scores over labeled anomalies: pushes them from the origin.
pub fn loss_anomaly(scores: &[f64], anomaly: &[bool], score_eps: f64) -> (f64, Vec<f64>) {
    debug_assert_eq!(scores.len(), anomaly.len());
    let mut value = 0.0;
    let mut grad = vec![0.0; scores.len()];
    for (i, (&s, &a)) in scores.iter().zip(anomaly).enumerate() {
        if a {
            let guarded = s + score_eps;
            value += 1.0 / guarded;
            grad[i] = -1.0 / (guarded * guarded);
        }
    }
    (value, grad)
}

/// Cluster penalty on a hidden batch: squared distance of each column's mean
/// from zero plus squared distance of its unbiased variance from one. Zero
/// exactly when every column is standardized.
pub fn loss_bn_explicit(h: &Matrix) -> Result<(f64, Matrix)> {
    let b = h.rows();
    if b < 2 {
        return Err(Error::BatchTooSmall { rows: b });
    }
    let bf = b as f64;
    let mut value = 0.0;
    let mut grad = Matrix::zeros(b, h.cols());
    for j in 0..h.cols() {
        let mean = (0..b).map(|i| h.get(i, j)).sum::<f64>() / bf;
        let var = (0..b).map(|i| (h.get(i, j) - mean).powi(2)).sum::<f64>() / (bf - 1.0);
        value += mean * mean + (var - 1.0) * (var - 1.0);
        for i in 0..b {
            let centered = h.get(i, j) - mean;
            let g = 2.0 * mean / bf + 4.0 * (var - 1.0) * centered / (bf - 1.0);
            grad.set(i, j, g);
        }
    }
    Ok((value, grad))
}

/// Weight-decay value; the matching gradient is added by
/// [`SSADModel::add_weight_decay`].
pub fn loss_reg(model: &SSADModel, lambda: f64) -> f64 {
    if lambda == 0.0 {
        0.0
    } else {
        lambda * model.weight_squared_norm()
    }
}

pub fn anomaly_mask(labels: &[TrainLabel]) -> Vec<bool> {
    labels.iter().map(|l| *l == TrainLabel::LabeledAnomaly).collect()
}

/// Full objective evaluation on one batch: forward, loss assembly, and the
/// complete parameter gradient.
pub fn composite_loss(
    model: &mut SSADModel,
    features: &Matrix,
    labels: &[TrainLabel],
    config: &LossConfig,
) -> Result<(BatchLossReport, ModelGrads)> {
    config.validate()?;
    if labels.len() != features.rows() {
        return Err(Error::Shape {
            op: "composite_loss",
            expected: format!("{} labels", features.rows()),
            got: format!("{}", labels.len()),
        });
    }
    if config.objective.uses_explicit_bn()
        && model.normalizer_kind() != NormalizerKind::None
    {
        return Err(Error::config(
            "the explicit cluster loss replaces the normalizer; use normalizer = none",
        ));
    }

    let anomaly = anomaly_mask(labels);
    let unlabeled: Vec<bool> = anomaly.iter().map(|a| !a).collect();
    let n_anomaly = anomaly.iter().filter(|a| **a).count();
    let n_unlabeled = labels.len() - n_anomaly;

    let out = model.forward(features)?;
    let scores = scores_from_output(&out);

    let (l_normal, normal_grad) = loss_normal(&scores, &unlabeled, config.objective.lambda_n());
    let (l_anomaly, anomaly_grad) = loss_anomaly(&scores, &anomaly, config.score_eps);

    let mut grad_out = Matrix::zeros(out.rows(), out.cols());
    for i in 0..out.rows() {
        let ds = normal_grad[i] + anomaly_grad[i];
        for j in 0..out.cols() {
            grad_out.set(i, j, ds * 2.0 * out.get(i, j));
        }
    }

    let (l_bn_explicit, hidden_grad) = if config.objective.uses_explicit_bn() {
        let hidden = model
            .last_hidden()
            .ok_or(Error::NoForwardCache { layer: "model" })?
            .clone();
        let (v, g) = loss_bn_explicit(&hidden)?;
        (v, Some(g))
    } else {
        (0.0, None)
    };

    let mut grads = model.backward_with_hidden_grad(&grad_out, hidden_grad.as_ref())?;
    let l_reg = loss_reg(model, config.lambda);
    model.add_weight_decay(&mut grads, config.lambda);

    let total = l_normal + l_anomaly + l_bn_explicit + l_reg;
    if !total.is_finite() {
        return Err(Error::NonFinite("composite loss".into()));
    }
    Ok((
        BatchLossReport {
            total,
            l_normal,
            l_anomaly,
            l_bn_explicit,
            l_reg,
            n_anomaly_rows: n_anomaly,
            n_unlabeled_rows: n_unlabeled,
        },
        grads,
    ))
}
