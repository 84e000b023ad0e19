//! The training loop: seeded, deterministic, and instrumented with a
//! per-step loss trace.

use serde::{Deserialize, Serialize};

use crate::batcher::Batcher;
use crate::data::SemiDataset;
use crate::error::{Error, Result};
use crate::losses::{composite_loss, BatchLossReport, LossConfig};
use crate::model::{build_model, Mode, ModelRecipe, NormalizerKind, SSADModel};
use crate::optim::{Optimizer, OptimizerSpec};

/// What to do with a batch that carries no labeled anomaly while the
/// objective has no other data term: by default the forward pass still runs
/// (so batch-norm running statistics keep learning from it) but the
/// parameter update is skipped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroAnomalyPolicy {
    UpdateStats,
    SkipEntirely,
}

impl Default for ZeroAnomalyPolicy {
    fn default() -> Self {
        ZeroAnomalyPolicy::UpdateStats
    }
}

/// Learning-rate schedule over epochs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Half-cosine decay from the base rate to zero across the run.
    Cosine,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule::Cosine
    }
}

impl LrSchedule {
    fn scale(&self, epoch: usize, epochs: usize) -> f64 {
        match self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Cosine => {
                0.5 * (1.0 + (std::f64::consts::PI * epoch as f64 / epochs as f64).cos())
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    #[serde(default)]
    pub optimizer: OptimizerSpec,
    #[serde(default)]
    pub batcher: Batcher,
    #[serde(default)]
    pub lr_schedule: LrSchedule,
    /// Global-norm gradient clip; the inverse anomaly loss spikes hard when
    /// a labeled score passes near zero. Zero disables clipping.
    #[serde(default = "default_grad_clip")]
    pub grad_clip: f64,
    pub loss: LossConfig,
    pub model: ModelRecipe,
    /// Run-level seed added to the model and batcher seeds; the sweep
    /// harness bumps this per repeat.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub zero_anomaly_policy: ZeroAnomalyPolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            optimizer: OptimizerSpec::default(),
            batcher: Batcher::default(),
            lr_schedule: LrSchedule::default(),
            grad_clip: default_grad_clip(),
            loss: LossConfig::default(),
            model: ModelRecipe::default(),
            seed: 0,
            zero_anomaly_policy: ZeroAnomalyPolicy::default(),
        }
    }
}

fn default_grad_clip() -> f64 {
    5.0
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grad_clip < 0.0 {
            return Err(Error::config("grad_clip must be nonnegative"));
        }
        self.optimizer.validate()?;
        self.loss.validate()?;
        self.model.validate()?;
        if self.loss.objective.uses_explicit_bn()
            && self.model.normalizer != NormalizerKind::None
        {
            return Err(Error::config(
                "the explicit cluster objective requires normalizer = none",
            ));
        }
        Ok(())
    }

    /// Model recipe with the run seed folded in.
    pub fn effective_model(&self) -> ModelRecipe {
        let mut m = self.model.clone();
        m.seed = m.seed.wrapping_add(self.seed);
        m
    }

    fn effective_batcher(&self) -> Batcher {
        let mut b = self.batcher.clone();
        b.seed = b.seed.wrapping_add(self.seed);
        b
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub report: BatchLossReport,
    pub updated: bool,
}

#[derive(Debug, Clone, Default)]
pub struct TrainTrace {
    pub steps: Vec<StepRecord>,
    pub epoch_mean_loss: Vec<f64>,
    pub updates_applied: usize,
    pub updates_skipped: usize,
}

impl TrainTrace {
    pub fn final_epoch_loss(&self) -> Option<f64> {
        self.epoch_mean_loss.last().copied()
    }
}

fn clip_global_norm(grads: &mut [f64], max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            *g *= scale;
        }
    }
}

/// Train a freshly built model on the dataset. Deterministic: the same
/// config and dataset always produce bitwise-identical parameters.
pub fn train(ds: &SemiDataset, cfg: &TrainConfig) -> Result<(SSADModel, TrainTrace)> {
    cfg.validate()?;
    let mut model = build_model(&cfg.effective_model())?;
    let mut trace = TrainTrace::default();
    if cfg.epochs == 0 {
        model.set_mode(Mode::Eval);
        return Ok((model, trace));
    }

    let batcher = cfg.effective_batcher();
    let uses_batch_stats = matches!(cfg.model.normalizer, NormalizerKind::BatchNorm { .. });
    if batcher.batch_size < 2 && uses_batch_stats {
        log::warn!(
            "batch size {} cannot support batch statistics; normalizing with running statistics",
            batcher.batch_size
        );
        model.set_bn_frozen(true);
    }

    let mut stream = batcher.stream(ds)?;
    let steps_per_epoch = batcher.batches_per_epoch(ds.len());
    let mut params = model.param_vector();
    let mut optimizer = Optimizer::new(cfg.optimizer, params.len())?;

    // With no normal-loss weight the gradient of an anomaly-free batch
    // carries no data signal (the explicit cluster term, when active, is one;
    // it still respects an explicit skip-entirely policy).
    let signal_free_without_anomalies = cfg.loss.objective.lambda_n() == 0.0
        && (!cfg.loss.objective.uses_explicit_bn()
            || cfg.zero_anomaly_policy == ZeroAnomalyPolicy::SkipEntirely);

    model.set_mode(Mode::Train);
    for epoch in 0..cfg.epochs {
        let lr_scale = cfg.lr_schedule.scale(epoch, cfg.epochs);
        let mut epoch_loss = 0.0;
        let mut epoch_steps = 0usize;
        for step in 0..steps_per_epoch {
            let batch = stream.next_batch(ds);
            if batch.anomaly_rows() == 0
                && signal_free_without_anomalies
                && cfg.zero_anomaly_policy == ZeroAnomalyPolicy::SkipEntirely
            {
                trace.updates_skipped += 1;
                continue;
            }
            let (report, grads) =
                match composite_loss(&mut model, &batch.features, &batch.labels, &cfg.loss) {
                    Ok(x) => x,
                    Err(Error::NonFinite(_)) => {
                        return Err(Error::Diverged {
                            epoch,
                            step,
                            loss: f64::NAN,
                        })
                    }
                    Err(e) => return Err(e),
                };
            if !report.total.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    loss: report.total,
                });
            }
            let update = !(report.zero_anomaly() && signal_free_without_anomalies);
            if update {
                let mut grad_vec = model.grads_to_vec(&grads);
                clip_global_norm(&mut grad_vec, cfg.grad_clip);
                optimizer.step_scaled(&mut params, &grad_vec, lr_scale);
                model.set_param_vector(&params)?;
                trace.updates_applied += 1;
            } else {
                trace.updates_skipped += 1;
            }
            epoch_loss += report.total;
            epoch_steps += 1;
            trace.steps.push(StepRecord {
                epoch,
                step,
                report,
                updated: update,
            });
        }
        trace
            .epoch_mean_loss
            .push(if epoch_steps > 0 { epoch_loss / epoch_steps as f64 } else { 0.0 });
    }
    model.set_mode(Mode::Eval);
    Ok((model, trace))
}
