//! Mini-batch sampling.
//!
//! `UniformShuffle` partitions a shuffled epoch into consecutive chunks, so
//! one epoch covers the dataset exactly once. At realistic anomaly ratios a
//! uniform batch usually contains no labeled anomaly at all, which starves
//! an anomaly-only objective; `StratifiedAnomaly` therefore guarantees a
//! minimum number of labeled anomaly rows per batch, resampling from the
//! small labeled pool as needed.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{SemiDataset, TrainLabel};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchStrategy {
    UniformShuffle,
    StratifiedAnomaly { min_anomalies: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Batcher {
    pub batch_size: usize,
    #[serde(default = "default_strategy")]
    pub strategy: BatchStrategy,
    pub seed: u64,
}

fn default_strategy() -> BatchStrategy {
    BatchStrategy::StratifiedAnomaly { min_anomalies: 1 }
}

impl Default for Batcher {
    fn default() -> Self {
        Batcher {
            batch_size: 32,
            strategy: default_strategy(),
            seed: 11,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub features: Matrix,
    pub labels: Vec<TrainLabel>,
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn anomaly_rows(&self) -> usize {
        self.labels
            .iter()
            .filter(|l| **l == TrainLabel::LabeledAnomaly)
            .count()
    }
}

/// Stateful batch source; reshuffles at each epoch boundary.
pub struct BatchStream {
    batcher: Batcher,
    rng: ChaCha8Rng,
    plan: Vec<Vec<usize>>, // batches remaining in the current epoch, reversed
    labeled: Vec<usize>,
    unlabeled: Vec<usize>,
    n: usize,
}

impl Batcher {
    /// Number of batches one epoch emits.
    pub fn batches_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size)
    }

    pub fn stream(&self, ds: &SemiDataset) -> Result<BatchStream> {
        if ds.is_empty() {
            return Err(Error::config("cannot batch an empty dataset"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be >= 1"));
        }
        if self.batch_size > ds.len() {
            return Err(Error::config(format!(
                "batch size {} exceeds dataset size {}",
                self.batch_size,
                ds.len()
            )));
        }
        let labeled = ds.labeled_anomaly_indices();
        let unlabeled = ds.unlabeled_indices();
        if let BatchStrategy::StratifiedAnomaly { min_anomalies } = self.strategy {
            if min_anomalies > self.batch_size {
                return Err(Error::config(
                    "min_anomalies cannot exceed the batch size",
                ));
            }
            if min_anomalies > 0 && labeled.is_empty() {
                return Err(Error::config(
                    "stratified batching needs at least one labeled anomaly",
                ));
            }
            if self.batch_size > min_anomalies && unlabeled.is_empty() {
                return Err(Error::config(
                    "stratified batching needs unlabeled rows to fill batches",
                ));
            }
        }
        Ok(BatchStream {
            batcher: self.clone(),
            rng: ChaCha8Rng::seed_from_u64(self.seed),
            plan: Vec::new(),
            labeled,
            unlabeled,
            n: ds.len(),
        })
    }
}

impl BatchStream {
    fn refill_plan(&mut self) {
        match self.batcher.strategy {
            BatchStrategy::UniformShuffle => {
                let mut order: Vec<usize> = (0..self.n).collect();
                order.shuffle(&mut self.rng);
                let mut plan: Vec<Vec<usize>> = order
                    .chunks(self.batcher.batch_size)
                    .map(|c| c.to_vec())
                    .collect();
                plan.reverse();
                self.plan = plan;
            }
            BatchStrategy::StratifiedAnomaly { min_anomalies } => {
                let k = self.batcher.batches_per_epoch(self.n);
                let mut plan = Vec::with_capacity(k);
                for _ in 0..k {
                    let mut batch = Vec::with_capacity(self.batcher.batch_size);
                    batch.extend(sample_k(&self.labeled, min_anomalies, &mut self.rng));
                    let fill = self.batcher.batch_size - batch.len();
                    batch.extend(sample_k(&self.unlabeled, fill, &mut self.rng));
                    plan.push(batch);
                }
                plan.reverse();
                self.plan = plan;
            }
        }
    }

    pub fn next_batch(&mut self, ds: &SemiDataset) -> Batch {
        if self.plan.is_empty() {
            self.refill_plan();
        }
        let indices = self.plan.pop().expect("plan refilled above");
        let features = ds.rows_features(&indices);
        let labels = indices.iter().map(|&i| ds.labels()[i]).collect();
        Batch {
            features,
            labels,
            indices,
        }
    }
}

/// Draw `k` items from the pool: without replacement while the pool lasts,
/// with replacement once it is exhausted.
fn sample_k(pool: &[usize], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if k == 0 || pool.is_empty() {
        return Vec::new();
    }
    if k <= pool.len() {
        let mut copy = pool.to_vec();
        copy.shuffle(rng);
        copy.truncate(k);
        copy
    } else {
        (0..k).map(|_| pool[rng.random_range(0..pool.len())]).collect()
    }
}
