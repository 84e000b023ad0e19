//! Synthetic semi-supervised datasets in feature space.
//!
//! Normal data comes from a mixture of isotropic Gaussian clusters placed on
//! a sphere around the origin. Anomalies come from a configurable list of
//! generators: off-manifold Gaussian clusters, a spherical shell around the
//! normal mass, and a uniform box. Only a fraction of the true anomalies
//! carry labels, drawn exclusively from the "seen" types; everything else is
//! presented to training as unlabeled.

use std::io::{Read, Write};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Training-time label: `-1` for labeled anomalies, `+1` for everything else.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainLabel {
    LabeledAnomaly,
    Unlabeled,
}

impl TrainLabel {
    pub fn as_i8(self) -> i8 {
        match self {
            TrainLabel::LabeledAnomaly => -1,
            TrainLabel::Unlabeled => 1,
        }
    }
}

/// Ground truth, hidden from training and used only by evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truth {
    Normal,
    /// 1-based anomaly type id.
    Anomaly(u32),
}

impl Truth {
    pub fn is_anomaly(self) -> bool {
        matches!(self, Truth::Anomaly(_))
    }

    pub fn type_id(self) -> u32 {
        match self {
            Truth::Normal => 0,
            Truth::Anomaly(t) => t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    /// Gaussian cluster off the normal manifold.
    Cluster,
    /// Spherical shell around the normal mass.
    Ring,
    /// Uniform box spanning the feature space.
    UniformBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataRecipe {
    pub d: usize,
    pub n_total: usize,
    #[serde(default = "default_anomaly_ratio")]
    pub anomaly_ratio: f64,
    #[serde(default = "default_normal_clusters")]
    pub normal_clusters: usize,
    #[serde(default = "default_cluster_spread")]
    pub cluster_spread: f64,
    #[serde(default = "default_anomaly_types")]
    pub anomaly_types: Vec<AnomalyKind>,
    /// 1-based ids of anomaly types eligible for labeling; empty means all.
    #[serde(default)]
    pub seen_types: Vec<u32>,
    #[serde(default = "default_gamma_la")]
    pub gamma_la: f64,
    #[serde(default = "default_gamma_n")]
    pub gamma_n: f64,
    /// When true (the realistic setting), unlabeled anomalies stay hidden in
    /// the unlabeled pool; when false they are filtered out of training.
    #[serde(default = "default_true")]
    pub contamination: bool,
    #[serde(default = "default_train_frac")]
    pub train_frac: f64,
    pub seed: u64,
}

fn default_anomaly_ratio() -> f64 {
    0.05
}
fn default_normal_clusters() -> usize {
    8
}
fn default_cluster_spread() -> f64 {
    1.0
}
fn default_anomaly_types() -> Vec<AnomalyKind> {
    vec![
        AnomalyKind::Cluster,
        AnomalyKind::Cluster,
        AnomalyKind::Cluster,
        AnomalyKind::Ring,
        AnomalyKind::UniformBox,
    ]
}
fn default_gamma_la() -> f64 {
    0.1
}
fn default_gamma_n() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}
fn default_train_frac() -> f64 {
    0.7
}

impl Default for DataRecipe {
    fn default() -> Self {
        DataRecipe {
            d: 16,
            n_total: 1000,
            anomaly_ratio: default_anomaly_ratio(),
            normal_clusters: default_normal_clusters(),
            cluster_spread: default_cluster_spread(),
            anomaly_types: default_anomaly_types(),
            seen_types: Vec::new(),
            gamma_la: default_gamma_la(),
            gamma_n: default_gamma_n(),
            contamination: true,
            train_frac: default_train_frac(),
            seed: 1,
        }
    }
}

impl DataRecipe {
    pub fn n_types(&self) -> u32 {
        self.anomaly_types.len() as u32
    }

    /// Seen type ids after resolving the "empty means all" convention.
    pub fn effective_seen_types(&self) -> Vec<u32> {
        if self.seen_types.is_empty() {
            (1..=self.n_types()).collect()
        } else {
            self.seen_types.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.n_total == 0 {
            return Err(Error::config("d and n_total must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.anomaly_ratio) || self.anomaly_ratio <= 0.0 {
            return Err(Error::config("anomaly_ratio must be in (0,1)"));
        }
        if self.normal_clusters == 0 || self.cluster_spread <= 0.0 {
            return Err(Error::config("need >= 1 normal cluster with positive spread"));
        }
        if self.anomaly_types.is_empty() {
            return Err(Error::config("need at least one anomaly type"));
        }
        if !(0.0..=1.0).contains(&self.gamma_la) || self.gamma_la == 0.0 {
            return Err(Error::config("gamma_la must be in (0,1]"));
        }
        if !(0.0..=1.0).contains(&self.gamma_n) || self.gamma_n == 0.0 {
            return Err(Error::config("gamma_n must be in (0,1]"));
        }
        if !(0.0..1.0).contains(&self.train_frac) || self.train_frac <= 0.0 {
            return Err(Error::config("train_frac must be in (0,1)"));
        }
        let k = self.n_types();
        for t in &self.seen_types {
            if *t == 0 || *t > k {
                return Err(Error::config(format!(
                    "seen type {t} outside 1..={k}"
                )));
            }
        }
        Ok(())
    }
}

/// Features plus semi-supervised labels and the hidden ground truth.
#[derive(Debug, Clone)]
pub struct SemiDataset {
    features: Matrix,
    train_label: Vec<TrainLabel>,
    truth: Vec<Truth>,
    meta: DataRecipe,
    row_reads: Arc<AtomicU64>,
}

impl SemiDataset {
    /// Build a dataset from raw parts, checking the label/truth contract:
    /// every labeled anomaly must really be an anomaly.
    pub fn from_parts(
        features: Matrix,
        train_label: Vec<TrainLabel>,
        truth: Vec<Truth>,
        meta: DataRecipe,
    ) -> Result<Self> {
        if features.rows() != train_label.len() || features.rows() != truth.len() {
            return Err(Error::Shape {
                op: "SemiDataset::from_parts",
                expected: format!("{} labels and truths", features.rows()),
                got: format!("{}/{}", train_label.len(), truth.len()),
            });
        }
        for (l, t) in train_label.iter().zip(&truth) {
            if *l == TrainLabel::LabeledAnomaly && !t.is_anomaly() {
                return Err(Error::config(
                    "labeled-anomaly row with normal ground truth",
                ));
            }
        }
        Ok(Self::assemble(features, train_label, truth, meta))
    }

    fn assemble(
        features: Matrix,
        train_label: Vec<TrainLabel>,
        truth: Vec<Truth>,
        meta: DataRecipe,
    ) -> Self {
        debug_assert_eq!(features.rows(), train_label.len());
        debug_assert_eq!(features.rows(), truth.len());
        SemiDataset {
            features,
            train_label,
            truth,
            meta,
            row_reads: Arc::new(AtomicU64::new(0)),
        }
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn meta(&self) -> &DataRecipe {
        &self.meta
    }

    pub fn labels(&self) -> &[TrainLabel] {
        &self.train_label
    }

    pub fn truth(&self) -> &[Truth] {
        &self.truth
    }

    /// Feature rows by index; counts as a row read for leakage auditing.
    pub fn rows_features(&self, indices: &[usize]) -> Matrix {
        self.row_reads
            .fetch_add(indices.len() as u64, Ordering::Relaxed);
        self.features.select_rows(indices)
    }

    /// The whole feature matrix; counts every row as read.
    pub fn all_features(&self) -> Matrix {
        self.row_reads
            .fetch_add(self.len() as u64, Ordering::Relaxed);
        self.features.clone()
    }

    /// Number of feature-row reads so far (shared across clones).
    pub fn row_reads(&self) -> u64 {
        self.row_reads.load(Ordering::Relaxed)
    }

    pub fn labeled_anomaly_indices(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.train_label[i] == TrainLabel::LabeledAnomaly)
            .collect()
    }

    pub fn unlabeled_indices(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.train_label[i] == TrainLabel::Unlabeled)
            .collect()
    }

    pub fn anomaly_count(&self) -> usize {
        self.truth.iter().filter(|t| t.is_anomaly()).count()
    }
}

/// Round-half-up; all ratio-derived counts use this.
pub fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

fn std_normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn unit_vector(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| std_normal(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

// Geometry constants for the synthetic feature space. Cluster anomalies are
// satellites of a normal cluster: the same local structure displaced a few
// sigma along the sphere the cluster centers live on, so a satellite carries
// no radial signal at all and is separable only through its displacement
// direction. The shell sits inside the normal radial tail and the box fills
// the volume the normal shell encloses, so neither is a plain far outlier.
const NORMAL_CENTER_RADIUS: f64 = 4.0;
const SATELLITE_OFFSET: f64 = 3.5;
const RING_RADIUS: f64 = 6.0;
const RING_WIDTH: f64 = 0.5;
const BOX_HALF_WIDTH: f64 = 2.0;
// Per-cluster spread multipliers range over [0.6, 1.6) of the base spread.
const SPREAD_VARIATION: (f64, f64) = (0.6, 1.6);

struct Generators {
    normal_centers: Vec<Vec<f64>>,
    normal_spreads: Vec<f64>,
    anomaly_centers: Vec<Option<Vec<f64>>>, // per type; None for ring/box
}

fn draw_generators(recipe: &DataRecipe, rng: &mut ChaCha8Rng) -> Generators {
    let normal_centers: Vec<Vec<f64>> = (0..recipe.normal_clusters)
        .map(|_| {
            unit_vector(recipe.d, rng)
                .into_iter()
                .map(|v| v * NORMAL_CENTER_RADIUS)
                .collect()
        })
        .collect();
    let normal_spreads: Vec<f64> = (0..recipe.normal_clusters)
        .map(|_| recipe.cluster_spread * rng.random_range(SPREAD_VARIATION.0..SPREAD_VARIATION.1))
        .collect();
    let anomaly_centers = recipe
        .anomaly_types
        .iter()
        .enumerate()
        .map(|(t, kind)| match kind {
            AnomalyKind::Cluster => {
                // Geodesic displacement keeps the satellite center on the
                // host's sphere: equal norm, different direction.
                let host: &Vec<f64> = &normal_centers[t % normal_centers.len()];
                let radius = host.iter().map(|v| v * v).sum::<f64>().sqrt();
                let host_dir: Vec<f64> = host.iter().map(|v| v / radius).collect();
                let raw = unit_vector(recipe.d, rng);
                let dot: f64 = raw.iter().zip(&host_dir).map(|(a, b)| a * b).sum();
                let mut perp: Vec<f64> = raw
                    .iter()
                    .zip(&host_dir)
                    .map(|(r, h)| r - dot * h)
                    .collect();
                let pnorm = perp.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
                for v in perp.iter_mut() {
                    *v /= pnorm;
                }
                let theta = SATELLITE_OFFSET / radius;
                Some(
                    host_dir
                        .iter()
                        .zip(&perp)
                        .map(|(h, p)| radius * (theta.cos() * h + theta.sin() * p))
                        .collect(),
                )
            }
            _ => None,
        })
        .collect();
    Generators {
        normal_centers,
        normal_spreads,
        anomaly_centers,
    }
}

fn sample_normal_row(_recipe: &DataRecipe, gens: &Generators, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let k = rng.random_range(0..gens.normal_centers.len());
    let spread = gens.normal_spreads[k];
    gens.normal_centers[k]
        .iter()
        .map(|&m| m + spread * std_normal(rng))
        .collect()
}

fn sample_anomaly_row(
    recipe: &DataRecipe,
    gens: &Generators,
    type_id: u32,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let idx = (type_id - 1) as usize;
    match recipe.anomaly_types[idx] {
        AnomalyKind::Cluster => {
            let c = gens.anomaly_centers[idx].as_ref().expect("cluster center");
            // satellites share their host cluster's local spread
            let spread = gens.normal_spreads[idx % gens.normal_spreads.len()];
            c.iter().map(|&m| m + spread * std_normal(rng)).collect()
        }
        AnomalyKind::Ring => {
            let r = RING_RADIUS + rng.random_range(-RING_WIDTH..RING_WIDTH);
            unit_vector(recipe.d, rng).into_iter().map(|v| v * r).collect()
        }
        AnomalyKind::UniformBox => (0..recipe.d)
            .map(|_| rng.random_range(-BOX_HALF_WIDTH..BOX_HALF_WIDTH))
            .collect(),
    }
}

/// Generate the train and test splits for a recipe. Deterministic in the
/// seed: the same recipe always yields bitwise-identical datasets.
///
/// Labeled anomalies are drawn only from the seen types, with
/// `round(gamma_la * train anomalies)` labels in total. The contamination
/// and `gamma_n` settings apply to the train split only; the test split
/// always carries the full distribution over every anomaly type.
pub fn generate(recipe: &DataRecipe) -> Result<(SemiDataset, SemiDataset)> {
    recipe.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(recipe.seed);
    let gens = draw_generators(recipe, &mut rng);

    let n_anom = round_half_up(recipe.anomaly_ratio * recipe.n_total as f64);
    if n_anom == 0 {
        return Err(Error::config(
            "recipe yields zero anomalies but gamma_la > 0",
        ));
    }
    let n_norm = recipe.n_total - n_anom;
    let k = recipe.anomaly_types.len();
    // Spread anomalies over types as evenly as possible.
    let mut per_type = vec![n_anom / k; k];
    for row in per_type.iter_mut().take(n_anom % k) {
        *row += 1;
    }

    // Sample every group, then split each group train/test.
    let mut train_rows: Vec<(Vec<f64>, Truth)> = Vec::new();
    let mut test_rows: Vec<(Vec<f64>, Truth)> = Vec::new();
    let mut split_group = |rows: Vec<(Vec<f64>, Truth)>, rng: &mut ChaCha8Rng| {
        let mut idx: Vec<usize> = (0..rows.len()).collect();
        idx.shuffle(rng);
        let n_train = round_half_up(recipe.train_frac * rows.len() as f64);
        let mut rows: Vec<Option<(Vec<f64>, Truth)>> = rows.into_iter().map(Some).collect();
        for (pos, &i) in idx.iter().enumerate() {
            let row = rows[i].take().expect("each row moves once");
            if pos < n_train {
                train_rows.push(row);
            } else {
                test_rows.push(row);
            }
        }
    };

    let normals: Vec<(Vec<f64>, Truth)> = (0..n_norm)
        .map(|_| (sample_normal_row(recipe, &gens, &mut rng), Truth::Normal))
        .collect();
    split_group(normals, &mut rng);
    for (t, &count) in per_type.iter().enumerate() {
        let type_id = (t + 1) as u32;
        let rows: Vec<(Vec<f64>, Truth)> = (0..count)
            .map(|_| {
                (
                    sample_anomaly_row(recipe, &gens, type_id, &mut rng),
                    Truth::Anomaly(type_id),
                )
            })
            .collect();
        split_group(rows, &mut rng);
    }

    // Deterministic row order shuffle per split.
    train_rows.shuffle(&mut rng);
    test_rows.shuffle(&mut rng);

    let build = |rows: Vec<(Vec<f64>, Truth)>, labels: Vec<TrainLabel>| -> Result<SemiDataset> {
        let truth: Vec<Truth> = rows.iter().map(|(_, t)| *t).collect();
        let feats: Vec<Vec<f64>> = rows.into_iter().map(|(f, _)| f).collect();
        Ok(SemiDataset::assemble(
            Matrix::from_rows(&feats)?,
            labels,
            truth,
            recipe.clone(),
        ))
    };

    // Label a gamma_la fraction of the train anomalies, seen types only.
    let train_truth: Vec<Truth> = train_rows.iter().map(|(_, t)| *t).collect();
    let n_train_anom = train_truth.iter().filter(|t| t.is_anomaly()).count();
    let target = round_half_up(recipe.gamma_la * n_train_anom as f64);
    let seen = recipe.effective_seen_types();
    let mut eligible: Vec<usize> = (0..train_rows.len())
        .filter(|&i| match train_truth[i] {
            Truth::Anomaly(t) => seen.contains(&t),
            Truth::Normal => false,
        })
        .collect();
    if target > eligible.len() {
        return Err(Error::config(format!(
            "gamma_la {} needs {target} labeled anomalies but only {} train anomalies \
             have seen types",
            recipe.gamma_la,
            eligible.len()
        )));
    }
    eligible.shuffle(&mut rng);
    let mut train_labels = vec![TrainLabel::Unlabeled; train_rows.len()];
    for &i in eligible.iter().take(target) {
        train_labels[i] = TrainLabel::LabeledAnomaly;
    }

    let mut train = build(train_rows, train_labels)?;
    let test_labels = vec![TrainLabel::Unlabeled; test_rows.len()];
    let test = build(test_rows, test_labels)?;

    if !recipe.contamination {
        train = decontaminate(&train);
    }
    if recipe.gamma_n < 1.0 {
        // Sub-seed reserved for the normal subsample so that gamma_n sweeps
        // share one permutation.
        train = subsample_normal(&train, recipe.gamma_n, recipe.seed.wrapping_add(0x5eed))?;
    }
    train.features.ensure_finite("generated train features")?;
    test.features.ensure_finite("generated test features")?;
    Ok((train, test))
}

/// Keep `round(gamma_n * normals)` of the truth-normal rows (all anomaly rows
/// stay), chosen as a prefix of one seeded permutation so smaller fractions
/// are nested inside larger ones.
pub fn subsample_normal(ds: &SemiDataset, gamma_n: f64, seed: u64) -> Result<SemiDataset> {
    if !(0.0..=1.0).contains(&gamma_n) || gamma_n <= 0.0 {
        return Err(Error::config("gamma_n must be in (0,1]"));
    }
    let normal_idx: Vec<usize> = (0..ds.len())
        .filter(|&i| !ds.truth[i].is_anomaly())
        .collect();
    let keep = round_half_up(gamma_n * normal_idx.len() as f64);
    let mut perm = normal_idx.clone();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let kept: std::collections::HashSet<usize> = perm.into_iter().take(keep).collect();

    let retained: Vec<usize> = (0..ds.len())
        .filter(|&i| ds.truth[i].is_anomaly() || kept.contains(&i))
        .collect();
    if retained.is_empty() {
        return Err(Error::config("subsample_normal produced an empty dataset"));
    }
    Ok(SemiDataset::assemble(
        ds.features.select_rows(&retained),
        retained.iter().map(|&i| ds.train_label[i]).collect(),
        retained.iter().map(|&i| ds.truth[i]).collect(),
        ds.meta.clone(),
    ))
}

/// Drop rows that are true anomalies hiding in the unlabeled pool. Labeled
/// anomalies are untouched, so this turns the unlabeled set into a clean
/// normal set.
pub fn decontaminate(ds: &SemiDataset) -> SemiDataset {
    let retained: Vec<usize> = (0..ds.len())
        .filter(|&i| {
            !(ds.truth[i].is_anomaly() && ds.train_label[i] == TrainLabel::Unlabeled)
        })
        .collect();
    SemiDataset::assemble(
        ds.features.select_rows(&retained),
        retained.iter().map(|&i| ds.train_label[i]).collect(),
        retained.iter().map(|&i| ds.truth[i]).collect(),
        ds.meta.clone(),
    )
}

impl SemiDataset {
    /// CSV schema: `f0..f{d-1},train_label,truth_type` with `-1/+1` labels
    /// and truth type `0` for normal rows. Floats use the shortest
    /// round-trip representation, so export/import is bit-exact.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (0..self.dim()).map(|j| format!("f{j}")).collect();
        header.push("train_label".into());
        header.push("truth_type".into());
        wtr.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.features.row(i).iter().map(|v| format!("{v}")).collect();
            rec.push(self.train_label[i].as_i8().to_string());
            rec.push(self.truth[i].type_id().to_string());
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, meta: DataRecipe) -> Result<SemiDataset> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers()?.clone();
        let d = headers.len().saturating_sub(2);
        if d == 0 {
            return Err(Error::config("dataset csv needs feature columns"));
        }
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        let mut truth = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let mut row = Vec::with_capacity(d);
            for j in 0..d {
                row.push(rec[j].parse::<f64>().map_err(|e| {
                    Error::config(format!("bad float {:?}: {e}", &rec[j]))
                })?);
            }
            rows.push(row);
            labels.push(match rec[d].trim() {
                "-1" => TrainLabel::LabeledAnomaly,
                "1" => TrainLabel::Unlabeled,
                other => return Err(Error::config(format!("bad train_label {other:?}"))),
            });
            let t: u32 = rec[d + 1]
                .trim()
                .parse()
                .map_err(|e| Error::config(format!("bad truth_type: {e}")))?;
            truth.push(if t == 0 { Truth::Normal } else { Truth::Anomaly(t) });
        }
        Ok(SemiDataset::assemble(
            Matrix::from_rows(&rows)?,
            labels,
            truth,
            meta,
        ))
    }
}
