//! Experiment harness: seeded sweeps over one configuration axis, repeated
//! over independent seeds, with deterministic CSV/JSON outputs.
//!
//! Every run is a pure function of its resolved configuration, so result
//! files are bit-identical across reruns; finished runs found in an existing
//! results file are reused instead of recomputed. The worker count for
//! parallel sweep execution comes from the `ANOONLY_WORKERS` environment
//! variable.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{generate, DataRecipe, SemiDataset};
use crate::error::{Error, Result};
use crate::losses::Objective;
use crate::metrics::{aucpr_anomaly, aucpr_normal, aucroc, ScoredSet};
use crate::model::{NormalizerKind, SSADModel};
use crate::train::{train, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    GammaLa,
    GammaN,
    LambdaN,
    BatchSize,
    Normalizer,
    Noise,
    SeenTypes,
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::GammaLa => "gamma_la",
            SweepAxis::GammaN => "gamma_n",
            SweepAxis::LambdaN => "lambda_n",
            SweepAxis::BatchSize => "batch_size",
            SweepAxis::Normalizer => "normalizer",
            SweepAxis::Noise => "noise",
            SweepAxis::SeenTypes => "seen_types",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "gamma_la" => SweepAxis::GammaLa,
            "gamma_n" => SweepAxis::GammaN,
            "lambda_n" => SweepAxis::LambdaN,
            "batch_size" => SweepAxis::BatchSize,
            "normalizer" => SweepAxis::Normalizer,
            "noise" => SweepAxis::Noise,
            "seen_types" => SweepAxis::SeenTypes,
            other => return Err(Error::config(format!("unknown sweep axis {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SweepValue {
    Int(u64),
    Real(f64),
    Name(String),
}

impl SweepValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            SweepValue::Int(i) => Some(*i as f64),
            SweepValue::Real(r) => Some(*r),
            SweepValue::Name(_) => None,
        }
    }

    pub fn display(&self) -> String {
        match self {
            SweepValue::Int(i) => i.to_string(),
            SweepValue::Real(r) => format!("{r}"),
            SweepValue::Name(s) => s.clone(),
        }
    }

    pub fn parse(s: &str) -> SweepValue {
        if let Ok(i) = s.parse::<u64>() {
            SweepValue::Int(i)
        } else if let Ok(r) = s.parse::<f64>() {
            SweepValue::Real(r)
        } else {
            SweepValue::Name(s.to_string())
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sweep {
    pub axis: SweepAxis,
    pub values: Vec<SweepValue>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub data: DataRecipe,
    pub train: TrainConfig,
    #[serde(default)]
    pub sweep: Option<Sweep>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub output_path: Option<PathBuf>,
}

fn default_repeats() -> usize {
    5
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.train.validate()?;
        if self.repeats == 0 {
            return Err(Error::config("repeats must be >= 1"));
        }
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return Err(Error::config("sweep needs at least one value"));
            }
            for v in &sweep.values {
                validate_sweep_value(sweep.axis, v, &self.data)?;
            }
        }
        Ok(())
    }

    /// Stable identity of the science content (outputs location excluded).
    pub fn config_hash(&self) -> String {
        #[derive(Serialize)]
        struct Hashed<'a> {
            name: &'a str,
            data: &'a DataRecipe,
            train: &'a TrainConfig,
            sweep: &'a Option<Sweep>,
            repeats: usize,
        }
        let canon = serde_json::to_string(&Hashed {
            name: &self.name,
            data: &self.data,
            train: &self.train,
            sweep: &self.sweep,
            repeats: self.repeats,
        })
        .expect("config serializes");
        format!("{:016x}", fnv1a64(canon.as_bytes()))
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn validate_sweep_value(axis: SweepAxis, v: &SweepValue, data: &DataRecipe) -> Result<()> {
    let bad = |msg: &str| Err(Error::config(format!("{}: {msg}", axis.name())));
    match axis {
        SweepAxis::GammaLa | SweepAxis::GammaN => match v.as_f64() {
            Some(x) if x > 0.0 && x <= 1.0 => Ok(()),
            _ => bad("values must be real in (0,1]"),
        },
        SweepAxis::LambdaN => match v.as_f64() {
            Some(x) if x >= 0.0 => Ok(()),
            _ => bad("values must be nonnegative reals"),
        },
        SweepAxis::BatchSize => match v {
            SweepValue::Int(i) if *i >= 1 => Ok(()),
            _ => bad("values must be integers >= 1"),
        },
        SweepAxis::Normalizer => match v {
            SweepValue::Name(s) if parse_normalizer_value(s).is_some() => Ok(()),
            _ => bad("values must be one of none, ln, bn, bn_star, bn_dagger"),
        },
        SweepAxis::Noise => match v {
            SweepValue::Name(s) if s == "contaminated" || s == "clean" => Ok(()),
            _ => bad("values must be contaminated or clean"),
        },
        SweepAxis::SeenTypes => match v {
            SweepValue::Int(i) if *i >= 1 && *i <= data.n_types() as u64 => Ok(()),
            _ => bad("values must be integers in 1..=K"),
        },
    }
}

fn parse_normalizer_value(s: &str) -> Option<(NormalizerKind, bool)> {
    // (normalizer, switch objective to the explicit cluster loss)
    match s {
        "none" => Some((NormalizerKind::None, false)),
        "ln" | "layer_norm" => Some((NormalizerKind::LayerNorm, false)),
        "bn" => Some((NormalizerKind::BatchNorm { affine: true }, false)),
        "bn_star" => Some((NormalizerKind::BatchNorm { affine: false }, false)),
        "bn_dagger" => Some((NormalizerKind::None, true)),
        _ => None,
    }
}

pub fn normalizer_name(kind: NormalizerKind) -> &'static str {
    match kind {
        NormalizerKind::None => "none",
        NormalizerKind::LayerNorm => "ln",
        NormalizerKind::BatchNorm { affine: true } => "bn",
        NormalizerKind::BatchNorm { affine: false } => "bn_star",
    }
}

/// One fully resolved run: the base config with one sweep value applied and
/// the repeat's seed offsets folded in.
fn resolve_run(
    cfg: &ExperimentConfig,
    value: Option<&SweepValue>,
    repeat: usize,
) -> Result<(DataRecipe, TrainConfig)> {
    let mut data = cfg.data.clone();
    let mut tc = cfg.train.clone();
    if let (Some(sweep), Some(v)) = (&cfg.sweep, value) {
        match sweep.axis {
            SweepAxis::GammaLa => data.gamma_la = v.as_f64().expect("validated"),
            SweepAxis::GammaN => data.gamma_n = v.as_f64().expect("validated"),
            SweepAxis::LambdaN => {
                tc.loss.objective = Objective::Reweighted {
                    lambda_n: v.as_f64().expect("validated"),
                }
            }
            SweepAxis::BatchSize => {
                if let SweepValue::Int(i) = v {
                    tc.batcher.batch_size = *i as usize;
                }
            }
            SweepAxis::Normalizer => {
                if let SweepValue::Name(s) = v {
                    let (kind, explicit) = parse_normalizer_value(s).expect("validated");
                    tc.model.normalizer = kind;
                    if explicit {
                        tc.loss.objective = Objective::AnoOnlyExplicitBn;
                    }
                }
            }
            SweepAxis::Noise => {
                if let SweepValue::Name(s) = v {
                    data.contamination = s == "contaminated";
                }
            }
            SweepAxis::SeenTypes => {
                if let SweepValue::Int(i) = v {
                    data.seen_types = (1..=*i as u32).collect();
                }
            }
        }
    }
    data.seed = data.seed.wrapping_add(repeat as u64);
    tc.seed = tc.seed.wrapping_add(repeat as u64);
    Ok((data, tc))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub experiment: String,
    pub axis: String,
    pub value: String,
    pub repeat: usize,
    pub seed: u64,
    pub objective: String,
    pub normalizer: String,
    pub batch_size: usize,
    pub gamma_la: f64,
    pub gamma_n: f64,
    pub contamination: bool,
    pub epochs: usize,
    pub aucroc: Option<f64>,
    pub aucpr_anomaly: Option<f64>,
    pub aucpr_normal: Option<f64>,
    pub aucroc_seen: Option<f64>,
    pub aucroc_unseen: Option<f64>,
    pub final_epoch_loss: Option<f64>,
    pub updates_applied: usize,
    pub updates_skipped: usize,
    pub status: String,
    /// Per-epoch mean loss; written to the traces file, not the results csv.
    #[serde(skip)]
    pub epoch_loss: Vec<f64>,
    /// Wall time is inherently non-deterministic, so it never enters the
    /// result files; it is only reported interactively.
    #[serde(skip)]
    pub wall_time_ms: u128,
}

impl RunRecord {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }
}

/// Score the held-out split and compute all metrics, split by seen/unseen
/// anomaly types when only a subset of types was labelable.
fn evaluate(
    model: &mut SSADModel,
    test: &SemiDataset,
    data: &DataRecipe,
) -> Result<(f64, f64, f64, Option<f64>, Option<f64>)> {
    let scores = model.score(&test.all_features())?;
    let truth: Vec<bool> = test.truth().iter().map(|t| t.is_anomaly()).collect();
    let set = ScoredSet::new(scores.clone(), truth)?;
    let roc = aucroc(&set)?;
    let pr_a = aucpr_anomaly(&set)?;
    let pr_n = aucpr_normal(&set)?;

    let seen = data.effective_seen_types();
    let all_types: Vec<u32> = (1..=data.n_types()).collect();
    let unseen: Vec<u32> = all_types
        .iter()
        .copied()
        .filter(|t| !seen.contains(t))
        .collect();
    let (mut roc_seen, mut roc_unseen) = (None, None);
    if !unseen.is_empty() {
        let partition = |types: &[u32]| -> Result<Option<f64>> {
            let mut s = Vec::new();
            let mut t = Vec::new();
            for (i, tr) in test.truth().iter().enumerate() {
                let keep = match tr {
                    crate::data::Truth::Normal => true,
                    crate::data::Truth::Anomaly(ty) => types.contains(ty),
                };
                if keep {
                    s.push(scores[i]);
                    t.push(tr.is_anomaly());
                }
            }
            if t.iter().any(|x| *x) && t.iter().any(|x| !x) {
                Ok(Some(aucroc(&ScoredSet::new(s, t)?)?))
            } else {
                Ok(None)
            }
        };
        roc_seen = partition(&seen)?;
        roc_unseen = partition(&unseen)?;
    }
    Ok((roc, pr_a, pr_n, roc_seen, roc_unseen))
}

fn execute_run(
    cfg: &ExperimentConfig,
    hash: &str,
    value_idx: usize,
    value: Option<&SweepValue>,
    repeat: usize,
) -> RunRecord {
    let started = Instant::now();
    let (data, tc) = match resolve_run(cfg, value, repeat) {
        Ok(x) => x,
        Err(e) => {
            return error_record(cfg, hash, value_idx, value, repeat, &e.to_string());
        }
    };
    let mut record = skeleton_record(cfg, hash, value_idx, value, repeat, &data, &tc);

    let outcome = (|| -> Result<()> {
        let (train_ds, test_ds) = generate(&data)?;
        let (mut model, trace) = train(&train_ds, &tc)?;
        let (roc, pr_a, pr_n, roc_seen, roc_unseen) = evaluate(&mut model, &test_ds, &data)?;
        record.aucroc = Some(roc);
        record.aucpr_anomaly = Some(pr_a);
        record.aucpr_normal = Some(pr_n);
        record.aucroc_seen = roc_seen;
        record.aucroc_unseen = roc_unseen;
        record.final_epoch_loss = trace.final_epoch_loss();
        record.updates_applied = trace.updates_applied;
        record.updates_skipped = trace.updates_skipped;
        record.epoch_loss = trace.epoch_mean_loss;
        Ok(())
    })();
    if let Err(e) = outcome {
        record.status = format!("error: {e}");
    }
    record.wall_time_ms = started.elapsed().as_millis();
    record
}

fn skeleton_record(
    cfg: &ExperimentConfig,
    hash: &str,
    value_idx: usize,
    value: Option<&SweepValue>,
    repeat: usize,
    data: &DataRecipe,
    tc: &TrainConfig,
) -> RunRecord {
    RunRecord {
        run_id: format!("{hash}-v{value_idx}-r{repeat}"),
        experiment: cfg.name.clone(),
        axis: cfg
            .sweep
            .as_ref()
            .map(|s| s.axis.name().to_string())
            .unwrap_or_else(|| "none".into()),
        value: value.map(|v| v.display()).unwrap_or_else(|| "-".into()),
        repeat,
        seed: tc.seed,
        objective: tc.loss.objective.name(),
        normalizer: normalizer_name(tc.model.normalizer).to_string(),
        batch_size: tc.batcher.batch_size,
        gamma_la: data.gamma_la,
        gamma_n: data.gamma_n,
        contamination: data.contamination,
        epochs: tc.epochs,
        aucroc: None,
        aucpr_anomaly: None,
        aucpr_normal: None,
        aucroc_seen: None,
        aucroc_unseen: None,
        final_epoch_loss: None,
        updates_applied: 0,
        updates_skipped: 0,
        status: "ok".into(),
        epoch_loss: Vec::new(),
        wall_time_ms: 0,
    }
}

fn error_record(
    cfg: &ExperimentConfig,
    hash: &str,
    value_idx: usize,
    value: Option<&SweepValue>,
    repeat: usize,
    msg: &str,
) -> RunRecord {
    let mut r = skeleton_record(
        cfg,
        hash,
        value_idx,
        value,
        repeat,
        &cfg.data,
        &cfg.train,
    );
    r.status = format!("error: {msg}");
    r
}

fn worker_pool() -> Option<rayon::ThreadPool> {
    std::env::var("ANOONLY_WORKERS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|w| *w >= 1)
        .and_then(|w| rayon::ThreadPoolBuilder::new().num_threads(w).build().ok())
}

/// Run the full sweep x repeats grid. Runs already present in the output
/// results file (matched by run id) are reused; failures are recorded and do
/// not stop the sweep.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    let hash = cfg.config_hash();

    let mut done: HashMap<String, RunRecord> = HashMap::new();
    if let Some(dir) = &cfg.output_path {
        if let Ok(existing) = read_results_csv(&dir.join("results.csv")) {
            let traces = read_traces_csv(&dir.join("traces.csv")).unwrap_or_default();
            for mut r in existing {
                if r.ok() && r.run_id.starts_with(&hash) {
                    if let Some(t) = traces.get(&r.run_id) {
                        r.epoch_loss = t.clone();
                    }
                    done.insert(r.run_id.clone(), r);
                }
            }
        }
    }

    let values: Vec<Option<&SweepValue>> = match &cfg.sweep {
        Some(s) => s.values.iter().map(Some).collect(),
        None => vec![None],
    };
    let jobs: Vec<(usize, Option<&SweepValue>, usize)> = values
        .iter()
        .enumerate()
        .flat_map(|(vi, v)| (0..cfg.repeats).map(move |r| (vi, *v, r)))
        .collect();

    let run_one = |&(vi, v, r): &(usize, Option<&SweepValue>, usize)| -> RunRecord {
        let id = format!("{hash}-v{vi}-r{r}");
        if let Some(prev) = done.get(&id) {
            return prev.clone();
        }
        execute_run(cfg, &hash, vi, v, r)
    };

    let records: Vec<RunRecord> = match worker_pool() {
        Some(pool) => pool.install(|| jobs.par_iter().map(run_one).collect()),
        None => jobs.par_iter().map(run_one).collect(),
    };

    if let Some(dir) = &cfg.output_path {
        write_outputs(cfg, &hash, &records, dir)?;
    }
    Ok(records)
}

const RESULTS_HEADER: [&str; 22] = [
    "run_id",
    "experiment",
    "axis",
    "value",
    "repeat",
    "seed",
    "objective",
    "normalizer",
    "batch_size",
    "gamma_la",
    "gamma_n",
    "contamination",
    "epochs",
    "aucroc",
    "aucpr_anomaly",
    "aucpr_normal",
    "aucroc_seen",
    "aucroc_unseen",
    "final_epoch_loss",
    "updates_applied",
    "updates_skipped",
    "status",
];

fn opt_to_field(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn field_to_opt(s: &str) -> Option<f64> {
    if s.is_empty() {
        None
    } else {
        s.parse().ok()
    }
}

pub fn write_results_csv(records: &[RunRecord], path: &Path) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(RESULTS_HEADER)?;
    for r in records {
        wtr.write_record([
            r.run_id.clone(),
            r.experiment.clone(),
            r.axis.clone(),
            r.value.clone(),
            r.repeat.to_string(),
            r.seed.to_string(),
            r.objective.clone(),
            r.normalizer.clone(),
            r.batch_size.to_string(),
            format!("{}", r.gamma_la),
            format!("{}", r.gamma_n),
            r.contamination.to_string(),
            r.epochs.to_string(),
            opt_to_field(r.aucroc),
            opt_to_field(r.aucpr_anomaly),
            opt_to_field(r.aucpr_normal),
            opt_to_field(r.aucroc_seen),
            opt_to_field(r.aucroc_unseen),
            opt_to_field(r.final_epoch_loss),
            r.updates_applied.to_string(),
            r.updates_skipped.to_string(),
            r.status.clone(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_results_csv(path: &Path) -> Result<Vec<RunRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    if rdr.headers()?.iter().ne(RESULTS_HEADER.iter().copied()) {
        return Err(Error::config("results csv header mismatch"));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let parse_usize = |i: usize| rec[i].parse::<usize>().unwrap_or(0);
        out.push(RunRecord {
            run_id: rec[0].to_string(),
            experiment: rec[1].to_string(),
            axis: rec[2].to_string(),
            value: rec[3].to_string(),
            repeat: parse_usize(4),
            seed: rec[5].parse().unwrap_or(0),
            objective: rec[6].to_string(),
            normalizer: rec[7].to_string(),
            batch_size: parse_usize(8),
            gamma_la: rec[9].parse().unwrap_or(0.0),
            gamma_n: rec[10].parse().unwrap_or(0.0),
            contamination: &rec[11] == "true",
            epochs: parse_usize(12),
            aucroc: field_to_opt(&rec[13]),
            aucpr_anomaly: field_to_opt(&rec[14]),
            aucpr_normal: field_to_opt(&rec[15]),
            aucroc_seen: field_to_opt(&rec[16]),
            aucroc_unseen: field_to_opt(&rec[17]),
            final_epoch_loss: field_to_opt(&rec[18]),
            updates_applied: parse_usize(19),
            updates_skipped: parse_usize(20),
            status: rec[21].to_string(),
            epoch_loss: Vec::new(),
            wall_time_ms: 0,
        });
    }
    Ok(out)
}

fn write_traces_csv(records: &[RunRecord], path: &Path) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(["run_id", "epoch", "mean_total_loss"])?;
    for r in records {
        for (epoch, loss) in r.epoch_loss.iter().enumerate() {
            wtr.write_record([r.run_id.clone(), epoch.to_string(), format!("{loss}")])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

fn read_traces_csv(path: &Path) -> Result<HashMap<String, Vec<f64>>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out: HashMap<String, Vec<f64>> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        if let Ok(loss) = rec[2].parse::<f64>() {
            out.entry(rec[0].to_string()).or_default().push(loss);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct AggregatePoint {
    pub value: String,
    pub n_ok: usize,
    pub mean_aucroc: Option<f64>,
    pub mean_aucpr_anomaly: Option<f64>,
    pub mean_aucpr_normal: Option<f64>,
    pub mean_aucroc_seen: Option<f64>,
    pub mean_aucroc_unseen: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AggregateReport {
    pub experiment: String,
    pub config_hash: String,
    pub axis: String,
    pub points: Vec<AggregatePoint>,
}

fn mean_of(values: Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Mean metrics per sweep value over the ok repeats.
pub fn aggregate(cfg: &ExperimentConfig, records: &[RunRecord]) -> AggregateReport {
    let mut order: Vec<String> = Vec::new();
    let mut buckets: HashMap<String, Vec<&RunRecord>> = HashMap::new();
    for r in records {
        if !buckets.contains_key(&r.value) {
            order.push(r.value.clone());
        }
        buckets.entry(r.value.clone()).or_default().push(r);
    }
    let points = order
        .into_iter()
        .map(|value| {
            let rs = &buckets[&value];
            let ok: Vec<&&RunRecord> = rs.iter().filter(|r| r.ok()).collect();
            let collect = |f: fn(&RunRecord) -> Option<f64>| {
                mean_of(ok.iter().filter_map(|r| f(r)).collect())
            };
            AggregatePoint {
                value,
                n_ok: ok.len(),
                mean_aucroc: collect(|r| r.aucroc),
                mean_aucpr_anomaly: collect(|r| r.aucpr_anomaly),
                mean_aucpr_normal: collect(|r| r.aucpr_normal),
                mean_aucroc_seen: collect(|r| r.aucroc_seen),
                mean_aucroc_unseen: collect(|r| r.aucroc_unseen),
            }
        })
        .collect();
    AggregateReport {
        experiment: cfg.name.clone(),
        config_hash: cfg.config_hash(),
        axis: cfg
            .sweep
            .as_ref()
            .map(|s| s.axis.name().to_string())
            .unwrap_or_else(|| "none".into()),
        points,
    }
}

fn write_curves_csv(report: &AggregateReport, path: &Path) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record([
        "value",
        "mean_aucroc",
        "mean_aucpr_anomaly",
        "mean_aucpr_normal",
        "mean_aucroc_seen",
        "mean_aucroc_unseen",
    ])?;
    for p in &report.points {
        wtr.write_record([
            p.value.clone(),
            opt_to_field(p.mean_aucroc),
            opt_to_field(p.mean_aucpr_anomaly),
            opt_to_field(p.mean_aucpr_normal),
            opt_to_field(p.mean_aucroc_seen),
            opt_to_field(p.mean_aucroc_unseen),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

fn write_outputs(
    cfg: &ExperimentConfig,
    _hash: &str,
    records: &[RunRecord],
    dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_results_csv(records, &dir.join("results.csv"))?;
    write_traces_csv(records, &dir.join("traces.csv"))?;
    let report = aggregate(cfg, records);
    std::fs::write(
        dir.join("aggregate.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    write_curves_csv(&report, &dir.join("curves.csv"))?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareRow {
    pub value: String,
    pub repeat: usize,
    pub baseline_aucroc: Option<f64>,
    pub variant_aucroc: Option<f64>,
    pub delta_aucroc: Option<f64>,
    pub delta_aucpr_anomaly: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareSummary {
    pub mean_delta_aucroc: Option<f64>,
    pub positive: usize,
    pub negative: usize,
    pub zero: usize,
    pub sign_test_p: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonTable {
    pub baseline: String,
    pub variant: String,
    pub rows: Vec<CompareRow>,
    pub summary: CompareSummary,
}

/// Exact two-sided sign test for paired deltas.
fn sign_test_p(positive: usize, negative: usize) -> Option<f64> {
    let n = positive + negative;
    if n == 0 {
        return None;
    }
    let k = positive.max(negative);
    // P(X >= k) for X ~ Binomial(n, 1/2), doubled and clamped.
    let mut tail = 0.0f64;
    for i in k..=n {
        tail += binom_ln(n, i).exp();
    }
    let p = (2.0 * tail * 0.5f64.powi(n as i32)).min(1.0);
    Some(p)
}

fn binom_ln(n: usize, k: usize) -> f64 {
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|i| (i as f64).ln()).sum()
}

/// Paired comparison of two experiments sharing data seeds, sweep shape and
/// repeat count; deltas are variant minus baseline, per (value, repeat).
pub fn compare(baseline: &ExperimentConfig, variant: &ExperimentConfig) -> Result<ComparisonTable> {
    if baseline.data.seed != variant.data.seed {
        return Err(Error::config(
            "paired comparison requires identical data seeds",
        ));
    }
    if baseline.repeats != variant.repeats {
        return Err(Error::config(
            "paired comparison requires identical repeat counts",
        ));
    }
    let values_of = |c: &ExperimentConfig| {
        c.sweep
            .as_ref()
            .map(|s| s.values.iter().map(|v| v.display()).collect::<Vec<_>>())
            .unwrap_or_else(|| vec!["-".into()])
    };
    if values_of(baseline) != values_of(variant) {
        return Err(Error::config(
            "paired comparison requires identical sweep values",
        ));
    }

    let a = run_experiment(baseline)?;
    let b = run_experiment(variant)?;
    let mut rows = Vec::with_capacity(a.len());
    let (mut pos, mut neg, mut zero) = (0usize, 0usize, 0usize);
    let mut deltas = Vec::new();
    for (ra, rb) in a.iter().zip(&b) {
        let delta = match (ra.aucroc, rb.aucroc) {
            (Some(x), Some(y)) => {
                let d = y - x;
                if d > 0.0 {
                    pos += 1;
                } else if d < 0.0 {
                    neg += 1;
                } else {
                    zero += 1;
                }
                deltas.push(d);
                Some(d)
            }
            _ => None,
        };
        let delta_pr = match (ra.aucpr_anomaly, rb.aucpr_anomaly) {
            (Some(x), Some(y)) => Some(y - x),
            _ => None,
        };
        rows.push(CompareRow {
            value: ra.value.clone(),
            repeat: ra.repeat,
            baseline_aucroc: ra.aucroc,
            variant_aucroc: rb.aucroc,
            delta_aucroc: delta,
            delta_aucpr_anomaly: delta_pr,
        });
    }
    Ok(ComparisonTable {
        baseline: baseline.name.clone(),
        variant: variant.name.clone(),
        rows,
        summary: CompareSummary {
            mean_delta_aucroc: mean_of(deltas),
            positive: pos,
            negative: neg,
            zero,
            sign_test_p: sign_test_p(pos, neg),
        },
    })
}
