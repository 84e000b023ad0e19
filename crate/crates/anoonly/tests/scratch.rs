// Temporary calibration diagnostics; not part of the test suite.

use anoonly::batcher::Batcher;
use anoonly::data::{generate, DataRecipe, Truth};
use anoonly::losses::{LossConfig, Objective};
use anoonly::metrics::{aucroc, ScoredSet};
use anoonly::model::{ModelRecipe, NormalizerKind};
use anoonly::train::{train, TrainConfig};

fn per_type_auc(scores: &[f64], truth: &[Truth], types: &[u32]) -> f64 {
    let mut s = Vec::new();
    let mut t = Vec::new();
    for (sc, tr) in scores.iter().zip(truth) {
        match tr {
            Truth::Normal => {
                s.push(*sc);
                t.push(false);
            }
            Truth::Anomaly(ty) if types.contains(ty) => {
                s.push(*sc);
                t.push(true);
            }
            _ => {}
        }
    }
    aucroc(&ScoredSet::new(s, t).unwrap()).unwrap()
}

fn quantiles(mut v: Vec<f64>) -> (f64, f64, f64) {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |p: f64| v[((v.len() - 1) as f64 * p) as usize];
    (q(0.1), q(0.5), q(0.9))
}

#[test]
#[ignore]
fn dump_dagger() {
    use anoonly::losses::Objective;
    let data = DataRecipe {
        d: 16,
        n_total: 3000,
        normal_clusters: 8,
        seed: 100,
        ..DataRecipe::default()
    };
    let cfg = TrainConfig {
        epochs: 150,
        loss: LossConfig {
            objective: Objective::AnoOnlyExplicitBn,
            ..LossConfig::default()
        },
        model: ModelRecipe {
            input_dim: 16,
            hidden_dims: vec![64, 32],
            rep_dim: 16,
            normalizer: NormalizerKind::None,
            seed: 7,
            ..ModelRecipe::default()
        },
        ..TrainConfig::default()
    };
    let (train_ds, test_ds) = generate(&data).unwrap();
    let (mut model, trace) = train(&train_ds, &cfg).unwrap();

    let train_scores = model.score(&train_ds.all_features()).unwrap();
    let labeled: Vec<f64> = train_ds
        .labeled_anomaly_indices()
        .iter()
        .map(|&i| train_scores[i])
        .collect();
    let cousins: Vec<f64> = (0..train_ds.len())
        .filter(|&i| {
            train_ds.truth()[i].is_anomaly()
                && train_ds.labels()[i] == anoonly::data::TrainLabel::Unlabeled
        })
        .map(|i| train_scores[i])
        .collect();
    let normals: Vec<f64> = (0..train_ds.len())
        .filter(|&i| !train_ds.truth()[i].is_anomaly())
        .map(|i| train_scores[i])
        .collect();
    let q = |v: Vec<f64>| quantiles(v);
    println!("train labeled {:?}", q(labeled));
    println!("train cousins {:?}", q(cousins));
    println!("train normals {:?}", q(normals));

    for e in [0, 10, 40, 80, 149] {
        let s: Vec<&anoonly::train::StepRecord> =
            trace.steps.iter().filter(|s| s.epoch == e).collect();
        let mean = |f: fn(&anoonly::losses::BatchLossReport) -> f64| {
            s.iter().map(|x| f(&x.report)).sum::<f64>() / s.len() as f64
        };
        println!(
            "epoch {e}: total {:.4} anomaly {:.4} bn_explicit {:.4}",
            mean(|r| r.total),
            mean(|r| r.l_anomaly),
            mean(|r| r.l_bn_explicit),
        );
    }
    let scores = model.score(&test_ds.all_features()).unwrap();
    let truth = test_ds.truth();
    println!(
        "sat={:.3} ring={:.3} box={:.3}",
        per_type_auc(&scores, truth, &[1, 2, 3]),
        per_type_auc(&scores, truth, &[4]),
        per_type_auc(&scores, truth, &[5])
    );
    let (n10, n50, n90) = quantiles(
        scores
            .iter()
            .zip(truth)
            .filter(|(_, t)| !t.is_anomaly())
            .map(|(s, _)| *s)
            .collect(),
    );
    let (a10, a50, a90) = quantiles(
        scores
            .iter()
            .zip(truth)
            .filter(|(_, t)| t.is_anomaly())
            .map(|(s, _)| *s)
            .collect(),
    );
    println!("normal {n10:.4}/{n50:.4}/{n90:.4}  anom {a10:.4}/{a50:.4}/{a90:.4}");
}

#[test]
#[ignore]
fn dump_diagnostics() {
    for objective in [Objective::AnoOnly, Objective::DeepSad] {
        println!("===== {objective:?} =====");
        for seed in [100u64, 101, 102] {
            let data = DataRecipe {
                d: 16,
                n_total: 3000,
                normal_clusters: 8,
                seed,
                ..DataRecipe::default()
            };
            let cfg = TrainConfig {
                epochs: 150,
                loss: LossConfig {
                    objective,
                    ..LossConfig::default()
                },
                model: ModelRecipe {
                    input_dim: 16,
                    hidden_dims: vec![64, 32],
                    rep_dim: 16,
                    normalizer: NormalizerKind::BatchNorm { affine: true },
                    seed: 7,
                    ..ModelRecipe::default()
                },
                batcher: Batcher::default(),
                ..TrainConfig::default()
            };
            let (train_ds, test_ds) = generate(&data).unwrap();
            let (mut model, trace) = train(&train_ds, &cfg).unwrap();
            let scores = model.score(&test_ds.all_features()).unwrap();
            let truth = test_ds.truth();

            let normal_scores: Vec<f64> = scores
                .iter()
                .zip(truth)
                .filter(|(_, t)| !t.is_anomaly())
                .map(|(s, _)| *s)
                .collect();
            let anom_scores: Vec<f64> = scores
                .iter()
                .zip(truth)
                .filter(|(_, t)| t.is_anomaly())
                .map(|(s, _)| *s)
                .collect();
            let (n10, n50, n90) = quantiles(normal_scores);
            let (a10, a50, a90) = quantiles(anom_scores);
            let ep = &trace.epoch_mean_loss;
            println!(
                "seed {seed}: sat={:.3} ring={:.3} box={:.3} | normal q10/50/90 {n10:.3}/{n50:.3}/{n90:.3} | anom {a10:.3}/{a50:.3}/{a90:.3} | loss e0 {:.3} e25 {:.3} e75 {:.3} e149 {:.3}",
                per_type_auc(&scores, truth, &[1, 2, 3]),
                per_type_auc(&scores, truth, &[4]),
                per_type_auc(&scores, truth, &[5]),
                ep[0], ep[25], ep[75], ep[149],
            );
        }
    }
}
