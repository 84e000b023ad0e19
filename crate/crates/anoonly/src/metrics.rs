//! Ranking metrics over anomaly scores: AUCROC and average precision with
//! either class as the positive one.
//!
//! Everything is computed from the score ordering and tie groups alone, so
//! any strictly increasing transform of the scores leaves the results
//! bit-identical. Tied scores are processed as one threshold block, which
//! makes the values permutation-invariant among ties.

use crate::error::{Error, Result};

/// Scores (higher = more anomalous) paired with ground truth.
#[derive(Debug, Clone)]
pub struct ScoredSet {
    scores: Vec<f64>,
    is_anomaly: Vec<bool>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, is_anomaly: Vec<bool>) -> Result<Self> {
        if scores.len() != is_anomaly.len() {
            return Err(Error::Shape {
                op: "ScoredSet::new",
                expected: format!("{} truth flags", scores.len()),
                got: format!("{}", is_anomaly.len()),
            });
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("anomaly scores".into()));
        }
        Ok(ScoredSet { scores, is_anomaly })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn is_anomaly(&self) -> &[bool] {
        &self.is_anomaly
    }

    fn counts(&self) -> (usize, usize) {
        let pos = self.is_anomaly.iter().filter(|a| **a).count();
        (pos, self.len() - pos)
    }

    /// Indices sorted by descending score, grouped by tied score.
    fn descending_tie_groups(&self) -> Vec<(usize, usize)> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| {
            self.scores[b]
                .partial_cmp(&self.scores[a])
                .expect("scores are finite")
        });
        // (anomalies, normals) per tie block, highest scores first
        let mut groups = Vec::new();
        let mut i = 0;
        while i < order.len() {
            let mut j = i;
            let s = self.scores[order[i]];
            let mut pos = 0;
            let mut neg = 0;
            while j < order.len() && self.scores[order[j]] == s {
                if self.is_anomaly[order[j]] {
                    pos += 1;
                } else {
                    neg += 1;
                }
                j += 1;
            }
            groups.push((pos, neg));
            i = j;
        }
        groups
    }
}

/// Probability that a random anomaly outranks a random normal, ties counted
/// one half.
pub fn aucroc(set: &ScoredSet) -> Result<f64> {
    let (pos, neg) = set.counts();
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(
            "aucroc needs both classes present".into(),
        ));
    }
    // Walk ascending: count normal rows strictly below each anomaly block.
    let mut groups = set.descending_tie_groups();
    groups.reverse();
    let mut normals_below = 0usize;
    let mut wins = 0.0f64;
    for (a, n) in groups {
        wins += a as f64 * normals_below as f64 + 0.5 * (a * n) as f64;
        normals_below += n;
    }
    Ok(wins / (pos as f64 * neg as f64))
}

/// Average precision with anomalies as the positive class.
pub fn aucpr_anomaly(set: &ScoredSet) -> Result<f64> {
    let (pos, _) = set.counts();
    if pos == 0 {
        return Err(Error::UndefinedMetric(
            "aucpr_anomaly needs at least one anomaly".into(),
        ));
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for (a, n) in set.descending_tie_groups() {
        tp += a;
        fp += n;
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

/// Average precision with normals as the positive class, ranking by negated
/// score.
pub fn aucpr_normal(set: &ScoredSet) -> Result<f64> {
    let (_, neg) = set.counts();
    if neg == 0 {
        return Err(Error::UndefinedMetric(
            "aucpr_normal needs at least one normal".into(),
        ));
    }
    let flipped = ScoredSet::new(
        set.scores.iter().map(|s| -s).collect(),
        set.is_anomaly.iter().map(|a| !a).collect(),
    )?;
    aucpr_anomaly(&flipped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(scores: &[f64], truth: &[bool]) -> ScoredSet {
        ScoredSet::new(scores.to_vec(), truth.to_vec()).unwrap()
    }

    // O(n^2) pairwise oracle.
    fn aucroc_oracle(s: &ScoredSet) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for i in 0..s.len() {
            if !s.is_anomaly()[i] {
                continue;
            }
            for j in 0..s.len() {
                if s.is_anomaly()[j] {
                    continue;
                }
                pairs += 1.0;
                if s.scores()[i] > s.scores()[j] {
                    wins += 1.0;
                } else if s.scores()[i] == s.scores()[j] {
                    wins += 0.5;
                }
            }
        }
        wins / pairs
    }

    // Threshold-walk oracle: recompute tp/fp from scratch at every distinct
    // score, positives = rows with score >= threshold.
    fn ap_oracle(scores: &[f64], positive: &[bool]) -> f64 {
        let mut thresholds: Vec<f64> = scores.to_vec();
        thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
        thresholds.dedup();
        let total_pos = positive.iter().filter(|p| **p).count() as f64;
        let mut prev_recall = 0.0;
        let mut ap = 0.0;
        for t in thresholds {
            let mut tp = 0.0;
            let mut fp = 0.0;
            for (s, p) in scores.iter().zip(positive) {
                if *s >= t {
                    if *p {
                        tp += 1.0;
                    } else {
                        fp += 1.0;
                    }
                }
            }
            let recall = tp / total_pos;
            let precision = tp / (tp + fp);
            ap += (recall - prev_recall) * precision;
            prev_recall = recall;
        }
        ap
    }

    #[test]
    fn perfect_ranking() {
        let s = set(&[0.9, 0.1], &[true, false]);
        assert_eq!(aucroc(&s).unwrap(), 1.0);
        assert_eq!(aucpr_anomaly(&s).unwrap(), 1.0);
        assert_eq!(aucpr_normal(&s).unwrap(), 1.0);
    }

    #[test]
    fn three_of_four_pairs() {
        let s = set(&[0.8, 0.4, 0.6, 0.2], &[true, true, false, false]);
        assert_eq!(aucroc(&s).unwrap(), 0.75);
        assert_eq!(aucroc_oracle(&s), 0.75);
    }

    #[test]
    fn all_ties_is_chance() {
        let s = set(&[0.5, 0.5, 0.5], &[true, false, false]);
        assert_eq!(aucroc(&s).unwrap(), 0.5);
    }

    #[test]
    fn interleaved_average_precision() {
        // descending truth sequence [A, N, A, N]
        let s = set(&[4.0, 3.0, 2.0, 1.0], &[true, false, true, false]);
        let want = 0.5 + 0.5 * (2.0 / 3.0);
        assert!((aucpr_anomaly(&s).unwrap() - want).abs() < 1e-15);
        // the normal-side value for the same sequence, fixed by the oracle
        assert!((aucpr_normal(&s).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        let neg: Vec<f64> = s.scores().iter().map(|v| -v).collect();
        let flipped: Vec<bool> = s.is_anomaly().iter().map(|a| !a).collect();
        assert_eq!(
            aucpr_normal(&s).unwrap(),
            ap_oracle(&neg, &flipped)
        );
    }

    #[test]
    fn normal_side_is_the_flipped_problem() {
        let s = set(
            &[3.0, 1.0, 2.5, 0.5, 2.5],
            &[true, false, true, false, false],
        );
        let flipped = ScoredSet::new(
            s.scores().iter().map(|v| -v).collect(),
            s.is_anomaly().iter().map(|a| !a).collect(),
        )
        .unwrap();
        assert_eq!(
            aucpr_normal(&s).unwrap().to_bits(),
            aucpr_anomaly(&flipped).unwrap().to_bits()
        );
    }

    #[test]
    fn single_class_is_undefined() {
        let s = set(&[1.0, 2.0], &[true, true]);
        assert!(aucroc(&s).is_err());
        assert!(aucpr_normal(&s).is_err());
        let s = set(&[1.0, 2.0], &[false, false]);
        assert!(aucpr_anomaly(&s).is_err());
    }

    #[test]
    fn random_scores_ap_approaches_class_prior() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let prior = 0.2;
        let mut sum = 0.0;
        let reps = 300;
        for _ in 0..reps {
            let n = 200;
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let truth: Vec<bool> = (0..n).map(|_| rng.random_range(0.0..1.0) < prior).collect();
            if truth.iter().any(|t| *t) {
                sum += aucpr_anomaly(&set(&scores, &truth)).unwrap();
            } else {
                sum += prior; // vanishing-probability fallback keeps the mean honest
            }
        }
        let mean = sum / reps as f64;
        assert!(
            (mean - prior).abs() < 0.02,
            "mean AP {mean} too far from prior {prior}"
        );
    }

    proptest! {
        #[test]
        fn oracle_equivalence_small_sets(
            scores in prop::collection::vec(-5.0f64..5.0, 2..12),
            seed in 0u64..10_000,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            // quantize to force ties sometimes
            let scores: Vec<f64> = scores.iter().map(|s| (s * 2.0).round() / 2.0).collect();
            let truth: Vec<bool> = scores.iter().map(|_| rng.random_range(0.0..1.0) < 0.5).collect();
            let pos = truth.iter().filter(|t| **t).count();
            prop_assume!(pos > 0 && pos < truth.len());
            let s = set(&scores, &truth);
            prop_assert!((aucroc(&s).unwrap() - aucroc_oracle(&s)).abs() < 1e-12);
            prop_assert!((aucpr_anomaly(&s).unwrap() - ap_oracle(&scores, &truth)).abs() < 1e-12);
        }

        #[test]
        fn monotone_transform_invariance_is_exact(
            scores in prop::collection::vec(-8.0f64..8.0, 2..20),
            seed in 0u64..10_000,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let truth: Vec<bool> = scores.iter().map(|_| rng.random_range(0.0..1.0) < 0.4).collect();
            let pos = truth.iter().filter(|t| **t).count();
            prop_assume!(pos > 0 && pos < truth.len());
            let s = set(&scores, &truth);
            let transformed: Vec<f64> = scores.iter().map(|v| v.exp() * 3.0 + 1.0).collect();
            let t = set(&transformed, &truth);
            prop_assert_eq!(aucroc(&s).unwrap().to_bits(), aucroc(&t).unwrap().to_bits());
            prop_assert_eq!(
                aucpr_anomaly(&s).unwrap().to_bits(),
                aucpr_anomaly(&t).unwrap().to_bits()
            );
            prop_assert_eq!(
                aucpr_normal(&s).unwrap().to_bits(),
                aucpr_normal(&t).unwrap().to_bits()
            );
        }

        #[test]
        fn complement_identity_without_ties(
            seed in 0u64..10_000,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(4..30);
            // distinct scores by construction
            let scores: Vec<f64> = (0..n).map(|i| i as f64 + rng.random_range(0.0..0.5)).collect();
            let truth: Vec<bool> = (0..n).map(|_| rng.random_range(0.0..1.0) < 0.5).collect();
            let pos = truth.iter().filter(|t| **t).count();
            prop_assume!(pos > 0 && pos < truth.len());
            let s = set(&scores, &truth);
            let neg: Vec<f64> = scores.iter().map(|v| -v).collect();
            let sn = set(&neg, &truth);
            prop_assert!((aucroc(&s).unwrap() + aucroc(&sn).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn aucroc_invariant_under_whole_set_duplication(
            scores in prop::collection::vec(-5.0f64..5.0, 2..15),
            seed in 0u64..10_000,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let truth: Vec<bool> = scores.iter().map(|_| rng.random_range(0.0..1.0) < 0.5).collect();
            let pos = truth.iter().filter(|t| **t).count();
            prop_assume!(pos > 0 && pos < truth.len());
            let s = set(&scores, &truth);
            let mut dscores = scores.clone();
            dscores.extend_from_slice(&scores);
            let mut dtruth = truth.clone();
            dtruth.extend_from_slice(&truth);
            let d = set(&dscores, &dtruth);
            prop_assert!((aucroc(&s).unwrap() - aucroc(&d).unwrap()).abs() < 1e-12);
        }
    }
}
