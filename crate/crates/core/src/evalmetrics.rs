//! Binary ROC/AUC and the prevalence-weighted multiclass ROC/AUC.
//!
//! The multiclass score evaluates every unordered pair of classes on the
//! samples carrying either label. Each pair's AUC averages the two
//! directions (class-i probability ranking i above j, and class-j
//! probability ranking j above i). Pairs are weighted by their combined
//! sample count and the weighted scores summed.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("AUC is undefined: {0}")]
    Undefined(String),
    #[error("score matrix has {rows} rows and {cols} columns but {labels} labels over {classes} classes")]
    Shape {
        rows: usize,
        cols: usize,
        labels: usize,
        classes: usize,
    },
    #[error("non-finite score at sample {0}")]
    NonFinite(usize),
}

/// Area under the ROC curve via midranks (the Mann-Whitney statistic).
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Result<f64, MetricError> {
    if scores.len() != positive.len() {
        return Err(MetricError::Shape {
            rows: scores.len(),
            cols: 1,
            labels: positive.len(),
            classes: 2,
        });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(MetricError::NonFinite(i));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricError::Undefined(format!(
            "need both classes, got {n_pos} positive and {n_neg} negative"
        )));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Twice the positive rank sum keeps midranks integral.
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j share the midrank (i+1+j)/2.
        let mid2 = (i + 1 + j) as u128;
        let tied_pos = order[i..j].iter().filter(|&&k| positive[k]).count() as u128;
        rank_sum2 += mid2 * tied_pos;
        i = j;
    }
    let n_pos_u = n_pos as u128;
    let u2 = rank_sum2 - n_pos_u * (n_pos_u + 1);
    Ok(u2 as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AucScheme {
    /// Every class pair, weighted by combined pair prevalence.
    #[default]
    #[serde(alias = "ovo")]
    OneVsOne,
    /// Each class against the rest, weighted by class prevalence.
    #[serde(alias = "ovr")]
    OneVsRest,
}

/// One component of a multiclass AUC: a class pair (one-vs-one) or a single
/// class against the rest (`second` is `None`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartAuc {
    pub first: usize,
    pub second: Option<usize>,
    pub auc: f64,
    pub weight: f64,
}

impl fmt::Display for PartAuc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.second {
            Some(j) => write!(f, "{}v{}={:.4}(w={:.3})", self.first, j, self.auc, self.weight),
            None => write!(f, "{}vR={:.4}(w={:.3})", self.first, self.auc, self.weight),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucReport {
    pub scheme: AucScheme,
    /// For one-vs-one with three classes: (0,1), (0,2), (1,2).
    pub parts: Vec<PartAuc>,
    pub weighted_total: f64,
}

impl AucReport {
    pub fn part(&self, first: usize, second: usize) -> Option<&PartAuc> {
        self.parts.iter().find(|p| p.first == first && p.second == Some(second))
    }
}

fn check_shape(proba: &DMatrix<f64>, labels: &[usize], n_classes: usize) -> Result<(), MetricError> {
    if proba.nrows() != labels.len()
        || proba.ncols() != n_classes
        || n_classes < 2
        || labels.iter().any(|&l| l >= n_classes)
    {
        return Err(MetricError::Shape {
            rows: proba.nrows(),
            cols: proba.ncols(),
            labels: labels.len(),
            classes: n_classes,
        });
    }
    Ok(())
}

/// Prevalence-weighted one-vs-one multiclass AUC.
pub fn weighted_multiclass_auc(
    proba: &DMatrix<f64>,
    labels: &[usize],
    n_classes: usize,
) -> Result<AucReport, MetricError> {
    check_shape(proba, labels, n_classes)?;
    let mut counts = vec![0usize; n_classes];
    labels.iter().for_each(|&l| counts[l] += 1);

    let mut parts = Vec::new();
    for i in 0..n_classes {
        for j in i + 1..n_classes {
            if counts[i] == 0 || counts[j] == 0 {
                return Err(MetricError::Undefined(format!(
                    "class pair ({i},{j}) has an empty side"
                )));
            }
            let rows: Vec<usize> = (0..labels.len())
                .filter(|&r| labels[r] == i || labels[r] == j)
                .collect();
            let is_i: Vec<bool> = rows.iter().map(|&r| labels[r] == i).collect();
            let is_j: Vec<bool> = is_i.iter().map(|b| !b).collect();
            let score_i: Vec<f64> = rows.iter().map(|&r| proba[(r, i)]).collect();
            let score_j: Vec<f64> = rows.iter().map(|&r| proba[(r, j)]).collect();
            let auc = 0.5 * (binary_auc(&score_i, &is_i)? + binary_auc(&score_j, &is_j)?);
            parts.push(PartAuc {
                first: i,
                second: Some(j),
                auc,
                weight: (counts[i] + counts[j]) as f64,
            });
        }
    }
    Ok(finish(AucScheme::OneVsOne, parts))
}

/// Prevalence-weighted one-vs-rest multiclass AUC.
pub fn one_vs_rest_auc(proba: &DMatrix<f64>, labels: &[usize], n_classes: usize) -> Result<AucReport, MetricError> {
    check_shape(proba, labels, n_classes)?;
    let mut parts = Vec::new();
    for c in 0..n_classes {
        let pos: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        let scores: Vec<f64> = proba.column(c).iter().copied().collect();
        let n_c = pos.iter().filter(|&&p| p).count();
        parts.push(PartAuc {
            first: c,
            second: None,
            auc: binary_auc(&scores, &pos)?,
            weight: n_c as f64,
        });
    }
    Ok(finish(AucScheme::OneVsRest, parts))
}

fn finish(scheme: AucScheme, mut parts: Vec<PartAuc>) -> AucReport {
    let total: f64 = parts.iter().map(|p| p.weight).sum();
    parts.iter_mut().for_each(|p| p.weight /= total);
    let weighted_total = parts.iter().map(|p| p.weight * p.auc).sum();
    AucReport {
        scheme,
        parts,
        weighted_total,
    }
}

pub fn multiclass_auc(
    scheme: AucScheme,
    proba: &DMatrix<f64>,
    labels: &[usize],
    n_classes: usize,
) -> Result<AucReport, MetricError> {
    match scheme {
        AucScheme::OneVsOne => weighted_multiclass_auc(proba, labels, n_classes),
        AucScheme::OneVsRest => one_vs_rest_auc(proba, labels, n_classes),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn auc_of(pos: &[f64], neg: &[f64]) -> f64 {
        let scores: Vec<f64> = pos.iter().chain(neg).copied().collect();
        let truth: Vec<bool> = (0..scores.len()).map(|i| i < pos.len()).collect();
        binary_auc(&scores, &truth).unwrap()
    }

    #[test]
    fn small_examples() {
        assert_eq!(auc_of(&[0.9, 0.8], &[0.1, 0.2]), 1.0);
        assert_eq!(auc_of(&[0.8, 0.3], &[0.5, 0.1]), 0.75);
        assert_eq!(auc_of(&[0.5], &[0.5]), 0.5);
        assert_eq!(auc_of(&[0.1], &[0.9]), 0.0);
    }

    #[test]
    fn single_class_is_undefined() {
        assert!(matches!(
            binary_auc(&[0.1, 0.2], &[true, true]),
            Err(MetricError::Undefined(_))
        ));
        assert!(matches!(
            binary_auc(&[f64::NAN, 0.2], &[true, false]),
            Err(MetricError::NonFinite(0))
        ));
    }

    #[test]
    fn perfect_three_class() {
        let labels = vec![0, 0, 1, 1, 2, 2, 2];
        let proba = DMatrix::from_fn(7, 3, |r, c| if labels[r] == c { 0.98 } else { 0.01 });
        let rep = weighted_multiclass_auc(&proba, &labels, 3).unwrap();
        assert!(rep.parts.iter().all(|p| p.auc == 1.0));
        assert_eq!(rep.weighted_total, 1.0);
    }

    #[test]
    fn pair_weights_follow_pair_prevalence() {
        let labels = vec![0, 0, 1, 2];
        let proba = DMatrix::from_fn(4, 3, |r, c| ((r * 3 + c) % 5) as f64 / 5.0);
        let rep = weighted_multiclass_auc(&proba, &labels, 3).unwrap();
        let w: Vec<f64> = rep.parts.iter().map(|p| p.weight).collect();
        assert_eq!(w, vec![3.0 / 8.0, 3.0 / 8.0, 2.0 / 8.0]);
        let pairs: Vec<_> = rep.parts.iter().map(|p| (p.first, p.second)).collect();
        assert_eq!(pairs, vec![(0, Some(1)), (0, Some(2)), (1, Some(2))]);
    }

    #[test]
    fn missing_class_is_undefined() {
        let labels = vec![0, 0, 1, 1];
        let proba = DMatrix::from_element(4, 3, 1.0 / 3.0);
        assert!(matches!(
            weighted_multiclass_auc(&proba, &labels, 3),
            Err(MetricError::Undefined(_))
        ));
    }

    #[test]
    fn two_class_reduces_to_binary_auc() {
        let labels = vec![0, 1, 0, 1, 1];
        let p1 = [0.2, 0.7, 0.4, 0.9, 0.3];
        let proba = DMatrix::from_fn(5, 2, |r, c| if c == 1 { p1[r] } else { 1.0 - p1[r] });
        let rep = weighted_multiclass_auc(&proba, &labels, 2).unwrap();
        let truth: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
        assert_eq!(rep.weighted_total, binary_auc(&p1, &truth).unwrap());
    }

    #[test]
    fn shuffled_labels_are_near_chance() {
        let mut inside = 0;
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut labels: Vec<usize> = (0..600).map(|i| i % 3).collect();
            labels.shuffle(&mut rng);
            let proba = DMatrix::from_fn(600, 3, |_, _| rng.gen::<f64>());
            let rep = weighted_multiclass_auc(&proba, &labels, 3).unwrap();
            if (0.45..=0.55).contains(&rep.weighted_total) {
                inside += 1;
            }
        }
        assert!(inside >= 95, "{inside}/100 inside [0.45, 0.55]");
    }

    #[test]
    fn one_vs_rest_variant() {
        let labels = vec![0, 1, 2, 2];
        let proba = DMatrix::from_fn(4, 3, |r, c| if labels[r] == c { 0.9 } else { 0.05 });
        let rep = one_vs_rest_auc(&proba, &labels, 3).unwrap();
        assert_eq!(rep.weighted_total, 1.0);
        assert_eq!(rep.parts[2].weight, 0.5);
    }

    fn pair_count(scores: &[f64], positive: &[bool]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, &pi) in positive.iter().enumerate() {
            for (j, &pj) in positive.iter().enumerate() {
                if pi && !pj {
                    den += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    fn arb_instance() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        (2usize..60)
            .prop_flat_map(|n| {
                (
                    proptest::collection::vec((0u8..12).prop_map(|v| v as f64 / 4.0), n),
                    proptest::collection::vec(any::<bool>(), n),
                )
            })
            .prop_filter("both classes", |(_, t)| t.iter().any(|&b| b) && t.iter().any(|&b| !b))
    }

    proptest! {
        #[test]
        fn matches_pair_counting((scores, truth) in arb_instance()) {
            let fast = binary_auc(&scores, &truth).unwrap();
            prop_assert!((fast - pair_count(&scores, &truth)).abs() <= 1e-12);
        }

        #[test]
        fn flipping_labels_complements((scores, truth) in arb_instance()) {
            let flipped: Vec<bool> = truth.iter().map(|b| !b).collect();
            let a = binary_auc(&scores, &truth).unwrap();
            let b = binary_auc(&scores, &flipped).unwrap();
            prop_assert_eq!(a + b, 1.0);
        }

        #[test]
        fn monotone_transform_invariance((scores, truth) in arb_instance()) {
            let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
            prop_assert_eq!(binary_auc(&scores, &truth).unwrap(), binary_auc(&warped, &truth).unwrap());
        }

        #[test]
        fn sample_order_and_label_renaming(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 30;
            let mut labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
            labels.shuffle(&mut rng);
            let proba = DMatrix::from_fn(n, 3, |_, _| (rng.gen_range(0..8) as f64) / 8.0);
            let base = weighted_multiclass_auc(&proba, &labels, 3).unwrap();

            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let shuffled = proba.select_rows(&perm);
            let lab2: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
            let again = weighted_multiclass_auc(&shuffled, &lab2, 3).unwrap();
            prop_assert_eq!(&base, &again);

            // rename classes 0->2, 1->0, 2->1 and move the columns along
            let rename = [2usize, 0, 1];
            let mut renamed = DMatrix::zeros(n, 3);
            for c in 0..3 {
                renamed.set_column(rename[c], &proba.column(c));
            }
            let lab3: Vec<usize> = labels.iter().map(|&l| rename[l]).collect();
            let rep = weighted_multiclass_auc(&renamed, &lab3, 3).unwrap();
            prop_assert!((rep.weighted_total - base.weighted_total).abs() < 1e-12);
            for p in &base.parts {
                let (a, b) = (rename[p.first], rename[p.second.unwrap()]);
                let q = rep.part(a.min(b), a.max(b)).unwrap();
                prop_assert_eq!(q.auc, p.auc);
            }
        }
    }
}
