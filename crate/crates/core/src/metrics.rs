//! Open-set evaluation: macro-averaged known accuracy, unknown recall, their
//! harmonic mean (HOS), AUROC of a score, and labeled threshold sweeps.
//!
//! JSON keys of [`EvalResult`]: `acc_known`, `acc_unknown`, `hos`,
//! `per_class` (`class`, `accuracy`, `support`), `unknown_support`,
//! `confusion` (row = truth, column = prediction, index `C` = unknown) and
//! `warnings`.

use serde::{Deserialize, Serialize};

use crate::data_io::LabelVector;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub class: usize,
    pub accuracy: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub acc_known: f64,
    pub acc_unknown: f64,
    pub hos: f64,
    pub per_class: Vec<ClassAccuracy>,
    pub unknown_support: usize,
    pub confusion: Vec<Vec<usize>>,
    pub warnings: Vec<String>,
}

/// Harmonic mean of the two accuracies; 0 when both are 0.
pub fn hos(acc_known: f64, acc_unknown: f64) -> f64 {
    let denom = acc_known + acc_unknown;
    if denom > 0.0 {
        2.0 * acc_known * acc_unknown / denom
    } else {
        0.0
    }
}

/// Tallies shared by [`evaluate`] and [`threshold_sweep`] so both produce
/// bit-identical HOS for the same partition.
struct Tally {
    correct: Vec<usize>,
    support: Vec<usize>,
    unk_correct: usize,
    unk_support: usize,
}

impl Tally {
    fn acc_known(&self) -> f64 {
        let mut sum = 0.0;
        let mut classes = 0;
        for (&c, &s) in self.correct.iter().zip(&self.support) {
            if s > 0 {
                sum += c as f64 / s as f64;
                classes += 1;
            }
        }
        if classes == 0 {
            0.0
        } else {
            sum / classes as f64
        }
    }

    fn acc_unknown(&self) -> f64 {
        if self.unk_support == 0 {
            0.0
        } else {
            self.unk_correct as f64 / self.unk_support as f64
        }
    }

    fn hos(&self) -> f64 {
        hos(self.acc_known(), self.acc_unknown())
    }
}

fn check_pair(preds: &[usize], truth: &LabelVector) -> Result<usize> {
    if preds.len() != truth.len() {
        return Err(Error::DimMismatch(format!(
            "{} predictions for {} labels",
            preds.len(),
            truth.len()
        )));
    }
    let c = truth.num_known();
    if let Some(&p) = preds.iter().find(|&&p| p > c) {
        return Err(Error::InvalidLabels(format!("prediction {p} exceeds C = {c}")));
    }
    Ok(c)
}

pub fn evaluate(preds: &LabelVector, truth: &LabelVector) -> Result<EvalResult> {
    if preds.num_known() != truth.num_known() {
        return Err(Error::InvalidLabels(format!(
            "predictions use C = {}, truth uses C = {}",
            preds.num_known(),
            truth.num_known()
        )));
    }
    let c = check_pair(preds.labels(), truth)?;
    let mut confusion = vec![vec![0usize; c + 1]; c + 1];
    for (&p, &t) in preds.labels().iter().zip(truth.labels()) {
        confusion[t][p] += 1;
    }
    let tally = Tally {
        correct: (0..c).map(|k| confusion[k][k]).collect(),
        support: (0..c).map(|k| confusion[k].iter().sum()).collect(),
        unk_correct: confusion[c][c],
        unk_support: confusion[c].iter().sum(),
    };
    let mut warnings = Vec::new();
    let per_class: Vec<ClassAccuracy> = (0..c)
        .filter_map(|k| {
            let support = tally.support[k];
            if support == 0 {
                warnings.push(format!("class {k} has no support; excluded from acc_known"));
                return None;
            }
            Some(ClassAccuracy {
                class: k,
                accuracy: tally.correct[k] as f64 / support as f64,
                support,
            })
        })
        .collect();
    if per_class.is_empty() {
        warnings.push("no known-class support: hos reported as 0".into());
    }
    if tally.unk_support == 0 {
        warnings.push("no unknown-class support: hos reported as 0".into());
    }
    Ok(EvalResult {
        acc_known: tally.acc_known(),
        acc_unknown: tally.acc_unknown(),
        hos: tally.hos(),
        per_class,
        unknown_support: tally.unk_support,
        confusion,
        warnings,
    })
}

/// Assigns 1-based ranks, ties sharing their average rank.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Probability that a random unknown sample outscores a random known one
/// (ties count half).
pub fn auroc(scores: &[f64], truth: &LabelVector) -> Result<f64> {
    if scores.len() != truth.len() {
        return Err(Error::DimMismatch(format!(
            "{} scores for {} labels",
            scores.len(),
            truth.len()
        )));
    }
    let ranks = average_ranks(scores);
    let (mut rank_sum, mut n_unk) = (0.0, 0usize);
    for (i, r) in ranks.iter().enumerate() {
        if truth.is_unknown(i) {
            rank_sum += r;
            n_unk += 1;
        }
    }
    let n_known = scores.len() - n_unk;
    if n_unk == 0 || n_known == 0 {
        return Err(Error::SingleClassOnly);
    }
    let u = rank_sum - (n_unk * (n_unk + 1)) as f64 / 2.0;
    Ok(u / (n_unk as f64 * n_known as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub hos: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSweep {
    pub best_threshold: f64,
    pub best_hos: f64,
    /// Ascending thresholds: `-inf`, midpoints between consecutive unique
    /// scores, `+inf`.
    pub curve: Vec<SweepPoint>,
}

impl ThresholdSweep {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,hos\n");
        for p in &self.curve {
            out.push_str(&format!("{},{}\n", p.threshold, p.hos));
        }
        out
    }
}

/// HOS at every distinct partition a threshold can induce.
///
/// `known_preds` are the class predictions used for samples that fall at or
/// below the threshold. Ties in HOS resolve to the smallest threshold.
pub fn threshold_sweep(scores: &[f64], known_preds: &[usize], truth: &LabelVector) -> Result<ThresholdSweep> {
    let c = check_pair(known_preds, truth)?;
    if scores.len() != truth.len() {
        return Err(Error::DimMismatch(format!(
            "{} scores for {} labels",
            scores.len(),
            truth.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Malformed("non-finite score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut tally = Tally {
        correct: vec![0; c],
        support: vec![0; c],
        unk_correct: 0,
        unk_support: 0,
    };
    for &t in truth.labels() {
        if t == c {
            tally.unk_support += 1;
        } else {
            tally.support[t] += 1;
        }
    }
    // everything starts predicted unknown
    tally.unk_correct = tally.unk_support;

    let mut curve = vec![SweepPoint {
        threshold: f64::NEG_INFINITY,
        hos: tally.hos(),
    }];
    let mut i = 0;
    while i < order.len() {
        let value = scores[order[i]];
        while i < order.len() && scores[order[i]] == value {
            let k = order[i];
            let t = truth.labels()[k];
            if t == c {
                tally.unk_correct -= 1;
            } else if known_preds[k] == t {
                tally.correct[t] += 1;
            }
            i += 1;
        }
        let threshold = if i < order.len() {
            0.5 * (value + scores[order[i]])
        } else {
            f64::INFINITY
        };
        curve.push(SweepPoint {
            threshold,
            hos: tally.hos(),
        });
    }
    let best = curve
        .iter()
        .fold(&curve[0], |best, p| if p.hos > best.hos { p } else { best });
    Ok(ThresholdSweep {
        best_threshold: best.threshold,
        best_hos: best.hos,
        curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boxcox::boxcox;
    use proptest::prelude::*;

    fn lv(v: &[usize], c: usize) -> LabelVector {
        LabelVector::new(v.to_vec(), c).unwrap()
    }

    #[test]
    fn hos_spot_values() {
        assert!((hos(0.8, 0.6) - 0.96 / 1.4).abs() < 1e-15);
        assert!((hos(0.8, 0.6) - 0.6857).abs() < 1e-4);
        assert_eq!(hos(0.7, 0.7), 0.7);
        assert_eq!(hos(0.9, 0.0), 0.0);
        assert_eq!(hos(0.0, 0.0), 0.0);
    }

    #[test]
    fn evaluate_macro_average() {
        // class 0: 2/2, class 1: 1/2 -> acc_known 0.75; unknown 1/2
        let truth = lv(&[0, 0, 1, 1, 2, 2], 2);
        let preds = lv(&[0, 0, 1, 0, 2, 1], 2);
        let r = evaluate(&preds, &truth).unwrap();
        assert_eq!(r.acc_known, 0.75);
        assert_eq!(r.acc_unknown, 0.5);
        assert!((r.hos - hos(0.75, 0.5)).abs() < 1e-15);
        assert_eq!(r.confusion[2], vec![0, 1, 1]);
        assert!(r.warnings.is_empty());
    }

    #[test]
    fn missing_support_is_flagged() {
        let r = evaluate(&lv(&[0, 0], 2), &lv(&[0, 0], 2)).unwrap();
        assert_eq!(r.hos, 0.0);
        assert_eq!(r.per_class.len(), 1);
        assert_eq!(r.warnings.len(), 2);
        assert!(evaluate(&lv(&[0], 2), &lv(&[0, 1], 2)).is_err());
    }

    #[test]
    fn auroc_spot_values() {
        let truth = lv(&[0, 0, 1, 1], 1);
        assert_eq!(auroc(&[0.1, 0.4, 0.35, 0.8], &truth).unwrap(), 0.75);
        assert_eq!(auroc(&[0.1, 0.2, 0.3, 0.4], &truth).unwrap(), 1.0);
        assert_eq!(auroc(&[0.5; 4], &truth).unwrap(), 0.5);
        assert!(matches!(auroc(&[0.1, 0.2], &lv(&[0, 0], 1)), Err(Error::SingleClassOnly)));
    }

    #[test]
    fn sweep_on_separable_scores() {
        let truth = lv(&[0, 1, 0, 2, 2], 2);
        let preds = [0, 1, 0, 0, 1];
        let s = threshold_sweep(&[0.1, 0.2, 0.2, 0.9, 0.8], &preds, &truth).unwrap();
        assert_eq!(s.curve.len(), 5); // 4 unique scores + 1
        assert_eq!(s.best_hos, 1.0);
        assert!((s.best_threshold - 0.5).abs() < 1e-15);
        assert_eq!(s.curve[0].threshold, f64::NEG_INFINITY);
        assert_eq!(s.curve.last().unwrap().threshold, f64::INFINITY);
    }

    proptest! {
        #[test]
        fn hos_sandwich(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let h = hos(a, b);
            if a > 0.0 && b > 0.0 {
                prop_assert!(h >= a.min(b) - 1e-15 && h <= a.max(b) + 1e-15);
            } else {
                prop_assert_eq!(h, 0.0);
            }
        }

        #[test]
        fn evaluate_is_permutation_invariant(
            pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..60),
            rot in 0usize..60,
        ) {
            let (p, t): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
            let r1 = evaluate(&lv(&p, 3), &lv(&t, 3)).unwrap();
            let k = rot % p.len();
            let (mut p2, mut t2) = (p.clone(), t.clone());
            p2.rotate_left(k);
            t2.rotate_left(k);
            let r2 = evaluate(&lv(&p2, 3), &lv(&t2, 3)).unwrap();
            prop_assert_eq!(r1.hos, r2.hos);
        }

        #[test]
        fn sweep_dominates_any_threshold(
            data in proptest::collection::vec((0.0f64..2.0, 0usize..4, 0usize..3), 2..80),
            probe in 0.0f64..2.0,
        ) {
            let scores: Vec<f64> = data.iter().map(|d| d.0).collect();
            let truth = lv(&data.iter().map(|d| d.1).collect::<Vec<_>>(), 3);
            let preds: Vec<usize> = data.iter().map(|d| d.2).collect();
            let s = threshold_sweep(&scores, &preds, &truth).unwrap();
            let mut unique = scores.clone();
            unique.sort_by(f64::total_cmp);
            unique.dedup();
            prop_assert_eq!(s.curve.len(), unique.len() + 1);
            let mean = scores.iter().sum::<f64>() / scores.len() as f64;
            let half_max = scores.iter().copied().fold(f64::MIN, f64::max) / 2.0;
            for t in [mean, half_max, probe] {
                let labels: Vec<usize> = scores
                    .iter()
                    .zip(&preds)
                    .map(|(&sc, &p)| if sc > t { 3 } else { p })
                    .collect();
                let r = evaluate(&lv(&labels, 3), &truth).unwrap();
                prop_assert!(s.best_hos >= r.hos);
            }
        }

        #[test]
        fn auroc_invariant_under_boxcox(
            scores in proptest::collection::vec(0.01f64..3.0, 4..50),
            lambda in -2.0f64..2.0,
        ) {
            let n = scores.len();
            let truth = lv(&(0..n).map(|i| i % 2).collect::<Vec<_>>(), 1);
            let t: Vec<f64> = scores.iter().map(|&s| boxcox(s, lambda).unwrap()).collect();
            prop_assert_eq!(auroc(&scores, &truth).unwrap(), auroc(&t, &truth).unwrap());
        }
    }
}
