//! Zero-shot classification, per-sample unknownness scores, and thresholded
//! open-set prediction.
//!
//! Every scorer is oriented so that a higher score means "more likely
//! unknown"; a sample is predicted unknown iff its score is strictly greater
//! than the threshold.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::data_io::{l2_norm, EmbeddingMatrix, LabelVector};
use crate::{Error, Result};

/// Default softmax temperature for zero-shot probabilities.
pub const DEFAULT_TEMPERATURE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scorer {
    Entropy,
    Mcm,
    Var,
    Energy,
}

impl Scorer {
    pub const ALL: [Scorer; 4] = [Scorer::Entropy, Scorer::Mcm, Scorer::Var, Scorer::Energy];

    pub fn as_str(self) -> &'static str {
        match self {
            Scorer::Entropy => "entropy",
            Scorer::Mcm => "mcm",
            Scorer::Var => "var",
            Scorer::Energy => "energy",
        }
    }
}

impl fmt::Display for Scorer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scorer {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Scorer::ALL
            .into_iter()
            .find(|sc| sc.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown scorer {s:?} (expected entropy|mcm|var|energy)"))
    }
}

/// Row-stochastic class probabilities from a zero-shot softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMatrix {
    probs: Array2<f64>,
    temperature: f64,
}

impl ProbMatrix {
    /// Softmax of `logits / temperature` along each row.
    pub fn from_cosines(cosines: ArrayView2<'_, f64>, temperature: f64) -> Result<Self> {
        check_temperature(temperature)?;
        let mut probs = cosines.to_owned();
        for mut row in probs.axis_iter_mut(Axis(0)) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = ((*v - max) / temperature).exp();
                total += *v;
            }
            row.mapv_inplace(|v| v / total);
        }
        Ok(Self { probs, temperature })
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.probs.view()
    }

    pub fn rows(&self) -> usize {
        self.probs.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.probs.ncols()
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    /// Most probable class per row; ties go to the lowest index.
    pub fn argmax(&self) -> Vec<usize> {
        self.probs
            .rows()
            .into_iter()
            .map(|row| {
                let mut best = 0;
                for (c, &p) in row.iter().enumerate() {
                    if p > row[best] {
                        best = c;
                    }
                }
                best
            })
            .collect()
    }
}

fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveTemperature(t))
    }
}

/// Per-sample scores, higher = more unknown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub scorer: Scorer,
    pub values: Vec<f64>,
}

impl ScoreVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Cosine similarity of every sample against every anchor. A zero row on
/// either side gives cosine 0.
pub fn cosine_similarities(samples: ArrayView2<'_, f64>, anchors: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if samples.ncols() != anchors.ncols() {
        return Err(Error::DimMismatch(format!(
            "samples have dim {}, anchors have dim {}",
            samples.ncols(),
            anchors.ncols()
        )));
    }
    let inv_norm = |m: ArrayView2<'_, f64>| -> Array1<f64> {
        m.rows()
            .into_iter()
            .map(|r| {
                let n = l2_norm(r);
                if n > 0.0 {
                    1.0 / n
                } else {
                    0.0
                }
            })
            .collect()
    };
    let si = inv_norm(samples);
    let ai = inv_norm(anchors);
    let mut cos = samples.dot(&anchors.t());
    Zip::from(cos.rows_mut()).and(&si).for_each(|mut row, &s| {
        Zip::from(&mut row).and(&ai).for_each(|v, &a| *v = (*v * s * a).clamp(-1.0, 1.0));
    });
    Ok(cos)
}

/// Zero-shot class probabilities: softmax over anchors of cosine / temperature.
pub fn zero_shot_probs(
    samples: &EmbeddingMatrix,
    anchors: &EmbeddingMatrix,
    temperature: f64,
) -> Result<ProbMatrix> {
    check_temperature(temperature)?;
    if anchors.rows() < 2 {
        return Err(Error::DimMismatch(format!(
            "need at least 2 class anchors, got {}",
            anchors.rows()
        )));
    }
    let cos = cosine_similarities(samples.view(), anchors.view())?;
    ProbMatrix::from_cosines(cos.view(), temperature)
}

/// Scores each probability row. `logits` (the raw cosine matrix) is only
/// needed for [`Scorer::Energy`].
///
/// - entropy: `-sum p ln p`, with `0 ln 0 = 0`
/// - mcm: `1 - max p`
/// - var: `(C-1)/C^2 - var(p)`, zero for a one-hot row
/// - energy: `-t * logsumexp(cos / t)`
pub fn score_samples(
    probs: &ProbMatrix,
    scorer: Scorer,
    logits: Option<ArrayView2<'_, f64>>,
) -> Result<ScoreVector> {
    let c = probs.num_classes() as f64;
    let values: Vec<f64> = match scorer {
        Scorer::Entropy => probs
            .probs
            .rows()
            .into_iter()
            .map(|row| {
                -row.iter()
                    .filter(|&&p| p > 0.0)
                    .map(|&p| p * p.ln())
                    .sum::<f64>()
            })
            .map(|h| h.max(0.0))
            .collect(),
        Scorer::Mcm => probs
            .probs
            .rows()
            .into_iter()
            .map(|row| 1.0 - row.iter().copied().fold(0.0, f64::max))
            .collect(),
        Scorer::Var => {
            let var_max = (c - 1.0) / (c * c);
            probs
                .probs
                .rows()
                .into_iter()
                .map(|row| {
                    let mean = 1.0 / c;
                    let var = row.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / c;
                    (var_max - var).max(0.0)
                })
                .collect()
        }
        Scorer::Energy => {
            let logits = logits.ok_or(Error::MissingLogits)?;
            if logits.dim() != probs.probs.dim() {
                return Err(Error::DimMismatch(format!(
                    "logits {:?} vs probabilities {:?}",
                    logits.dim(),
                    probs.probs.dim()
                )));
            }
            let t = probs.temperature;
            logits
                .rows()
                .into_iter()
                .map(|row| {
                    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let lse = max / t + row.iter().map(|&v| ((v - max) / t).exp()).sum::<f64>().ln();
                    -t * lse
                })
                .collect()
        }
    };
    Ok(ScoreVector { scorer, values })
}

/// Open-set prediction: class `C` (unknown) where score > threshold,
/// otherwise the zero-shot argmax.
pub fn predict_with_threshold(
    probs: &ProbMatrix,
    scores: &ScoreVector,
    threshold: f64,
) -> Result<LabelVector> {
    if scores.len() != probs.rows() {
        return Err(Error::DimMismatch(format!(
            "{} scores for {} probability rows",
            scores.len(),
            probs.rows()
        )));
    }
    let c = probs.num_classes();
    let labels = probs
        .argmax()
        .into_iter()
        .zip(&scores.values)
        .map(|(arg, &s)| if s > threshold { c } else { arg })
        .collect();
    LabelVector::new(labels, c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn probs(rows: Array2<f64>) -> ProbMatrix {
        ProbMatrix {
            probs: rows,
            temperature: 1.0,
        }
    }

    #[test]
    fn equal_cosines_give_even_split() {
        let x = EmbeddingMatrix::from_vec(1, 2, vec![1.0, 0.0]).unwrap();
        let a = EmbeddingMatrix::from_vec(2, 2, vec![0.6, 0.8, 0.6, -0.8]).unwrap();
        let p = zero_shot_probs(&x, &a, 0.01).unwrap();
        assert!((p.view()[[0, 0]] - 0.5).abs() < 1e-12);
        assert!((p.view()[[0, 1]] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn unit_temperature_softmax() {
        let x = EmbeddingMatrix::from_vec(1, 2, vec![1.0, 0.0]).unwrap();
        let a = EmbeddingMatrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let p = zero_shot_probs(&x, &a, 1.0).unwrap();
        let e = std::f64::consts::E;
        assert!((p.view()[[0, 0]] - e / (e + 1.0)).abs() < 1e-12);
        assert!((p.view()[[0, 0]] - 0.7311).abs() < 1e-4);
        assert!((p.view()[[0, 1]] - 0.2689).abs() < 1e-4);
    }

    #[test]
    fn tiny_temperature_is_one_hot() {
        let cos = array![[0.30, 0.31, 0.10]];
        let p = ProbMatrix::from_cosines(cos.view(), 1e-4).unwrap();
        assert!((p.view()[[0, 1]] - 1.0).abs() < 1e-3);
        assert!(p.view().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn rejects_bad_temperature_and_dims() {
        let cos = array![[0.3, 0.1]];
        assert!(matches!(
            ProbMatrix::from_cosines(cos.view(), 0.0),
            Err(Error::NonPositiveTemperature(_))
        ));
        let x = EmbeddingMatrix::from_vec(1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        let a = EmbeddingMatrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(matches!(zero_shot_probs(&x, &a, 0.01), Err(Error::DimMismatch(_))));
    }

    #[test]
    fn entropy_spot_values() {
        let p = probs(array![[0.25, 0.25, 0.25, 0.25], [1.0, 0.0, 0.0, 0.0], [0.5, 0.5, 0.0, 0.0]]);
        let s = score_samples(&p, Scorer::Entropy, None).unwrap();
        assert!((s.values[0] - 4f64.ln()).abs() < 1e-12);
        assert!((s.values[0] - 1.3863).abs() < 1e-4);
        assert_eq!(s.values[1], 0.0);
        assert!((s.values[2] - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn one_hot_scores_zero_for_mcm_and_var() {
        let p = probs(array![[0.0, 1.0, 0.0]]);
        assert_eq!(score_samples(&p, Scorer::Mcm, None).unwrap().values[0], 0.0);
        assert!(score_samples(&p, Scorer::Var, None).unwrap().values[0].abs() < 1e-15);
        let u = probs(array![[1.0 / 3.0; 3]]);
        let v = score_samples(&u, Scorer::Var, None).unwrap().values[0];
        assert!((v - 2.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn energy_needs_logits() {
        let cos = array![[0.9, 0.1], [0.2, 0.2]];
        let p = ProbMatrix::from_cosines(cos.view(), 0.1).unwrap();
        assert!(matches!(score_samples(&p, Scorer::Energy, None), Err(Error::MissingLogits)));
        let s = score_samples(&p, Scorer::Energy, Some(cos.view())).unwrap();
        let expected0 = -0.1 * ((9.0f64).exp() + (1.0f64).exp()).ln();
        assert!((s.values[0] - expected0).abs() < 1e-12);
        // the confident row is less unknown
        assert!(s.values[0] < s.values[1]);
    }

    #[test]
    fn threshold_boundary_is_strict() {
        let p = probs(array![[0.9, 0.1], [0.2, 0.8], [0.5, 0.5]]);
        let s = ScoreVector {
            scorer: Scorer::Entropy,
            values: vec![0.3, 0.5, 0.7],
        };
        let l = predict_with_threshold(&p, &s, 0.5).unwrap();
        assert_eq!(l.labels(), &[0, 1, 2]);
        let all_unknown = predict_with_threshold(&p, &s, 0.1).unwrap();
        assert_eq!(all_unknown.labels(), &[2, 2, 2]);
        let argmax = predict_with_threshold(&p, &s, f64::INFINITY).unwrap();
        assert_eq!(argmax.labels(), &[0, 1, 0]);
        let none = predict_with_threshold(&p, &s, f64::NEG_INFINITY).unwrap();
        assert!(none.labels().iter().all(|&l| l == 2));
    }

    #[test]
    fn scorer_parse() {
        assert_eq!("MCM".parse::<Scorer>().unwrap(), Scorer::Mcm);
        assert!("softmax".parse::<Scorer>().is_err());
    }

    proptest! {
        #[test]
        fn rows_sum_to_one_and_shift_invariant(
            cos in proptest::collection::vec(-1.0f64..1.0, 12),
            shift in -0.5f64..0.5,
            t in 0.005f64..2.0,
        ) {
            let m = Array2::from_shape_vec((3, 4), cos).unwrap();
            let p = ProbMatrix::from_cosines(m.view(), t).unwrap();
            for row in p.view().rows() {
                prop_assert!((row.sum() - 1.0).abs() < 1e-6);
                prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
            }
            let shifted = m.mapv(|v| v + shift);
            let q = ProbMatrix::from_cosines(shifted.view(), t).unwrap();
            for (a, b) in p.view().iter().zip(q.view().iter()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn entropy_bounded_and_permutation_invariant(raw in proptest::collection::vec(0.0f64..1.0, 5)) {
            let total: f64 = raw.iter().sum::<f64>() + 1e-9;
            let row: Vec<f64> = raw.iter().map(|v| (v + 1e-9 / 5.0) / total).collect();
            let mut rev = row.clone();
            rev.reverse();
            let p = probs(Array2::from_shape_vec((2, 5), [row, rev].concat()).unwrap());
            let s = score_samples(&p, Scorer::Entropy, None).unwrap();
            prop_assert!(s.values[0] >= 0.0 && s.values[0] <= 5f64.ln() + 1e-9);
            prop_assert!((s.values[0] - s.values[1]).abs() < 1e-12);
        }

        #[test]
        fn raising_threshold_never_loses_known_predictions(
            scores in proptest::collection::vec(0.0f64..2.0, 1..40)
        ) {
            let n = scores.len();
            let p = probs(Array2::from_elem((n, 2), 0.5));
            let s = ScoreVector { scorer: Scorer::Entropy, values: scores.clone() };
            let mut grid = scores.clone();
            grid.sort_by(f64::total_cmp);
            let mut last = 0;
            for t in grid {
                let l = predict_with_threshold(&p, &s, t).unwrap();
                let known = l.labels().iter().filter(|&&x| x < 2).count();
                prop_assert!(known >= last);
                last = known;
            }
        }
    }
}
