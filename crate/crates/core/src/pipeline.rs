//! End-to-end open-set prediction.
//!
//! 1. zero-shot probabilities and scores from the original features
//! 2. initial threshold
//! 3. subspace filtering of the features (optional)
//! 4. scores recomputed on the filtered features, threshold re-estimated
//! 5. unknown where the final score exceeds the final threshold, otherwise
//!    the argmax of the *original* probabilities

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::bgat::{estimate_threshold, half_max_threshold, mean_threshold, BgatOptions, ThresholdEstimate, ThresholdMethod};
use crate::data_io::{EmbeddingMatrix, LabelVector};
use crate::metrics::threshold_sweep;
use crate::scoring::{cosine_similarities, predict_with_threshold, score_samples, ProbMatrix, ScoreVector, Scorer, DEFAULT_TEMPERATURE};
use crate::suff::{apply_suff, SuffOptions, SuffSummary, DEFAULT_ALPHA_TEMPERATURE, DEFAULT_MIN_CONFIDENT, DEFAULT_TAU};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdStrategy {
    Bgat,
    Mean,
    FixedHalfMax,
    /// Labels-aware HOS-maximising threshold; an evaluation device only.
    Oracle,
}

impl ThresholdStrategy {
    pub const ALL: [ThresholdStrategy; 4] = [
        ThresholdStrategy::FixedHalfMax,
        ThresholdStrategy::Mean,
        ThresholdStrategy::Bgat,
        ThresholdStrategy::Oracle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ThresholdStrategy::Bgat => "bgat",
            ThresholdStrategy::Mean => "mean",
            ThresholdStrategy::FixedHalfMax => "fixed_half_max",
            ThresholdStrategy::Oracle => "oracle",
        }
    }
}

impl fmt::Display for ThresholdStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ThresholdStrategy {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown strategy {s:?} (expected bgat|mean|fixed_half_max|oracle)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub scorer: Scorer,
    /// Softmax temperature of the zero-shot classifier.
    pub temp_eq1: f64,
    /// Temperature of the subspace mixing ratio.
    pub temp_alpha: f64,
    pub tau: f64,
    pub use_boxcox: bool,
    pub use_suff: bool,
    pub strategy: ThresholdStrategy,
    pub min_confident: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            scorer: Scorer::Entropy,
            temp_eq1: DEFAULT_TEMPERATURE,
            temp_alpha: DEFAULT_ALPHA_TEMPERATURE,
            tau: DEFAULT_TAU,
            use_boxcox: true,
            use_suff: true,
            strategy: ThresholdStrategy::Bgat,
            min_confident: DEFAULT_MIN_CONFIDENT,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        for t in [self.temp_eq1, self.temp_alpha] {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::NonPositiveTemperature(t));
            }
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::InvalidConfig(format!("tau must lie in (0, 1], got {}", self.tau)));
        }
        Ok(())
    }

    fn bgat_options(&self) -> BgatOptions {
        BgatOptions::with_boxcox(self.use_boxcox)
    }

    fn suff_options(&self) -> SuffOptions {
        SuffOptions {
            tau: self.tau,
            temperature: self.temp_alpha,
            min_confident: self.min_confident,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageTimings {
    pub initial_scoring: Duration,
    pub initial_threshold: Duration,
    pub filtering: Duration,
    pub rescoring: Duration,
    pub final_threshold: Duration,
    pub prediction: Duration,
}

impl StageTimings {
    pub fn as_pairs(&self) -> [(&'static str, Duration); 6] {
        [
            ("initial_scoring", self.initial_scoring),
            ("initial_threshold", self.initial_threshold),
            ("filtering", self.filtering),
            ("rescoring", self.rescoring),
            ("final_threshold", self.final_threshold),
            ("prediction", self.prediction),
        ]
    }
}

/// Outcome of a run. Timings are excluded from serialization so that
/// identical inputs serialize to identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionReport {
    pub labels: LabelVector,
    pub scores_initial: ScoreVector,
    pub scores_final: ScoreVector,
    pub threshold_initial: ThresholdEstimate,
    pub threshold_final: ThresholdEstimate,
    pub suff: SuffSummary,
    /// Zero-shot argmax of the original features.
    pub zero_shot: Vec<usize>,
    #[serde(skip)]
    pub timings: StageTimings,
}

impl PredictionReport {
    pub fn suff_applied(&self) -> bool {
        self.suff.applied
    }
}

struct Scored {
    probs: ProbMatrix,
    scores: ScoreVector,
}

fn score(x: &Array2<f64>, anchors: &EmbeddingMatrix, config: &PipelineConfig) -> Result<Scored> {
    let cos = cosine_similarities(x.view(), anchors.view())?;
    let probs = ProbMatrix::from_cosines(cos.view(), config.temp_eq1)?;
    let scores = score_samples(&probs, config.scorer, Some(cos.view()))?;
    Ok(Scored { probs, scores })
}

fn pick_threshold(
    scores: &[f64],
    known_preds: &[usize],
    config: &PipelineConfig,
    labels: Option<&LabelVector>,
) -> Result<ThresholdEstimate> {
    Ok(match config.strategy {
        ThresholdStrategy::Bgat => estimate_threshold(scores, &config.bgat_options())?,
        ThresholdStrategy::Mean => ThresholdEstimate::from_threshold(scores, mean_threshold(scores), ThresholdMethod::Mean),
        ThresholdStrategy::FixedHalfMax => {
            ThresholdEstimate::from_threshold(scores, half_max_threshold(scores), ThresholdMethod::FixedHalfMax)
        }
        ThresholdStrategy::Oracle => {
            let truth = labels.ok_or(Error::OracleNeedsLabels)?;
            let sweep = threshold_sweep(scores, known_preds, truth)?;
            ThresholdEstimate::from_threshold(scores, sweep.best_threshold, ThresholdMethod::Oracle)
        }
    })
}

/// Runs the pipeline with any threshold strategy. `labels` is read only by
/// the oracle strategy.
pub fn run_pipeline(
    samples: &EmbeddingMatrix,
    anchors: &EmbeddingMatrix,
    config: &PipelineConfig,
    labels: Option<&LabelVector>,
) -> Result<PredictionReport> {
    config.validate()?;
    if samples.dim() != anchors.dim() {
        return Err(Error::DimMismatch(format!(
            "samples have dim {}, anchors have dim {}",
            samples.dim(),
            anchors.dim()
        )));
    }
    if anchors.rows() < 2 {
        return Err(Error::DimMismatch(format!("need at least 2 anchors, got {}", anchors.rows())));
    }
    if let Some(l) = labels {
        if l.len() != samples.rows() || l.num_known() != anchors.rows() {
            return Err(Error::DimMismatch(format!(
                "labels ({} entries, C = {}) do not match {} samples and {} anchors",
                l.len(),
                l.num_known(),
                samples.rows(),
                anchors.rows()
            )));
        }
    }
    let mut timings = StageTimings::default();

    let clock = Instant::now();
    let initial = score(samples.as_array(), anchors, config)?;
    let zero_shot = initial.probs.argmax();
    timings.initial_scoring = clock.elapsed();

    let clock = Instant::now();
    let threshold_initial = pick_threshold(&initial.scores.values, &zero_shot, config, labels)?;
    timings.initial_threshold = clock.elapsed();

    let (scores_final, threshold_final, suff) = if config.use_suff {
        let clock = Instant::now();
        let outcome = apply_suff(
            samples.view(),
            &initial.scores.values,
            &threshold_initial,
            &config.suff_options(),
        )?;
        timings.filtering = clock.elapsed();
        if outcome.summary.applied {
            let clock = Instant::now();
            let rescored = score(&outcome.filtered, anchors, config)?;
            timings.rescoring = clock.elapsed();
            let clock = Instant::now();
            let t = pick_threshold(&rescored.scores.values, &zero_shot, config, labels)?;
            timings.final_threshold = clock.elapsed();
            (rescored.scores, t, outcome.summary)
        } else {
            (initial.scores.clone(), threshold_initial.clone(), outcome.summary)
        }
    } else {
        let summary = SuffSummary {
            applied: false,
            n_know: 0,
            n_unk: 0,
            rank_know: None,
            rank_unk: None,
            mean_alpha: None,
            zero_norm_rows: 0,
            skip_reason: Some("disabled".into()),
        };
        (initial.scores.clone(), threshold_initial.clone(), summary)
    };

    let clock = Instant::now();
    let predicted = predict_with_threshold(&initial.probs, &scores_final, threshold_final.t_star)?;
    timings.prediction = clock.elapsed();

    Ok(PredictionReport {
        labels: predicted,
        scores_initial: initial.scores,
        scores_final,
        threshold_initial,
        threshold_final,
        suff,
        zero_shot,
        timings,
    })
}

/// The label-free method: any strategy except the oracle.
pub fn run_clipxpert(
    samples: &EmbeddingMatrix,
    anchors: &EmbeddingMatrix,
    config: &PipelineConfig,
) -> Result<PredictionReport> {
    if config.strategy == ThresholdStrategy::Oracle {
        return Err(Error::OracleNeedsLabels);
    }
    run_pipeline(samples, anchors, config, None)
}

/// Baseline threshold strategies (`mean`, `fixed_half_max`, `oracle`).
pub fn run_baseline(
    samples: &EmbeddingMatrix,
    anchors: &EmbeddingMatrix,
    config: &PipelineConfig,
    labels: Option<&LabelVector>,
) -> Result<PredictionReport> {
    if config.strategy == ThresholdStrategy::Bgat {
        return Err(Error::InvalidConfig("run_baseline expects mean, fixed_half_max or oracle".into()));
    }
    run_pipeline(samples, anchors, config, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::{generate_synthetic, SyntheticConfig};
    use crate::metrics::evaluate;

    fn small() -> crate::data_io::SyntheticData {
        generate_synthetic(&SyntheticConfig {
            c_known: 4,
            c_unknown: 4,
            dim: 64,
            samples_per_class: 20,
            seed: 3,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn without_filtering_matches_direct_composition() {
        let d = small();
        let config = PipelineConfig {
            use_suff: false,
            ..Default::default()
        };
        let report = run_clipxpert(&d.samples, &d.anchors, &config).unwrap();
        let probs = crate::scoring::zero_shot_probs(&d.samples, &d.anchors, config.temp_eq1).unwrap();
        let scores = score_samples(&probs, Scorer::Entropy, None).unwrap();
        let est = estimate_threshold(&scores.values, &BgatOptions::default()).unwrap();
        let labels = predict_with_threshold(&probs, &scores, est.t_star).unwrap();
        assert_eq!(report.labels, labels);
        assert_eq!(report.threshold_final, est);
        assert!(!report.suff_applied());
    }

    #[test]
    fn identical_anchors_fall_back_consistently() {
        let d = small();
        let row: Vec<f64> = d.anchors.row(0).to_vec();
        let anchors = EmbeddingMatrix::from_vec(4, 64, row.repeat(4)).unwrap();
        let report = run_clipxpert(&d.samples, &anchors, &PipelineConfig::default()).unwrap();
        let ln_c = 4f64.ln();
        assert!(report.scores_initial.values.iter().all(|s| (s - ln_c).abs() < 1e-9));
        assert_eq!(report.threshold_initial.method, ThresholdMethod::MeanFallback);
        let first = report.labels.labels()[0];
        assert!(report.labels.labels().iter().all(|&l| l == first));
    }

    #[test]
    fn oracle_requires_labels_and_dominates() {
        let d = small();
        let config = PipelineConfig {
            strategy: ThresholdStrategy::Oracle,
            use_suff: false,
            ..Default::default()
        };
        assert!(matches!(
            run_baseline(&d.samples, &d.anchors, &config, None),
            Err(Error::OracleNeedsLabels)
        ));
        let oracle = run_baseline(&d.samples, &d.anchors, &config, Some(&d.labels)).unwrap();
        let bgat = run_clipxpert(
            &d.samples,
            &d.anchors,
            &PipelineConfig {
                use_suff: false,
                ..Default::default()
            },
        )
        .unwrap();
        let h_oracle = evaluate(&oracle.labels, &d.labels).unwrap().hos;
        let h_bgat = evaluate(&bgat.labels, &d.labels).unwrap().hos;
        assert!(h_oracle >= h_bgat && h_bgat >= 0.0);
    }

    #[test]
    fn known_predictions_use_original_argmax() {
        let d = small();
        let report = run_clipxpert(&d.samples, &d.anchors, &PipelineConfig::default()).unwrap();
        for (l, z) in report.labels.labels().iter().zip(&report.zero_shot) {
            assert!(*l == 4 || l == z);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let d = small();
        let anchors = EmbeddingMatrix::from_vec(2, 3, vec![1., 0., 0., 0., 1., 0.]).unwrap();
        assert!(matches!(
            run_clipxpert(&d.samples, &anchors, &PipelineConfig::default()),
            Err(Error::DimMismatch(_))
        ));
    }
}
