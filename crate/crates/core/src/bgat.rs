//! Adaptive score threshold: shift to positivity, Box-Cox with the MLE
//! lambda, two-component GMM, midpoint of the component means, then back to
//! score space. Statistical failures fall back to the mean score.

use serde::{Deserialize, Serialize};

use crate::boxcox::{fit_lambda_mle, inverse_boxcox, positivity_shift, BoxCoxFit, DEFAULT_EPSILON_SHIFT, DEFAULT_SEARCH_RANGE};
use crate::gmm1d::{fit_gmm2, GmmFit, GmmOptions};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "lambda")]
pub enum BoxCoxMode {
    /// Estimate lambda by maximum likelihood.
    Mle,
    /// Use this lambda as given.
    Fixed(f64),
    /// Fit the mixture on the shifted scores directly.
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BgatOptions {
    pub boxcox: BoxCoxMode,
    pub search_range: (f64, f64),
    pub epsilon_shift: f64,
    pub gmm: GmmOptions,
}

impl Default for BgatOptions {
    fn default() -> Self {
        Self {
            boxcox: BoxCoxMode::Mle,
            search_range: DEFAULT_SEARCH_RANGE,
            epsilon_shift: DEFAULT_EPSILON_SHIFT,
            gmm: GmmOptions::default(),
        }
    }
}

impl BgatOptions {
    pub fn with_boxcox(use_boxcox: bool) -> Self {
        Self {
            boxcox: if use_boxcox { BoxCoxMode::Mle } else { BoxCoxMode::Off },
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMethod {
    Bgat,
    MeanFallback,
    Mean,
    FixedHalfMax,
    Oracle,
}

/// A threshold in raw score space together with the known/unknown score
/// centres used for confident-sample selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEstimate {
    pub t_star: f64,
    pub mu_know: f64,
    pub mu_unk: f64,
    pub lambda_star: Option<f64>,
    pub shift: f64,
    pub method: ThresholdMethod,
    pub gmm: Option<GmmFit>,
    /// Why the estimator fell back, if it did.
    pub fallback_reason: Option<String>,
}

impl ThresholdEstimate {
    /// Wraps an externally chosen threshold. `mu_know`/`mu_unk` are the mean
    /// scores at or below / above it (the threshold itself for an empty side).
    pub fn from_threshold(scores: &[f64], t_star: f64, method: ThresholdMethod) -> Self {
        let (mu_know, mu_unk) = side_means(scores, t_star);
        Self {
            t_star,
            mu_know,
            mu_unk,
            lambda_star: None,
            shift: 0.0,
            method,
            gmm: None,
            fallback_reason: None,
        }
    }
}

fn side_means(scores: &[f64], t: f64) -> (f64, f64) {
    let (mut lo, mut nlo, mut hi, mut nhi) = (0.0, 0usize, 0.0, 0usize);
    for &s in scores {
        if s > t {
            hi += s;
            nhi += 1;
        } else {
            lo += s;
            nlo += 1;
        }
    }
    let mean_or = |sum: f64, n: usize| if n == 0 { t } else { sum / n as f64 };
    (mean_or(lo, nlo), mean_or(hi, nhi))
}

pub fn mean_threshold(scores: &[f64]) -> f64 {
    scores.iter().sum::<f64>() / scores.len() as f64
}

/// Half of the largest observed score.
pub fn half_max_threshold(scores: &[f64]) -> f64 {
    scores.iter().copied().fold(f64::NEG_INFINITY, f64::max) / 2.0
}

struct Transform {
    lambda: Option<f64>,
    shift: f64,
}

impl Transform {
    fn inverse(&self, y: f64) -> Result<f64> {
        let raw = match self.lambda {
            Some(l) => inverse_boxcox(y, l)?,
            None => y,
        };
        Ok(raw - self.shift)
    }
}

fn bgat_path(scores: &[f64], opts: &BgatOptions) -> Result<ThresholdEstimate> {
    let shift = positivity_shift(scores, opts.epsilon_shift);
    let (transformed, lambda) = match opts.boxcox {
        BoxCoxMode::Mle => {
            let fit = fit_lambda_mle(scores, opts.search_range, opts.epsilon_shift)?;
            (fit.transform(scores)?, Some(fit.lambda))
        }
        BoxCoxMode::Fixed(lambda) => {
            let fit = BoxCoxFit {
                lambda,
                shift,
                loglik: f64::NAN,
                search_range: (lambda, lambda),
            };
            (fit.transform(scores)?, Some(lambda))
        }
        BoxCoxMode::Off => (scores.iter().map(|s| s + shift).collect(), None),
    };
    let gmm = fit_gmm2(&transformed, &opts.gmm)?;
    let transform = Transform { lambda, shift };
    let t_trans = 0.5 * (gmm.low.mean + gmm.high.mean);
    let t_star = transform.inverse(t_trans)?;
    let mu_know = transform.inverse(gmm.low.mean)?;
    let mu_unk = transform.inverse(gmm.high.mean)?;
    if !(mu_know < t_star && t_star < mu_unk) || !t_star.is_finite() {
        return Err(Error::FailedToSeparate);
    }
    Ok(ThresholdEstimate {
        t_star,
        mu_know,
        mu_unk,
        lambda_star: lambda,
        shift,
        method: ThresholdMethod::Bgat,
        gmm: Some(gmm),
        fallback_reason: None,
    })
}

/// Estimates the unknown-score threshold without labels.
///
/// Only `TooFewValues` (fewer than 4 scores) and non-finite input are
/// errors; every statistical failure yields `MeanFallback` with the reason
/// recorded.
pub fn estimate_threshold(scores: &[f64], opts: &BgatOptions) -> Result<ThresholdEstimate> {
    if scores.len() < 4 {
        return Err(Error::TooFewValues {
            needed: 4,
            got: scores.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Malformed("non-finite score".into()));
    }
    match bgat_path(scores, opts) {
        Ok(est) => Ok(est),
        Err(e) => {
            let mut est =
                ThresholdEstimate::from_threshold(scores, mean_threshold(scores), ThresholdMethod::MeanFallback);
            est.fallback_reason = Some(e.to_string());
            Ok(est)
        }
    }
}
