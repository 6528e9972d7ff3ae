//! Subspace feature filtering.
//!
//! Confidently-known and confidently-unknown samples each span a subspace
//! (top right-singular vectors of the uncentered row matrix). Every sample is
//! projected onto both; a per-sample softmax of the two projection cosines
//! gives the share `alpha` of the unknown-subspace component that is then
//! subtracted from the sample.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::bgat::ThresholdEstimate;
use crate::data_io::l2_norm;
use crate::{Error, Result};

pub const DEFAULT_TAU: f64 = 0.9;
pub const DEFAULT_ALPHA_TEMPERATURE: f64 = 1.0;
pub const DEFAULT_MIN_CONFIDENT: usize = 2;

/// Relative slack on the cumulative-energy test, so that `tau = 1` is met
/// once only round-off remains.
const ENERGY_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidencePartition {
    pub know: Vec<usize>,
    pub unk: Vec<usize>,
}

/// Confident known: score <= (mu_know + T*)/2. Confident unknown:
/// score > (mu_unk + T*)/2. Indices ascend.
pub fn partition_confident(scores: &[f64], est: &ThresholdEstimate) -> ConfidencePartition {
    let know_cut = 0.5 * (est.mu_know + est.t_star);
    let unk_cut = 0.5 * (est.mu_unk + est.t_star);
    let mut know = Vec::new();
    let mut unk = Vec::new();
    for (i, &s) in scores.iter().enumerate() {
        if s <= know_cut {
            know.push(i);
        } else if s > unk_cut {
            unk.push(i);
        }
    }
    ConfidencePartition { know, unk }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceBasis {
    /// `rank x dim`, orthonormal rows.
    pub basis: Array2<f64>,
    pub rank: usize,
    /// All singular values, descending.
    pub singular_values: Vec<f64>,
    pub tau: f64,
    pub source_count: usize,
}

/// Smallest `k` whose leading squared singular values carry at least `tau`
/// of the total energy.
pub fn select_rank(singular_values: &[f64], tau: f64) -> usize {
    let energy: Vec<f64> = singular_values.iter().map(|s| s * s).collect();
    let total: f64 = energy.iter().sum();
    let target = tau * total - ENERGY_SLACK * total;
    let mut cum = 0.0;
    for (i, e) in energy.iter().enumerate() {
        cum += e;
        if cum >= target {
            return i + 1;
        }
    }
    energy.len()
}

/// Thin SVD of the rows of `x` (no centering) truncated by [`select_rank`].
pub fn subspace_basis(x: ArrayView2<'_, f64>, tau: f64) -> Result<SubspaceBasis> {
    let (n, d) = x.dim();
    if n == 0 || d == 0 {
        return Err(Error::DimMismatch("subspace needs at least one row".into()));
    }
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::InvalidConfig(format!("tau must lie in (0, 1], got {tau}")));
    }
    let m = DMatrix::from_row_iterator(n, d, x.iter().copied());
    let svd = m.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::Malformed("SVD did not produce V^T".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let singular_values: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    if singular_values.first().is_none_or(|&s| s <= 0.0) {
        return Err(Error::ZeroMatrix);
    }
    let rank = select_rank(&singular_values, tau).clamp(1, n.min(d));
    let mut basis = Array2::zeros((rank, d));
    for (r, &i) in order.iter().take(rank).enumerate() {
        for c in 0..d {
            basis[[r, c]] = v_t[(i, c)];
        }
    }
    Ok(SubspaceBasis {
        basis,
        rank,
        singular_values,
        tau,
        source_count: n,
    })
}

/// Orthogonal projection of each row onto the span of the basis.
pub fn project(x: ArrayView2<'_, f64>, basis: &SubspaceBasis) -> Result<Array2<f64>> {
    if x.ncols() != basis.basis.ncols() {
        return Err(Error::DimMismatch(format!(
            "rows have dim {}, basis has dim {}",
            x.ncols(),
            basis.basis.ncols()
        )));
    }
    let coords = x.dot(&basis.basis.t());
    Ok(coords.dot(&basis.basis))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixingRatio {
    pub alpha: Array1<f64>,
    /// Rows where a zero-norm vector forced a cosine of 0.
    pub zero_norm_rows: usize,
}

fn cosine_or_zero(a: ndarray::ArrayView1<'_, f64>, b: ndarray::ArrayView1<'_, f64>) -> Option<f64> {
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if na > 0.0 && nb > 0.0 {
        Some((a.dot(&b) / (na * nb)).clamp(-1.0, 1.0))
    } else {
        None
    }
}

/// `alpha_i = softmax(s_unk / t, s_know / t)[unk]` where `s_*` is the cosine
/// between a sample and its projection onto that subspace.
pub fn mixing_ratio(
    x: ArrayView2<'_, f64>,
    proj_know: ArrayView2<'_, f64>,
    proj_unk: ArrayView2<'_, f64>,
    temperature: f64,
) -> Result<MixingRatio> {
    if x.dim() != proj_know.dim() || x.dim() != proj_unk.dim() {
        return Err(Error::DimMismatch(format!(
            "samples {:?}, known projection {:?}, unknown projection {:?}",
            x.dim(),
            proj_know.dim(),
            proj_unk.dim()
        )));
    }
    if !(temperature > 0.0) {
        return Err(Error::NonPositiveTemperature(temperature));
    }
    let mut zero_norm_rows = 0;
    let alpha = x
        .rows()
        .into_iter()
        .zip(proj_know.rows())
        .zip(proj_unk.rows())
        .map(|((row, pk), pu)| {
            let sk = cosine_or_zero(row, pk);
            let su = cosine_or_zero(row, pu);
            if sk.is_none() || su.is_none() {
                zero_norm_rows += 1;
            }
            let (sk, su) = (sk.unwrap_or(0.0), su.unwrap_or(0.0));
            // logistic form of the two-way softmax
            1.0 / (1.0 + ((sk - su) / temperature).exp())
        })
        .collect();
    Ok(MixingRatio {
        alpha,
        zero_norm_rows,
    })
}

/// `x_i - alpha_i * proj_unk_i`, no renormalisation.
pub fn filter_features(
    x: ArrayView2<'_, f64>,
    alpha: &Array1<f64>,
    proj_unk: ArrayView2<'_, f64>,
) -> Result<Array2<f64>> {
    if x.dim() != proj_unk.dim() || alpha.len() != x.nrows() {
        return Err(Error::DimMismatch("filter inputs disagree in shape".into()));
    }
    let mut out = x.to_owned();
    Zip::from(out.axis_iter_mut(Axis(0)))
        .and(proj_unk.axis_iter(Axis(0)))
        .and(alpha)
        .for_each(|mut row, p, &a| row.scaled_add(-a, &p));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuffOptions {
    pub tau: f64,
    pub temperature: f64,
    /// Confident sets smaller than `max(2, min_confident)` skip filtering.
    pub min_confident: usize,
}

impl Default for SuffOptions {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            temperature: DEFAULT_ALPHA_TEMPERATURE,
            min_confident: DEFAULT_MIN_CONFIDENT,
        }
    }
}

/// Diagnostics of one filtering pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuffSummary {
    pub applied: bool,
    pub n_know: usize,
    pub n_unk: usize,
    pub rank_know: Option<usize>,
    pub rank_unk: Option<usize>,
    pub mean_alpha: Option<f64>,
    pub zero_norm_rows: usize,
    pub skip_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuffOutcome {
    pub filtered: Array2<f64>,
    pub summary: SuffSummary,
}

fn gather_rows(x: ArrayView2<'_, f64>, idx: &[usize]) -> Array2<f64> {
    x.select(Axis(0), idx)
}

/// Full filtering pass. Returns the input unchanged (`applied = false`) when
/// either confident set is too small or a subspace cannot be built.
pub fn apply_suff(
    x: ArrayView2<'_, f64>,
    scores: &[f64],
    est: &ThresholdEstimate,
    opts: &SuffOptions,
) -> Result<SuffOutcome> {
    if scores.len() != x.nrows() {
        return Err(Error::DimMismatch(format!(
            "{} scores for {} samples",
            scores.len(),
            x.nrows()
        )));
    }
    let part = partition_confident(scores, est);
    let mut summary = SuffSummary {
        applied: false,
        n_know: part.know.len(),
        n_unk: part.unk.len(),
        rank_know: None,
        rank_unk: None,
        mean_alpha: None,
        zero_norm_rows: 0,
        skip_reason: None,
    };
    let skip = |mut summary: SuffSummary, reason: String| SuffOutcome {
        filtered: x.to_owned(),
        summary: {
            summary.skip_reason = Some(reason);
            summary
        },
    };
    let min = opts.min_confident.max(2);
    if part.know.len() < min || part.unk.len() < min {
        let reason = format!(
            "confident sets too small (known {}, unknown {}, need {min})",
            part.know.len(),
            part.unk.len()
        );
        return Ok(skip(summary, reason));
    }
    let basis_know = match subspace_basis(gather_rows(x, &part.know).view(), opts.tau) {
        Ok(b) => b,
        Err(Error::ZeroMatrix) => return Ok(skip(summary, "known subspace is empty".into())),
        Err(e) => return Err(e),
    };
    let basis_unk = match subspace_basis(gather_rows(x, &part.unk).view(), opts.tau) {
        Ok(b) => b,
        Err(Error::ZeroMatrix) => return Ok(skip(summary, "unknown subspace is empty".into())),
        Err(e) => return Err(e),
    };
    let proj_know = project(x, &basis_know)?;
    let proj_unk = project(x, &basis_unk)?;
    let ratio = mixing_ratio(x, proj_know.view(), proj_unk.view(), opts.temperature)?;
    let filtered = filter_features(x, &ratio.alpha, proj_unk.view())?;
    summary.applied = true;
    summary.rank_know = Some(basis_know.rank);
    summary.rank_unk = Some(basis_unk.rank);
    summary.mean_alpha = ratio.alpha.mean();
    summary.zero_norm_rows = ratio.zero_norm_rows;
    Ok(SuffOutcome { filtered, summary })
}
