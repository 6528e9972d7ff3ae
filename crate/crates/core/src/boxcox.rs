//! Box-Cox power transform, profile-likelihood estimate of lambda, and the
//! inverse used to map thresholds back to score space.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// `|lambda|` below this uses the logarithmic branch.
pub const LAMBDA_ZERO_EPS: f64 = 1e-10;
pub const DEFAULT_SEARCH_RANGE: (f64, f64) = (-5.0, 5.0);
pub const DEFAULT_EPSILON_SHIFT: f64 = 1e-6;
const GRID_STEP: f64 = 0.01;
const REFINE_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxCoxFit {
    pub lambda: f64,
    /// Added to raw values before transforming.
    pub shift: f64,
    /// Profile log-likelihood at `lambda`, constants included.
    pub loglik: f64,
    pub search_range: (f64, f64),
}

impl BoxCoxFit {
    /// Shifts then transforms raw values.
    pub fn transform(&self, raw: &[f64]) -> Result<Vec<f64>> {
        raw.iter().map(|&v| boxcox(v + self.shift, self.lambda)).collect()
    }

    /// Maps a transformed value back to raw score space (undoing the shift).
    pub fn inverse(&self, y: f64) -> Result<f64> {
        Ok(inverse_boxcox(y, self.lambda)? - self.shift)
    }
}

pub fn boxcox(v: f64, lambda: f64) -> Result<f64> {
    if v <= 0.0 || v.is_nan() {
        return Err(Error::NonPositiveInput(v));
    }
    Ok(boxcox_unchecked(v.ln(), lambda))
}

#[inline]
fn boxcox_unchecked(ln_v: f64, lambda: f64) -> f64 {
    if lambda.abs() < LAMBDA_ZERO_EPS {
        ln_v
    } else {
        (lambda * ln_v).exp_m1() / lambda
    }
}

pub fn boxcox_transform(values: &[f64], lambda: f64) -> Result<Vec<f64>> {
    values.iter().map(|&v| boxcox(v, lambda)).collect()
}

pub fn inverse_boxcox(y: f64, lambda: f64) -> Result<f64> {
    if lambda.abs() < LAMBDA_ZERO_EPS {
        return Ok(y.exp());
    }
    let base = lambda * y + 1.0;
    if base <= 0.0 || base.is_nan() {
        return Err(Error::InverseDomainError(base));
    }
    Ok(((lambda * y).ln_1p() / lambda).exp())
}

/// Shift that makes every value at least `epsilon_shift`:
/// `max(0, -min) + epsilon_shift`.
pub fn positivity_shift(values: &[f64], epsilon_shift: f64) -> f64 {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    (-min).max(0.0) + epsilon_shift
}

/// Gaussian profile log-likelihood of the transformed data plus the Jacobian
/// term `(lambda - 1) * sum ln v`. Takes `ln v` to avoid recomputing logs.
struct Profile {
    log_values: Vec<f64>,
    sum_log: f64,
}

impl Profile {
    fn new(positive: &[f64]) -> Self {
        let log_values: Vec<f64> = positive.iter().map(|v| v.ln()).collect();
        let sum_log = log_values.iter().sum();
        Self { log_values, sum_log }
    }

    /// `None` when the transformed sample has zero or non-finite variance.
    fn loglik(&self, lambda: f64) -> Option<f64> {
        let n = self.log_values.len() as f64;
        let mut mean = 0.0;
        for &l in &self.log_values {
            mean += boxcox_unchecked(l, lambda);
        }
        mean /= n;
        let mut ss = 0.0;
        for &l in &self.log_values {
            let d = boxcox_unchecked(l, lambda) - mean;
            ss += d * d;
        }
        let var = ss / n;
        if !(var > 0.0) || !var.is_finite() {
            return None;
        }
        let ll = -0.5 * n * ((2.0 * std::f64::consts::PI * var).ln() + 1.0)
            + (lambda - 1.0) * self.sum_log;
        ll.is_finite().then_some(ll)
    }
}

/// Maximum-likelihood lambda over `search_range`: a 0.01-step grid, then
/// golden-section refinement (tolerance 1e-4) around the best grid point.
pub fn fit_lambda_mle(values: &[f64], search_range: (f64, f64), epsilon_shift: f64) -> Result<BoxCoxFit> {
    if values.len() < 3 {
        return Err(Error::TooFewValues {
            needed: 3,
            got: values.len(),
        });
    }
    let (lo, hi) = search_range;
    if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidConfig(format!("bad lambda search range {search_range:?}")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Malformed("non-finite score".into()));
    }
    if values.iter().all(|&v| v == values[0]) {
        return Err(Error::DegenerateValues);
    }
    let shift = positivity_shift(values, epsilon_shift);
    let shifted: Vec<f64> = values.iter().map(|v| v + shift).collect();
    if shifted.iter().any(|&v| v <= 0.0) {
        return Err(Error::NonPositiveInput(
            shifted.iter().copied().fold(f64::INFINITY, f64::min),
        ));
    }
    let profile = Profile::new(&shifted);

    let steps = ((hi - lo) / GRID_STEP).round() as usize;
    let grid_point = |i: usize| if i == steps { hi } else { lo + i as f64 * GRID_STEP };
    let mut best: Option<(usize, f64)> = None;
    for i in 0..=steps {
        if let Some(ll) = profile.loglik(grid_point(i)) {
            if best.is_none_or(|(_, b)| ll > b) {
                best = Some((i, ll));
            }
        }
    }
    let (best_i, best_ll) = best.ok_or(Error::DegenerateValues)?;

    let a = grid_point(best_i.saturating_sub(1));
    let b = grid_point((best_i + 1).min(steps));
    let objective = |l: f64| profile.loglik(l).unwrap_or(f64::NEG_INFINITY);
    let refined = golden_section_max(objective, a, b, REFINE_TOL);
    let refined_ll = objective(refined);

    let (lambda, loglik) = if refined_ll >= best_ll {
        (refined, refined_ll)
    } else {
        (grid_point(best_i), best_ll)
    };
    Ok(BoxCoxFit {
        lambda,
        shift,
        loglik,
        search_range,
    })
}

fn golden_section_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}
