//! Two-component 1-D Gaussian mixture fitted by EM, plus the analytic
//! two-Gaussian helpers: density intersection, total classification error,
//! and the sensitivity of the intersection to the first component's spread.

use serde::{Deserialize, Serialize};
use libm::erfc;

use crate::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmmOptions {
    /// Stop once the log-likelihood gain of an iteration falls below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Lower bound on each component variance.
    pub var_floor: f64,
}

impl Default for GmmOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 200,
            var_floor: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub mean: f64,
    pub std: f64,
}

impl Component {
    fn log_density(&self, x: f64) -> f64 {
        let z = (x - self.mean) / self.std;
        -0.5 * z * z - self.std.ln() - LN_SQRT_2PI
    }
}

/// Fitted mixture, components sorted by mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmFit {
    /// Lower-mean component (known samples).
    pub low: Component,
    /// Higher-mean component (unknown samples).
    pub high: Component,
    pub iterations: usize,
    pub loglik: f64,
    pub converged: bool,
    /// Log-likelihood before each M-step, ending with the returned parameters.
    pub loglik_trace: Vec<f64>,
}

impl GmmFit {
    pub fn as_pair(&self) -> GaussianPair {
        GaussianPair {
            mu1: self.low.mean,
            sigma1: self.low.std,
            mu2: self.high.mean,
            sigma2: self.high.std,
        }
    }
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Fits a two-component mixture by EM.
///
/// Initialisation is deterministic: means at the 25th/75th percentiles,
/// equal weights, both variances equal to the sample variance.
/// Responsibilities are computed in log space.
pub fn fit_gmm2(values: &[f64], opts: &GmmOptions) -> Result<GmmFit> {
    let n = values.len();
    if n < 4 {
        return Err(Error::TooFewValues { needed: 4, got: n });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Malformed("non-finite value passed to GMM".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted[0] == sorted[n - 1] {
        return Err(Error::DegenerateInput);
    }
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let var0 = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / nf).max(opts.var_floor);

    let mut comps = [
        Component {
            weight: 0.5,
            mean: percentile(&sorted, 0.25),
            std: var0.sqrt(),
        },
        Component {
            weight: 0.5,
            mean: percentile(&sorted, 0.75),
            std: var0.sqrt(),
        },
    ];

    let mut resp = vec![[0.0f64; 2]; n];
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    loop {
        // E-step
        let log_w = [comps[0].weight.ln(), comps[1].weight.ln()];
        let mut ll = 0.0;
        for (x, r) in values.iter().zip(resp.iter_mut()) {
            let a = log_w[0] + comps[0].log_density(*x);
            let b = log_w[1] + comps[1].log_density(*x);
            let m = a.max(b);
            let lse = m + ((a - m).exp() + (b - m).exp()).ln();
            r[0] = (a - lse).exp();
            r[1] = (b - lse).exp();
            ll += lse;
        }
        if !ll.is_finite() {
            return Err(Error::FailedToSeparate);
        }
        let gain = trace.last().map(|prev| ll - prev);
        trace.push(ll);
        if gain.is_some_and(|g| g < opts.tol) {
            converged = true;
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }

        // M-step
        for (k, comp) in comps.iter_mut().enumerate() {
            let nk: f64 = resp.iter().map(|r| r[k]).sum();
            if !(nk > nf * f64::EPSILON) {
                return Err(Error::FailedToSeparate);
            }
            let mu = resp.iter().zip(values).map(|(r, x)| r[k] * x).sum::<f64>() / nk;
            let var = resp
                .iter()
                .zip(values)
                .map(|(r, x)| r[k] * (x - mu).powi(2))
                .sum::<f64>()
                / nk;
            comp.weight = nk / nf;
            comp.mean = mu;
            comp.std = var.max(opts.var_floor).sqrt();
        }
        let wsum = comps[0].weight + comps[1].weight;
        comps[0].weight /= wsum;
        comps[1].weight = 1.0 - comps[0].weight;
        iterations += 1;
    }

    if comps[0].mean > comps[1].mean {
        comps.swap(0, 1);
    }
    if (comps[1].mean - comps[0].mean).abs() < 1e-9 {
        return Err(Error::FailedToSeparate);
    }
    Ok(GmmFit {
        low: comps[0],
        high: comps[1],
        iterations,
        loglik: *trace.last().unwrap(),
        converged,
        loglik_trace: trace,
    })
}

/// Parameters of two Gaussians, `N(mu1, sigma1^2)` and `N(mu2, sigma2^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPair {
    pub mu1: f64,
    pub sigma1: f64,
    pub mu2: f64,
    pub sigma2: f64,
}

impl GaussianPair {
    pub fn new(mu1: f64, sigma1: f64, mu2: f64, sigma2: f64) -> Self {
        Self {
            mu1,
            sigma1,
            mu2,
            sigma2,
        }
    }

    pub fn density1(&self, x: f64) -> f64 {
        normal_pdf(x, self.mu1, self.sigma1)
    }

    pub fn density2(&self, x: f64) -> f64 {
        normal_pdf(x, self.mu2, self.sigma2)
    }
}

pub fn normal_pdf(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    (-0.5 * z * z - sigma.ln() - LN_SQRT_2PI).exp()
}

/// Standard normal CDF via `erfc`, accurate in both tails.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intersection {
    pub x: f64,
    /// False when no root lies strictly between the means and the root
    /// nearest their midpoint was returned instead.
    pub between_means: bool,
}

/// Where the two densities cross.
///
/// Equal variances give the midpoint. Otherwise the quadratic from equating
/// log-densities is solved; the root strictly between the means is returned
/// if there is one, else the root closest to the midpoint (lower root on a
/// tie) with `between_means = false`.
pub fn gaussian_intersection(p: &GaussianPair) -> Result<Intersection> {
    let GaussianPair {
        mu1,
        sigma1,
        mu2,
        sigma2,
    } = *p;
    if !(sigma1 > 0.0 && sigma2 > 0.0) {
        return Err(Error::InvalidConfig("standard deviations must be positive".into()));
    }
    if mu1 == mu2 && sigma1 == sigma2 {
        return Err(Error::IdenticalDistributions);
    }
    let (lo, hi) = (mu1.min(mu2), mu1.max(mu2));
    let mid = 0.5 * (mu1 + mu2);
    if sigma1 == sigma2 {
        return Ok(Intersection {
            x: mid,
            between_means: true,
        });
    }
    let p1 = 1.0 / (sigma1 * sigma1);
    let p2 = 1.0 / (sigma2 * sigma2);
    // a x^2 + b x + c = 0
    let a = p1 - p2;
    let b = -2.0 * (mu1 * p1 - mu2 * p2);
    let c = mu1 * mu1 * p1 - mu2 * mu2 * p2 - 2.0 * (sigma2 / sigma1).ln();
    let disc = (b * b - 4.0 * a * c).max(0.0);
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    let mut roots = Vec::with_capacity(2);
    if a != 0.0 && q != 0.0 {
        roots.push(q / a);
        roots.push(c / q);
    } else if a != 0.0 {
        // b == 0 and disc == 0
        roots.push(0.0);
    } else if b != 0.0 {
        roots.push(-c / b);
    }
    roots.sort_by(f64::total_cmp);
    if let Some(&x) = roots.iter().find(|&&r| r > lo && r < hi) {
        return Ok(Intersection {
            x,
            between_means: true,
        });
    }
    let x = roots
        .iter()
        .copied()
        .min_by(|r, s| (r - mid).abs().total_cmp(&(s - mid).abs()))
        .ok_or(Error::IdenticalDistributions)?;
    Ok(Intersection {
        x,
        between_means: false,
    })
}

/// Total error of thresholding at `t`: unknown mass below `t` plus known
/// mass above it. Component 1 is known, component 2 unknown.
pub fn classification_error(t: f64, p: &GaussianPair) -> f64 {
    normal_cdf((t - p.mu2) / p.sigma2) + normal_cdf(-(t - p.mu1) / p.sigma1)
}

/// Central finite difference of the intersection with respect to `sigma1`.
pub fn intersection_sensitivity(p: &GaussianPair, h: f64) -> Result<f64> {
    if !(h > 0.0) || h >= p.sigma1 {
        return Err(Error::InvalidStep(h));
    }
    let up = gaussian_intersection(&GaussianPair {
        sigma1: p.sigma1 + h,
        ..*p
    })?;
    let down = gaussian_intersection(&GaussianPair {
        sigma1: p.sigma1 - h,
        ..*p
    })?;
    Ok((up.x - down.x) / (2.0 * h))
}
