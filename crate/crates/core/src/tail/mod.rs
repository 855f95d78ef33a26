//! Threshold-excess inference: exponential and generalized Pareto fits,
//! likelihood-ratio tests between them, a two-period rate comparison, and
//! per-age death probabilities with Wilson intervals.
//!
//! The exponential model is the constant-force-of-mortality hypothesis. It
//! is nested in the GPD at `ξ = 0`, and the GPD with `ξ < 0` has the finite
//! endpoint `u + σ/|ξ|`.
//!
//! Left truncation is supported per sample: a sample that entered
//! observation at excess `entry` contributes the density conditional on
//! surviving to `entry`. Calendar-window (interval) truncation is not
//! modeled.

mod gpd;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::data_io::LifeRecord;

pub use gpd::{log_likelihood as gpd_log_likelihood, SHAPE_BOUND};

/// Smallest sample accepted by the GPD fit.
pub const MIN_GPD_SAMPLES: usize = 10;
/// Smallest sample accepted by the exponential fit.
pub const MIN_EXPONENTIAL_SAMPLES: usize = 2;

/// Two-sided 95% standard normal quantile.
pub const Z_95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TailError {
    #[error("threshold must be positive and finite, got {0}")]
    InvalidThreshold(f64),
    #[error("need at least {needed} excesses, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("excess {value} at position {index} is not positive and finite")]
    NonPositiveExcess { index: usize, value: f64 },
    #[error("entry {entry} at position {index} is negative or not below its excess")]
    InvalidEntry { index: usize, entry: f64 },
    #[error("all excesses are equal; the GPD fit is degenerate")]
    Degenerate,
    #[error("no feasible start point for the GPD likelihood")]
    NoFeasibleStart,
    #[error(
        "GPD fit did not converge after {iterations} iterations \
         (gradient norm {gradient_norm:.3e}, log-likelihood {log_likelihood})"
    )]
    NotConverged {
        iterations: u32,
        gradient_norm: f64,
        log_likelihood: f64,
    },
    #[error("age {0} must be a non-negative whole number")]
    InvalidAge(f64),
    #[error("deaths {deaths} exceed the number at risk {at_risk}")]
    InvalidCounts { deaths: u64, at_risk: u64 },
}

/// One excess over the threshold, optionally left-truncated at `entry`
/// (both measured from the threshold; `entry = 0` means observed from the
/// threshold on).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub excess: f64,
    pub entry: f64,
}

impl Sample {
    pub fn untruncated(excess: f64) -> Self {
        Self { excess, entry: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub low: f64,
    pub high: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.low <= x && x <= self.high
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    Exponential,
    #[serde(rename = "GPD")]
    Gpd,
}

/// A fitted tail model. Exponential fits fill `rate`/`rate_ci`; GPD fits
/// fill `shape`, `scale` and their intervals.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailFit {
    pub threshold: f64,
    pub model_kind: ModelKind,
    pub rate: Option<f64>,
    pub shape: Option<f64>,
    pub scale: Option<f64>,
    pub log_likelihood: f64,
    pub endpoint: Option<f64>,
    pub sample_size: usize,
    pub rate_ci: Option<Interval>,
    pub shape_ci: Option<Interval>,
    pub scale_ci: Option<Interval>,
}

/// Likelihood-ratio statistic and its χ²(1) p-value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LrTest {
    pub statistic: f64,
    pub p_value: f64,
}

/// Excesses `age − threshold` of records dying strictly above `threshold`,
/// in record order. An empty result is not an error.
pub fn excesses(records: &[LifeRecord], threshold: f64) -> Result<Vec<f64>, TailError> {
    check_threshold(threshold)?;
    Ok(records
        .iter()
        .map(|r| r.age_at_death())
        .filter(|&age| age > threshold)
        .map(|age| age - threshold)
        .collect())
}

fn check_threshold(u: f64) -> Result<(), TailError> {
    if u.is_finite() && u > 0.0 {
        Ok(())
    } else {
        Err(TailError::InvalidThreshold(u))
    }
}

fn to_samples(excesses: &[f64]) -> Vec<Sample> {
    excesses.iter().copied().map(Sample::untruncated).collect()
}

fn validate(samples: &[Sample], needed: usize) -> Result<(), TailError> {
    if samples.len() < needed {
        return Err(TailError::TooFewSamples {
            needed,
            got: samples.len(),
        });
    }
    for (index, s) in samples.iter().enumerate() {
        if !(s.excess.is_finite() && s.excess > 0.0) {
            return Err(TailError::NonPositiveExcess { index, value: s.excess });
        }
        if !(s.entry >= 0.0 && s.entry < s.excess) {
            return Err(TailError::InvalidEntry { index, entry: s.entry });
        }
    }
    Ok(())
}

/// Exposure `Σ (x − entry)`; the exponential MLE only needs this and `n`.
fn exposure(samples: &[Sample]) -> f64 {
    samples.iter().map(|s| s.excess - s.entry).sum()
}

fn exponential_log_likelihood(n: f64, rate: f64, total: f64) -> f64 {
    n * rate.ln() - rate * total
}

/// Constant-hazard fit: `λ̂ = n / Σx`, with a 95% interval from the normal
/// approximation on `ln λ` (standard error `1/√n`).
pub fn fit_exponential(excesses: &[f64], threshold: f64) -> Result<TailFit, TailError> {
    fit_exponential_truncated(&to_samples(excesses), threshold)
}

pub fn fit_exponential_truncated(samples: &[Sample], threshold: f64) -> Result<TailFit, TailError> {
    check_threshold(threshold)?;
    validate(samples, MIN_EXPONENTIAL_SAMPLES)?;
    let n = samples.len() as f64;
    let total = exposure(samples);
    let rate = n / total;
    let half = Z_95 / n.sqrt();
    Ok(TailFit {
        threshold,
        model_kind: ModelKind::Exponential,
        rate: Some(rate),
        shape: None,
        scale: None,
        log_likelihood: exponential_log_likelihood(n, rate, total),
        endpoint: None,
        sample_size: samples.len(),
        rate_ci: Some(Interval {
            low: rate * (-half).exp(),
            high: rate * half.exp(),
        }),
        shape_ci: None,
        scale_ci: None,
    })
}

/// Maximum-likelihood GPD fit with profile-likelihood 95% intervals for
/// both parameters. Refuses fewer than 10 samples.
pub fn fit_gpd(excesses: &[f64], threshold: f64) -> Result<TailFit, TailError> {
    fit_gpd_truncated(&to_samples(excesses), threshold)
}

pub fn fit_gpd_truncated(samples: &[Sample], threshold: f64) -> Result<TailFit, TailError> {
    check_threshold(threshold)?;
    let opt = gpd_optimum(samples)?;
    Ok(TailFit {
        shape_ci: Some(gpd::shape_interval(samples, &opt)),
        scale_ci: Some(gpd::scale_interval(samples, &opt)),
        ..gpd_fit(&opt, threshold, samples.len())
    })
}

/// Point estimates only, without the profile intervals. For replication
/// experiments where the intervals would dominate the cost.
pub fn fit_gpd_point(excesses: &[f64], threshold: f64) -> Result<TailFit, TailError> {
    check_threshold(threshold)?;
    let opt = gpd_optimum(&to_samples(excesses))?;
    Ok(gpd_fit(&opt, threshold, excesses.len()))
}

fn gpd_fit(opt: &gpd::Optimum, threshold: f64, sample_size: usize) -> TailFit {
    TailFit {
        threshold,
        model_kind: ModelKind::Gpd,
        rate: None,
        shape: Some(opt.xi),
        scale: Some(opt.sigma),
        log_likelihood: opt.log_likelihood,
        endpoint: (opt.xi < 0.0).then(|| threshold + opt.sigma / -opt.xi),
        sample_size,
        rate_ci: None,
        shape_ci: None,
        scale_ci: None,
    }
}

fn gpd_optimum(samples: &[Sample]) -> Result<gpd::Optimum, TailError> {
    validate(samples, MIN_GPD_SAMPLES)?;
    let first = samples[0].excess;
    if samples.iter().all(|s| s.excess == first) {
        return Err(TailError::Degenerate);
    }
    gpd::maximize(samples)
}

fn chi2_1_sf(statistic: f64) -> f64 {
    let chi2 = ChiSquared::new(1.0).expect("one degree of freedom");
    chi2.sf(statistic)
}

/// `D = 2(ℓ_GPD − ℓ_Exp)` against χ²(1). `ξ = 0` is interior to the shape
/// range, so no boundary correction applies.
pub fn lr_test_exp_vs_gpd(excesses: &[f64]) -> Result<LrTest, TailError> {
    lr_test_exp_vs_gpd_truncated(&to_samples(excesses))
}

pub fn lr_test_exp_vs_gpd_truncated(samples: &[Sample]) -> Result<LrTest, TailError> {
    let opt = gpd_optimum(samples)?;
    let n = samples.len() as f64;
    let total = exposure(samples);
    let exp_ll = exponential_log_likelihood(n, n / total, total);
    // The exponential MLE is one of the GPD start points, so any negative
    // difference is optimizer round-off.
    let statistic = (2.0 * (opt.log_likelihood - exp_ll)).max(0.0);
    Ok(LrTest {
        statistic,
        p_value: chi2_1_sf(statistic),
    })
}

/// Likelihood-ratio test of a common exponential rate for two samples
/// against separate rates.
pub fn split_period_test(excesses_a: &[f64], excesses_b: &[f64]) -> Result<LrTest, TailError> {
    let a = to_samples(excesses_a);
    let b = to_samples(excesses_b);
    validate(&a, MIN_EXPONENTIAL_SAMPLES)?;
    validate(&b, MIN_EXPONENTIAL_SAMPLES)?;
    let (na, sa) = (a.len() as f64, exposure(&a));
    let (nb, sb) = (b.len() as f64, exposure(&b));
    let pooled = (na + nb) / (sa + sb);
    let statistic = (2.0 * (na * (na / sa / pooled).ln() + nb * (nb / sb / pooled).ln())).max(0.0);
    Ok(LrTest {
        statistic,
        p_value: chi2_1_sf(statistic),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HazardEstimate {
    pub age: u32,
    pub deaths: u64,
    pub at_risk: u64,
    pub q_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Wilson score 95% interval for `deaths / at_risk`.
pub fn wilson_interval(deaths: u64, at_risk: u64) -> Result<Option<Interval>, TailError> {
    if deaths > at_risk {
        return Err(TailError::InvalidCounts { deaths, at_risk });
    }
    if at_risk == 0 {
        return Ok(None);
    }
    let n = at_risk as f64;
    let p = deaths as f64 / n;
    let z2 = Z_95 * Z_95;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = Z_95 / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    // The closed form is exact at the edges; rounding may not be.
    let low = if deaths == 0 { 0.0 } else { (center - half).clamp(0.0, p) };
    let high = if deaths == at_risk { 1.0 } else { (center + half).clamp(p, 1.0) };
    Ok(Some(Interval { low, high }))
}

/// For each integer age `x`: `n_x` records alive at `x`, `d_x` of them
/// dying before `x + 1`, and `q̂ = d_x/n_x` with its Wilson interval.
/// Ages nobody reached give `None`.
pub fn hazard_by_age(records: &[LifeRecord], ages: &[f64]) -> Result<Vec<Option<HazardEstimate>>, TailError> {
    let mut lifetimes: Vec<f64> = records.iter().map(|r| r.age_at_death()).collect();
    lifetimes.sort_by(f64::total_cmp);
    let reached = |x: f64| (lifetimes.len() - lifetimes.partition_point(|&a| a < x)) as u64;
    ages.iter()
        .map(|&x| {
            if !(x >= 0.0 && x.fract() == 0.0 && x <= u32::MAX as f64) {
                return Err(TailError::InvalidAge(x));
            }
            let at_risk = reached(x);
            let deaths = at_risk - reached(x + 1.0);
            Ok(wilson_interval(deaths, at_risk)?.map(|ci| HazardEstimate {
                age: x as u32,
                deaths,
                at_risk,
                q_hat: deaths as f64 / at_risk as f64,
                ci_low: ci.low,
                ci_high: ci.high,
            }))
        })
        .collect()
}
