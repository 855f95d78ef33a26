//! Exceedance probabilities for individuals and cohorts, waiting times for
//! record ages, and the max-of-exponentials MRAD overlay.
//!
//! Individuals are independent. Cohort probabilities are accumulated as
//! `Σ count·ln(1 − p)` and mapped back with `expm1`, which keeps the
//! answer accurate when `p` is around 1e-13.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hazard::{HazardError, HazardModel};

/// Supercentenarian threshold, the base of the MRAD overlay.
pub const SUPERCENTENARIAN_AGE: f64 = 110.0;

/// Calendar year used when a plan is built without one.
pub const DEFAULT_START_YEAR: i32 = 2000;

/// Harmonic numbers are summed directly up to this `n`.
const HARMONIC_DIRECT_MAX: u64 = 1_000_000;
const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SurvivalError {
    #[error(transparent)]
    Hazard(#[from] HazardError),
    #[error("target age {target} is below the base age {base}")]
    TargetBelowBase { target: f64, base: f64 },
    #[error("count must be at least 1")]
    ZeroCount,
    #[error("mean excess must be positive and finite, got {0}")]
    InvalidMeanExcess(f64),
    #[error("age {0} is below the overlay base age 110")]
    AgeBelowOverlayBase(f64),
    #[error("invalid exposure plan: {0}")]
    InvalidPlan(String),
}

/// Individuals reaching `count` in calendar `year`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct YearCount {
    pub year: i32,
    pub count: u64,
}

/// Who is exposed: per calendar year, how many individuals reach the base
/// age (the yearly `n_t` of the MRAD literature).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposurePlan {
    base_age: f64,
    per_year_count: Vec<YearCount>,
}

impl ExposurePlan {
    pub fn new(base_age: f64, per_year_count: Vec<YearCount>) -> Result<Self, SurvivalError> {
        if !base_age.is_finite() || base_age < 0.0 {
            return Err(SurvivalError::InvalidPlan(format!("base age {base_age}")));
        }
        if per_year_count.is_empty() {
            return Err(SurvivalError::InvalidPlan("horizon must cover at least one year".into()));
        }
        if per_year_count.windows(2).any(|w| w[1].year <= w[0].year) {
            return Err(SurvivalError::InvalidPlan("years must be strictly increasing".into()));
        }
        Ok(Self {
            base_age,
            per_year_count,
        })
    }

    /// One individual in one year.
    pub fn single(base_age: f64) -> Result<Self, SurvivalError> {
        Self::uniform(base_age, DEFAULT_START_YEAR, 1, 1)
    }

    /// `count` individuals in each of `years` consecutive years.
    pub fn uniform(base_age: f64, start_year: i32, years: u32, count: u64) -> Result<Self, SurvivalError> {
        let rows = (0..years as i32)
            .map(|i| YearCount {
                year: start_year + i,
                count,
            })
            .collect();
        Self::new(base_age, rows)
    }

    pub fn base_age(&self) -> f64 {
        self.base_age
    }

    pub fn per_year_count(&self) -> &[YearCount] {
        &self.per_year_count
    }

    pub fn horizon_years(&self) -> usize {
        self.per_year_count.len()
    }

    pub fn total_individuals(&self) -> u64 {
        self.per_year_count.iter().map(|c| c.count).sum()
    }

    /// Same years, every count multiplied by `factor`.
    pub fn scaled(&self, factor: u64) -> Self {
        Self {
            base_age: self.base_age,
            per_year_count: self
                .per_year_count
                .iter()
                .map(|c| YearCount {
                    year: c.year,
                    count: c.count * factor,
                })
                .collect(),
        }
    }
}

/// Probability that one individual alive at `base_age` survives past
/// `target_age`.
pub fn individual_exceedance(model: &HazardModel, base_age: f64, target_age: f64) -> Result<f64, SurvivalError> {
    Ok(model.cumulative_survival(base_age, target_age)?)
}

fn log_cohort_none(log_individual: f64, individuals: u64) -> f64 {
    // ln P(nobody exceeds) = N·ln(1 − p)
    if individuals == 0 {
        return 0.0;
    }
    individuals as f64 * (-log_individual.exp()).ln_1p()
}

/// Probability that at least one individual in `plan` survives past
/// `target_age`: `1 − Π (1 − p_i)^{count_i}`.
pub fn cohort_exceedance(model: &HazardModel, plan: &ExposurePlan, target_age: f64) -> Result<f64, SurvivalError> {
    Ok(-log_cohort_none(log_individual(model, plan.base_age, target_age)?, plan.total_individuals()).exp_m1())
}

/// `ln` of [`cohort_exceedance`], accurate far into the tail.
pub fn log_cohort_exceedance(model: &HazardModel, plan: &ExposurePlan, target_age: f64) -> Result<f64, SurvivalError> {
    let li = log_individual(model, plan.base_age, target_age)?;
    let n = plan.total_individuals();
    if n == 0 || li == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    let none = log_cohort_none(li, n);
    // ln(1 − e^{none}); for tiny |none| use ln(−expm1(none)) directly.
    Ok(if none > -std::f64::consts::LN_2 {
        (-none.exp_m1()).ln()
    } else {
        (-none.exp()).ln_1p()
    })
}

fn log_individual(model: &HazardModel, base_age: f64, target_age: f64) -> Result<f64, SurvivalError> {
    if target_age < base_age {
        return Err(SurvivalError::TargetBelowBase {
            target: target_age,
            base: base_age,
        });
    }
    Ok(model.log_survival(base_age, target_age)?)
}

/// Expected number of years until some year's `yearly_count` individuals
/// produce a survivor past `target_age`: `1 / p_year`, infinite when
/// `p_year = 0`.
pub fn expected_waiting_time(
    model: &HazardModel,
    base_age: f64,
    yearly_count: u64,
    target_age: f64,
) -> Result<f64, SurvivalError> {
    if yearly_count == 0 {
        return Err(SurvivalError::ZeroCount);
    }
    let plan = ExposurePlan::uniform(base_age, DEFAULT_START_YEAR, 1, yearly_count)?;
    let p = cohort_exceedance(model, &plan, target_age)?;
    Ok(if p == 0.0 { f64::INFINITY } else { 1.0 / p })
}

/// Largest yearly count whose per-year exceedance of `target_age` stays at
/// or below `max_probability`. Zero when even one individual is too many.
pub fn calibrate_yearly_count(
    model: &HazardModel,
    base_age: f64,
    target_age: f64,
    max_probability: f64,
) -> Result<u64, SurvivalError> {
    let li = log_individual(model, base_age, target_age)?;
    if li == f64::NEG_INFINITY {
        return Ok(u64::MAX);
    }
    let per_person = (-li.exp()).ln_1p();
    if per_person == 0.0 {
        return Ok(u64::MAX);
    }
    let budget = (-max_probability).ln_1p();
    let mut n = (budget / per_person).floor().max(0.0) as u64;
    // Guard the floor against rounding in either direction.
    let p = |n: u64| -log_cohort_none(li, n).exp_m1();
    while n > 0 && p(n) > max_probability {
        n -= 1;
    }
    while p(n + 1) <= max_probability {
        n += 1;
    }
    Ok(n)
}

/// `H_n = Σ_{i=1}^{n} 1/i`; exact summation up to 10⁶ terms, asymptotic
/// expansion beyond.
pub fn harmonic(n: u64) -> f64 {
    if n <= HARMONIC_DIRECT_MAX {
        // Smallest terms first.
        (1..=n).rev().map(|i| 1.0 / i as f64).sum()
    } else {
        let x = n as f64;
        x.ln() + EULER_GAMMA + 1.0 / (2.0 * x) - 1.0 / (12.0 * x * x)
    }
}

fn check_overlay(n: u64, mean_excess: f64) -> Result<(), SurvivalError> {
    if n == 0 {
        return Err(SurvivalError::ZeroCount);
    }
    if !(mean_excess.is_finite() && mean_excess > 0.0) {
        return Err(SurvivalError::InvalidMeanExcess(mean_excess));
    }
    Ok(())
}

/// Mean of `110 + max` of `n` exponential excesses with mean `mean_excess`:
/// `110 + μ·H_n`.
pub fn max_exponential_mean(n: u64, mean_excess: f64) -> Result<f64, SurvivalError> {
    check_overlay(n, mean_excess)?;
    Ok(SUPERCENTENARIAN_AGE + mean_excess * harmonic(n))
}

/// CDF of the same maximum: `(1 − e^{−(age−110)/μ})^n`.
pub fn max_exponential_cdf(n: u64, mean_excess: f64, age: f64) -> Result<f64, SurvivalError> {
    check_overlay(n, mean_excess)?;
    if age.is_nan() || age < SUPERCENTENARIAN_AGE {
        return Err(SurvivalError::AgeBelowOverlayBase(age));
    }
    let single = -(-(age - SUPERCENTENARIAN_AGE) / mean_excess).exp_m1();
    Ok(single.powf(n as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plateau_survival(s: f64) -> HazardModel {
        HazardModel::plateau_survival(s, 110.0).unwrap()
    }

    #[test]
    fn individual_plateau_047_survival() {
        let p = individual_exceedance(&plateau_survival(0.47), 110.0, 125.0).unwrap();
        assert!((p - 0.47f64.powi(15)).abs() < 1e-18);
        assert!((p - 1.21e-5).abs() < 0.01e-5);
        assert_eq!(individual_exceedance(&plateau_survival(0.47), 110.0, 110.0).unwrap(), 1.0);
        let hard = HazardModel::hard_limit(115.0).unwrap();
        assert_eq!(individual_exceedance(&hard, 110.0, 120.0).unwrap(), 0.0);
        assert!(individual_exceedance(&hard, 120.0, 110.0).is_err());
    }

    #[test]
    fn cohort_closed_form() {
        // Individual probability 0.53^15 ≈ 7.31e-5, 10,000 individuals.
        let m = HazardModel::plateau(0.47, 110.0).unwrap();
        let plan = ExposurePlan::uniform(110.0, 2000, 10, 1000).unwrap();
        let p = cohort_exceedance(&m, &plan, 125.0).unwrap();
        let single = 0.53f64.powf(15.0);
        let expect = 1.0 - (1.0 - single).powi(10_000);
        assert!((p - expect).abs() < 1e-12, "{p} vs {expect}");
        assert!((p - 0.5184).abs() < 5e-4);
    }

    #[test]
    fn empty_plan_and_single() {
        let m = plateau_survival(0.47);
        let empty = ExposurePlan::uniform(110.0, 2000, 3, 0).unwrap();
        assert_eq!(cohort_exceedance(&m, &empty, 120.0).unwrap(), 0.0);
        let single = ExposurePlan::single(110.0).unwrap();
        let c = cohort_exceedance(&m, &single, 121.3).unwrap();
        let i = individual_exceedance(&m, 110.0, 121.3).unwrap();
        assert!((c / i - 1.0).abs() < 1e-12);
        assert!(cohort_exceedance(&m, &single, 100.0).is_err());
    }

    #[test]
    fn repeated_bernoulli() {
        // k years with one individual each, constant p.
        let m = plateau_survival(0.487);
        let plan = ExposurePlan::uniform(110.0, 2000, 7, 1).unwrap();
        let p = individual_exceedance(&m, 110.0, 111.0).unwrap();
        let c = cohort_exceedance(&m, &plan, 111.0).unwrap();
        assert!((c - (1.0 - (1.0 - p).powi(7))).abs() < 1e-14);
        // Ten consecutive wins at 48.7%.
        let ten = individual_exceedance(&m, 110.0, 120.0).unwrap();
        assert!((ten - 0.487f64.powi(10)).abs() < 1e-17);
        assert!((ten - 7.5e-4).abs() < 0.01e-4);
    }

    #[test]
    fn tiny_probabilities_keep_precision() {
        let m = plateau_survival(0.5);
        let plan = ExposurePlan::uniform(110.0, 2000, 1, 3).unwrap();
        let p = cohort_exceedance(&m, &plan, 150.0).unwrap();
        let single = 2f64.powi(-40);
        assert!((p / (3.0 * single) - 1.0).abs() < 1e-11);
        let lp = log_cohort_exceedance(&m, &plan, 150.0).unwrap();
        assert!((lp - p.ln()).abs() < 1e-12);
    }

    #[test]
    fn log_cohort_matches_plain_near_one() {
        let m = plateau_survival(0.9);
        let plan = ExposurePlan::uniform(110.0, 2000, 1, 50).unwrap();
        for t in [110.0, 110.5, 112.0, 120.0, 140.0] {
            let p = cohort_exceedance(&m, &plan, t).unwrap();
            let lp = log_cohort_exceedance(&m, &plan, t).unwrap();
            assert!((lp.exp() - p).abs() < 1e-14, "{t}: {p} {lp}");
        }
    }

    #[test]
    fn waiting_time() {
        let m = plateau_survival(0.5);
        // One individual at 110, target 110: certain, 1 year.
        assert_eq!(expected_waiting_time(&m, 110.0, 1, 110.0).unwrap(), 1.0);
        let hard = HazardModel::hard_limit(115.0).unwrap();
        assert_eq!(expected_waiting_time(&hard, 110.0, 100, 116.0).unwrap(), f64::INFINITY);
        assert!(expected_waiting_time(&m, 110.0, 0, 120.0).is_err());
        // p_year = 2^-10 for one individual to 120.
        assert_eq!(expected_waiting_time(&m, 110.0, 1, 120.0).unwrap(), 1024.0);
    }

    #[test]
    fn calibration_hits_budget() {
        let m = plateau_survival(0.47);
        let n = calibrate_yearly_count(&m, 110.0, 125.0, 1e-4).unwrap();
        let p = |n| {
            cohort_exceedance(&m, &ExposurePlan::uniform(110.0, 2000, 1, n).unwrap(), 125.0).unwrap()
        };
        assert!(n >= 1);
        assert!(p(n) <= 1e-4);
        assert!(p(n + 1) > 1e-4);
    }

    #[test]
    fn harmonic_values() {
        assert_eq!(harmonic(1), 1.0);
        assert!((harmonic(5) - 137.0 / 60.0).abs() < 1e-15);
        // Direct sum and expansion agree at the switch-over.
        let direct = harmonic(HARMONIC_DIRECT_MAX);
        let x = HARMONIC_DIRECT_MAX as f64;
        let asym = x.ln() + EULER_GAMMA + 1.0 / (2.0 * x) - 1.0 / (12.0 * x * x);
        assert!((direct - asym).abs() < 1e-12);
    }

    #[test]
    fn overlay_mean() {
        assert_eq!(max_exponential_mean(1, 1.7).unwrap(), 111.7);
        let five = max_exponential_mean(5, 1.31).unwrap();
        assert!((five - (110.0 + 1.31 * 137.0 / 60.0)).abs() < 1e-12);
        assert!((five - 112.99).abs() < 0.01);
        let thirty_five = max_exponential_mean(35, 1.31).unwrap();
        assert!((thirty_five - 115.432).abs() < 1e-3);
        assert!(max_exponential_mean(0, 1.31).is_err());
        assert!(max_exponential_mean(3, 0.0).is_err());
        for n in 1..50 {
            assert!(max_exponential_mean(n + 1, 1.31).unwrap() > max_exponential_mean(n, 1.31).unwrap());
        }
    }

    #[test]
    fn overlay_cdf() {
        assert_eq!(max_exponential_cdf(1, 1.0, 110.0).unwrap(), 0.0);
        assert!((max_exponential_cdf(1, 1.0, 111.0).unwrap() - (1.0 - (-1f64).exp())).abs() < 1e-15);
        let v = max_exponential_cdf(10, 1.31, 115.0).unwrap();
        assert!((v - (1.0 - (-5.0f64 / 1.31).exp()).powi(10)).abs() < 1e-14);
        assert!((v - 0.800).abs() < 1e-3);
        assert!(max_exponential_cdf(10, 1.31, 109.0).is_err());
        assert!(max_exponential_cdf(10, 1.31, 1e6).unwrap() == 1.0);
    }

    #[test]
    fn plan_validation() {
        assert!(ExposurePlan::new(110.0, vec![]).is_err());
        assert!(ExposurePlan::new(
            110.0,
            vec![YearCount { year: 2001, count: 1 }, YearCount { year: 2000, count: 1 }]
        )
        .is_err());
        let p = ExposurePlan::uniform(110.0, 1990, 5, 3).unwrap();
        assert_eq!(p.horizon_years(), 5);
        assert_eq!(p.total_individuals(), 15);
        assert_eq!(p.scaled(2).total_individuals(), 30);
    }
}
