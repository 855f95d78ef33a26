//! Seeded Monte Carlo lifetimes under any hazard model.
//!
//! Each individual walks forward one year of age at a time and dies in that
//! year with probability `q`. A partial year of length `ℓ` uses
//! `1 − (1 − q)^ℓ`, and the time of death inside the year follows the same
//! constant-within-year hazard, so simulated survival matches
//! `cumulative_survival` at fractional ages too.
//!
//! Streams: replication `r`, individual `i` draws from Philox4x64-10 with key
//! `(seed, r)` and counter `(i, block)`. Individuals are numbered across the
//! whole plan in year order. Output never depends on thread count.

use chrono::{Duration, NaiveDate};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::data_io::{DataError, LifeRecord, DAYS_PER_YEAR};
use crate::hazard::{HazardModel, YearSegments};
use crate::rng::Stream;
use crate::survival::{ExposurePlan, SurvivalError, SUPERCENTENARIAN_AGE};
use crate::trend::{yearly_extremes, ExtremesOptions, TrendError, YearlyExtremeSeries};

/// Lifetimes are cut at `base_age + AGE_CAP` (recorded as a death there);
/// only reachable for Decline models whose survival never reaches zero.
pub const AGE_CAP: f64 = 1000.0;

/// Fewest replications accepted by [`empirical_exceedance`].
pub const MIN_EXCEEDANCE_REPLICATIONS: u64 = 100;

/// Country label on simulated records.
pub const SIMULATED_COUNTRY: &str = "SIM";

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("replications must be at least {needed}, got {got}")]
    TooFewReplications { needed: u64, got: u64 },
    #[error(transparent)]
    Survival(#[from] SurvivalError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Trend(#[from] TrendError),
    #[error("simulated date out of range for year {0}")]
    DateRange(i32),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationConfig {
    pub model: HazardModel,
    pub plan: ExposurePlan,
    pub seed: u64,
    pub replications: u64,
}

impl SimulationConfig {
    pub fn new(model: HazardModel, plan: ExposurePlan, seed: u64, replications: u64) -> Result<Self, SimulationError> {
        if replications == 0 {
            return Err(SimulationError::TooFewReplications { needed: 1, got: 0 });
        }
        Ok(Self {
            model,
            plan,
            seed,
            replications,
        })
    }
}

/// Age at death of one individual alive at `base`, or `None` if still
/// alive at `stop`.
fn walk(model: &HazardModel, base: f64, stop: f64, stream: &mut Stream) -> Option<f64> {
    for seg in YearSegments::new(model, base, stop) {
        if seg.q <= 0.0 {
            continue;
        }
        let u = stream.uniform();
        if seg.q >= 1.0 {
            return Some(seg.start);
        }
        let log_keep = (-seg.q).ln_1p();
        let dies = -(seg.length * log_keep).exp_m1();
        if u < dies {
            let f = (-u).ln_1p() / log_keep;
            return Some(seg.start + f.min(seg.length));
        }
    }
    None
}

/// Age at death of individual `index` in replication `replication`.
pub fn draw_lifetime(model: &HazardModel, base_age: f64, seed: u64, replication: u64, index: u64) -> f64 {
    let cap = base_age + AGE_CAP;
    let mut s = Stream::new(seed, replication, index);
    walk(model, base_age, cap, &mut s).unwrap_or(cap)
}

/// Whether individual `index` survives from `base_age` to `target_age`.
/// Uses the same stream as [`draw_lifetime`] and stops at the target.
fn survives_to(model: &HazardModel, base_age: f64, target_age: f64, seed: u64, replication: u64, index: u64) -> bool {
    let mut s = Stream::new(seed, replication, index);
    walk(model, base_age, target_age, &mut s).is_none()
}

fn record(id: String, year: i32, age: f64, day_draw: f64) -> Result<LifeRecord, SimulationError> {
    let jan1 = NaiveDate::from_ymd_opt(year, 1, 1).ok_or(SimulationError::DateRange(year))?;
    let days_in_year = if jan1.leap_year() { 366 } else { 365 };
    let death = jan1 + Duration::days((day_draw * days_in_year as f64) as i64);
    // Rounding up keeps the recorded age at or above the simulated one.
    let birth = death
        .checked_sub_signed(Duration::days((age * DAYS_PER_YEAR).ceil() as i64))
        .ok_or(SimulationError::DateRange(year))?;
    Ok(LifeRecord::new(id, birth, death, SIMULATED_COUNTRY, true)?)
}

fn replication_records(config: &SimulationConfig, replication: u64) -> Result<Vec<LifeRecord>, SimulationError> {
    let base = config.plan.base_age();
    let mut out = Vec::with_capacity(config.plan.total_individuals() as usize);
    let mut index = 0u64;
    for yc in config.plan.per_year_count() {
        for k in 0..yc.count {
            let cap = base + AGE_CAP;
            let mut s = Stream::new(config.seed, replication, index);
            let age = walk(&config.model, base, cap, &mut s).unwrap_or(cap);
            // The calendar day comes after the lifetime draws on the same
            // stream, so lifetimes agree with `draw_lifetime`.
            let day = s.uniform();
            out.push(record(format!("r{replication}-{}-{k}", yc.year), yc.year, age, day)?);
            index += 1;
        }
    }
    Ok(out)
}

/// Records for every individual of every replication, replication-major,
/// each dated in its plan year.
pub fn simulate_lifetimes(config: &SimulationConfig) -> Result<Vec<LifeRecord>, SimulationError> {
    let per_rep: Vec<Vec<LifeRecord>> = (0..config.replications)
        .into_par_iter()
        .map(|r| replication_records(config, r))
        .collect::<Result<_, _>>()?;
    Ok(per_rep.into_iter().flatten().collect())
}

/// One MRAD series per replication, built from that replication's records
/// counting every simulated death (the plan's base age is the threshold).
pub fn simulate_mrad_series(config: &SimulationConfig) -> Result<Vec<YearlyExtremeSeries>, SimulationError> {
    let options = ExtremesOptions {
        min_age: config.plan.base_age().min(SUPERCENTENARIAN_AGE),
        ..Default::default()
    };
    (0..config.replications)
        .into_par_iter()
        .map(|r| {
            let recs = replication_records(config, r)?;
            Ok(yearly_extremes(&recs, &options)?)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExceedanceEstimate {
    pub estimate: f64,
    pub standard_error: f64,
    pub hits: u64,
    pub replications: u64,
}

/// Share of replications in which some individual survives to
/// `target_age`, with binomial standard error.
pub fn empirical_exceedance(config: &SimulationConfig, target_age: f64) -> Result<ExceedanceEstimate, SimulationError> {
    if config.replications < MIN_EXCEEDANCE_REPLICATIONS {
        return Err(SimulationError::TooFewReplications {
            needed: MIN_EXCEEDANCE_REPLICATIONS,
            got: config.replications,
        });
    }
    let base = config.plan.base_age();
    if !(target_age >= base) {
        return Err(SurvivalError::TargetBelowBase {
            target: target_age,
            base,
        }
        .into());
    }
    let n = config.plan.total_individuals();
    let hits: u64 = (0..config.replications)
        .into_par_iter()
        .map(|r| u64::from((0..n).any(|i| survives_to(&config.model, base, target_age, config.seed, r, i))))
        .sum();
    let reps = config.replications as f64;
    let p = hits as f64 / reps;
    Ok(ExceedanceEstimate {
        estimate: p,
        standard_error: (p * (1.0 - p) / reps).sqrt(),
        hits,
        replications: config.replications,
    })
}

/// One GPD excess by inversion; `ξ = 0` gives the exponential.
pub fn gpd_excess(stream: &mut Stream, shape: f64, scale: f64) -> f64 {
    let log_tail = stream.uniform_open0().ln();
    if shape == 0.0 {
        -scale * log_tail
    } else {
        scale / shape * (-shape * log_tail).exp_m1()
    }
}

/// Monte Carlo mean of `110 + max` of `n` exponential excesses, with its
/// standard error. A brute-force check on the harmonic-number formula.
pub fn max_exponential_monte_carlo(n: u64, mean_excess: f64, replications: u64, seed: u64) -> (f64, f64) {
    let maxima: Vec<f64> = (0..replications)
        .into_par_iter()
        .map(|r| {
            let mut s = Stream::new(seed, r, 0);
            (0..n).map(|_| s.exponential(mean_excess)).fold(0.0, f64::max)
        })
        .collect();
    // Summed in index order so the result does not depend on thread count.
    let sum: f64 = maxima.iter().sum();
    let sum_sq: f64 = maxima.iter().map(|m| m * m).sum();
    let reps = replications as f64;
    let mean = sum / reps;
    let var = (sum_sq / reps - mean * mean).max(0.0) * reps / (reps - 1.0).max(1.0);
    (SUPERCENTENARIAN_AGE + mean, (var / reps).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::survival::{cohort_exceedance, harmonic, YearCount};

    fn cfg(model: HazardModel, plan: ExposurePlan, seed: u64, reps: u64) -> SimulationConfig {
        SimulationConfig::new(model, plan, seed, reps).unwrap()
    }

    #[test]
    fn hard_limit_is_never_passed() {
        let m = HazardModel::hard_limit(115.0).unwrap();
        let c = cfg(m, ExposurePlan::uniform(110.0, 2000, 5, 400).unwrap(), 1, 1);
        let recs = simulate_lifetimes(&c).unwrap();
        assert_eq!(recs.len(), 2000);
        // Date rounding adds under a day.
        assert!(recs.iter().all(|r| r.age_at_death() <= 115.0 + 1.0 / 365.0));
        assert!(recs.iter().all(|r| r.age_at_death() >= 110.0));
        assert_eq!(empirical_exceedance(&cfg(c.model.clone(), c.plan.clone(), 1, 100), 115.5).unwrap().estimate, 0.0);
    }

    #[test]
    fn plateau_binomial_oracle() {
        let m = HazardModel::plateau_survival(0.5, 110.0).unwrap();
        let n = 1_000_000u64;
        let reached = (0..n)
            .into_par_iter()
            .filter(|&i| draw_lifetime(&m, 110.0, 2024, 0, i) >= 120.0)
            .count() as f64;
        let p = 0.5f64.powi(10);
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((reached / n as f64 - p).abs() <= 3.0 * se, "{} vs {p}", reached / n as f64);
    }

    #[test]
    fn determinism_and_seed_sensitivity() {
        let m = HazardModel::plateau_survival(0.47, 110.0).unwrap();
        let plan = ExposurePlan::uniform(110.0, 1990, 3, 20).unwrap();
        let a = simulate_lifetimes(&cfg(m.clone(), plan.clone(), 7, 2)).unwrap();
        let b = simulate_lifetimes(&cfg(m.clone(), plan.clone(), 7, 2)).unwrap();
        assert_eq!(a, b);
        let c = simulate_lifetimes(&cfg(m, plan, 8, 2)).unwrap();
        assert_ne!(a, c);
        assert_eq!(a[0].id, "r0-1990-0");
        assert_eq!(a[60].id, "r1-1990-0");
    }

    #[test]
    fn records_match_stream_lifetimes() {
        let m = HazardModel::plateau_survival(0.47, 110.0).unwrap();
        let plan = ExposurePlan::uniform(110.0, 2001, 2, 3).unwrap();
        let recs = simulate_lifetimes(&cfg(m.clone(), plan, 99, 1)).unwrap();
        for (i, r) in recs.iter().enumerate() {
            let age = draw_lifetime(&m, 110.0, 99, 0, i as u64);
            assert!(r.age_at_death() >= age && r.age_at_death() - age < 1.0 / 365.0);
            assert_eq!(r.death_year(), if i < 3 { 2001 } else { 2002 });
        }
    }

    #[test]
    fn single_individual_series() {
        let m = HazardModel::plateau_survival(0.47, 110.0).unwrap();
        let c = cfg(m, ExposurePlan::single(110.0).unwrap(), 3, 1);
        let s = simulate_mrad_series(&c).unwrap();
        let recs = simulate_lifetimes(&c).unwrap();
        assert_eq!(s[0].rows.len(), 1);
        assert_eq!(s[0].rows[0].mrad, recs[0].age_at_death());
    }

    #[test]
    fn exceedance_matches_analytic() {
        let m = HazardModel::plateau_survival(0.47, 110.0).unwrap();
        let plan = ExposurePlan::uniform(110.0, 2000, 2, 5).unwrap();
        let c = cfg(m.clone(), plan.clone(), 11, 20_000);
        for target in [110.0, 112.5, 114.0] {
            let e = empirical_exceedance(&c, target).unwrap();
            let p = cohort_exceedance(&m, &plan, target).unwrap();
            if target == 110.0 {
                assert_eq!(e.estimate, 1.0);
            } else {
                assert!((e.estimate - p).abs() <= 4.0 * e.standard_error, "{target}: {} vs {p}", e.estimate);
            }
        }
        assert!(empirical_exceedance(&cfg(m, plan, 1, 99), 112.0).is_err());
    }

    #[test]
    fn plateau_excess_is_exponential() {
        // Constant within-year hazard makes plateau excesses exactly
        // exponential with mean −1/ln(s).
        let m = HazardModel::plateau_survival(0.47, 110.0).unwrap();
        let n = 200_000u64;
        let mean = (0..n).map(|i| draw_lifetime(&m, 110.0, 5, 0, i) - 110.0).sum::<f64>() / n as f64;
        let mu = -1.0 / 0.47f64.ln();
        assert!((mean - mu).abs() < 4.0 * mu / (n as f64).sqrt());
    }

    #[test]
    fn growing_plan_raises_mrad_by_harmonic_gap() {
        let m = HazardModel::plateau_survival(0.47, 110.0).unwrap();
        let mu = -1.0 / 0.47f64.ln();
        let counts = [5u64, 8, 12, 15, 18, 22, 25, 28, 32, 35];
        let plan = ExposurePlan::new(
            110.0,
            counts
                .iter()
                .enumerate()
                .map(|(i, &count)| YearCount {
                    year: 1985 + i as i32,
                    count,
                })
                .collect(),
        )
        .unwrap();
        let series = simulate_mrad_series(&cfg(m, plan, 21, 2000)).unwrap();
        let mean_at = |idx: usize| series.iter().map(|s| s.rows[idx].mrad).sum::<f64>() / series.len() as f64;
        let rise = mean_at(9) - mean_at(0);
        let expect = mu * (harmonic(35) - harmonic(5));
        assert!((expect - 2.468).abs() < 1e-3);
        assert!((rise - expect).abs() < 0.25, "{rise} vs {expect}");
    }

    #[test]
    fn stationary_plateau_mrad_level() {
        let m = HazardModel::plateau_survival(0.47, 110.0).unwrap();
        let plan = ExposurePlan::uniform(110.0, 1980, 30, 35).unwrap();
        let series = simulate_mrad_series(&cfg(m, plan, 4, 500)).unwrap();
        let all: Vec<f64> = series.iter().flat_map(|s| s.rows.iter().map(|r| r.mrad)).collect();
        let mean = all.iter().sum::<f64>() / all.len() as f64;
        assert!((114.0..=117.0).contains(&mean), "{mean}");
    }

    #[test]
    fn decline_hits_the_cap() {
        // Strong decline: survival stays positive forever.
        let m = HazardModel::decline(2.0, 110.0).unwrap();
        let capped = (0..2000).any(|i| draw_lifetime(&m, 110.0, 1, 0, i) == 110.0 + AGE_CAP);
        assert!(capped);
    }

    #[test]
    fn overlay_monte_carlo() {
        let (mean, se) = max_exponential_monte_carlo(5, 1.31, 200_000, 3);
        let exact = 110.0 + 1.31 * harmonic(5);
        assert!((mean - exact).abs() <= 4.0 * se);
    }
}
