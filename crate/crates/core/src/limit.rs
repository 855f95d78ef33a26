//! Effective lifespan limits.
//!
//! `L_e^ε` is the smallest age `A` such that the probability that anyone in
//! an exposure plan survives past `A` is at most `ε`. A hard limit `L` is the
//! special case where that probability is exactly zero past `L`; a plateau
//! has no such age, yet `L_e^ε` is finite for every `ε > 0`.
//!
//! Exceedance is non-increasing in age, so the answer is found by bracketing
//! and bisection on `ln P(A) ≤ ln ε`. Working in log space keeps the search
//! well-conditioned at `ε = 1e-12` and below.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::hazard::HazardModel;
use crate::survival::{cohort_exceedance, log_cohort_exceedance, ExposurePlan, SurvivalError};

/// Width of the final bisection bracket, in years.
pub const BRACKET_TOLERANCE: f64 = 1e-6;

/// The bracket search gives up past this many years above the base age.
pub const MAX_SEARCH_SPAN: f64 = 100_000.0;

const MAX_BISECTIONS: u32 = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LimitError {
    #[error(transparent)]
    Survival(#[from] SurvivalError),
    #[error("epsilon must lie strictly between 0 and 1, got {0}")]
    InvalidEpsilon(f64),
    #[error("no effective limit: exceedance stays above {epsilon} up to age {searched_to} (still {probability:e})")]
    Unbounded {
        epsilon: f64,
        searched_to: f64,
        probability: f64,
    },
    #[error("epsilon list is empty")]
    EmptyProfile,
}

/// How the limit was reached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LimitKind {
    /// Bisection on a continuous exceedance curve.
    Solved,
    /// Exceedance at the base age is already ≤ ε; the limit is the base age.
    BaseAge,
    /// Exceedance jumps from above ε to zero at the model's endpoint.
    ExactEndpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectiveLimitResult {
    pub epsilon: f64,
    pub limit_age: f64,
    /// `⌈L_e⌉`, the whole-year convenience value.
    pub limit_age_ceil: f64,
    pub kind: LimitKind,
    pub exposure: ExposurePlan,
    /// Exceedance at `limit_age` (the right-hand limit at an exact endpoint).
    pub achieved_probability: f64,
    pub iterations: u32,
    /// Final bracket width in years.
    pub bracket: f64,
}

fn check_epsilon(epsilon: f64) -> Result<(), LimitError> {
    if epsilon > 0.0 && epsilon < 1.0 {
        Ok(())
    } else {
        Err(LimitError::InvalidEpsilon(epsilon))
    }
}

/// Solves for `L_e^ε` under `model` and `plan`.
pub fn solve_effective_limit(
    model: &HazardModel,
    plan: &ExposurePlan,
    epsilon: f64,
) -> Result<EffectiveLimitResult, LimitError> {
    check_epsilon(epsilon)?;
    let base = plan.base_age();
    let ln_eps = epsilon.ln();
    let log_p = |age: f64| log_cohort_exceedance(model, plan, age);

    let result = |limit_age: f64, kind, achieved: f64, iterations, bracket| EffectiveLimitResult {
        epsilon,
        limit_age,
        limit_age_ceil: limit_age.ceil(),
        kind,
        exposure: plan.clone(),
        achieved_probability: achieved,
        iterations,
        bracket,
    };

    let at_base = log_p(base)?;
    if at_base <= ln_eps {
        return Ok(result(base, LimitKind::BaseAge, at_base.exp(), 0, 0.0));
    }

    if let Some(end) = model.endpoint().filter(|&end| end >= base) {
        if log_p(end)? > ln_eps {
            // Above ε right up to the endpoint and zero just past it.
            return Ok(result(end, LimitKind::ExactEndpoint, 0.0, 0, 0.0));
        }
    }

    // Bracket: lo has P > ε, hi has P ≤ ε.
    let mut lo = base;
    let mut step = 1.0;
    let mut hi = base + step;
    let mut iterations = 0;
    loop {
        let v = log_p(hi)?;
        if v <= ln_eps {
            break;
        }
        lo = hi;
        step *= 2.0;
        if step > MAX_SEARCH_SPAN {
            return Err(LimitError::Unbounded {
                epsilon,
                searched_to: hi,
                probability: v.exp(),
            });
        }
        hi = base + step;
        iterations += 1;
    }

    while hi - lo > BRACKET_TOLERANCE && iterations < MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if log_p(mid)? <= ln_eps {
            hi = mid;
        } else {
            lo = mid;
        }
        iterations += 1;
    }
    let achieved = cohort_exceedance(model, plan, hi)?;
    Ok(result(hi, LimitKind::Solved, achieved, iterations, hi - lo))
}

/// Probability that anyone in `plan` survives past `age`.
pub fn epsilon_at_age(model: &HazardModel, plan: &ExposurePlan, age: f64) -> Result<f64, LimitError> {
    Ok(cohort_exceedance(model, plan, age)?)
}

/// One `(ε, L_e)` row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileRow {
    pub epsilon: f64,
    pub limit_age: f64,
    pub kind: LimitKind,
}

/// Solves each ε (concurrently) and returns rows by descending ε.
pub fn limit_profile(
    model: &HazardModel,
    plan: &ExposurePlan,
    epsilons: &[f64],
) -> Result<Vec<ProfileRow>, LimitError> {
    if epsilons.is_empty() {
        return Err(LimitError::EmptyProfile);
    }
    let mut sorted = epsilons.to_vec();
    for &e in &sorted {
        check_epsilon(e)?;
    }
    sorted.sort_by(|a, b| b.total_cmp(a));
    sorted
        .par_iter()
        .map(|&e| {
            solve_effective_limit(model, plan, e).map(|r| ProfileRow {
                epsilon: e,
                limit_age: r.limit_age,
                kind: r.kind,
            })
        })
        .collect()
}
