//! The headline-number suite behind `mradlab repro`.
//!
//! Each check runs at its stated tolerance and reports what it measured.
//! Stochastic checks draw from streams derived from one user seed, so a run
//! is reproducible end to end.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::data_io::{write_records, LifeTable, LifeTableRow};
use crate::hazard::HazardModel;
use crate::limit::{solve_effective_limit, LimitKind};
use crate::rng::{philox4x64, Stream};
use crate::simulation::{
    empirical_exceedance, gpd_excess, max_exponential_monte_carlo, simulate_lifetimes, SimulationConfig,
};
use crate::survival::{
    calibrate_yearly_count, cohort_exceedance, expected_waiting_time, max_exponential_mean, ExposurePlan, YearCount,
};
use crate::tail::{fit_gpd_point, lr_test_exp_vs_gpd, split_period_test};
use crate::trend::{fit_segmented, SegmentedOptions, SeriesField, YearlyExtremeSeries};
use crate::Error;

pub const CRITERIA: [(u32, &str); 10] = [
    (1, "coin-toss survival 2^-40"),
    (2, "effective limit at 1e-4, annual survival 0.47"),
    (3, "waiting time at calibrated exposure"),
    (4, "max-of-exponentials overlay"),
    (5, "segmented regression recovery"),
    (6, "tail-test calibration and power"),
    (7, "GPD endpoint recovery"),
    (8, "analytic vs Monte Carlo exceedance"),
    (9, "hard limit vs effective limit"),
    (10, "simulation determinism across threads"),
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionOutcome {
    pub id: u32,
    pub title: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

/// Independent stream seed for criterion `id`.
fn sub_seed(seed: u64, id: u32) -> u64 {
    philox4x64([id as u64, 0, 0, 0], [seed, 0x6d72_6164])[0]
}

/// Runs the selected criteria (all when `only` is empty) in id order.
pub fn run(seed: u64, only: &[u32]) -> Vec<CriterionOutcome> {
    CRITERIA
        .iter()
        .filter(|(id, _)| only.is_empty() || only.contains(id))
        .map(|&(id, _)| run_criterion(id, seed))
        .collect()
}

/// Runs one criterion; an internal error counts as a failure.
pub fn run_criterion(id: u32, seed: u64) -> CriterionOutcome {
    let title = CRITERIA
        .iter()
        .find(|c| c.0 == id)
        .map(|c| c.1)
        .unwrap_or("unknown criterion");
    let start = Instant::now();
    let s = sub_seed(seed, id);
    let result = match id {
        1 => coin_toss(),
        2 => effective_limit_headline(),
        3 => waiting_time(),
        4 => overlay(s),
        5 => segmented(s),
        6 => tail_tests(s),
        7 => endpoint_recovery(s),
        8 => oracle_equivalence(s),
        9 => dichotomy(),
        10 => determinism(s),
        _ => Ok((false, format!("no criterion {id}"))),
    };
    let (passed, detail) = result.unwrap_or_else(|e| (false, format!("error: {e}")));
    CriterionOutcome {
        id,
        title,
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Plain-text table, one line per criterion.
pub fn render(outcomes: &[CriterionOutcome]) -> String {
    let mut out = String::new();
    for o in outcomes {
        let _ = writeln!(
            out,
            "[{}] {:>2} {:<44} {:>7.2}s  {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.id,
            o.title,
            o.seconds,
            o.detail
        );
    }
    let passed = outcomes.iter().filter(|o| o.passed).count();
    let _ = writeln!(out, "{passed}/{} passed", outcomes.len());
    out
}

type Check = Result<(bool, String), Error>;

fn coin_toss() -> Check {
    let m = HazardModel::plateau(0.5, 110.0)?;
    let s = m.cumulative_survival(110.0, 150.0)?;
    let exact = 2f64.powi(-40);
    let rel = (s / exact - 1.0).abs();
    Ok((rel < 1e-12, format!("S(110→150) = {s:.9e}, relative error {rel:.1e}")))
}

fn effective_limit_headline() -> Check {
    let m = HazardModel::plateau_survival(0.47, 110.0)?;
    let r = solve_effective_limit(&m, &ExposurePlan::single(110.0)?, 1e-4)?;
    let ok = (124.5..=125.5).contains(&r.limit_age);
    Ok((ok, format!("L_e = {:.4}, required [124.5, 125.5]", r.limit_age)))
}

fn waiting_time() -> Check {
    let m = HazardModel::plateau_survival(0.47, 110.0)?;
    let n = calibrate_yearly_count(&m, 110.0, 125.0, 1e-4)?;
    if n == 0 {
        return Ok((false, "no positive yearly count meets p_year ≤ 1e-4".into()));
    }
    let p = cohort_exceedance(&m, &ExposurePlan::uniform(110.0, 2000, 1, n)?, 125.0)?;
    let wait = expected_waiting_time(&m, 110.0, n, 125.0)?;
    Ok((
        p <= 1e-4 && wait >= 1e4,
        format!("{n} per year, p_year = {p:.4e}, waiting time {wait:.0} years"),
    ))
}

fn overlay(seed: u64) -> Check {
    let mut ok = true;
    let mut parts = Vec::new();
    for (k, (n, lo, hi)) in [(5u64, 112.8, 113.2), (35, 115.2, 115.7)].into_iter().enumerate() {
        let exact = max_exponential_mean(n, 1.31)?;
        let (mc, se) = max_exponential_monte_carlo(n, 1.31, 1_000_000, seed.wrapping_add(k as u64));
        let z = (mc - exact) / se;
        ok &= (lo..=hi).contains(&exact) && z.abs() <= 4.0;
        parts.push(format!("n={n}: {exact:.4} (MC {mc:.4}, z={z:+.2})"));
    }
    Ok((ok, parts.join("; ")))
}

fn kinked(b0: f64, b1: f64) -> Vec<(i32, f64)> {
    (1968..=2006)
        .map(|y| {
            let v = if y <= 1994 {
                110.0 + b0 * (y - 1968) as f64
            } else {
                110.0 + b0 * 26.0 + b1 * (y - 1994) as f64
            };
            (y, v)
        })
        .collect()
}

fn segmented(seed: u64) -> Check {
    let mut ok = true;
    let mut parts = Vec::new();
    for (k, (b0, b1)) in [(0.7, 0.2), (0.2, -0.3)].into_iter().enumerate() {
        let clean = kinked(b0, b1);
        let fit = fit_segmented(
            &YearlyExtremeSeries::from_points(&clean)?,
            SeriesField::Mrad,
            &SegmentedOptions::default(),
        )?;
        let err = (fit.slope_before - b0).abs().max((fit.slope_after - b1).abs());
        let exact = fit.break_year == 1994 && err < 1e-9;
        // The noisy series is a continuous kink, so the hinge fit is the
        // matched estimator; the two-line share is reported alongside.
        let hits: Result<Vec<(bool, bool)>, Error> = (0..1000u64)
            .into_par_iter()
            .map(|r| {
                let mut s = Stream::new(seed, r, k as u64);
                let noisy: Vec<(i32, f64)> = clean.iter().map(|&(y, v)| (y, v + 0.5 * s.normal())).collect();
                let series = YearlyExtremeSeries::from_points(&noisy)?;
                let near = |joined| -> Result<bool, Error> {
                    let opts = SegmentedOptions {
                        joined,
                        permutation: None,
                    };
                    Ok((fit_segmented(&series, SeriesField::Mrad, &opts)?.break_year - 1994).abs() <= 2)
                };
                Ok((near(true)?, near(false)?))
            })
            .collect();
        let hits = hits?;
        let share = hits.iter().filter(|h| h.0).count() as f64 / 1000.0;
        let free = hits.iter().filter(|h| h.1).count() as f64 / 1000.0;
        ok &= exact && share >= 0.9;
        parts.push(format!(
            "({b0}, {b1}): break {} slope error {err:.1e}, noisy within ±2 y {:.1}% (two free lines {:.1}%)",
            fit.break_year,
            100.0 * share,
            100.0 * free
        ));
    }
    Ok((ok, parts.join("; ")))
}

fn draws(seed: u64, rep: u64, stream: u64, n: usize, shape: f64, scale: f64) -> Vec<f64> {
    let mut s = Stream::new(seed, rep, stream);
    (0..n).map(|_| gpd_excess(&mut s, shape, scale)).collect()
}

fn rejection_rate(tests: Result<Vec<f64>, Error>, level: f64) -> Result<f64, Error> {
    let p = tests?;
    Ok(p.iter().filter(|&&p| p < level).count() as f64 / p.len() as f64)
}

fn tail_tests(seed: u64) -> Check {
    const REPS: u64 = 1000;
    let mu = 1.31;
    let lr_null = rejection_rate(
        (0..REPS)
            .into_par_iter()
            .map(|r| Ok(lr_test_exp_vs_gpd(&draws(seed, r, 0, 200, 0.0, mu))?.p_value))
            .collect(),
        0.05,
    )?;
    let split_null = rejection_rate(
        (0..REPS)
            .into_par_iter()
            .map(|r| Ok(split_period_test(&draws(seed, r, 1, 200, 0.0, mu), &draws(seed, r, 2, 200, 0.0, mu))?.p_value))
            .collect(),
        0.05,
    )?;
    let power = rejection_rate(
        (0..REPS)
            .into_par_iter()
            .map(|r| Ok(lr_test_exp_vs_gpd(&draws(seed, r, 3, 500, -0.3, 1.5))?.p_value))
            .collect(),
        0.05,
    )?;
    let calibrated = |x: f64| (0.03..=0.07).contains(&x);
    Ok((
        calibrated(lr_null) && calibrated(split_null) && power > 0.8,
        format!(
            "LR null {:.1}%, split null {:.1}%, LR power at ξ=-0.3 {:.1}%",
            100.0 * lr_null,
            100.0 * split_null,
            100.0 * power
        ),
    ))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn endpoint_recovery(seed: u64) -> Check {
    let fits: Result<Vec<(f64, f64)>, Error> = (0..100u64)
        .into_par_iter()
        .map(|r| {
            let f = fit_gpd_point(&draws(seed, r, 0, 10_000, -0.2, 1.5), 110.0)?;
            let xi = f.shape.expect("GPD fit has a shape");
            Ok((xi, f.endpoint.unwrap_or(f64::INFINITY)))
        })
        .collect();
    let (xis, ends): (Vec<f64>, Vec<f64>) = fits?.into_iter().unzip();
    let xi = median(xis);
    let end = median(ends);
    // ±25% of the 7.5-year excess above the threshold.
    let ok = (xi + 0.2).abs() <= 0.1 && (end - 117.5).abs() <= 0.25 * 7.5;
    Ok((ok, format!("median ξ̂ = {xi:.4}, median endpoint = {end:.3}")))
}

fn random_model(s: &mut Stream, variant: u32) -> Result<(HazardModel, f64), Error> {
    let pick = |s: &mut Stream, lo: u64, hi: u64| (lo + s.below(hi - lo + 1)) as f64;
    Ok(match variant {
        0 => {
            let limit = pick(s, 112, 118);
            (HazardModel::hard_limit(limit)?, limit - 4.0 - 0.25 * pick(s, 0, 12))
        }
        1 => {
            let q = 0.3 + 0.4 * s.uniform();
            let xp = pick(s, 105, 110);
            (HazardModel::plateau(q, xp)?, xp - 0.25 * pick(s, 0, 8))
        }
        2 => {
            let rate = 0.02 + 0.18 * s.uniform();
            let xp = pick(s, 105, 110);
            (HazardModel::decline(rate, xp)?, xp - 0.25 * pick(s, 0, 8))
        }
        3 => {
            let c = 0.6 + 0.4 * s.uniform();
            let xp = pick(s, 95, 105);
            (HazardModel::sigmoid(c, xp)?, xp + 0.25 * pick(s, 0, 8))
        }
        _ => {
            let mut q = 0.2 + 0.2 * s.uniform();
            let rows = (100..=125)
                .map(|age| {
                    let row = LifeTableRow { age, q: q.min(1.0) };
                    q += 0.05 * s.uniform();
                    row
                })
                .collect();
            (HazardModel::LifeTable(LifeTable::new(rows)?), 100.0 + 0.25 * pick(s, 0, 40))
        }
    })
}

fn oracle_equivalence(seed: u64) -> Check {
    const REPS: u64 = 100_000;
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for i in 0..20u32 {
        let mut s = Stream::new(seed, i as u64, u64::MAX);
        let (model, base) = random_model(&mut s, i % 5)?;
        let years = 1 + s.below(3) as u32;
        let plan = ExposurePlan::new(
            base,
            (0..years)
                .map(|y| YearCount {
                    year: 2000 + y as i32,
                    count: 1 + s.below(4),
                })
                .collect(),
        )?;
        let target = if i == 0 {
            // Beyond the hard limit: both routes must give exactly zero.
            model.endpoint().expect("hard limit") + 0.5
        } else {
            let eps = 0.05 + 0.65 * s.uniform();
            match solve_effective_limit(&model, &plan, eps) {
                Ok(r) if r.kind == LimitKind::Solved => r.limit_age,
                _ => base + 1.5,
            }
        };
        let analytic = cohort_exceedance(&model, &plan, target)?;
        let config = SimulationConfig::new(model.clone(), plan, seed.wrapping_add(i as u64), REPS)?;
        let mc = empirical_exceedance(&config, target)?;
        let gap = (mc.estimate - analytic).abs();
        let z = if mc.standard_error > 0.0 {
            gap / mc.standard_error
        } else if gap == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        worst = worst.max(z);
        if z > 4.0 {
            failures.push(format!("#{i} {} z={z:.2}", model.variant()));
        }
    }
    let detail = if failures.is_empty() {
        format!("20 configurations, largest gap {worst:.2} standard errors")
    } else {
        format!("outside 4 s.e.: {}", failures.join(", "))
    };
    Ok((failures.is_empty(), detail))
}

fn dichotomy() -> Check {
    let single = ExposurePlan::single(110.0)?;
    let hard = HazardModel::hard_limit(115.0)?;
    let epsilons = [1e-1, 1e-2, 1e-3, 1e-4, 1e-6, 1e-9, 1e-12];
    let hard_le: Vec<f64> = epsilons
        .iter()
        .map(|&e| solve_effective_limit(&hard, &single, e).map(|r| r.limit_age))
        .collect::<Result<_, _>>()?;
    let monotone = hard_le.windows(2).all(|w| w[1] >= w[0]);
    let hard_ok = hard.endpoint() == Some(115.0)
        && monotone
        && hard_le.iter().all(|&l| l <= 115.0)
        && (hard_le[hard_le.len() - 1] - 115.0).abs() < 1e-9;

    let plateau = HazardModel::plateau_survival(0.47, 110.0)?;
    let plateau_le: Vec<f64> = epsilons
        .iter()
        .map(|&e| solve_effective_limit(&plateau, &single, e).map(|r| r.limit_age))
        .collect::<Result<_, _>>()?;
    let finite = plateau_le.iter().all(|l| l.is_finite());
    let spread = solve_effective_limit(&plateau, &single, 1e-12)?.limit_age
        - solve_effective_limit(&plateau, &single, 1e-6)?.limit_age;
    let plateau_ok = plateau.endpoint().is_none() && finite && spread > 10.0;
    Ok((
        hard_ok && plateau_ok,
        format!(
            "hard limit L_e: {:.3} → {:.3} (L = 115); plateau L_e(1e-12) − L_e(1e-6) = {spread:.3} years",
            hard_le[0],
            hard_le[hard_le.len() - 1]
        ),
    ))
}

/// The CSV `simulate` writes for a fixed configuration.
fn simulated_csv(seed: u64) -> Result<Vec<u8>, Error> {
    let config = SimulationConfig::new(
        HazardModel::plateau_survival(0.47, 110.0)?,
        ExposurePlan::uniform(110.0, 1990, 30, 35)?,
        seed,
        3,
    )?;
    let mut out = Vec::new();
    write_records(&mut out, &simulate_lifetimes(&config)?)?;
    Ok(out)
}

fn in_pool(threads: usize, seed: u64) -> Result<Vec<u8>, Error> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool");
    pool.install(|| simulated_csv(seed))
}

fn determinism(seed: u64) -> Check {
    let a = in_pool(1, seed)?;
    let b = in_pool(1, seed)?;
    let c = in_pool(8, seed)?;
    let ok = a == b && a == c;
    Ok((ok, format!("{} bytes, identical across runs and 1/8 threads: {ok}", a.len())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_criteria_report() {
        let out = run(1, &[1, 3, 9]);
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|o| o.passed), "{}", render(&out));
        let text = render(&out);
        assert!(text.contains("[PASS]  1"));
        assert!(text.ends_with("3/3 passed\n"));
    }

    #[test]
    fn unknown_criterion_fails() {
        assert!(!run_criterion(42, 0).passed);
    }

    #[test]
    fn sub_seeds_differ() {
        assert_ne!(sub_seed(1, 4), sub_seed(1, 5));
        assert_ne!(sub_seed(1, 4), sub_seed(2, 4));
    }
}
