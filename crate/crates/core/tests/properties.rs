use chrono::NaiveDate;
use proptest::prelude::*;

use mradlab::data_io::{age_at_death, parse_records, write_records, LifeRecord, DAYS_PER_YEAR};
use mradlab::hazard::HazardModel;
use mradlab::limit::solve_effective_limit;
use mradlab::simulation::{simulate_lifetimes, SimulationConfig};
use mradlab::survival::{cohort_exceedance, ExposurePlan};

fn any_model() -> impl Strategy<Value = HazardModel> {
    prop_oneof![
        (111u32..130).prop_map(|l| HazardModel::hard_limit(l.into()).unwrap()),
        (0.05..0.95f64, 100u32..115).prop_map(|(q, x)| HazardModel::plateau(q, x.into()).unwrap()),
        (0.01..0.5f64, 100u32..115).prop_map(|(r, x)| HazardModel::decline(r, x.into()).unwrap()),
        (0.6..1.0f64, 90u32..100).prop_map(|(c, x)| HazardModel::sigmoid(c, x.into()).unwrap()),
    ]
}

// Days since 1970-01-01, after Howard Hinnant's civil-calendar algorithm.
fn days_from_civil(y: i64, m: i64, d: i64) -> i64 {
    let y = if m <= 2 { y - 1 } else { y };
    let era = if y >= 0 { y } else { y - 399 } / 400;
    let yoe = y - era * 400;
    let mp = (m + 9) % 12;
    let doy = (153 * mp + 2) / 5 + d - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    era * 146097 + doe - 719468
}

fn days_in_month(y: i64, m: i64) -> i64 {
    match m {
        2 if (y % 4 == 0 && y % 100 != 0) || y % 400 == 0 => 29,
        2 => 28,
        4 | 6 | 9 | 11 => 30,
        _ => 31,
    }
}

fn civil() -> impl Strategy<Value = (i64, i64, i64)> {
    (1700i64..2100, 1i64..=12, 1i64..=31).prop_map(|(y, m, d)| (y, m, d.min(days_in_month(y, m))))
}

fn date((y, m, d): (i64, i64, i64)) -> NaiveDate {
    NaiveDate::from_ymd_opt(y as i32, m as u32, d as u32).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn age_matches_independent_day_count(a in civil(), b in civil()) {
        let (birth, death) = if a <= b { (a, b) } else { (b, a) };
        let days = days_from_civil(death.0, death.1, death.2) - days_from_civil(birth.0, birth.1, birth.2);
        let age = age_at_death(date(birth), date(death)).unwrap();
        prop_assert_eq!(age, days as f64 / DAYS_PER_YEAR);
    }
}

proptest! {
    #[test]
    fn death_probability_is_a_probability(m in any_model(), age in 0.0..400.0f64) {
        let q = m.annual_death_prob(age).unwrap();
        prop_assert!((0.0..=1.0).contains(&q));
    }

    #[test]
    fn survival_telescopes(m in any_model(), x in 105.0..125.0f64, d1 in 0.0..8.0f64, d2 in 0.0..8.0f64) {
        let (y, z) = (x + d1, x + d1 + d2);
        let whole = m.log_survival(x, z).unwrap();
        let parts = m.log_survival(x, y).unwrap() + m.log_survival(y, z).unwrap();
        if whole.is_finite() || parts.is_finite() {
            prop_assert!((whole - parts).abs() <= 1e-9 * (1.0 + whole.abs()));
        }
    }

    #[test]
    fn survival_is_monotone(m in any_model(), x in 105.0..125.0f64, d1 in 0.0..8.0f64, d2 in 0.0..8.0f64) {
        let near = m.cumulative_survival(x, x + d1).unwrap();
        let far = m.cumulative_survival(x, x + d1 + d2).unwrap();
        prop_assert!(far <= near);
        prop_assert!((0.0..=1.0).contains(&far));
    }

    #[test]
    fn more_people_never_lowers_exceedance(m in any_model(), n in 1u64..50, k in 2u64..5, t in 111.0..130.0f64) {
        let small = ExposurePlan::uniform(110.0, 2000, 1, n).unwrap();
        let p = cohort_exceedance(&m, &small, t).unwrap();
        let big = cohort_exceedance(&m, &small.scaled(k), t).unwrap();
        prop_assert!(big >= p);
    }

    #[test]
    fn effective_limit_grows_as_epsilon_shrinks(q in 0.2..0.8f64, e in 1e-8..0.5f64) {
        let m = HazardModel::plateau(q, 110.0).unwrap();
        let plan = ExposurePlan::single(110.0).unwrap();
        let loose = solve_effective_limit(&m, &plan, e).unwrap().limit_age;
        let tight = solve_effective_limit(&m, &plan, e / 10.0).unwrap().limit_age;
        prop_assert!(tight > loose);
    }

    #[test]
    fn records_round_trip(rows in prop::collection::vec((civil(), 0i64..50_000, "[A-Z]{3}", any::<bool>()), 1..40)) {
        let records: Vec<LifeRecord> = rows
            .iter()
            .enumerate()
            .map(|(i, (b, gap, c, v))| {
                let birth = date(*b);
                LifeRecord::new(format!("id{i}"), birth, birth + chrono::Duration::days(*gap), c.as_str(), *v).unwrap()
            })
            .collect();
        let mut first = Vec::new();
        write_records(&mut first, &records).unwrap();
        let parsed = parse_records(first.as_slice()).unwrap();
        prop_assert!(parsed.warnings.is_empty());
        prop_assert_eq!(&parsed.records, &records);
        let mut second = Vec::new();
        write_records(&mut second, &parsed.records).unwrap();
        prop_assert_eq!(first, second);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn simulated_records_parse_back(m in any_model(), seed in any::<u64>(), n in 1u64..20, years in 1u32..5) {
        let plan = ExposurePlan::uniform(110.0, 1990, years, n).unwrap();
        let records = simulate_lifetimes(&SimulationConfig::new(m, plan, seed, 1).unwrap()).unwrap();
        prop_assert_eq!(records.len() as u64, n * years as u64);
        let mut csv = Vec::new();
        write_records(&mut csv, &records).unwrap();
        prop_assert_eq!(parse_records(csv.as_slice()).unwrap().records, records);
    }
}
