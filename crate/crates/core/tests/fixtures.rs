//! Checks against the synthetic records shipped in `tests/fixtures`.
//!
//! `idl_synthetic.csv` was produced by
//! `mradlab simulate --scenario plateau --survival 0.47 --start-year 1968
//!  --counts 5,5,6,...,35 --seed 2026 --out idl_synthetic.csv`
//! (counts rising linearly from 5 to 35 over 39 years).

use std::path::PathBuf;

use mradlab::data_io::{parse_life_table, parse_records, write_records, LifeRecord};
use mradlab::hazard::HazardModel;
use mradlab::simulation::{simulate_lifetimes, SimulationConfig};
use mradlab::survival::{ExposurePlan, YearCount};
use mradlab::tail::{excesses, fit_exponential, hazard_by_age};
use mradlab::trend::{yearly_extremes, ExtremesOptions};

fn fixture(name: &str) -> Vec<u8> {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "tests", "fixtures", name].iter().collect();
    std::fs::read(path).unwrap()
}

fn records() -> Vec<LifeRecord> {
    parse_records(fixture("idl_synthetic.csv").as_slice()).unwrap().records
}

fn counts() -> Vec<u64> {
    (0..39).map(|i| 5 + 30 * i / 38).collect()
}

#[test]
fn fixture_is_reproducible_from_the_generator() {
    let plan = ExposurePlan::new(
        110.0,
        counts()
            .into_iter()
            .enumerate()
            .map(|(i, count)| YearCount {
                year: 1968 + i as i32,
                count,
            })
            .collect(),
    )
    .unwrap();
    let model = HazardModel::plateau_survival(0.47, 110.0).unwrap();
    let sim = simulate_lifetimes(&SimulationConfig::new(model, plan, 2026, 1).unwrap()).unwrap();
    let mut csv = Vec::new();
    write_records(&mut csv, &sim).unwrap();
    assert_eq!(csv, fixture("idl_synthetic.csv"));
}

#[test]
fn yearly_counts_follow_the_plan() {
    let series = yearly_extremes(&records(), &ExtremesOptions::default()).unwrap();
    let n: Vec<u64> = series.rows.iter().map(|r| r.n_t).collect();
    assert_eq!(n, counts());
    assert_eq!(series.rows.first().unwrap().year, 1968);
    assert_eq!(series.rows.last().unwrap().year, 2006);
}

#[test]
fn excess_mean_is_near_the_plateau_value() {
    let recs = records();
    let xs = excesses(&recs, 110.0).unwrap();
    assert_eq!(xs.len(), counts().iter().sum::<u64>() as usize);
    // Exact constant-hazard lifetimes: mean excess is -1/ln(0.47).
    let fit = fit_exponential(&xs, 110.0).unwrap();
    let ci = fit.rate_ci.unwrap();
    assert!(ci.contains(-(0.47f64.ln())), "{ci:?}");
}

#[test]
fn empirical_hazard_covers_the_plateau() {
    let est = hazard_by_age(&records(), &[110.0, 111.0, 112.0, 113.0]).unwrap();
    for e in est.into_iter().flatten() {
        assert!(e.ci_low <= 0.53 && 0.53 <= e.ci_high, "{e:?}");
    }
}

#[test]
fn life_table_fixture_has_an_endpoint() {
    let table = parse_life_table(fixture("life_table.csv").as_slice()).unwrap();
    assert_eq!(HazardModel::LifeTable(table).endpoint(), Some(115.0));
}
