//! `mradlab`: batch front end to the mradlab library.
//!
//! Results go to stdout as a JSON envelope, or to `--out` as CSV; never
//! both. Exit status 0 on success, 1 on usage errors, 2 on data or
//! numerical errors. `MRADLAB_THREADS` caps internal parallelism.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use mradlab::data_io::{cell, parse_life_table, parse_records, write_csv, write_records, Envelope, LifeRecord};
use mradlab::hazard::{parse_scenarios, HazardModel, ModelVariant, ScenarioSpec};
use mradlab::limit::{limit_profile, solve_effective_limit};
use mradlab::simulation::{empirical_exceedance, simulate_lifetimes, simulate_mrad_series, SimulationConfig};
use mradlab::survival::{cohort_exceedance, max_exponential_mean, ExposurePlan, YearCount, SUPERCENTENARIAN_AGE};
use mradlab::tail::{
    excesses, fit_exponential, fit_gpd, hazard_by_age, lr_test_exp_vs_gpd, split_period_test, TailFit,
};
use mradlab::trend::{
    correlate, fit_linear, fit_segmented, yearly_extremes, CorrelationMethod, ExtremesOptions, SegmentedOptions,
    SeriesField, SERIES_HEADER,
};
use mradlab::{repro, Error};

const THREADS_ENV: &str = "MRADLAB_THREADS";

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Data(e.to_string())
    }
}

macro_rules! data_error_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Data(Error::from(e).to_string())
            }
        }
    )*};
}

data_error_from!(
    mradlab::hazard::HazardError,
    mradlab::hazard::ScenarioError,
    mradlab::survival::SurvivalError,
    mradlab::limit::LimitError,
    mradlab::tail::TailError,
    mradlab::trend::TrendError,
    mradlab::simulation::SimulationError,
    mradlab::data_io::DataError
);

type CliResult<T> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "mradlab", version, about = "Late-life mortality, tail fits, MRAD trends and effective lifespan limits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Annual death probability by age for one or more models.
    Trajectories(TrajectoriesArgs),
    /// Effective limit L_e for one epsilon.
    Limit(LimitArgs),
    /// Effective limit over a list of epsilons.
    Profile(ProfileArgs),
    /// Exponential and GPD fits to excesses over a threshold.
    FitTail(FitTailArgs),
    /// Two-period test of a common exponential rate.
    TestSplit(TestSplitArgs),
    /// Per-age death probabilities with Wilson intervals.
    Hazard(HazardArgs),
    /// Yearly MRAD series with segmented and single-line fits.
    Trend(TrendArgs),
    /// Correlation between two series fields.
    Correlate(CorrelateArgs),
    /// Monte Carlo lifetimes, MRAD series or exceedance estimates.
    Simulate(SimulateArgs),
    /// Expected MRAD as the maximum of n_t exponential excesses.
    MradModel(MradModelArgs),
    /// Run the headline-number suite and print a pass/fail table.
    Repro(ReproArgs),
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    /// hard-limit, plateau, decline, sigmoid or life-table; or a scenario
    /// name from --scenario-file.
    #[arg(long, alias = "model")]
    scenario: Option<String>,
    /// TOML file of [[scenario]] blocks.
    #[arg(long)]
    scenario_file: Option<PathBuf>,
    /// Life table CSV (age,qx) for the life-table model.
    #[arg(long)]
    life_table: Option<PathBuf>,
    #[arg(long)]
    gompertz_a: Option<f64>,
    #[arg(long)]
    gompertz_b: Option<f64>,
    /// Hard limit L.
    #[arg(long)]
    limit: Option<f64>,
    /// Plateau annual death probability.
    #[arg(long, conflicts_with = "survival")]
    plateau_q: Option<f64>,
    /// Plateau annual survival probability (1 - plateau q).
    #[arg(long)]
    survival: Option<f64>,
    #[arg(long)]
    transition_age: Option<f64>,
    #[arg(long)]
    decline_rate: Option<f64>,
    #[arg(long)]
    asymptote: Option<f64>,
}

#[derive(Args, Debug, Clone)]
struct PlanArgs {
    /// Age at which individuals enter the plan.
    #[arg(long, default_value_t = SUPERCENTENARIAN_AGE)]
    base_age: f64,
    /// Individuals per year.
    #[arg(long, default_value_t = 1, conflicts_with = "counts")]
    individuals: u64,
    /// Number of consecutive years.
    #[arg(long, default_value_t = 1, conflicts_with = "counts")]
    years: u32,
    /// Explicit per-year counts, comma separated.
    #[arg(long, value_delimiter = ',')]
    counts: Option<Vec<u64>>,
    #[arg(long, default_value_t = mradlab::survival::DEFAULT_START_YEAR)]
    start_year: i32,
}

#[derive(Args, Debug)]
struct TrajectoriesArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    from: f64,
    #[arg(long)]
    to: f64,
    #[arg(long, default_value_t = 1.0)]
    step: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct LimitArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    plan: PlanArgs,
    #[arg(long)]
    epsilon: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ProfileArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    plan: PlanArgs,
    #[arg(long, value_delimiter = ',', default_value = "1e-1,1e-2,1e-3,1e-4,1e-5,1e-6,1e-8,1e-10,1e-12")]
    epsilons: Vec<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RecordsArgs {
    /// Death records CSV (id,birth_date,death_date,country,validated).
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    country: Option<String>,
    #[arg(long)]
    validated_only: bool,
}

#[derive(Args, Debug)]
struct FitTailArgs {
    #[command(flatten)]
    records: RecordsArgs,
    #[arg(long, default_value_t = SUPERCENTENARIAN_AGE)]
    threshold: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TestSplitArgs {
    #[command(flatten)]
    records: RecordsArgs,
    #[arg(long, default_value_t = SUPERCENTENARIAN_AGE)]
    threshold: f64,
    /// Last death year of the first period.
    #[arg(long)]
    split_year: i32,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct HazardArgs {
    #[command(flatten)]
    records: RecordsArgs,
    #[arg(long, default_value_t = 110)]
    from: u32,
    #[arg(long, default_value_t = 120)]
    to: u32,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrendArgs {
    #[command(flatten)]
    records: RecordsArgs,
    /// mrad, n_t, rankK or overlay:MU.
    #[arg(long, default_value = "mrad")]
    field: String,
    #[arg(long, default_value_t = 5)]
    k_max: usize,
    #[arg(long, default_value_t = SUPERCENTENARIAN_AGE)]
    min_age: f64,
    /// Continuous (hinge) segmented fit.
    #[arg(long)]
    joined: bool,
    /// Residual shuffles for a permutation p-value; needs --seed.
    #[arg(long, default_value_t = 0)]
    permutations: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// CSV output is the yearly series.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CorrelateArgs {
    #[command(flatten)]
    records: RecordsArgs,
    #[arg(long, default_value = "n_t")]
    x: String,
    #[arg(long, default_value = "mrad")]
    y: String,
    #[arg(long, default_value = "pearson")]
    method: String,
    #[arg(long, default_value_t = 5)]
    k_max: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    plan: PlanArgs,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    replications: u64,
    /// Emit per-replication MRAD series instead of records.
    #[arg(long, conflicts_with = "target")]
    series: bool,
    /// Estimate the probability that anyone survives to this age.
    #[arg(long)]
    target: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct MradModelArgs {
    /// Mean excess over 110 in years.
    #[arg(long, conflicts_with = "survival")]
    mean_excess: Option<f64>,
    /// Plateau annual survival; the mean excess is -1/ln(survival).
    #[arg(long)]
    survival: Option<f64>,
    /// Yearly death counts n_t, comma separated.
    #[arg(long, value_delimiter = ',', conflicts_with = "input")]
    counts: Option<Vec<u64>>,
    /// Records CSV; n_t and MRAD are taken from its yearly series.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReproArgs {
    #[arg(long)]
    seed: Option<u64>,
    /// Criterion ids to run, comma separated.
    #[arg(long, value_delimiter = ',')]
    only: Vec<u32>,
}

/// What a command produced: a JSON result, or CSV rows for `--out`.
struct Output {
    json: serde_json::Value,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Output {
    fn new<T: Serialize>(result: &T, header: &[&str], rows: Vec<Vec<String>>) -> CliResult<Self> {
        Ok(Self {
            json: serde_json::to_value(result).map_err(|e| CliError::Data(e.to_string()))?,
            header: header.iter().map(|s| s.to_string()).collect(),
            rows,
        })
    }
}

/// Everything hashed into the envelope: argument vector, then inputs.
struct Inputs(Vec<Vec<u8>>);

impl Inputs {
    fn read(&mut self, path: &Path) -> CliResult<Vec<u8>> {
        let bytes = fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        self.0.push(bytes.clone());
        Ok(bytes)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(e) = configure_threads() {
        return report(e);
    }
    let args: Vec<u8> = std::env::args().skip(1).collect::<Vec<_>>().join("\0").into_bytes();
    let mut inputs = Inputs(vec![args]);
    match run(cli.command, &mut inputs) {
        Ok(code) => code,
        Err(e) => report(e),
    }
}

fn report(e: CliError) -> ExitCode {
    match e {
        CliError::Usage(m) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        CliError::Data(m) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn configure_threads() -> CliResult<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Data(e.to_string()))
}

fn require_seed(seed: Option<u64>) -> CliResult<u64> {
    seed.ok_or_else(|| CliError::Usage("--seed is required for stochastic commands".into()))
}

fn run(command: Command, inputs: &mut Inputs) -> CliResult<ExitCode> {
    let (name, out, output) = match command {
        Command::Repro(a) => return repro_cmd(a),
        Command::Trajectories(a) => ("trajectories", a.out.clone(), trajectories(a, inputs)?),
        Command::Limit(a) => ("limit", a.out.clone(), limit(a, inputs)?),
        Command::Profile(a) => ("profile", a.out.clone(), profile(a, inputs)?),
        Command::FitTail(a) => ("fit-tail", a.out.clone(), fit_tail(a, inputs)?),
        Command::TestSplit(a) => ("test-split", a.out.clone(), test_split(a, inputs)?),
        Command::Hazard(a) => ("hazard", a.out.clone(), hazard(a, inputs)?),
        Command::Trend(a) => ("trend", a.out.clone(), trend(a, inputs)?),
        Command::Correlate(a) => ("correlate", a.out.clone(), correlate_cmd(a, inputs)?),
        Command::Simulate(a) => ("simulate", a.out.clone(), simulate(a, inputs)?),
        Command::MradModel(a) => ("mrad-model", a.out.clone(), mrad_model(a, inputs)?),
    };
    emit(name, out.as_deref(), output, inputs)?;
    Ok(ExitCode::SUCCESS)
}

fn emit(command: &str, out: Option<&Path>, output: Output, inputs: &Inputs) -> CliResult<()> {
    match out {
        Some(path) => {
            let mut buf = Vec::new();
            let header: Vec<&str> = output.header.iter().map(String::as_str).collect();
            write_csv(&mut buf, &header, output.rows)?;
            fs::write(path, buf).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
        }
        None => {
            let chunks: Vec<&[u8]> = inputs.0.iter().map(Vec::as_slice).collect();
            let envelope = Envelope::new(command, &chunks, output.json);
            let text = serde_json::to_string_pretty(&envelope).map_err(|e| CliError::Data(e.to_string()))?;
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "{text}").map_err(|e| CliError::Data(e.to_string()))
        }
    }
}

fn models(a: &ModelArgs, inputs: &mut Inputs) -> CliResult<Vec<(String, HazardModel)>> {
    if let Some(path) = &a.life_table {
        let table = parse_life_table(inputs.read(path)?.as_slice())?;
        return Ok(vec![("life-table".into(), HazardModel::LifeTable(table))]);
    }
    if let Some(path) = &a.scenario_file {
        let text = String::from_utf8(inputs.read(path)?).map_err(|e| CliError::Data(e.to_string()))?;
        let all = parse_scenarios(&text)?;
        return match &a.scenario {
            None => Ok(all),
            Some(name) => all
                .into_iter()
                .find(|(n, _)| n == name)
                .map(|m| vec![m])
                .ok_or_else(|| CliError::Usage(format!("no scenario named `{name}` in {}", path.display()))),
        };
    }
    let name = a
        .scenario
        .clone()
        .ok_or_else(|| CliError::Usage("one of --scenario, --scenario-file or --life-table is required".into()))?;
    let variant: ModelVariant = serde_json::from_value(serde_json::Value::String(name.clone()))
        .map_err(|_| CliError::Usage(format!("unknown model `{name}`")))?;
    if variant == ModelVariant::LifeTable {
        return Err(CliError::Usage("the life-table model needs --life-table".into()));
    }
    let spec = ScenarioSpec {
        name: name.clone(),
        variant,
        gompertz_a: a.gompertz_a,
        gompertz_b: a.gompertz_b,
        transition_age: a.transition_age,
        limit: a.limit,
        plateau_q: a.plateau_q.or(a.survival.map(|s| 1.0 - s)),
        decline_rate: a.decline_rate,
        asymptote: a.asymptote,
    };
    // Annual survival is validated on its own scale.
    let model = match (variant, a.survival) {
        (ModelVariant::Plateau, Some(s)) => {
            HazardModel::plateau_survival(s, a.transition_age.unwrap_or(mradlab::hazard::defaults::PLATEAU_TRANSITION))?
        }
        _ => spec.build()?,
    };
    Ok(vec![(name, model)])
}

fn model(a: &ModelArgs, inputs: &mut Inputs) -> CliResult<HazardModel> {
    let mut all = models(a, inputs)?;
    if all.len() != 1 {
        return Err(CliError::Usage("this command needs exactly one model; pass --scenario".into()));
    }
    Ok(all.remove(0).1)
}

fn plan(a: &PlanArgs) -> CliResult<ExposurePlan> {
    Ok(match &a.counts {
        Some(counts) => ExposurePlan::new(
            a.base_age,
            counts
                .iter()
                .enumerate()
                .map(|(i, &count)| YearCount {
                    year: a.start_year + i as i32,
                    count,
                })
                .collect(),
        )?,
        None => ExposurePlan::uniform(a.base_age, a.start_year, a.years, a.individuals)?,
    })
}

fn num(v: f64) -> String {
    v.to_string()
}

fn trajectories(a: TrajectoriesArgs, inputs: &mut Inputs) -> CliResult<Output> {
    #[derive(Serialize)]
    struct Trajectory {
        scenario: String,
        model: HazardModel,
        rows: Vec<mradlab::hazard::TrajectoryPoint>,
    }
    let mut result = Vec::new();
    let mut rows = Vec::new();
    for (name, m) in models(&a.model, inputs)? {
        let table = m.trajectory_table(a.from, a.to, a.step)?;
        for p in &table {
            rows.push(vec![name.clone(), num(p.age), num(p.annual_death_prob)]);
        }
        result.push(Trajectory {
            scenario: name,
            model: m,
            rows: table,
        });
    }
    Output::new(&result, &["scenario", "age", "annual_death_prob"], rows)
}

fn limit(a: LimitArgs, inputs: &mut Inputs) -> CliResult<Output> {
    let m = model(&a.model, inputs)?;
    let r = solve_effective_limit(&m, &plan(&a.plan)?, a.epsilon)?;
    let row = vec![
        num(r.epsilon),
        num(r.limit_age),
        num(r.limit_age_ceil),
        serde_json::to_value(r.kind).unwrap().as_str().unwrap_or_default().to_string(),
        num(r.achieved_probability),
        r.iterations.to_string(),
    ];
    Output::new(
        &r,
        &["epsilon", "limit_age", "limit_age_ceil", "kind", "achieved_probability", "iterations"],
        vec![row],
    )
}

fn profile(a: ProfileArgs, inputs: &mut Inputs) -> CliResult<Output> {
    let m = model(&a.model, inputs)?;
    let rows = limit_profile(&m, &plan(&a.plan)?, &a.epsilons)?;
    let csv = rows
        .iter()
        .map(|r| {
            vec![
                num(r.epsilon),
                num(r.limit_age),
                serde_json::to_value(r.kind).unwrap().as_str().unwrap_or_default().to_string(),
            ]
        })
        .collect();
    Output::new(&rows, &["epsilon", "limit_age", "kind"], csv)
}

fn load_records(a: &RecordsArgs, inputs: &mut Inputs) -> CliResult<Vec<LifeRecord>> {
    let parsed = parse_records(inputs.read(&a.input)?.as_slice())?;
    for w in &parsed.warnings {
        eprintln!("warning: {w}");
    }
    Ok(parsed
        .records
        .into_iter()
        .filter(|r| !a.validated_only || r.validated)
        .filter(|r| a.country.as_deref().is_none_or(|c| c == r.country))
        .collect())
}

fn fit_row(f: &TailFit) -> Vec<String> {
    let ci = f.rate_ci.or(f.shape_ci);
    vec![
        format!("{:?}", f.model_kind).to_lowercase(),
        num(f.threshold),
        cell(f.rate),
        cell(f.shape),
        cell(f.scale),
        num(f.log_likelihood),
        cell(f.endpoint),
        f.sample_size.to_string(),
        cell(ci.map(|c| c.low)),
        cell(ci.map(|c| c.high)),
    ]
}

fn fit_tail(a: FitTailArgs, inputs: &mut Inputs) -> CliResult<Output> {
    #[derive(Serialize)]
    struct Report {
        excesses: usize,
        exponential: TailFit,
        gpd: TailFit,
        lr_test: mradlab::tail::LrTest,
    }
    let records = load_records(&a.records, inputs)?;
    let xs = excesses(&records, a.threshold)?;
    if xs.is_empty() {
        eprintln!("warning: no deaths above {}", a.threshold);
    }
    let report = Report {
        excesses: xs.len(),
        exponential: fit_exponential(&xs, a.threshold)?,
        gpd: fit_gpd(&xs, a.threshold)?,
        lr_test: lr_test_exp_vs_gpd(&xs)?,
    };
    let rows = vec![fit_row(&report.exponential), fit_row(&report.gpd)];
    Output::new(
        &report,
        &[
            "model", "threshold", "rate", "shape", "scale", "log_likelihood", "endpoint", "n", "ci_low", "ci_high",
        ],
        rows,
    )
}

fn test_split(a: TestSplitArgs, inputs: &mut Inputs) -> CliResult<Output> {
    #[derive(Serialize)]
    struct Report {
        split_year: i32,
        n_before: usize,
        n_after: usize,
        statistic: f64,
        p_value: f64,
    }
    let records = load_records(&a.records, inputs)?;
    let (before, after): (Vec<LifeRecord>, Vec<LifeRecord>) =
        records.into_iter().partition(|r| r.death_year() <= a.split_year);
    let xa = excesses(&before, a.threshold)?;
    let xb = excesses(&after, a.threshold)?;
    let t = split_period_test(&xa, &xb)?;
    let report = Report {
        split_year: a.split_year,
        n_before: xa.len(),
        n_after: xb.len(),
        statistic: t.statistic,
        p_value: t.p_value,
    };
    let row = vec![
        report.split_year.to_string(),
        report.n_before.to_string(),
        report.n_after.to_string(),
        num(t.statistic),
        num(t.p_value),
    ];
    Output::new(&report, &["split_year", "n_before", "n_after", "statistic", "p_value"], vec![row])
}

fn hazard(a: HazardArgs, inputs: &mut Inputs) -> CliResult<Output> {
    if a.to < a.from {
        return Err(CliError::Usage("--to must not be below --from".into()));
    }
    let records = load_records(&a.records, inputs)?;
    let ages: Vec<f64> = (a.from..=a.to).map(f64::from).collect();
    let est = hazard_by_age(&records, &ages)?;
    let rows = ages
        .iter()
        .zip(&est)
        .map(|(&x, e)| match e {
            Some(e) => vec![
                e.age.to_string(),
                e.at_risk.to_string(),
                e.deaths.to_string(),
                num(e.q_hat),
                num(e.ci_low),
                num(e.ci_high),
            ],
            None => vec![x.to_string(), "0".into(), "0".into(), String::new(), String::new(), String::new()],
        })
        .collect();
    Output::new(&est, &["age", "n", "d", "q_hat", "ci_low", "ci_high"], rows)
}

fn series_rows(series: &mradlab::trend::YearlyExtremeSeries) -> CliResult<Vec<Vec<String>>> {
    let mut buf = Vec::new();
    series.write_csv(&mut buf)?;
    let text = String::from_utf8(buf).map_err(|e| CliError::Data(e.to_string()))?;
    // Reuse the library's cell formatting, then split back into cells.
    Ok(text
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect())
}

fn parse_field(s: &str) -> CliResult<SeriesField> {
    s.parse().map_err(|e: mradlab::trend::TrendError| CliError::Usage(e.to_string()))
}

fn trend(a: TrendArgs, inputs: &mut Inputs) -> CliResult<Output> {
    #[derive(Serialize)]
    struct Report {
        series: mradlab::trend::YearlyExtremeSeries,
        segmented: mradlab::trend::SegmentedFit,
        linear: mradlab::trend::LinearFit,
    }
    let field = parse_field(&a.field)?;
    let permutation = if a.permutations > 0 {
        Some((a.permutations, require_seed(a.seed)?))
    } else {
        None
    };
    let records = load_records(&a.records, inputs)?;
    let series = yearly_extremes(
        &records,
        &ExtremesOptions {
            k_max: a.k_max,
            country: a.records.country.clone(),
            min_age: a.min_age,
            validated_only: a.records.validated_only,
        },
    )?;
    if series.is_empty() {
        eprintln!("warning: no qualifying deaths; the series is empty");
    }
    let report = Report {
        segmented: fit_segmented(
            &series,
            field,
            &SegmentedOptions {
                joined: a.joined,
                permutation,
            },
        )?,
        linear: fit_linear(&series, field)?,
        series,
    };
    let rows = series_rows(&report.series)?;
    Output::new(&report, &SERIES_HEADER, rows)
}

fn correlate_cmd(a: CorrelateArgs, inputs: &mut Inputs) -> CliResult<Output> {
    let x = parse_field(&a.x)?;
    let y = parse_field(&a.y)?;
    let method: CorrelationMethod = a.method.parse().map_err(CliError::Usage)?;
    let records = load_records(&a.records, inputs)?;
    let series = yearly_extremes(
        &records,
        &ExtremesOptions {
            k_max: a.k_max,
            country: a.records.country.clone(),
            validated_only: a.records.validated_only,
            ..Default::default()
        },
    )?;
    let c = correlate(&series, x, y, method)?;
    let row = vec![a.x.clone(), a.y.clone(), a.method.to_lowercase(), num(c.coefficient), num(c.p_value), c.n.to_string()];
    Output::new(&c, &["x", "y", "method", "coefficient", "p_value", "n"], vec![row])
}

fn simulate(a: SimulateArgs, inputs: &mut Inputs) -> CliResult<Output> {
    let seed = require_seed(a.seed)?;
    let config = SimulationConfig::new(model(&a.model, inputs)?, plan(&a.plan)?, seed, a.replications)?;
    if let Some(target) = a.target {
        #[derive(Serialize)]
        struct Report {
            target_age: f64,
            analytic: f64,
            #[serde(flatten)]
            estimate: mradlab::simulation::ExceedanceEstimate,
        }
        let estimate = empirical_exceedance(&config, target)?;
        let analytic = cohort_exceedance(&config.model, &config.plan, target)?;
        let row = vec![
            num(target),
            num(estimate.estimate),
            num(estimate.standard_error),
            num(analytic),
            estimate.replications.to_string(),
        ];
        return Output::new(
            &Report {
                target_age: target,
                analytic,
                estimate,
            },
            &["target_age", "estimate", "standard_error", "analytic", "replications"],
            vec![row],
        );
    }
    if a.series {
        let all = simulate_mrad_series(&config)?;
        let mut rows = Vec::new();
        for (r, s) in all.iter().enumerate() {
            for mut row in series_rows(s)? {
                row.insert(0, r.to_string());
                rows.push(row);
            }
        }
        let mut header = vec!["replication"];
        header.extend(SERIES_HEADER);
        return Output::new(&all, &header, rows);
    }
    let records = simulate_lifetimes(&config)?;
    // Records CSV is the data_io schema; build rows from the canonical writer.
    let mut buf = Vec::new();
    write_records(&mut buf, &records)?;
    let text = String::from_utf8(buf).map_err(|e| CliError::Data(e.to_string()))?;
    let rows = text.lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect();
    Output::new(
        &records,
        &mradlab::data_io::RECORD_HEADER,
        rows,
    )
}

fn mrad_model(a: MradModelArgs, inputs: &mut Inputs) -> CliResult<Output> {
    #[derive(Serialize)]
    struct Row {
        year: Option<i32>,
        n_t: u64,
        expected_mrad: f64,
        observed_mrad: Option<f64>,
    }
    let mu = match (a.mean_excess, a.survival) {
        (Some(mu), _) => mu,
        (None, Some(s)) if s > 0.0 && s < 1.0 => -1.0 / s.ln(),
        (None, Some(s)) => return Err(CliError::Usage(format!("--survival must lie in (0, 1), got {s}"))),
        (None, None) => return Err(CliError::Usage("one of --mean-excess or --survival is required".into())),
    };
    let rows: Vec<Row> = match (&a.counts, &a.input) {
        (Some(counts), _) => counts
            .iter()
            .map(|&n| {
                Ok(Row {
                    year: None,
                    n_t: n,
                    expected_mrad: max_exponential_mean(n, mu)?,
                    observed_mrad: None,
                })
            })
            .collect::<CliResult<_>>()?,
        (None, Some(path)) => {
            let records = load_records(
                &RecordsArgs {
                    input: path.clone(),
                    country: None,
                    validated_only: false,
                },
                inputs,
            )?;
            yearly_extremes(&records, &ExtremesOptions::default())?
                .rows
                .iter()
                .map(|r| {
                    Ok(Row {
                        year: Some(r.year),
                        n_t: r.n_t,
                        expected_mrad: max_exponential_mean(r.n_t, mu)?,
                        observed_mrad: Some(r.mrad),
                    })
                })
                .collect::<CliResult<_>>()?
        }
        (None, None) => return Err(CliError::Usage("one of --counts or --input is required".into())),
    };
    let csv = rows
        .iter()
        .map(|r| {
            vec![
                r.year.map(|y| y.to_string()).unwrap_or_default(),
                r.n_t.to_string(),
                num(r.expected_mrad),
                cell(r.observed_mrad),
            ]
        })
        .collect();
    Output::new(&rows, &["year", "n_t", "expected_mrad", "observed_mrad"], csv)
}

fn repro_cmd(a: ReproArgs) -> CliResult<ExitCode> {
    let seed = require_seed(a.seed)?;
    if let Some(bad) = a.only.iter().find(|id| !repro::CRITERIA.iter().any(|c| c.0 == **id)) {
        return Err(CliError::Usage(format!("no criterion {bad}")));
    }
    let outcomes = repro::run(seed, &a.only);
    print!("{}", repro::render(&outcomes));
    Ok(if outcomes.iter().all(|o| o.passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}
