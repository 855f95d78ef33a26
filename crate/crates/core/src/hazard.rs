//! Late-life mortality trajectories.
//!
//! Every model answers one question: the annual probability of death `q(x)`
//! for someone alive at age `x`. Four parametric shapes continue a Gompertz
//! curve past a transition age (hard limit, plateau, decline, sigmoid); the
//! fifth wraps an empirical life table.
//!
//! Survival over an interval multiplies `1 - q(y)` over whole years of age
//! `y`, pro-rating partial years as `(1 - q(y))^fraction`, where `y` is the
//! integer year of age containing the partial year.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data_io::LifeTable;

/// Default Gompertz baseline hazard per year at age 0.
pub const DEFAULT_GOMPERTZ_A: f64 = 1e-4;
/// Default Gompertz log-slope per year of age (doubling time ≈ 8.2 years).
pub const DEFAULT_GOMPERTZ_B: f64 = 0.085;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HazardError {
    #[error("age must be finite and non-negative, got {0}")]
    InvalidAge(f64),
    #[error("interval is reversed: from {from} to {to}")]
    ReversedInterval { from: f64, to: f64 },
    #[error("step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
}

fn check_param(
    name: &'static str,
    value: f64,
    ok: bool,
    reason: &'static str,
) -> Result<(), HazardError> {
    if ok && value.is_finite() {
        Ok(())
    } else {
        Err(HazardError::InvalidParameter {
            name,
            value,
            reason,
        })
    }
}

fn check_whole_age(name: &'static str, value: f64) -> Result<(), HazardError> {
    check_param(
        name,
        value,
        value >= 0.0 && value.fract() == 0.0,
        "must be a non-negative whole number of years",
    )
}

/// Continuous Gompertz hazard `h(x) = a·e^{bx}` discretized to annual death
/// probability `q(x) = 1 − exp(−(a/b)(e^{b(x+1)} − e^{bx}))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gompertz {
    pub a: f64,
    pub b: f64,
}

impl Default for Gompertz {
    fn default() -> Self {
        Self {
            a: DEFAULT_GOMPERTZ_A,
            b: DEFAULT_GOMPERTZ_B,
        }
    }
}

impl Gompertz {
    pub fn new(a: f64, b: f64) -> Result<Self, HazardError> {
        check_param("gompertz_a", a, a > 0.0, "must be positive")?;
        check_param("gompertz_b", b, b > 0.0, "must be positive")?;
        Ok(Self { a, b })
    }

    /// Integrated hazard over `[x, x + 1)`.
    fn year_hazard(&self, x: f64) -> f64 {
        (self.a / self.b) * (self.b * x).exp() * self.b.exp_m1()
    }

    pub fn annual_q(&self, x: f64) -> f64 {
        -(-self.year_hazard(x)).exp_m1()
    }

    /// `dq/dx`.
    fn annual_q_slope(&self, x: f64) -> f64 {
        let h = self.year_hazard(x);
        self.b * h * (-h).exp()
    }
}

/// Gompertz until a whole-year age `L`, then certain death.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HardLimit {
    gompertz: Gompertz,
    limit: f64,
}

impl HardLimit {
    pub fn new(gompertz: Gompertz, limit: f64) -> Result<Self, HazardError> {
        check_whole_age("limit", limit)?;
        Ok(Self { gompertz, limit })
    }

    pub fn gompertz(&self) -> Gompertz {
        self.gompertz
    }

    pub fn limit(&self) -> f64 {
        self.limit
    }
}

/// Gompertz capped at `plateau_q`, constant from the transition age on.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Plateau {
    gompertz: Gompertz,
    transition_age: f64,
    plateau_q: f64,
}

impl Plateau {
    pub fn new(gompertz: Gompertz, transition_age: f64, plateau_q: f64) -> Result<Self, HazardError> {
        check_whole_age("transition_age", transition_age)?;
        check_param(
            "plateau_q",
            plateau_q,
            plateau_q > 0.0 && plateau_q <= 1.0,
            "must lie in (0, 1]",
        )?;
        Ok(Self {
            gompertz,
            transition_age,
            plateau_q,
        })
    }

    pub fn gompertz(&self) -> Gompertz {
        self.gompertz
    }

    pub fn transition_age(&self) -> f64 {
        self.transition_age
    }

    pub fn plateau_q(&self) -> f64 {
        self.plateau_q
    }

    pub fn annual_survival(&self) -> f64 {
        1.0 - self.plateau_q
    }
}

/// Gompertz up to the transition age, then `q(x_p)·exp(−rate·(x − x_p))`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Decline {
    gompertz: Gompertz,
    transition_age: f64,
    decline_rate: f64,
}

impl Decline {
    pub fn new(gompertz: Gompertz, transition_age: f64, decline_rate: f64) -> Result<Self, HazardError> {
        check_whole_age("transition_age", transition_age)?;
        check_param("decline_rate", decline_rate, decline_rate > 0.0, "must be positive")?;
        Ok(Self {
            gompertz,
            transition_age,
            decline_rate,
        })
    }

    pub fn gompertz(&self) -> Gompertz {
        self.gompertz
    }

    pub fn transition_age(&self) -> f64 {
        self.transition_age
    }

    pub fn decline_rate(&self) -> f64 {
        self.decline_rate
    }
}

/// Gompertz up to the transition age, then a logistic `c / (1 + e^{−k(x − x₀)})`
/// whose value and slope match the Gompertz curve at the transition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sigmoid {
    gompertz: Gompertz,
    transition_age: f64,
    asymptote: f64,
    steepness: f64,
    midpoint: f64,
    ceiling: f64,
}

impl Sigmoid {
    pub fn new(gompertz: Gompertz, transition_age: f64, asymptote: f64) -> Result<Self, HazardError> {
        check_whole_age("transition_age", transition_age)?;
        check_param(
            "asymptote",
            asymptote,
            asymptote > 0.0 && asymptote <= 1.0,
            "must lie in (0, 1]",
        )?;
        let g = gompertz.annual_q(transition_age);
        let slope = gompertz.annual_q_slope(transition_age);
        check_param(
            "asymptote",
            asymptote,
            g < asymptote && slope > 0.0,
            "must exceed the Gompertz probability at the transition age",
        )?;
        let steepness = slope / (g * (1.0 - g / asymptote));
        let midpoint = transition_age + (asymptote / g - 1.0).ln() / steepness;
        Ok(Self {
            gompertz,
            transition_age,
            asymptote,
            steepness,
            midpoint,
            ceiling: next_below(asymptote),
        })
    }

    pub fn gompertz(&self) -> Gompertz {
        self.gompertz
    }

    pub fn transition_age(&self) -> f64 {
        self.transition_age
    }

    pub fn asymptote(&self) -> f64 {
        self.asymptote
    }

    pub fn steepness(&self) -> f64 {
        self.steepness
    }

    pub fn midpoint(&self) -> f64 {
        self.midpoint
    }

    fn logistic(&self, x: f64) -> f64 {
        let v = self.asymptote / (1.0 + (-self.steepness * (x - self.midpoint)).exp());
        v.min(self.ceiling)
    }
}

/// Largest double strictly below a positive finite `x`.
fn next_below(x: f64) -> f64 {
    f64::from_bits(x.to_bits() - 1)
}

/// Variant tag, used in reports and scenario files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelVariant {
    HardLimit,
    Plateau,
    Decline,
    Sigmoid,
    LifeTable,
}

impl std::fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Self::HardLimit => "hard-limit",
            Self::Plateau => "plateau",
            Self::Decline => "decline",
            Self::Sigmoid => "sigmoid",
            Self::LifeTable => "life-table",
        };
        f.write_str(s)
    }
}

/// A late-life mortality trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "variant", rename_all = "kebab-case")]
pub enum HazardModel {
    HardLimit(HardLimit),
    Plateau(Plateau),
    Decline(Decline),
    Sigmoid(Sigmoid),
    LifeTable(LifeTable),
}

impl HazardModel {
    /// Figure scenario: Gompertz mortality that hits 1 at `limit`.
    pub fn hard_limit(limit: f64) -> Result<Self, HazardError> {
        HardLimit::new(Gompertz::default(), limit).map(Self::HardLimit)
    }

    /// Plateau at annual death probability `plateau_q` from `transition_age`.
    pub fn plateau(plateau_q: f64, transition_age: f64) -> Result<Self, HazardError> {
        Plateau::new(Gompertz::default(), transition_age, plateau_q).map(Self::Plateau)
    }

    /// Plateau parametrized by annual survival probability.
    pub fn plateau_survival(survival: f64, transition_age: f64) -> Result<Self, HazardError> {
        check_param("survival", survival, (0.0..1.0).contains(&survival), "must lie in [0, 1)")?;
        Self::plateau(1.0 - survival, transition_age)
    }

    pub fn decline(decline_rate: f64, transition_age: f64) -> Result<Self, HazardError> {
        Decline::new(Gompertz::default(), transition_age, decline_rate).map(Self::Decline)
    }

    pub fn sigmoid(asymptote: f64, transition_age: f64) -> Result<Self, HazardError> {
        Sigmoid::new(Gompertz::default(), transition_age, asymptote).map(Self::Sigmoid)
    }

    pub fn variant(&self) -> ModelVariant {
        match self {
            Self::HardLimit(_) => ModelVariant::HardLimit,
            Self::Plateau(_) => ModelVariant::Plateau,
            Self::Decline(_) => ModelVariant::Decline,
            Self::Sigmoid(_) => ModelVariant::Sigmoid,
            Self::LifeTable(_) => ModelVariant::LifeTable,
        }
    }

    /// Annual probability of death at `age`, without argument checks.
    pub(crate) fn q(&self, age: f64) -> f64 {
        match self {
            Self::HardLimit(m) => {
                if age >= m.limit {
                    1.0
                } else {
                    m.gompertz.annual_q(age)
                }
            }
            Self::Plateau(m) => {
                if age >= m.transition_age {
                    m.plateau_q
                } else {
                    m.gompertz.annual_q(age).min(m.plateau_q)
                }
            }
            Self::Decline(m) => {
                if age <= m.transition_age {
                    m.gompertz.annual_q(age)
                } else {
                    m.gompertz.annual_q(m.transition_age)
                        * (-m.decline_rate * (age - m.transition_age)).exp()
                }
            }
            Self::Sigmoid(m) => {
                if age < m.transition_age {
                    m.gompertz.annual_q(age)
                } else {
                    m.logistic(age)
                }
            }
            Self::LifeTable(t) => t.q_at(age),
        }
    }

    /// Annual probability of death for someone alive at `age`.
    pub fn annual_death_prob(&self, age: f64) -> Result<f64, HazardError> {
        if !age.is_finite() || age < 0.0 {
            return Err(HazardError::InvalidAge(age));
        }
        Ok(self.q(age))
    }

    /// Age at which survival becomes impossible, if the model has one.
    pub fn endpoint(&self) -> Option<f64> {
        match self {
            Self::HardLimit(m) => Some(m.limit),
            Self::LifeTable(t) => t.first_certain_death_age(),
            Self::Plateau(m) if m.plateau_q >= 1.0 => Some(m.transition_age),
            _ => None,
        }
    }

    /// Natural log of survival from `from_age` to `to_age`. `-inf` when the
    /// interval crosses an age with certain death.
    pub fn log_survival(&self, from_age: f64, to_age: f64) -> Result<f64, HazardError> {
        check_interval(from_age, to_age)?;
        Ok(self.log_survival_unchecked(from_age, to_age))
    }

    pub(crate) fn log_survival_unchecked(&self, from_age: f64, to_age: f64) -> f64 {
        let mut total = 0.0;
        for seg in YearSegments::new(self, from_age, to_age) {
            if seg.q >= 1.0 {
                return f64::NEG_INFINITY;
            }
            total += seg.length * (-seg.q).ln_1p();
        }
        total
    }

    /// Probability of surviving from `from_age` to `to_age`: the product of
    /// `1 − q(y)` over whole years, with partial years pro-rated as
    /// `(1 − q)^fraction`. Runs of identical `q` are raised to their combined
    /// length in one `powf`, so a plateau gives `s^k` exactly.
    pub fn cumulative_survival(&self, from_age: f64, to_age: f64) -> Result<f64, HazardError> {
        check_interval(from_age, to_age)?;
        let mut product = 1.0;
        let mut run_q = f64::NAN;
        let mut run_len = 0.0;
        for seg in YearSegments::new(self, from_age, to_age) {
            if seg.q >= 1.0 {
                return Ok(0.0);
            }
            if seg.q == run_q {
                run_len += seg.length;
            } else {
                if run_len > 0.0 {
                    product *= (1.0 - run_q).powf(run_len);
                }
                run_q = seg.q;
                run_len = seg.length;
            }
        }
        if run_len > 0.0 {
            product *= (1.0 - run_q).powf(run_len);
        }
        Ok(product)
    }

    /// Evenly spaced `(age, q)` rows from `age_start` through `age_end`.
    pub fn trajectory_table(
        &self,
        age_start: f64,
        age_end: f64,
        step: f64,
    ) -> Result<Vec<TrajectoryPoint>, HazardError> {
        if !(step.is_finite() && step > 0.0) {
            return Err(HazardError::InvalidStep(step));
        }
        if !age_start.is_finite() || age_start < 0.0 {
            return Err(HazardError::InvalidAge(age_start));
        }
        if !age_end.is_finite() {
            return Err(HazardError::InvalidAge(age_end));
        }
        if age_start >= age_end {
            return Err(HazardError::ReversedInterval {
                from: age_start,
                to: age_end,
            });
        }
        // Index-based ages avoid drift from repeated addition.
        let n = ((age_end - age_start) / step + 1e-9).floor() as usize;
        Ok((0..=n)
            .map(|i| {
                let age = age_start + i as f64 * step;
                TrajectoryPoint {
                    age,
                    annual_death_prob: self.q(age),
                }
            })
            .collect())
    }
}

fn check_interval(from_age: f64, to_age: f64) -> Result<(), HazardError> {
    if !from_age.is_finite() || from_age < 0.0 {
        return Err(HazardError::InvalidAge(from_age));
    }
    if !to_age.is_finite() {
        return Err(HazardError::InvalidAge(to_age));
    }
    if from_age > to_age {
        return Err(HazardError::ReversedInterval {
            from: from_age,
            to: to_age,
        });
    }
    Ok(())
}

/// One row of a trajectory table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub age: f64,
    pub annual_death_prob: f64,
}

/// Piece of an age interval lying inside one year of age.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct YearSegment {
    pub start: f64,
    pub length: f64,
    pub q: f64,
}

/// Splits `[from, to)` at whole ages; each piece carries `q` of its year.
/// With `to = +inf` the iterator is unbounded.
pub(crate) struct YearSegments<'a> {
    model: &'a HazardModel,
    cursor: f64,
    end: f64,
}

impl<'a> YearSegments<'a> {
    pub fn new(model: &'a HazardModel, from: f64, to: f64) -> Self {
        Self {
            model,
            cursor: from,
            end: to,
        }
    }
}

impl Iterator for YearSegments<'_> {
    type Item = YearSegment;

    fn next(&mut self) -> Option<YearSegment> {
        if self.cursor >= self.end {
            return None;
        }
        let year = self.cursor.floor();
        let stop = (year + 1.0).min(self.end);
        let seg = YearSegment {
            start: self.cursor,
            length: stop - self.cursor,
            q: self.model.q(year),
        };
        self.cursor = stop;
        Some(seg)
    }
}

/// Scenario file: TOML with one `[[scenario]]` block per model.
///
/// ```toml
/// [[scenario]]
/// name = "unlimited-but-short"
/// variant = "plateau"
/// plateau_q = 0.53
/// transition_age = 110
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub variant: ModelVariant,
    #[serde(default)]
    pub gompertz_a: Option<f64>,
    #[serde(default)]
    pub gompertz_b: Option<f64>,
    #[serde(default)]
    pub transition_age: Option<f64>,
    #[serde(default)]
    pub limit: Option<f64>,
    #[serde(default)]
    pub plateau_q: Option<f64>,
    #[serde(default)]
    pub decline_rate: Option<f64>,
    #[serde(default)]
    pub asymptote: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct ScenarioFile {
    #[serde(default)]
    scenario: Vec<ScenarioSpec>,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario file: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("scenario {name}: {source}")]
    Model {
        name: String,
        #[source]
        source: HazardError,
    },
    #[error("scenario {0}: life-table scenarios must be loaded from a table file")]
    LifeTableNotInline(String),
}

/// Figure defaults shared by the scenario constructors.
pub mod defaults {
    pub const HARD_LIMIT: f64 = 115.0;
    pub const PLATEAU_Q: f64 = 0.53;
    pub const PLATEAU_TRANSITION: f64 = 110.0;
    pub const DECLINE_RATE: f64 = 0.05;
    pub const DECLINE_TRANSITION: f64 = 110.0;
    pub const SIGMOID_ASYMPTOTE: f64 = 1.0;
    pub const SIGMOID_TRANSITION: f64 = 100.0;
}

impl ScenarioSpec {
    pub fn build(&self) -> Result<HazardModel, ScenarioError> {
        let wrap = |source| ScenarioError::Model {
            name: self.name.clone(),
            source,
        };
        let g = Gompertz::new(
            self.gompertz_a.unwrap_or(DEFAULT_GOMPERTZ_A),
            self.gompertz_b.unwrap_or(DEFAULT_GOMPERTZ_B),
        )
        .map_err(wrap)?;
        let model = match self.variant {
            ModelVariant::HardLimit => {
                HardLimit::new(g, self.limit.unwrap_or(defaults::HARD_LIMIT)).map(HazardModel::HardLimit)
            }
            ModelVariant::Plateau => Plateau::new(
                g,
                self.transition_age.unwrap_or(defaults::PLATEAU_TRANSITION),
                self.plateau_q.unwrap_or(defaults::PLATEAU_Q),
            )
            .map(HazardModel::Plateau),
            ModelVariant::Decline => Decline::new(
                g,
                self.transition_age.unwrap_or(defaults::DECLINE_TRANSITION),
                self.decline_rate.unwrap_or(defaults::DECLINE_RATE),
            )
            .map(HazardModel::Decline),
            ModelVariant::Sigmoid => Sigmoid::new(
                g,
                self.transition_age.unwrap_or(defaults::SIGMOID_TRANSITION),
                self.asymptote.unwrap_or(defaults::SIGMOID_ASYMPTOTE),
            )
            .map(HazardModel::Sigmoid),
            ModelVariant::LifeTable => return Err(ScenarioError::LifeTableNotInline(self.name.clone())),
        };
        model.map_err(wrap)
    }
}

/// Parses every `[[scenario]]` block into a named model.
pub fn parse_scenarios(text: &str) -> Result<Vec<(String, HazardModel)>, ScenarioError> {
    let file: ScenarioFile = toml::from_str(text)?;
    file.scenario
        .iter()
        .map(|s| s.build().map(|m| (s.name.clone(), m)))
        .collect()
}
