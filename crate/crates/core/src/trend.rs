//! Yearly extreme-age series (MRAD and k-th highest ages) and the trend
//! tools run on them: segmented regression with a searched break year, a
//! single OLS line, and Pearson/Spearman correlation.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, FisherSnedecor, StudentsT};
use thiserror::Error;

use crate::data_io::{cell, write_csv, DataError, LifeRecord};
use crate::rng::Stream;
use crate::survival::{max_exponential_mean, SUPERCENTENARIAN_AGE};

/// Rows required on each side of a candidate break.
pub const MIN_SEGMENT_ROWS: usize = 4;
/// Highest rank carried in the CSV form.
pub const CSV_MAX_RANK: usize = 5;
/// Relative SSE difference (against the total sum of squares) below which
/// two candidate breaks are tied.
const TIE_TOLERANCE: f64 = 1e-12;
pub const SERIES_HEADER: [&str; 7] = ["year", "n_t", "mrad", "rank2", "rank3", "rank4", "rank5"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrendError {
    #[error("k_max must be at least 1")]
    InvalidRank,
    #[error("years must be strictly increasing ({0} follows {1})")]
    UnorderedYears(i32, i32),
    #[error("row for {year}: {reason}")]
    InvalidRow { year: i32, reason: String },
    #[error("series has {got} usable rows, need at least {needed}")]
    TooShort { needed: usize, got: usize },
    #[error("all rows share one year; no line can be fitted")]
    ConstantYear,
    #[error("field `{0}` has zero variance")]
    ZeroVariance(String),
    #[error("unknown series field `{0}`")]
    UnknownField(String),
}

/// One calendar year: deaths counted and the highest ages recorded.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct YearlyExtremeRow {
    pub year: i32,
    pub n_t: u64,
    pub mrad: f64,
    /// Ages of rank 2, 3, ..., k_max; `None` when fewer deaths occurred.
    pub kth_highest: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct YearlyExtremeSeries {
    pub rows: Vec<YearlyExtremeRow>,
    pub country_filter: Option<String>,
}

impl YearlyExtremeSeries {
    /// Validates ordering and the rank invariants.
    pub fn from_rows(rows: Vec<YearlyExtremeRow>, country_filter: Option<String>) -> Result<Self, TrendError> {
        for w in rows.windows(2) {
            if w[1].year <= w[0].year {
                return Err(TrendError::UnorderedYears(w[1].year, w[0].year));
            }
        }
        for r in &rows {
            let bad = |reason: &str| TrendError::InvalidRow {
                year: r.year,
                reason: reason.into(),
            };
            if !r.mrad.is_finite() {
                return Err(bad("mrad is not finite"));
            }
            let mut prev = r.mrad;
            let mut present = 1u64;
            let mut gap = false;
            for v in &r.kth_highest {
                match v {
                    Some(v) if gap || *v > prev || !v.is_finite() => {
                        return Err(bad("ranked ages must be non-increasing and contiguous"))
                    }
                    Some(v) => {
                        prev = *v;
                        present += 1;
                    }
                    None => gap = true,
                }
            }
            if r.n_t < present {
                return Err(bad("n_t is smaller than the number of ranked ages"));
            }
        }
        Ok(Self { rows, country_filter })
    }

    /// A bare series of `(year, value)` points with `n_t = 1`, for synthetic
    /// trend work.
    pub fn from_points(points: &[(i32, f64)]) -> Result<Self, TrendError> {
        Self::from_rows(
            points
                .iter()
                .map(|&(year, mrad)| YearlyExtremeRow {
                    year,
                    n_t: 1,
                    mrad,
                    kth_highest: Vec::new(),
                })
                .collect(),
            None,
        )
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    /// `(year, value)` for every row where `field` is defined.
    pub fn points(&self, field: SeriesField) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .filter_map(|r| field.value(r).map(|v| (r.year as f64, v)))
            .collect()
    }

    /// CSV `year,n_t,mrad,rank2,...,rank5`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DataError> {
        write_csv(
            writer,
            &SERIES_HEADER,
            self.rows.iter().map(|r| {
                let mut cells = vec![r.year.to_string(), r.n_t.to_string(), r.mrad.to_string()];
                cells.extend((2..=CSV_MAX_RANK).map(|k| cell(r.kth_highest.get(k - 2).copied().flatten())));
                cells
            }),
        )
    }
}

/// Which column of a series to analyze.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum SeriesField {
    Year,
    DeathCount,
    Mrad,
    /// k-th highest age, `k ≥ 2`.
    Rank(usize),
    /// `110 + μ·H_{n_t}`, the expected maximum of `n_t` exponential
    /// excesses with mean `μ`.
    Overlay(f64),
}

impl SeriesField {
    pub fn value(&self, row: &YearlyExtremeRow) -> Option<f64> {
        match *self {
            SeriesField::Year => Some(row.year as f64),
            SeriesField::DeathCount => Some(row.n_t as f64),
            SeriesField::Mrad => Some(row.mrad),
            SeriesField::Rank(1) => Some(row.mrad),
            SeriesField::Rank(k) => row.kth_highest.get(k.checked_sub(2)?).copied().flatten(),
            SeriesField::Overlay(mu) => max_exponential_mean(row.n_t, mu).ok(),
        }
    }
}

impl fmt::Display for SeriesField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SeriesField::Year => write!(f, "year"),
            SeriesField::DeathCount => write!(f, "n_t"),
            SeriesField::Mrad => write!(f, "mrad"),
            SeriesField::Rank(k) => write!(f, "rank{k}"),
            SeriesField::Overlay(mu) => write!(f, "overlay:{mu}"),
        }
    }
}

/// Accepts `year`, `n_t`, `mrad`, `rankK` and `overlay:MU`.
impl FromStr for SeriesField {
    type Err = TrendError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let unknown = || TrendError::UnknownField(s.to_string());
        match s {
            "year" => Ok(SeriesField::Year),
            "n_t" => Ok(SeriesField::DeathCount),
            "mrad" => Ok(SeriesField::Mrad),
            _ => {
                if let Some(k) = s.strip_prefix("rank") {
                    let k: usize = k.parse().map_err(|_| unknown())?;
                    if k == 0 {
                        return Err(unknown());
                    }
                    Ok(SeriesField::Rank(k))
                } else if let Some(mu) = s.strip_prefix("overlay:") {
                    let mu: f64 = mu.parse().map_err(|_| unknown())?;
                    if !(mu.is_finite() && mu > 0.0) {
                        return Err(unknown());
                    }
                    Ok(SeriesField::Overlay(mu))
                } else {
                    Err(unknown())
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtremesOptions {
    pub k_max: usize,
    pub country: Option<String>,
    /// Deaths at or above this age count towards `n_t`.
    pub min_age: f64,
    pub validated_only: bool,
}

impl Default for ExtremesOptions {
    fn default() -> Self {
        Self {
            k_max: CSV_MAX_RANK,
            country: None,
            min_age: SUPERCENTENARIAN_AGE,
            validated_only: false,
        }
    }
}

/// One row per calendar year with at least one qualifying death. An empty
/// series means nothing qualified.
pub fn yearly_extremes(records: &[LifeRecord], options: &ExtremesOptions) -> Result<YearlyExtremeSeries, TrendError> {
    if options.k_max == 0 {
        return Err(TrendError::InvalidRank);
    }
    let mut by_year: BTreeMap<i32, Vec<f64>> = BTreeMap::new();
    for r in records {
        if options.validated_only && !r.validated {
            continue;
        }
        if options.country.as_deref().is_some_and(|c| c != r.country) {
            continue;
        }
        if r.age_at_death() < options.min_age {
            continue;
        }
        by_year.entry(r.death_year()).or_default().push(r.age_at_death());
    }
    let rows = by_year
        .into_iter()
        .map(|(year, mut ages)| {
            ages.sort_by(|a, b| b.total_cmp(a));
            YearlyExtremeRow {
                year,
                n_t: ages.len() as u64,
                mrad: ages[0],
                kth_highest: (1..options.k_max).map(|i| ages.get(i).copied()).collect(),
            }
        })
        .collect();
    Ok(YearlyExtremeSeries {
        rows,
        country_filter: options.country.clone(),
    })
}

/// Ordinary least squares on centered `x`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Ols {
    slope: f64,
    intercept: f64,
    sse: f64,
}

fn ols(points: &[(f64, f64)]) -> Option<Ols> {
    let n = points.len() as f64;
    let xm = points.iter().map(|p| p.0).sum::<f64>() / n;
    let ym = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - xm).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - xm) * (p.1 - ym)).sum();
    let slope = sxy / sxx;
    let sse = points.iter().map(|p| (p.1 - ym - slope * (p.0 - xm)).powi(2)).sum();
    Some(Ols {
        slope,
        intercept: ym - slope * xm,
        sse,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Two-sided p-value for `t` on `df` degrees of freedom; exact fits give 0.
fn t_p_value(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    (2.0 * dist.sf(t.abs())).min(1.0)
}

/// OLS line with a t-test on the slope.
pub fn fit_linear(series: &YearlyExtremeSeries, field: SeriesField) -> Result<LinearFit, TrendError> {
    let points = series.points(field);
    if points.len() < 3 {
        return Err(TrendError::TooShort {
            needed: 3,
            got: points.len(),
        });
    }
    let n = points.len();
    if points.iter().all(|p| p.1 == points[0].1) {
        return Ok(LinearFit {
            slope: 0.0,
            intercept: points[0].1,
            p_value: 1.0,
            n,
        });
    }
    let fit = ols(&points).ok_or(TrendError::ConstantYear)?;
    let xm = points.iter().map(|p| p.0).sum::<f64>() / n as f64;
    let sxx: f64 = points.iter().map(|p| (p.0 - xm).powi(2)).sum();
    let df = (n - 2) as f64;
    let se = (fit.sse / df / sxx).sqrt();
    let t = if se == 0.0 { f64::INFINITY } else { fit.slope / se };
    Ok(LinearFit {
        slope: fit.slope,
        intercept: fit.intercept,
        p_value: t_p_value(t, df),
        n,
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SegmentedOptions {
    /// Fit a continuous hinge (3 parameters) instead of two free lines.
    pub joined: bool,
    /// Residual-permutation p-value: `(shuffles, seed)`.
    pub permutation: Option<(usize, u64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentedFit {
    /// Last year of the first segment.
    pub break_year: i32,
    pub slope_before: f64,
    pub slope_after: f64,
    /// Lines are `intercept + slope·year`.
    pub intercept_before: f64,
    pub intercept_after: f64,
    pub sse_segmented: f64,
    pub sse_single: f64,
    pub f_statistic: f64,
    pub p_value: f64,
    pub joined: bool,
    pub n: usize,
    /// Share of shuffled-residual series whose best break fits at least as
    /// well, when requested.
    pub permutation_p_value: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    split: usize,
    slope_before: f64,
    slope_after: f64,
    intercept_before: f64,
    intercept_after: f64,
    sse: f64,
}

fn free_split(points: &[(f64, f64)], split: usize) -> Option<Candidate> {
    let a = ols(&points[..split])?;
    let b = ols(&points[split..])?;
    Some(Candidate {
        split,
        slope_before: a.slope,
        slope_after: b.slope,
        intercept_before: a.intercept,
        intercept_after: b.intercept,
        sse: a.sse + b.sse,
    })
}

/// `y = α + β(t − t_b) + γ(t − t_b)₊` with `t_b` the last year before the
/// split.
fn hinge_split(points: &[(f64, f64)], split: usize) -> Option<Candidate> {
    let tb = points[split - 1].0;
    let n = points.len();
    let x = DMatrix::from_fn(n, 3, |i, j| {
        let d = points[i].0 - tb;
        match j {
            0 => 1.0,
            1 => d,
            _ => d.max(0.0),
        }
    });
    let y = DVector::from_iterator(n, points.iter().map(|p| p.1));
    let beta = x.clone().svd(true, true).solve(&y, 1e-12).ok()?;
    let resid = &y - &x * &beta;
    let (alpha, b, c) = (beta[0], beta[1], beta[2]);
    Some(Candidate {
        split,
        slope_before: b,
        slope_after: b + c,
        intercept_before: alpha - b * tb,
        intercept_after: alpha - (b + c) * tb,
        sse: resid.norm_squared(),
    })
}

/// Minimum-SSE split. Splits within round-off of the minimum count as
/// ties and go to the latest one, so a kink observation shared by both
/// lines is assigned to the first segment.
fn best_split(points: &[(f64, f64)], joined: bool) -> Option<Candidate> {
    let n = points.len();
    let candidates: Vec<Candidate> = (MIN_SEGMENT_ROWS..=n - MIN_SEGMENT_ROWS)
        .filter_map(|split| {
            if joined {
                hinge_split(points, split)
            } else {
                free_split(points, split)
            }
        })
        .collect();
    let min = candidates.iter().map(|c| c.sse).fold(f64::INFINITY, f64::min);
    let ym = points.iter().map(|p| p.1).sum::<f64>() / n as f64;
    let total: f64 = points.iter().map(|p| (p.1 - ym).powi(2)).sum();
    let tie = min + TIE_TOLERANCE * total;
    candidates.into_iter().rev().find(|c| c.sse <= tie)
}

/// F statistic and p-value for `extra` additional parameters.
fn f_test(sse_single: f64, sse_seg: f64, extra: f64, df: f64) -> (f64, f64) {
    let gain = (sse_single - sse_seg).max(0.0);
    if sse_seg == 0.0 {
        return if gain > 0.0 { (f64::INFINITY, 0.0) } else { (0.0, 1.0) };
    }
    let f = (gain / extra) / (sse_seg / df);
    let dist = FisherSnedecor::new(extra, df).expect("positive degrees of freedom");
    (f, dist.sf(f))
}

/// Break year chosen by minimum total SSE over every split leaving at least
/// four rows on each side. Significance is a plain F-test against one line,
/// which ignores that the break was searched for; the permutation option
/// accounts for the search.
pub fn fit_segmented(
    series: &YearlyExtremeSeries,
    field: SeriesField,
    options: &SegmentedOptions,
) -> Result<SegmentedFit, TrendError> {
    let points = series.points(field);
    let n = points.len();
    if n < 2 * MIN_SEGMENT_ROWS {
        return Err(TrendError::TooShort {
            needed: 2 * MIN_SEGMENT_ROWS,
            got: n,
        });
    }
    let single = ols(&points).ok_or(TrendError::ConstantYear)?;
    let best = best_split(&points, options.joined).ok_or(TrendError::ConstantYear)?;
    let (extra, params) = if options.joined { (1.0, 3.0) } else { (2.0, 4.0) };
    let df = n as f64 - params;
    // Nesting guarantees this up to round-off.
    let sse_segmented = best.sse.min(single.sse);
    let (f_statistic, p_value) = f_test(single.sse, sse_segmented, extra, df);

    let permutation_p_value = options.permutation.map(|(shuffles, seed)| {
        let fitted: Vec<f64> = points.iter().map(|p| single.intercept + single.slope * p.0).collect();
        let resid: Vec<f64> = points.iter().zip(&fitted).map(|(p, f)| p.1 - f).collect();
        let exceed: usize = (0..shuffles)
            .into_par_iter()
            .map(|i| {
                let mut r = resid.clone();
                let mut s = Stream::new(seed, i as u64, 0);
                for j in (1..r.len()).rev() {
                    r.swap(j, s.below(j as u64 + 1) as usize);
                }
                let shuffled: Vec<(f64, f64)> =
                    points.iter().zip(fitted.iter().zip(&r)).map(|(p, (f, e))| (p.0, f + e)).collect();
                let one = ols(&shuffled).map_or(0.0, |o| o.sse);
                let seg = best_split(&shuffled, options.joined).map_or(one, |c| c.sse.min(one));
                let f_star = f_test(one, seg, extra, df).0;
                usize::from(f_star >= f_statistic)
            })
            .sum();
        (1 + exceed) as f64 / (1 + shuffles) as f64
    });

    Ok(SegmentedFit {
        break_year: series
            .rows
            .iter()
            .filter(|r| field.value(r).is_some())
            .nth(best.split - 1)
            .map(|r| r.year)
            .expect("split index is inside the series"),
        slope_before: best.slope_before,
        slope_after: best.slope_after,
        intercept_before: best.intercept_before,
        intercept_after: best.intercept_after,
        sse_segmented,
        sse_single: single.sse,
        f_statistic,
        p_value,
        joined: options.joined,
        n,
        permutation_p_value,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationMethod {
    Pearson,
    Spearman,
}

impl FromStr for CorrelationMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pearson" => Ok(Self::Pearson),
            "spearman" => Ok(Self::Spearman),
            _ => Err(format!("unknown correlation method `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Correlation {
    pub method: CorrelationMethod,
    pub coefficient: f64,
    pub p_value: f64,
    pub n: usize,
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let xm = x.iter().sum::<f64>() / n;
    let ym = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - xm) * (b - ym);
        sxx += (a - xm).powi(2);
        syy += (b - ym).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Ranks starting at 1, ties sharing their mean rank.
pub fn mid_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Correlation over rows where both fields are defined, with a two-sided
/// p-value from `t = r√((n−2)/(1−r²))`.
pub fn correlate(
    series: &YearlyExtremeSeries,
    x_field: SeriesField,
    y_field: SeriesField,
    method: CorrelationMethod,
) -> Result<Correlation, TrendError> {
    let (mut x, mut y): (Vec<f64>, Vec<f64>) = series
        .rows
        .iter()
        .filter_map(|r| Some((x_field.value(r)?, y_field.value(r)?)))
        .unzip();
    let n = x.len();
    if n < 3 {
        return Err(TrendError::TooShort { needed: 3, got: n });
    }
    if method == CorrelationMethod::Spearman {
        x = mid_ranks(&x);
        y = mid_ranks(&y);
    }
    let r = pearson(&x, &y).ok_or_else(|| {
        let name = if x.iter().all(|v| *v == x[0]) { x_field } else { y_field };
        TrendError::ZeroVariance(name.to_string())
    })?;
    let df = (n - 2) as f64;
    let t = if r.abs() == 1.0 {
        f64::INFINITY
    } else {
        r * (df / (1.0 - r * r)).sqrt()
    };
    Ok(Correlation {
        method,
        coefficient: r,
        p_value: t_p_value(t, df),
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn death(id: &str, year: i32, age: f64, country: &str) -> LifeRecord {
        let d = NaiveDate::from_ymd_opt(year, 7, 1).unwrap();
        let b = d - chrono::Duration::days((age * 365.2425).round() as i64);
        LifeRecord::new(id, b, d, country, true).unwrap()
    }

    fn broken_line(b0: f64, b1: f64, from: i32, brk: i32, to: i32) -> Vec<(i32, f64)> {
        (from..=to)
            .map(|y| {
                let at_break = 110.0 + b0 * (brk - from) as f64;
                let v = if y <= brk {
                    110.0 + b0 * (y - from) as f64
                } else {
                    at_break + b1 * (y - brk) as f64
                };
                (y, v)
            })
            .collect()
    }

    #[test]
    fn extremes_rank_ages() {
        let recs = vec![
            death("a", 1995, 111.2, "FR"),
            death("b", 1995, 114.9, "FR"),
            death("c", 1995, 112.0, "US"),
            death("d", 1996, 110.5, "FR"),
            death("e", 1996, 108.0, "FR"),
        ];
        let s = yearly_extremes(&recs, &ExtremesOptions::default()).unwrap();
        assert_eq!(s.len(), 2);
        let r = &s.rows[0];
        assert_eq!((r.year, r.n_t), (1995, 3));
        assert!((r.mrad - 114.9).abs() < 0.003);
        assert!((r.kth_highest[0].unwrap() - 112.0).abs() < 0.003);
        assert_eq!(r.kth_highest.len(), 4);
        assert!(r.kth_highest[2].is_none());
        assert_eq!(s.rows[1].n_t, 1);
        let total: u64 = s.rows.iter().map(|r| r.n_t).sum();
        assert_eq!(total, 4);

        let fr = yearly_extremes(
            &recs,
            &ExtremesOptions {
                country: Some("FR".into()),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(fr.rows[0].n_t, 2);
        let none = yearly_extremes(
            &recs,
            &ExtremesOptions {
                country: Some("JP".into()),
                ..Default::default()
            },
        )
        .unwrap();
        assert!(none.is_empty());
        assert_eq!(none.country_filter.as_deref(), Some("JP"));
    }

    #[test]
    fn series_csv_layout() {
        let recs = vec![death("a", 1995, 111.0, "FR"), death("b", 1995, 113.0, "FR")];
        let s = yearly_extremes(&recs, &ExtremesOptions::default()).unwrap();
        let mut out = Vec::new();
        s.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "year,n_t,mrad,rank2,rank3,rank4,rank5");
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row.len(), 7);
        assert_eq!(&row[..2], &["1995", "2"]);
        assert_eq!(&row[4..], &["", "", ""]);
    }

    #[test]
    fn series_validation() {
        assert!(YearlyExtremeSeries::from_points(&[(2000, 1.0), (1999, 2.0)]).is_err());
        let bad = YearlyExtremeRow {
            year: 2000,
            n_t: 2,
            mrad: 112.0,
            kth_highest: vec![Some(113.0)],
        };
        assert!(YearlyExtremeSeries::from_rows(vec![bad], None).is_err());
    }

    #[test]
    fn field_parsing() {
        assert_eq!("mrad".parse::<SeriesField>().unwrap(), SeriesField::Mrad);
        assert_eq!("rank3".parse::<SeriesField>().unwrap(), SeriesField::Rank(3));
        assert_eq!("overlay:1.31".parse::<SeriesField>().unwrap(), SeriesField::Overlay(1.31));
        assert!("rank".parse::<SeriesField>().is_err());
        assert!("overlay:-1".parse::<SeriesField>().is_err());
        for f in [SeriesField::DeathCount, SeriesField::Rank(4), SeriesField::Overlay(1.5)] {
            assert_eq!(f.to_string().parse::<SeriesField>().unwrap(), f);
        }
    }

    #[test]
    fn segmented_recovers_noiseless_breaks() {
        for (b0, b1) in [(0.7, 0.2), (0.2, -0.3)] {
            let s = YearlyExtremeSeries::from_points(&broken_line(b0, b1, 1968, 1994, 2006)).unwrap();
            let fit = fit_segmented(&s, SeriesField::Mrad, &SegmentedOptions::default()).unwrap();
            assert_eq!(fit.break_year, 1994);
            assert!((fit.slope_before - b0).abs() < 1e-9);
            assert!((fit.slope_after - b1).abs() < 1e-9);
            assert!(fit.sse_segmented <= fit.sse_single);
            assert!(fit.p_value < 1e-6);

            let joined = fit_segmented(
                &s,
                SeriesField::Mrad,
                &SegmentedOptions {
                    joined: true,
                    permutation: None,
                },
            )
            .unwrap();
            assert_eq!(joined.break_year, 1994);
            assert!((joined.slope_before - b0).abs() < 1e-9);
            assert!((joined.slope_after - b1).abs() < 1e-9);
        }
    }

    #[test]
    fn segmented_requires_four_each_side() {
        let s = YearlyExtremeSeries::from_points(&broken_line(0.7, 0.2, 1990, 1994, 1996)).unwrap();
        assert!(matches!(
            fit_segmented(&s, SeriesField::Mrad, &SegmentedOptions::default()),
            Err(TrendError::TooShort { .. })
        ));
        let s = YearlyExtremeSeries::from_points(&broken_line(0.7, 0.2, 1990, 1994, 1997)).unwrap();
        let fit = fit_segmented(&s, SeriesField::Mrad, &SegmentedOptions::default()).unwrap();
        assert_eq!(fit.break_year, 1993);
    }

    #[test]
    fn permutation_is_seeded() {
        let mut st = Stream::new(5, 0, 0);
        let pts: Vec<(i32, f64)> = (1970..2010).map(|y| (y, 0.1 * (y - 1970) as f64 + st.normal())).collect();
        let s = YearlyExtremeSeries::from_points(&pts).unwrap();
        let opts = SegmentedOptions {
            joined: false,
            permutation: Some((200, 9)),
        };
        let a = fit_segmented(&s, SeriesField::Mrad, &opts).unwrap();
        let b = fit_segmented(&s, SeriesField::Mrad, &opts).unwrap();
        assert_eq!(a.permutation_p_value, b.permutation_p_value);
        let p = a.permutation_p_value.unwrap();
        assert!(p > 0.0 && p <= 1.0);
    }

    #[test]
    fn linear_fits() {
        let pts: Vec<(i32, f64)> = (1980..2010).map(|y| (y, 0.15 * (y - 1980) as f64 + 112.0)).collect();
        let s = YearlyExtremeSeries::from_points(&pts).unwrap();
        let f = fit_linear(&s, SeriesField::Mrad).unwrap();
        assert!((f.slope - 0.15).abs() < 1e-12);
        assert!(f.p_value < 1e-12);

        let flat: Vec<(i32, f64)> = (1980..2010).map(|y| (y, 113.7)).collect();
        let f = fit_linear(&YearlyExtremeSeries::from_points(&flat).unwrap(), SeriesField::Mrad).unwrap();
        assert_eq!(f.slope, 0.0);
        assert_eq!(f.p_value, 1.0);

        let mut st = Stream::new(17, 0, 0);
        let noisy: Vec<(i32, f64)> = (0..30).map(|i| (1980 + i, 0.2 * i as f64 + st.normal())).collect();
        let f = fit_linear(&YearlyExtremeSeries::from_points(&noisy).unwrap(), SeriesField::Mrad).unwrap();
        assert!((f.slope - 0.2).abs() < 0.15, "{}", f.slope);

        let short = YearlyExtremeSeries::from_points(&[(2000, 1.0), (2001, 2.0)]).unwrap();
        assert!(fit_linear(&short, SeriesField::Mrad).is_err());
    }

    fn xy_series(x: &[f64], y: &[f64]) -> YearlyExtremeSeries {
        // x rides in n_t, y in mrad.
        let rows = x
            .iter()
            .zip(y)
            .enumerate()
            .map(|(i, (&a, &b))| YearlyExtremeRow {
                year: 2000 + i as i32,
                n_t: a as u64,
                mrad: b,
                kth_highest: vec![],
            })
            .collect();
        YearlyExtremeSeries::from_rows(rows, None).unwrap()
    }

    #[test]
    fn correlation_oracles() {
        let s = xy_series(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 4.0, 6.0, 8.0, 10.0]);
        let c = correlate(&s, SeriesField::DeathCount, SeriesField::Mrad, CorrelationMethod::Pearson).unwrap();
        assert_eq!(c.coefficient, 1.0);
        assert_eq!(c.p_value, 0.0);

        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [1.0, 4.0, 2.0, 8.0];
        let s = xy_series(&x, &y);
        let sp = correlate(&s, SeriesField::DeathCount, SeriesField::Mrad, CorrelationMethod::Spearman).unwrap();
        // Ranks of y are (1, 3, 2, 4): Pearson of ranks is 0.8.
        assert!((sp.coefficient - 0.8).abs() < 1e-12);

        let xy = correlate(&s, SeriesField::DeathCount, SeriesField::Mrad, CorrelationMethod::Pearson).unwrap();
        let yx = correlate(&s, SeriesField::Mrad, SeriesField::DeathCount, CorrelationMethod::Pearson).unwrap();
        assert!((xy.coefficient - yx.coefficient).abs() < 1e-15);

        let flat = xy_series(&[3.0, 3.0, 3.0], &[1.0, 2.0, 3.0]);
        assert!(matches!(
            correlate(&flat, SeriesField::DeathCount, SeriesField::Mrad, CorrelationMethod::Pearson),
            Err(TrendError::ZeroVariance(_))
        ));
    }

    #[test]
    fn mid_ranks_share_ties() {
        assert_eq!(mid_ranks(&[10.0, 20.0, 20.0, 5.0]), vec![2.0, 3.5, 3.5, 1.0]);
    }

    #[test]
    fn overlay_tracks_counts() {
        let s = xy_series(&[5.0, 35.0, 35.0], &[113.0, 115.0, 116.0]);
        let v: Vec<f64> = s.points(SeriesField::Overlay(1.31)).iter().map(|p| p.1).collect();
        assert!((v[0] - 112.991).abs() < 1e-3);
        assert!((v[1] - 115.432).abs() < 1e-3);
    }
}
