//! Death records, life tables, and the CSV/JSON shapes the CLI emits.
//!
//! Record files follow an IDL/GRG-like layout:
//!
//! ```text
//! id,birth_date,death_date,country,validated
//! JC1,1875-02-21,1997-08-04,FR,true
//! ```
//!
//! Life tables follow an HMD-like `age,qx` layout with contiguous integer
//! ages. Writers emit the canonical form, so `write(parse(x)) == x` for
//! canonical inputs.

use std::collections::HashSet;
use std::io::{Read, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Days per year used to turn day counts into ages (Gregorian mean year).
pub const DAYS_PER_YEAR: f64 = 365.2425;

pub const RECORD_HEADER: [&str; 5] = ["id", "birth_date", "death_date", "country", "validated"];
pub const LIFE_TABLE_HEADER: [&str; 2] = ["age", "qx"];

const DATE_FORMAT: &str = "%Y-%m-%d";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error("expected header `{expected}`, found `{found}`")]
    Header { expected: String, found: String },
    #[error("line {line}, column {column}: invalid date `{value}`")]
    Date {
        line: u64,
        column: &'static str,
        value: String,
    },
    #[error("line {line}, column {column}: invalid value `{value}`")]
    Field {
        line: u64,
        column: &'static str,
        value: String,
    },
    #[error("death date {death} precedes birth date {birth}")]
    ReversedDates { birth: NaiveDate, death: NaiveDate },
    #[error("line {line}: {context}")]
    Row {
        line: u64,
        context: String,
        #[source]
        source: Box<DataError>,
    },
    #[error("line {line}: annual death probability {value} outside [0, 1]")]
    ProbabilityRange { line: u64, value: f64 },
    #[error("line {line}: ages must be contiguous, expected {expected} found {found}")]
    NonContiguous { line: u64, expected: u32, found: u32 },
    #[error("life table has no rows")]
    EmptyTable,
}

impl From<csv::Error> for DataError {
    fn from(e: csv::Error) -> Self {
        let line = e.position().map(|p| p.line()).unwrap_or(0);
        DataError::Csv {
            line,
            message: e.to_string(),
        }
    }
}

/// Exact age in years between two calendar dates.
pub fn age_at_death(birth: NaiveDate, death: NaiveDate) -> Result<f64, DataError> {
    if death < birth {
        return Err(DataError::ReversedDates { birth, death });
    }
    Ok((death - birth).num_days() as f64 / DAYS_PER_YEAR)
}

/// One death record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifeRecord {
    pub id: String,
    pub birth_date: NaiveDate,
    pub death_date: NaiveDate,
    pub country: String,
    pub validated: bool,
    age_at_death: f64,
}

impl LifeRecord {
    pub fn new(
        id: impl Into<String>,
        birth_date: NaiveDate,
        death_date: NaiveDate,
        country: impl Into<String>,
        validated: bool,
    ) -> Result<Self, DataError> {
        let age_at_death = age_at_death(birth_date, death_date)?;
        Ok(Self {
            id: id.into(),
            birth_date,
            death_date,
            country: country.into(),
            validated,
            age_at_death,
        })
    }

    pub fn age_at_death(&self) -> f64 {
        self.age_at_death
    }

    pub fn death_year(&self) -> i32 {
        use chrono::Datelike;
        self.death_date.year()
    }
}

/// Parsed records plus non-fatal findings (duplicate ids).
#[derive(Debug, Clone, Default)]
pub struct ParsedRecords {
    pub records: Vec<LifeRecord>,
    pub warnings: Vec<String>,
}

fn check_header(found: &csv::StringRecord, expected: &[&str]) -> Result<(), DataError> {
    let found_fields: Vec<&str> = found.iter().map(str::trim).collect();
    if found_fields != expected {
        return Err(DataError::Header {
            expected: expected.join(","),
            found: found.iter().collect::<Vec<_>>().join(","),
        });
    }
    Ok(())
}

fn parse_date(raw: &str, line: u64, column: &'static str) -> Result<NaiveDate, DataError> {
    NaiveDate::parse_from_str(raw.trim(), DATE_FORMAT).map_err(|_| DataError::Date {
        line,
        column,
        value: raw.to_string(),
    })
}

fn parse_flag(raw: &str, line: u64) -> Result<bool, DataError> {
    match raw.trim() {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(DataError::Field {
            line,
            column: "validated",
            value: raw.to_string(),
        }),
    }
}

fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader)
}

/// Parses a death-record CSV. Malformed rows fail with their line number;
/// duplicate ids are kept and reported as warnings.
pub fn parse_records<R: Read>(reader: R) -> Result<ParsedRecords, DataError> {
    let mut rdr = csv_reader(reader);
    check_header(rdr.headers()?, &RECORD_HEADER)?;
    let mut out = ParsedRecords::default();
    let mut seen = HashSet::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let id = row[0].trim().to_string();
        let birth = parse_date(&row[1], line, "birth_date")?;
        let death = parse_date(&row[2], line, "death_date")?;
        let validated = parse_flag(&row[4], line)?;
        let record = LifeRecord::new(id.clone(), birth, death, row[3].trim(), validated).map_err(|e| {
            DataError::Row {
                line,
                context: format!("record {id}"),
                source: Box::new(e),
            }
        })?;
        if !seen.insert(id.clone()) {
            out.warnings.push(format!("line {line}: duplicate id {id}"));
        }
        out.records.push(record);
    }
    Ok(out)
}

/// Writes records in canonical form.
pub fn write_records<W: Write>(writer: W, records: &[LifeRecord]) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(RECORD_HEADER)?;
    for r in records {
        w.write_record([
            r.id.as_str(),
            &r.birth_date.format(DATE_FORMAT).to_string(),
            &r.death_date.format(DATE_FORMAT).to_string(),
            r.country.as_str(),
            if r.validated { "true" } else { "false" },
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One life-table row: annual probability of death at an integer age.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifeTableRow {
    pub age: u32,
    pub q: f64,
}

/// Empirical annual death probabilities over contiguous integer ages.
///
/// As a hazard model, ages below the first row use the first `q` and ages
/// past the last row use the last `q`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LifeTable {
    rows: Vec<LifeTableRow>,
}

impl LifeTable {
    pub fn new(rows: Vec<LifeTableRow>) -> Result<Self, DataError> {
        if rows.is_empty() {
            return Err(DataError::EmptyTable);
        }
        for (i, r) in rows.iter().enumerate() {
            // Header is line 1.
            let line = i as u64 + 2;
            if !(0.0..=1.0).contains(&r.q) {
                return Err(DataError::ProbabilityRange { line, value: r.q });
            }
            if i > 0 && r.age != rows[i - 1].age + 1 {
                return Err(DataError::NonContiguous {
                    line,
                    expected: rows[i - 1].age + 1,
                    found: r.age,
                });
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[LifeTableRow] {
        &self.rows
    }

    pub(crate) fn q_at(&self, age: f64) -> f64 {
        let first = self.rows[0].age as f64;
        let idx = (age.floor() - first).max(0.0) as usize;
        self.rows[idx.min(self.rows.len() - 1)].q
    }

    pub(crate) fn first_certain_death_age(&self) -> Option<f64> {
        self.rows.iter().find(|r| r.q >= 1.0).map(|r| r.age as f64)
    }
}

/// Parses an `age,qx` life table.
pub fn parse_life_table<R: Read>(reader: R) -> Result<LifeTable, DataError> {
    let mut rdr = csv_reader(reader);
    check_header(rdr.headers()?, &LIFE_TABLE_HEADER)?;
    let mut rows = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let age: u32 = row[0].trim().parse().map_err(|_| DataError::Field {
            line,
            column: "age",
            value: row[0].to_string(),
        })?;
        let q: f64 = row[1].trim().parse().map_err(|_| DataError::Field {
            line,
            column: "qx",
            value: row[1].to_string(),
        })?;
        if !(0.0..=1.0).contains(&q) {
            return Err(DataError::ProbabilityRange { line, value: q });
        }
        if let Some(prev) = rows.last().map(|r: &LifeTableRow| r.age) {
            if age != prev + 1 {
                return Err(DataError::NonContiguous {
                    line,
                    expected: prev + 1,
                    found: age,
                });
            }
        }
        rows.push(LifeTableRow { age, q });
    }
    LifeTable::new(rows)
}

pub fn write_life_table<W: Write>(writer: W, table: &LifeTable) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(LIFE_TABLE_HEADER)?;
    for r in table.rows() {
        w.write_record([r.age.to_string(), r.q.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a header plus rows of already-formatted cells.
pub fn write_csv<W, I, R>(writer: W, header: &[&str], rows: I) -> Result<(), DataError>
where
    W: Write,
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.into_iter().collect::<Vec<_>>())?;
    }
    w.flush()?;
    Ok(())
}

/// Formats an optional value as a CSV cell (empty when absent).
pub fn cell(value: Option<f64>) -> String {
    value.map(|v| v.to_string()).unwrap_or_default()
}

/// Standard JSON wrapper around every CLI result.
#[derive(Debug, Clone, Serialize)]
pub struct Envelope<T> {
    pub tool_version: &'static str,
    pub command: String,
    pub inputs_hash: String,
    pub result: T,
}

impl<T: Serialize> Envelope<T> {
    /// `inputs` are hashed in order (arguments first, then file contents).
    pub fn new(command: impl Into<String>, inputs: &[&[u8]], result: T) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION"),
            command: command.into(),
            inputs_hash: inputs_hash(inputs),
            result,
        }
    }
}

/// SHA-256 over length-prefixed chunks, hex encoded.
pub fn inputs_hash(inputs: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for chunk in inputs {
        h.update((chunk.len() as u64).to_le_bytes());
        h.update(chunk);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn date(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, DATE_FORMAT).unwrap()
    }

    #[test]
    fn calment_span() {
        let text = "id,birth_date,death_date,country,validated\nJC1,1875-02-21,1997-08-04,FR,true\n";
        let parsed = parse_records(text.as_bytes()).unwrap();
        let r = &parsed.records[0];
        assert_eq!((r.death_date - r.birth_date).num_days(), 44_724);
        assert!((r.age_at_death() - 44_724.0 / 365.2425).abs() < 1e-12);
        assert!((r.age_at_death() - 122.450).abs() < 1e-3);
        assert!(r.validated);
        assert_eq!(r.country, "FR");
    }

    #[test]
    fn leap_year_rules() {
        let a = age_at_death(date("2000-01-01"), date("2001-01-01")).unwrap();
        assert_eq!(a, 366.0 / 365.2425);
        assert!((a - 1.00207).abs() < 1e-5);
        // 1900 is not a leap year.
        let b = age_at_death(date("1900-02-28"), date("1900-03-01")).unwrap();
        assert_eq!(b, 1.0 / 365.2425);
        assert_eq!(age_at_death(date("1950-06-01"), date("1950-06-01")).unwrap(), 0.0);
        assert!(age_at_death(date("1950-06-02"), date("1950-06-01")).is_err());
    }

    #[test]
    fn bad_date_is_positioned() {
        let text = "id,birth_date,death_date,country,validated\nA,1900-01-01,1997-13-40,FR,true\n";
        match parse_records(text.as_bytes()) {
            Err(DataError::Date { line, column, value }) => {
                assert_eq!(line, 2);
                assert_eq!(column, "death_date");
                assert_eq!(value, "1997-13-40");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn reversed_dates_fail_with_line() {
        let text = "id,birth_date,death_date,country,validated\nA,1900-01-01,1950-01-01,FR,true\nB,1990-01-01,1950-01-01,FR,true\n";
        let err = parse_records(text.as_bytes()).unwrap_err();
        assert!(matches!(err, DataError::Row { line: 3, .. }), "{err:?}");
    }

    #[test]
    fn duplicate_ids_warn() {
        let text = "id,birth_date,death_date,country,validated\nA,1900-01-01,2011-01-01,FR,true\nA,1901-01-01,2012-01-01,JP,false\n";
        let parsed = parse_records(text.as_bytes()).unwrap();
        assert_eq!(parsed.records.len(), 2);
        assert_eq!(parsed.warnings.len(), 1);
    }

    #[test]
    fn wrong_header_rejected() {
        let text = "id,born,died,country,validated\n";
        assert!(matches!(parse_records(text.as_bytes()), Err(DataError::Header { .. })));
    }

    #[test]
    fn record_round_trip_is_byte_identical() {
        let text = "id,birth_date,death_date,country,validated\nJC1,1875-02-21,1997-08-04,FR,true\n\"X,2\",1890-12-31,2003-01-01,US,false\n";
        let parsed = parse_records(text.as_bytes()).unwrap();
        let mut out = Vec::new();
        write_records(&mut out, &parsed.records).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), text);
    }

    #[test]
    fn life_table_parsing() {
        let t = parse_life_table("age,qx\n110,0.5\n111,0.53\n".as_bytes()).unwrap();
        assert_eq!(t.rows().len(), 2);
        assert_eq!(t.q_at(110.7), 0.5);
        assert_eq!(t.q_at(150.0), 0.53);
        assert_eq!(t.q_at(20.0), 0.5);

        assert!(matches!(
            parse_life_table("age,qx\n110,1.2\n".as_bytes()),
            Err(DataError::ProbabilityRange { line: 2, .. })
        ));
        assert!(matches!(
            parse_life_table("age,qx\n110,0.5\n112,0.6\n".as_bytes()),
            Err(DataError::NonContiguous { line: 3, .. })
        ));
        assert!(matches!(parse_life_table("age,qx\n".as_bytes()), Err(DataError::EmptyTable)));
    }

    #[test]
    fn life_table_endpoint() {
        use crate::hazard::HazardModel;
        let t = parse_life_table("age,qx\n113,0.6\n114,0.8\n115,1\n".as_bytes()).unwrap();
        let m = HazardModel::LifeTable(t.clone());
        assert_eq!(m.endpoint(), Some(115.0));
        let mut out = Vec::new();
        write_life_table(&mut out, &t).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "age,qx\n113,0.6\n114,0.8\n115,1\n");
    }

    #[test]
    fn envelope_hash_is_stable() {
        let a = inputs_hash(&[b"limit", b"--epsilon 1e-4"]);
        let b = inputs_hash(&[b"limit", b"--epsilon 1e-4"]);
        let c = inputs_hash(&[b"limit--epsilon", b" 1e-4"]);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 64);
    }
}
