//! Poll and result files to a validated [`PollDataset`].
//!
//! Poll files are comma-separated with a header row. A [`ColumnMapping`]
//! (usually loaded from TOML) names the source column for each canonical
//! field, so differently shaped sources can be read without code changes.
//! Rows that cannot be used are reported as [`Issue`]s, never dropped
//! silently.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::domain::{two_party_share, ContestId, ElectionContest, Poll, PollDataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawPollRecord {
    pub state: String,
    pub year: i32,
    pub election_date: NaiveDate,
    pub field_start: Option<NaiveDate>,
    pub field_end: NaiveDate,
    pub rep_pct: f64,
    pub dem_pct: f64,
    pub sample_size: u64,
    pub pollster: Option<String>,
}

impl RawPollRecord {
    /// Days before the election, from the middle of the field period
    /// (rounded down).
    pub fn days_out(&self) -> u32 {
        let end = (self.election_date - self.field_end).num_days();
        let start = self
            .field_start
            .map(|d| (self.election_date - d).num_days())
            .unwrap_or(end);
        ((start + end) / 2).max(0) as u32
    }

    /// Respondents backing either major candidate, rounded half up, at
    /// least one.
    pub fn two_party_n(&self) -> u64 {
        let n = self.sample_size as f64 * (self.rep_pct + self.dem_pct) / 100.0;
        ((n + 0.5).floor() as u64).max(1)
    }

    pub fn contest_id(&self) -> ContestId {
        ContestId::for_race(&self.state, self.year)
    }
}

/// A row that was read but not turned into a record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    /// 1-based line number in the source file (the header is line 1).
    pub row: u64,
    pub field: String,
    pub reason: String,
}

/// Source column for each canonical field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnMapping {
    pub state: String,
    pub year: String,
    pub election_date: String,
    /// Optional in the source; an empty name disables it.
    pub field_start: String,
    pub field_end: String,
    pub rep_pct: String,
    pub dem_pct: String,
    pub sample_size: String,
    /// Optional in the source; an empty name disables it.
    pub pollster: String,
    /// chrono format string for every date column.
    pub date_format: String,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        ColumnMapping {
            state: "state".into(),
            year: "year".into(),
            election_date: "election_date".into(),
            field_start: "field_start".into(),
            field_end: "field_end".into(),
            rep_pct: "rep_pct".into(),
            dem_pct: "dem_pct".into(),
            sample_size: "sample_size".into(),
            pollster: "pollster".into(),
            date_format: "%Y-%m-%d".into(),
        }
    }
}

impl ColumnMapping {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Mapping(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

struct Columns {
    state: usize,
    year: usize,
    election_date: usize,
    field_start: Option<usize>,
    field_end: usize,
    rep_pct: usize,
    dem_pct: usize,
    sample_size: usize,
    pollster: Option<usize>,
}

impl Columns {
    fn resolve(headers: &csv::StringRecord, m: &ColumnMapping) -> Result<Self> {
        let find = |name: &str| headers.iter().position(|h| h.trim() == name);
        let mut missing = Vec::new();
        let mut need = |name: &str| {
            find(name).unwrap_or_else(|| {
                missing.push(name.to_string());
                0
            })
        };
        let cols = Columns {
            state: need(&m.state),
            year: need(&m.year),
            election_date: need(&m.election_date),
            field_end: need(&m.field_end),
            rep_pct: need(&m.rep_pct),
            dem_pct: need(&m.dem_pct),
            sample_size: need(&m.sample_size),
            field_start: None,
            pollster: None,
        };
        if !missing.is_empty() {
            return Err(Error::MissingColumns(missing));
        }
        let optional = |name: &str| -> Result<Option<usize>> {
            if name.is_empty() {
                return Ok(None);
            }
            find(name)
                .map(Some)
                .ok_or_else(|| Error::MissingColumns(vec![name.to_string()]))
        };
        Ok(Columns {
            field_start: optional(&m.field_start)?,
            pollster: optional(&m.pollster)?,
            ..cols
        })
    }
}

struct RowReader<'a> {
    rec: &'a csv::StringRecord,
    row: u64,
    issues: Vec<Issue>,
    date_format: &'a str,
}

impl RowReader<'_> {
    fn raw(&self, col: usize) -> &str {
        self.rec.get(col).unwrap_or("").trim()
    }

    fn issue(&mut self, field: &str, reason: impl Into<String>) {
        self.issues.push(Issue {
            row: self.row,
            field: field.to_string(),
            reason: reason.into(),
        });
    }

    fn parse<T: std::str::FromStr>(&mut self, col: usize, field: &str) -> Option<T> {
        let s = self.raw(col).to_string();
        if s.is_empty() {
            self.issue(field, "missing value");
            return None;
        }
        match s.parse() {
            Ok(v) => Some(v),
            Err(_) => {
                self.issue(field, format!("invalid value '{s}'"));
                None
            }
        }
    }

    fn date(&mut self, col: usize, field: &str) -> Option<NaiveDate> {
        let s = self.raw(col).to_string();
        if s.is_empty() {
            self.issue(field, "missing value");
            return None;
        }
        match NaiveDate::parse_from_str(&s, self.date_format) {
            Ok(d) => Some(d),
            Err(_) => {
                self.issue(field, format!("invalid date '{s}'"));
                None
            }
        }
    }

    fn percentage(&mut self, col: usize, field: &str) -> Option<f64> {
        if self.raw(col).is_empty() {
            self.issue(field, "missing candidate percentage (margin-only row)");
            return None;
        }
        let x: f64 = self.parse(col, field)?;
        if !(x >= 0.0) || !x.is_finite() {
            self.issue(field, format!("negative or non-finite percentage {x}"));
            return None;
        }
        Some(x)
    }
}

fn read_row(rec: &csv::StringRecord, row: u64, cols: &Columns, date_format: &str) -> std::result::Result<RawPollRecord, Vec<Issue>> {
    let mut r = RowReader {
        rec,
        row,
        issues: Vec::new(),
        date_format,
    };
    let state = r.raw(cols.state).to_string();
    if state.is_empty() {
        r.issue("state", "missing value");
    }
    let year = r.parse::<i32>(cols.year, "year");
    let election_date = r.date(cols.election_date, "election_date");
    let field_start = match cols.field_start {
        Some(c) if !r.raw(c).is_empty() => r.date(c, "field_start").map(Some),
        _ => Some(None),
    };
    let field_end = r.date(cols.field_end, "field_end");
    let rep_pct = r.percentage(cols.rep_pct, "rep_pct");
    let dem_pct = r.percentage(cols.dem_pct, "dem_pct");
    let sample_size = r.parse::<u64>(cols.sample_size, "sample_size");
    if sample_size == Some(0) {
        r.issue("sample_size", "sample size must be positive");
    }
    let pollster = cols
        .pollster
        .map(|c| r.raw(c).to_string())
        .filter(|s| !s.is_empty());

    let (Some(year), Some(election_date), Some(field_start), Some(field_end), Some(rep_pct), Some(dem_pct), Some(sample_size)) =
        (year, election_date, field_start, field_end, rep_pct, dem_pct, sample_size)
    else {
        return Err(r.issues);
    };
    if !r.issues.is_empty() {
        return Err(r.issues);
    }
    if rep_pct + dem_pct <= 0.0 {
        r.issue("rep_pct", "no two-party support");
    }
    if field_end > election_date {
        r.issue("field_end", "post-election field date");
    }
    if let Some(start) = field_start {
        if start > field_end {
            r.issue("field_start", "field period starts after it ends");
        }
    }
    if !r.issues.is_empty() {
        return Err(r.issues);
    }
    Ok(RawPollRecord {
        state,
        year,
        election_date,
        field_start,
        field_end,
        rep_pct,
        dem_pct,
        sample_size,
        pollster,
    })
}

/// Reads poll rows. Fatal only for unreadable input or missing columns.
pub fn parse_polls_from<R: Read>(reader: R, mapping: &ColumnMapping) -> Result<(Vec<RawPollRecord>, Vec<Issue>)> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let cols = Columns::resolve(&headers, mapping)?;
    let mut records = Vec::new();
    let mut issues = Vec::new();
    let mut rec = csv::StringRecord::new();
    loop {
        match rdr.read_record(&mut rec) {
            Ok(false) => break,
            Ok(true) => {
                let row = rec.position().map(|p| p.line()).unwrap_or(0);
                match read_row(&rec, row, &cols, &mapping.date_format) {
                    Ok(r) => records.push(r),
                    Err(mut found) => issues.append(&mut found),
                }
            }
            Err(e) => {
                let row = e.position().map(|p| p.line()).unwrap_or(0);
                if matches!(e.kind(), csv::ErrorKind::Io(_)) {
                    return Err(e.into());
                }
                issues.push(Issue {
                    row,
                    field: String::new(),
                    reason: e.to_string(),
                });
            }
        }
    }
    Ok((records, issues))
}

pub fn parse_polls(path: &Path, mapping: &ColumnMapping) -> Result<(Vec<RawPollRecord>, Vec<Issue>)> {
    parse_polls_from(std::fs::File::open(path)?, mapping)
}

/// Writes records with the default column names.
pub fn write_polls<W: Write>(records: &[RawPollRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "state",
        "year",
        "election_date",
        "field_start",
        "field_end",
        "rep_pct",
        "dem_pct",
        "sample_size",
        "pollster",
    ])?;
    for r in records {
        w.write_record([
            r.state.clone(),
            r.year.to_string(),
            r.election_date.to_string(),
            r.field_start.map(|d| d.to_string()).unwrap_or_default(),
            r.field_end.to_string(),
            r.rep_pct.to_string(),
            r.dem_pct.to_string(),
            r.sample_size.to_string(),
            r.pollster.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Official result of one contest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContestResult {
    pub state: String,
    pub year: i32,
    pub rep_votes: f64,
    pub dem_votes: f64,
}

/// Reads a results file with columns `state,year,rep_votes,dem_votes`.
pub fn parse_results_from<R: Read>(reader: R) -> Result<Vec<ContestResult>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let missing: Vec<String> = ["state", "year", "rep_votes", "dem_votes"]
        .iter()
        .filter(|c| !headers.iter().any(|h| h == **c))
        .map(|c| c.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingColumns(missing));
    }
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

pub fn parse_results(path: &Path) -> Result<Vec<ContestResult>> {
    parse_results_from(std::fs::File::open(path)?)
}

pub fn write_results<W: Write>(results: &[ContestResult], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in results {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Joins poll records to official results. Every contest in `results` is
/// kept, including those without polls.
pub fn build_dataset(records: &[RawPollRecord], results: &[ContestResult]) -> Result<PollDataset> {
    let known: BTreeSet<(&str, i32)> = results.iter().map(|r| (r.state.as_str(), r.year)).collect();
    let missing: BTreeSet<(String, i32)> = records
        .iter()
        .filter(|r| !known.contains(&(r.state.as_str(), r.year)))
        .map(|r| (r.state.clone(), r.year))
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingResults(missing.into_iter().collect()));
    }
    let contests = results
        .iter()
        .map(|r| {
            let v = two_party_share(r.rep_votes, r.dem_votes)?;
            ElectionContest::new(r.state.clone(), r.year, v)
        })
        .collect::<Result<Vec<_>>>()?;
    let polls = records
        .iter()
        .map(|r| {
            let y = two_party_share(r.rep_pct, r.dem_pct)?;
            let poll = Poll::new(r.contest_id(), r.days_out(), y, r.two_party_n())?;
            Ok(match &r.pollster {
                Some(p) => poll.with_pollster(p.clone()),
                None => poll,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    PollDataset::new(contests, polls)
}
