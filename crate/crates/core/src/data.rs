//! Cumulative case/death report files and the report calendar.
//!
//! Layout: a header line `date,cum_cases,cum_deaths` followed by one row per
//! report day with an ISO-8601 date and two non-negative integer counts.
//! Rows must be strictly increasing in date; counts must be cumulative
//! (non-decreasing) with deaths never exceeding cases.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::observation::Observation;

pub const REPORT_HEADER: [&str; 3] = ["date", "cum_cases", "cum_deaths"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportDataset {
    /// Calendar date of day 0 (the first report).
    pub epoch: NaiveDate,
    pub records: Vec<Observation>,
    /// Day index of the last report.
    pub horizon: i64,
}

impl ReportDataset {
    /// Builds a dataset from `(date, cases, deaths)` rows, validating every
    /// invariant. Row numbers in errors count the header as row 1.
    pub fn from_rows(rows: &[(NaiveDate, u64, u64)]) -> Result<Self> {
        let Some(&(epoch, _, _)) = rows.first() else {
            return Err(Error::Validation("no report rows".into()));
        };
        let mut records = Vec::with_capacity(rows.len());
        let mut prev: Option<&Observation> = None;
        for (k, &(date, cases, deaths)) in rows.iter().enumerate() {
            let row = k + 2;
            if cases == 0 {
                return Err(Error::Validation(format!("row {row}: cum_cases must be positive")));
            }
            if deaths > cases {
                return Err(Error::Validation(format!(
                    "row {row}: cum_deaths {deaths} exceeds cum_cases {cases}"
                )));
            }
            if let Some(p) = prev {
                if date <= p.date {
                    let what = if date == p.date { "duplicate" } else { "out-of-order" };
                    return Err(Error::Validation(format!("row {row}: {what} date {date}")));
                }
                if cases < p.cum_cases {
                    return Err(Error::Validation(format!(
                        "row {row}: cum_cases decreases from {} to {cases}",
                        p.cum_cases
                    )));
                }
                if deaths < p.cum_deaths {
                    return Err(Error::Validation(format!(
                        "row {row}: cum_deaths decreases from {} to {deaths}",
                        p.cum_deaths
                    )));
                }
            }
            records.push(Observation {
                date,
                day_index: (date - epoch).num_days(),
                cum_cases: cases,
                cum_deaths: deaths,
            });
            prev = records.last();
        }
        let horizon = records.last().map(|r| r.day_index).unwrap_or(0);
        Ok(ReportDataset {
            epoch,
            records,
            horizon,
        })
    }

    pub fn date_of(&self, day_index: i64) -> Option<NaiveDate> {
        self.epoch.checked_add_signed(chrono::Duration::days(day_index))
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| Error::Validation(format!("csv write: {e}"));
        w.write_record(REPORT_HEADER).map_err(io)?;
        for r in &self.records {
            w.write_record([
                r.date.format("%Y-%m-%d").to_string(),
                r.cum_cases.to_string(),
                r.cum_deaths.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| Error::Validation(format!("csv write: {e}")))?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(file)
    }
}

pub fn parse_report_reader<R: Read>(reader: R) -> Result<ReportDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(Ok(h)) => h,
        Some(Err(e)) => return Err(Error::Parse { row: 1, message: e.to_string() }),
        None => return Err(Error::Parse { row: 1, message: "empty file".into() }),
    };
    if header.iter().collect::<Vec<_>>() != REPORT_HEADER {
        return Err(Error::Parse {
            row: 1,
            message: format!("expected header `{}`", REPORT_HEADER.join(",")),
        });
    }
    let mut rows = Vec::new();
    for (k, rec) in records.enumerate() {
        let row = k + 2;
        let rec = rec.map_err(|e| Error::Parse { row, message: e.to_string() })?;
        if rec.len() != 3 {
            return Err(Error::Parse {
                row,
                message: format!("expected 3 fields, found {}", rec.len()),
            });
        }
        let date = NaiveDate::parse_from_str(rec[0].trim(), "%Y-%m-%d").map_err(|e| Error::Parse {
            row,
            message: format!("bad date `{}`: {e}", &rec[0]),
        })?;
        let count = |field: &str, name: &str| -> Result<u64> {
            let t = field.trim();
            if t.is_empty() {
                return Err(Error::Parse { row, message: format!("missing {name}") });
            }
            t.parse::<u64>().map_err(|e| Error::Parse {
                row,
                message: format!("bad {name} `{t}`: {e}"),
            })
        };
        rows.push((date, count(&rec[1], "cum_cases")?, count(&rec[2], "cum_deaths")?));
    }
    ReportDataset::from_rows(&rows)
}

pub fn parse_report_csv(path: impl AsRef<Path>) -> Result<ReportDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_report_reader(file)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CalendarEntry {
    pub day_index: i64,
    /// Days since the previous report (0 for the first).
    pub gap: i64,
}

pub fn build_calendar(dataset: &ReportDataset) -> Vec<CalendarEntry> {
    let mut prev = None;
    dataset
        .records
        .iter()
        .map(|r| {
            let gap = prev.map_or(0, |p| r.day_index - p);
            prev = Some(r.day_index);
            CalendarEntry {
                day_index: r.day_index,
                gap,
            }
        })
        .collect()
}

/// The Guinea cumulative report series shipped with the crate.
pub const GUINEA_CSV: &str = include_str!("../data/guinea.csv");

pub fn guinea() -> ReportDataset {
    parse_report_reader(GUINEA_CSV.as_bytes()).expect("bundled Guinea dataset is valid")
}
