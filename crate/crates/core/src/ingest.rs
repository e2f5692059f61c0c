//! Hourly smart-meter data.
//!
//! Input CSV header: `user_id,timestamp,kwh[,dr_event]`, with timestamps as
//! local clock hours `YYYY-MM-DDTHH` (no timezone).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HourStamp {
    pub date: NaiveDate,
    pub hour: u8,
}

impl HourStamp {
    pub fn new(date: NaiveDate, hour: u8) -> Result<Self> {
        if hour > 23 {
            return Err(Error::Domain(format!("hour must be in 0..=23, got {hour}")));
        }
        Ok(HourStamp { date, hour })
    }

    pub fn parse(s: &str) -> Option<Self> {
        let (date, hour) = s.split_once('T')?;
        if hour.len() != 2 || !hour.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        let date = NaiveDate::parse_from_str(date, "%Y-%m-%d").ok()?;
        HourStamp::new(date, hour.parse().ok()?).ok()
    }
}

impl fmt::Display for HourStamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}T{:02}", self.date.format("%Y-%m-%d"), self.hour)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reading {
    pub stamp: HourStamp,
    pub kwh: f64,
    pub dr_event: bool,
}

/// All readings of one user, strictly increasing in time.
#[derive(Debug, Clone, PartialEq)]
pub struct MeterSeries {
    pub user_id: String,
    pub readings: Vec<Reading>,
}

impl MeterSeries {
    /// Sorts the readings; rejects duplicate hours and invalid kWh values.
    pub fn new(user_id: impl Into<String>, mut readings: Vec<Reading>) -> Result<Self> {
        let user_id = user_id.into();
        if let Some(r) = readings.iter().find(|r| !(r.kwh.is_finite() && r.kwh >= 0.0)) {
            return Err(Error::Domain(format!("{user_id} {}: invalid kWh {}", r.stamp, r.kwh)));
        }
        readings.sort_by_key(|r| r.stamp);
        if let Some(w) = readings.windows(2).find(|w| w[0].stamp == w[1].stamp) {
            return Err(Error::Domain(format!("{user_id}: duplicate reading at {}", w[0].stamp)));
        }
        Ok(MeterSeries { user_id, readings })
    }

    pub fn get(&self, date: NaiveDate, hour: u8) -> Option<&Reading> {
        let key = HourStamp { date, hour };
        self.readings
            .binary_search_by_key(&key, |r| r.stamp)
            .ok()
            .map(|k| &self.readings[k])
    }
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "" | "0" | "false" => Some(false),
        "1" | "true" => Some(true),
        _ => None,
    }
}

/// Parse meter CSV text. Series come back ordered by user id.
pub fn parse_meter_csv<R: Read>(input: R) -> Result<Vec<MeterSeries>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let with_dr = match header.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
        ["user_id", "timestamp", "kwh"] => false,
        ["user_id", "timestamp", "kwh", "dr_event"] => true,
        _ => {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected header user_id,timestamp,kwh[,dr_event], got {}", header.join(",")),
            })
        }
    };

    let mut by_user: BTreeMap<String, Vec<Reading>> = BTreeMap::new();
    let mut seen: BTreeMap<(String, HourStamp), u64> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |msg: String| Error::Parse { line, msg };
        if rec.len() != header.len() {
            return Err(bad(format!("expected {} fields, got {}", header.len(), rec.len())));
        }
        let user = rec[0].trim().to_string();
        if user.is_empty() {
            return Err(bad("empty user_id".into()));
        }
        let stamp = HourStamp::parse(rec[1].trim())
            .ok_or_else(|| bad(format!("bad timestamp {:?}, expected YYYY-MM-DDTHH", &rec[1])))?;
        let kwh: f64 = rec[2]
            .trim()
            .parse()
            .map_err(|_| bad(format!("non-numeric kwh {:?}", &rec[2])))?;
        if !kwh.is_finite() || kwh < 0.0 {
            return Err(bad(format!("kwh must be finite and >= 0, got {kwh}")));
        }
        let dr_event = if with_dr {
            parse_bool(&rec[3]).ok_or_else(|| bad(format!("bad dr_event {:?}", &rec[3])))?
        } else {
            false
        };
        if let Some(first) = seen.insert((user.clone(), stamp), line) {
            return Err(Error::Integrity {
                line,
                msg: format!("duplicate reading for {user} at {stamp} (first at line {first})"),
            });
        }
        by_user.entry(user).or_default().push(Reading { stamp, kwh, dr_event });
    }
    by_user
        .into_iter()
        .map(|(user, readings)| MeterSeries::new(user, readings))
        .collect()
}

pub fn read_meter_csv(path: &Path) -> Result<Vec<MeterSeries>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_meter_csv(std::io::BufReader::new(file))
}

/// Write series in the input format, always including the `dr_event` column.
pub fn write_meter_csv<W: Write>(series: &[MeterSeries], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["user_id", "timestamp", "kwh", "dr_event"])?;
    for s in series {
        for r in &s.readings {
            w.write_record([
                s.user_id.as_str(),
                &r.stamp.to_string(),
                &r.kwh.to_string(),
                if r.dr_event { "1" } else { "0" },
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<meter output>", e))
}

/// Same-hour readings of one series, ready for fitting.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HourSlice {
    pub values: Vec<f64>,
    /// Zero readings removed because the lognormal support excludes them.
    pub dropped_zeros: usize,
}

pub fn hour_slice(series: &MeterSeries, hour: u8, exclude_dr: bool) -> HourSlice {
    let mut out = HourSlice::default();
    for r in series.readings.iter().filter(|r| r.stamp.hour == hour) {
        if exclude_dr && r.dr_event {
            continue;
        }
        if r.kwh > 0.0 {
            out.values.push(r.kwh);
        } else {
            out.dropped_zeros += 1;
        }
    }
    out
}

/// One `YYYY-MM-DD` per line; blank lines and `#` comments are skipped.
pub fn parse_holidays(text: &str) -> Result<BTreeSet<NaiveDate>> {
    let mut out = BTreeSet::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let date = NaiveDate::parse_from_str(line, "%Y-%m-%d").map_err(|_| Error::Parse {
            line: k as u64 + 1,
            msg: format!("bad holiday date {line:?}"),
        })?;
        out.insert(date);
    }
    Ok(out)
}

pub fn read_holidays(path: &Path) -> Result<BTreeSet<NaiveDate>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_holidays(&text)
}
