//! Reading raw smart-meter CSV exports onto a regular half-hourly grid.
//!
//! Input rows look like `meter_id,timestamp,kwh[,acorn_group]` with UTC
//! timestamps in `YYYY-MM-DDTHH:MM:SSZ` form. Each meter becomes one
//! [`LoadSeries`] spanning its first to last reading; grid slots without a
//! reading are marked missing.

use std::collections::HashMap;
use std::io::{Read, Write};

use chrono::{DateTime, NaiveDateTime, TimeDelta, Timelike, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

/// Grid resolution in seconds.
pub const STEP_SECONDS: i64 = 1800;
/// Half-hour slots per day.
pub const SLOTS_PER_DAY: usize = 48;
/// Off-grid timestamps within this many seconds of a slot are snapped onto it.
pub const JITTER_SECONDS: i64 = 1;

const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";

/// One parsed input row.
#[derive(Debug, Clone, PartialEq)]
pub struct RawReading {
    pub meter_id: String,
    pub timestamp: DateTime<Utc>,
    pub kwh: f64,
}

/// A meter's half-hourly load series with its missing-data mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadSeries {
    pub meter_id: String,
    pub start: DateTime<Utc>,
    /// kWh per half hour; entries flagged in `missing` hold 0.0.
    pub values: Vec<f64>,
    pub missing: Vec<bool>,
    pub external_label: Option<String>,
}

impl LoadSeries {
    /// Builds a complete (no missing entries) series.
    pub fn complete(meter_id: impl Into<String>, start: DateTime<Utc>, values: Vec<f64>) -> Self {
        let missing = vec![false; values.len()];
        Self {
            meter_id: meter_id.into(),
            start,
            values,
            missing,
            external_label: None,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn missing_count(&self) -> usize {
        self.missing.iter().filter(|&&m| m).count()
    }

    pub fn missing_fraction(&self) -> f64 {
        if self.values.is_empty() {
            return 1.0;
        }
        self.missing_count() as f64 / self.values.len() as f64
    }

    pub fn timestamp_at(&self, index: usize) -> DateTime<Utc> {
        self.start + TimeDelta::seconds(STEP_SECONDS * index as i64)
    }

    /// Half-hour slot of the day (0..48) for grid position `index`.
    pub fn slot_of_day(&self, index: usize) -> usize {
        let ts = self.timestamp_at(index);
        ((ts.hour() * 60 + ts.minute()) / 30) as usize
    }
}

/// A row that could not be accepted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RejectedRow {
    pub line: u64,
    pub reason: String,
}

/// Result of [`parse_readings`]: the assembled series plus row-level rejects.
#[derive(Debug, Clone, Default)]
pub struct ParseOutcome {
    pub series: Vec<LoadSeries>,
    pub rejected: Vec<RejectedRow>,
    /// Rows that replaced an earlier row with the same meter and timestamp.
    pub duplicates: usize,
}

/// Parses a timestamp and snaps it onto the 30-minute grid.
///
/// Returns the grid slot index counted from the Unix epoch.
pub fn parse_grid_timestamp(raw: &str) -> std::result::Result<i64, String> {
    let naive = NaiveDateTime::parse_from_str(raw.trim(), TIMESTAMP_FORMAT)
        .map_err(|e| format!("bad timestamp `{raw}`: {e}"))?;
    let secs = naive.and_utc().timestamp();
    let rem = secs.rem_euclid(STEP_SECONDS);
    let snapped = if rem <= JITTER_SECONDS {
        secs - rem
    } else if STEP_SECONDS - rem <= JITTER_SECONDS {
        secs + (STEP_SECONDS - rem)
    } else {
        return Err(format!("timestamp `{raw}` is off the 30-minute grid"));
    };
    Ok(snapped.div_euclid(STEP_SECONDS))
}

fn slot_to_datetime(slot: i64) -> DateTime<Utc> {
    DateTime::from_timestamp(slot * STEP_SECONDS, 0).expect("grid slot within chrono range")
}

fn format_timestamp(ts: DateTime<Utc>) -> String {
    ts.format(TIMESTAMP_FORMAT).to_string()
}

struct MeterRows {
    id: String,
    label: Option<String>,
    // (grid slot, kwh) in file order
    rows: Vec<(i64, f64)>,
}

/// Parses a CSV stream of readings into one [`LoadSeries`] per meter.
///
/// Malformed rows are collected in [`ParseOutcome::rejected`] and parsing
/// continues. Meters appear in order of first occurrence. A later row for an
/// already-seen (meter, timestamp) replaces the earlier one.
pub fn parse_readings<R: Read>(reader: R) -> Result<ParseOutcome> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let (Some(id_col), Some(ts_col), Some(kwh_col)) = (col("meter_id"), col("timestamp"), col("kwh"))
    else {
        return Err(Error::InvalidParameter {
            name: "header",
            reason: format!("expected meter_id,timestamp,kwh[,acorn_group], got `{}`", headers.iter().collect::<Vec<_>>().join(",")),
        });
    };
    let label_col = col("acorn_group");

    let mut meters: Vec<MeterRows> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut rejected = Vec::new();

    for record in rdr.records() {
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                rejected.push(RejectedRow { line, reason: format!("unreadable row: {e}") });
                continue;
            }
        };
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let reject = |reason: String| RejectedRow { line, reason };

        let (Some(id), Some(ts), Some(kwh)) = (record.get(id_col), record.get(ts_col), record.get(kwh_col))
        else {
            rejected.push(reject(format!("expected at least {} fields, got {}", headers.len().min(3), record.len())));
            continue;
        };
        if id.is_empty() {
            rejected.push(reject("empty meter_id".into()));
            continue;
        }
        let slot = match parse_grid_timestamp(ts) {
            Ok(s) => s,
            Err(reason) => {
                rejected.push(reject(reason));
                continue;
            }
        };
        let kwh: f64 = match kwh.parse() {
            Ok(v) => v,
            Err(_) => {
                rejected.push(reject(format!("bad kwh `{kwh}`")));
                continue;
            }
        };
        if !kwh.is_finite() {
            rejected.push(reject(format!("non-finite kwh `{kwh}`")));
            continue;
        }
        if kwh < 0.0 {
            rejected.push(reject(format!("negative kwh {kwh}")));
            continue;
        }

        let pos = *index.entry(id.to_string()).or_insert_with(|| {
            meters.push(MeterRows { id: id.to_string(), label: None, rows: Vec::new() });
            meters.len() - 1
        });
        let meter = &mut meters[pos];
        if let Some(label) = label_col.and_then(|c| record.get(c)).filter(|l| !l.is_empty()) {
            meter.label = Some(label.to_string());
        }
        meter.rows.push((slot, kwh));
    }

    let assembled = par::map(&meters, assemble);
    let mut series = Vec::with_capacity(assembled.len());
    let mut duplicates = 0;
    for (s, dups) in assembled {
        if dups > 0 {
            log::warn!("meter {}: {dups} duplicate timestamp(s), kept the last row", s.meter_id);
        }
        duplicates += dups;
        series.push(s);
    }

    if series.is_empty() {
        return Err(Error::NoSeries);
    }
    Ok(ParseOutcome { series, rejected, duplicates })
}

fn assemble(meter: &MeterRows) -> (LoadSeries, usize) {
    // stable sort keeps file order among equal slots, so the last one wins below
    let mut rows = meter.rows.clone();
    rows.sort_by_key(|&(slot, _)| slot);
    let first = rows[0].0;
    let last = rows[rows.len() - 1].0;
    let len = (last - first + 1) as usize;
    let mut values = vec![0.0; len];
    let mut missing = vec![true; len];
    let mut duplicates = 0;
    for (slot, kwh) in rows {
        let i = (slot - first) as usize;
        if !missing[i] {
            duplicates += 1;
        }
        values[i] = kwh;
        missing[i] = false;
    }
    let series = LoadSeries {
        meter_id: meter.id.clone(),
        start: slot_to_datetime(first),
        values,
        missing,
        external_label: meter.label.clone(),
    };
    (series, duplicates)
}

/// Writes series back out in the input CSV format (non-missing entries only).
pub fn write_readings<W: Write>(series: &[LoadSeries], writer: W) -> Result<()> {
    let with_labels = series.iter().any(|s| s.external_label.is_some());
    let mut w = csv::Writer::from_writer(writer);
    if with_labels {
        w.write_record(["meter_id", "timestamp", "kwh", "acorn_group"])?;
    } else {
        w.write_record(["meter_id", "timestamp", "kwh"])?;
    }
    for s in series {
        let label = s.external_label.as_deref().unwrap_or("");
        for (i, (&v, &m)) in s.values.iter().zip(&s.missing).enumerate() {
            if m {
                continue;
            }
            let ts = format_timestamp(s.timestamp_at(i));
            let kwh = v.to_string();
            if with_labels {
                w.write_record([s.meter_id.as_str(), &ts, &kwh, label])?;
            } else {
                w.write_record([s.meter_id.as_str(), &ts, &kwh])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes the rejected-row report as `line,reason`.
pub fn write_rejected<W: Write>(rows: &[RejectedRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["line", "reason"])?;
    for r in rows {
        w.write_record([r.line.to_string(), r.reason.clone()])?;
    }
    w.flush()?;
    Ok(())
}

/// Splits series into those at or under the missing-fraction threshold and
/// the rest, preserving order.
pub fn filter_by_missingness(
    series: Vec<LoadSeries>,
    max_missing_fraction: f64,
) -> (Vec<LoadSeries>, Vec<LoadSeries>) {
    debug_assert!((0.0..=1.0).contains(&max_missing_fraction));
    series
        .into_iter()
        .partition(|s| s.missing_fraction() <= max_missing_fraction)
}
