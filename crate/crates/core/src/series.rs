//! Quarter-hour time series and their CSV formats.
//!
//! Both input schemas are strict: a fixed header, ISO-8601 UTC timestamps
//! (`2021-06-07T00:00:00Z`) on an exact 15-minute grid, and no gaps. A
//! missing quarter hour is an error rather than something to interpolate —
//! silent infill would corrupt the transition statistics trained from the
//! history.
//!
//! * history / actuals: `timestamp,load_kw,pv_kw`
//! * prices: `timestamp,c_e_eur_per_kwh`

use std::io::{self, BufRead, Write};

use chrono::{DateTime, Duration, NaiveDateTime, Timelike, Utc};
use thiserror::Error;

/// Grid spacing.
pub fn step() -> Duration {
    Duration::minutes(15)
}

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {msg}")]
    Schema { line: usize, msg: String },
}

fn serr<T>(line: usize, msg: impl Into<String>) -> Result<T, DataError> {
    Err(DataError::Schema {
        line,
        msg: msg.into(),
    })
}

/// One joint sample of consumer demand and renewable generation [kW].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerPoint {
    pub load_kw: f64,
    pub res_kw: f64,
}

#[derive(Debug, Clone)]
pub struct PowerSeries {
    pub start: DateTime<Utc>,
    pub points: Vec<PowerPoint>,
}

#[derive(Debug, Clone)]
pub struct PriceSeries {
    pub start: DateTime<Utc>,
    pub values: Vec<f64>,
}

impl PowerSeries {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn timestamp(&self, index: usize) -> DateTime<Utc> {
        self.start + step() * index as i32
    }

    /// Grid position of a timestamp, when it falls exactly on the grid.
    pub fn index_of(&self, t: DateTime<Utc>) -> Option<usize> {
        let delta = t - self.start;
        let quarter = step().num_seconds();
        if delta.num_seconds() < 0 || delta.num_seconds() % quarter != 0 {
            return None;
        }
        let idx = (delta.num_seconds() / quarter) as usize;
        (idx < self.points.len()).then_some(idx)
    }
}

impl PriceSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn timestamp(&self, index: usize) -> DateTime<Utc> {
        self.start + step() * index as i32
    }

    pub fn index_of(&self, t: DateTime<Utc>) -> Option<usize> {
        let delta = t - self.start;
        let quarter = step().num_seconds();
        if delta.num_seconds() < 0 || delta.num_seconds() % quarter != 0 {
            return None;
        }
        let idx = (delta.num_seconds() / quarter) as usize;
        (idx < self.values.len()).then_some(idx)
    }
}

pub fn parse_timestamp(s: &str) -> Result<DateTime<Utc>, String> {
    NaiveDateTime::parse_from_str(s, TIMESTAMP_FORMAT)
        .map(|naive| naive.and_utc())
        .map_err(|e| format!("bad timestamp `{s}` (expected ISO-8601 UTC): {e}"))
}

pub fn format_timestamp(t: DateTime<Utc>) -> String {
    t.format(TIMESTAMP_FORMAT).to_string()
}

fn check_grid_start(t: DateTime<Utc>, line: usize) -> Result<(), DataError> {
    if t.minute() % 15 != 0 || t.second() != 0 || t.nanosecond() != 0 {
        return serr(line, format!("{} is not on the 15-minute grid", format_timestamp(t)));
    }
    Ok(())
}

fn parse_power(tok: &str, line: usize, what: &str) -> Result<f64, DataError> {
    let v: f64 = tok
        .parse()
        .or_else(|_| serr(line, format!("bad {what} value `{tok}`")))?;
    if !v.is_finite() || v < 0.0 {
        return serr(line, format!("{what} must be finite and nonnegative, got {v}"));
    }
    Ok(v)
}

/// Read a `timestamp,load_kw,pv_kw` series.
pub fn read_power_series<R: BufRead>(reader: R) -> Result<PowerSeries, DataError> {
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| DataError::Schema {
            line: 1,
            msg: "empty file".into(),
        })?;
    let header = header?;
    if header.trim() != "timestamp,load_kw,pv_kw" {
        return serr(1, "header must be `timestamp,load_kw,pv_kw`");
    }
    let mut start: Option<DateTime<Utc>> = None;
    let mut points = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return serr(lineno, format!("expected 3 fields, got {}", fields.len()));
        }
        let t = parse_timestamp(fields[0].trim()).or_else(|e| serr(lineno, e))?;
        match start {
            None => {
                check_grid_start(t, lineno)?;
                start = Some(t);
            }
            Some(s) => {
                let expected = s + step() * points.len() as i32;
                if t != expected {
                    return serr(
                        lineno,
                        format!(
                            "timestamp {} breaks the 15-minute grid (expected {})",
                            format_timestamp(t),
                            format_timestamp(expected)
                        ),
                    );
                }
            }
        }
        points.push(PowerPoint {
            load_kw: parse_power(fields[1].trim(), lineno, "load_kw")?,
            res_kw: parse_power(fields[2].trim(), lineno, "pv_kw")?,
        });
    }
    match start {
        Some(start) if !points.is_empty() => Ok(PowerSeries { start, points }),
        _ => serr(1, "no data rows"),
    }
}

/// Read a `timestamp,c_e_eur_per_kwh` series. Prices may be negative; the
/// model builder flags them separately.
pub fn read_price_series<R: BufRead>(reader: R) -> Result<PriceSeries, DataError> {
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| DataError::Schema {
            line: 1,
            msg: "empty file".into(),
        })?;
    let header = header?;
    if header.trim() != "timestamp,c_e_eur_per_kwh" {
        return serr(1, "header must be `timestamp,c_e_eur_per_kwh`");
    }
    let mut start: Option<DateTime<Utc>> = None;
    let mut values = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 2 {
            return serr(lineno, format!("expected 2 fields, got {}", fields.len()));
        }
        let t = parse_timestamp(fields[0].trim()).or_else(|e| serr(lineno, e))?;
        match start {
            None => {
                check_grid_start(t, lineno)?;
                start = Some(t);
            }
            Some(s) => {
                let expected = s + step() * values.len() as i32;
                if t != expected {
                    return serr(
                        lineno,
                        format!(
                            "timestamp {} breaks the 15-minute grid (expected {})",
                            format_timestamp(t),
                            format_timestamp(expected)
                        ),
                    );
                }
            }
        }
        let v: f64 = fields[1]
            .trim()
            .parse()
            .or_else(|_| serr(lineno, format!("bad price value `{}`", fields[1])))?;
        if !v.is_finite() {
            return serr(lineno, "price must be finite");
        }
        values.push(v);
    }
    match start {
        Some(start) if !values.is_empty() => Ok(PriceSeries { start, values }),
        _ => serr(1, "no data rows"),
    }
}

pub fn write_power_series<W: Write>(series: &PowerSeries, w: &mut W) -> io::Result<()> {
    writeln!(w, "timestamp,load_kw,pv_kw")?;
    for (i, p) in series.points.iter().enumerate() {
        writeln!(
            w,
            "{},{},{}",
            format_timestamp(series.timestamp(i)),
            p.load_kw,
            p.res_kw
        )?;
    }
    Ok(())
}

pub fn write_price_series<W: Write>(series: &PriceSeries, w: &mut W) -> io::Result<()> {
    writeln!(w, "timestamp,c_e_eur_per_kwh")?;
    for (i, v) in series.values.iter().enumerate() {
        writeln!(w, "{},{}", format_timestamp(series.timestamp(i)), v)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_series_round_trip() {
        let csv = "timestamp,load_kw,pv_kw\n\
                   2021-06-07T00:00:00Z,10.5,0\n\
                   2021-06-07T00:15:00Z,11,0.25\n";
        let s = read_power_series(csv.as_bytes()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.points[1].load_kw, 11.0);
        let mut out = Vec::new();
        write_power_series(&s, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), csv);
    }

    #[test]
    fn gaps_are_rejected_with_line_number() {
        let csv = "timestamp,load_kw,pv_kw\n\
                   2021-06-07T00:00:00Z,1,0\n\
                   2021-06-07T00:45:00Z,1,0\n";
        match read_power_series(csv.as_bytes()) {
            Err(DataError::Schema { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn off_grid_start_and_bad_values_are_rejected() {
        let bad_start = "timestamp,load_kw,pv_kw\n2021-06-07T00:07:00Z,1,0\n";
        assert!(read_power_series(bad_start.as_bytes()).is_err());
        let negative = "timestamp,load_kw,pv_kw\n2021-06-07T00:00:00Z,-3,0\n";
        assert!(read_power_series(negative.as_bytes()).is_err());
        let empty = "timestamp,load_kw,pv_kw\n";
        assert!(read_power_series(empty.as_bytes()).is_err());
    }

    #[test]
    fn price_series_parses_and_indexes() {
        let csv = "timestamp,c_e_eur_per_kwh\n\
                   2021-06-07T00:00:00Z,0.05\n\
                   2021-06-07T00:15:00Z,-0.01\n";
        let p = read_price_series(csv.as_bytes()).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p.values[1], -0.01);
        let t = parse_timestamp("2021-06-07T00:15:00Z").unwrap();
        assert_eq!(p.index_of(t), Some(1));
        assert_eq!(p.index_of(t + step()), None);
    }
}
