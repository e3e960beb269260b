use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use chrono::DateTime;
use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Trace, SECONDS_PER_DAY};
use crate::error::{Error, Result};

/// One line of the raw input stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub user_id: String,
    /// Epoch seconds (number or numeric string) or an RFC 3339 / ISO-8601 string.
    pub timestamp: Value,
    pub lon: f64,
    pub lat: f64,
    pub text: String,
}

impl RawRecord {
    pub fn t_abs(&self) -> Result<f64> {
        parse_timestamp(&self.timestamp)
    }
}

/// Epoch seconds from a JSON number, numeric string, or ISO-8601 timestamp.
/// Naive ISO timestamps (no offset) are taken as UTC.
pub fn parse_timestamp(value: &Value) -> Result<f64> {
    let t = match value {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => {
            let s = s.trim();
            if let Ok(x) = s.parse::<f64>() {
                Some(x)
            } else if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
                Some(epoch_seconds(dt.timestamp(), dt.timestamp_subsec_nanos()))
            } else {
                ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"]
                    .iter()
                    .find_map(|f| chrono::NaiveDateTime::parse_from_str(s, f).ok())
                    .map(|dt| {
                        let dt = dt.and_utc();
                        epoch_seconds(dt.timestamp(), dt.timestamp_subsec_nanos())
                    })
            }
        }
        _ => None,
    };
    match t {
        Some(t) if t.is_finite() => Ok(t),
        _ => Err(Error::domain(format!("unparseable timestamp {value}"))),
    }
}

fn epoch_seconds(secs: i64, nanos: u32) -> f64 {
    secs as f64 + nanos as f64 * 1e-9
}

/// Seconds since local midnight for a fixed UTC offset, in `[0, 86400)`.
pub fn day_seconds(t_abs: f64, utc_offset_s: f64) -> f64 {
    let t = (t_abs + utc_offset_s).rem_euclid(SECONDS_PER_DAY);
    // rem_euclid can round up to the modulus for tiny negative inputs.
    if t >= SECONDS_PER_DAY {
        0.0
    } else {
        t
    }
}

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("gz"))
}

/// Buffered reader, decompressing when the path ends in `.gz`.
pub fn open_maybe_gz(path: &Path) -> Result<Box<dyn BufRead>> {
    let file = File::open(path)?;
    let inner: Box<dyn Read> = if is_gz(path) {
        Box::new(MultiGzDecoder::new(file))
    } else {
        Box::new(file)
    };
    Ok(Box::new(BufReader::new(inner)))
}

fn create_maybe_gz(path: &Path) -> Result<Box<dyn Write>> {
    let file = BufWriter::new(File::create(path)?);
    Ok(if is_gz(path) {
        Box::new(GzEncoder::new(file, Compression::default()))
    } else {
        Box::new(file)
    })
}

fn for_each_json_line<T, F>(path: &Path, mut f: F) -> Result<()>
where
    T: for<'de> Deserialize<'de>,
    F: FnMut(T) -> Result<()>,
{
    let reader = open_maybe_gz(path)?;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| {
            Error::parse(format!("{}:{}", path.display(), i + 1), e.to_string())
        })?;
        f(item)?;
    }
    Ok(())
}

/// Reads raw NDJSON records. Lines that fail to parse or carry invalid
/// fields are skipped and counted; the second value is that count.
pub fn read_raw_records(path: &Path) -> Result<(Vec<RawRecord>, usize)> {
    let reader = open_maybe_gz(path)?;
    let mut out = Vec::new();
    let mut dropped = 0;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<RawRecord>(&line) {
            Ok(r) if r.lon.is_finite() && r.lat.is_finite() && r.t_abs().is_ok() => out.push(r),
            _ => dropped += 1,
        }
    }
    Ok((out, dropped))
}

/// Reads a preprocessed corpus: one JSON trace per line.
pub fn read_corpus(path: &Path) -> Result<Vec<Trace>> {
    let mut traces = Vec::new();
    for_each_json_line(path, |t: Trace| {
        traces.push(t);
        Ok(())
    })?;
    Ok(traces)
}

pub fn write_corpus(path: &Path, traces: &[Trace]) -> Result<()> {
    let mut w = create_maybe_gz(path)?;
    for t in traces {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
